#pragma once

#include <filesystem>
#include <random>
#include <string>

#include <gtest/gtest.h>

#include "cafe/montage.hpp"
#include "cafe/rng.hpp"
#include "cafe/signal.hpp"
#include "cafe/tensor.hpp"

namespace cafe::test {

/// Fresh empty directory under the system temp dir, named after the running test.
inline std::filesystem::path scratch_dir(const std::string& tag = "") {
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  std::string name = std::string("cafe_") + info->test_suite_name() + "_" + info->name() + tag;
  for (char& ch : name)
    if (ch == '/') ch = '_';
  const auto dir = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline Montage random_montage(std::size_t C, std::mt19937_64& gen, bool integer_coords = false) {
  std::vector<std::string> labels;
  std::vector<Vec3> pos;
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_int_distribution<int> ui(0, 3);
  for (std::size_t i = 0; i < C; ++i) {
    labels.push_back("ch" + std::to_string(i));
    if (integer_coords)
      pos.push_back({double(ui(gen)), double(ui(gen)), 0.0});
    else
      pos.push_back({u(gen), u(gen), u(gen)});
  }
  return Montage(labels, pos);
}

inline LayoutSpec random_layout(std::size_t C, std::size_t n_obs, std::mt19937_64& gen) {
  std::vector<std::size_t> idx(C);
  for (std::size_t i = 0; i < C; ++i) idx[i] = i;
  std::shuffle(idx.begin(), idx.end(), gen);
  idx.resize(n_obs);
  return LayoutSpec(idx, C);
}

inline Tensor random_tensor(Shape shape, std::mt19937_64& gen, double scale = 1.0) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> n(0.0, scale);
  for (double& v : t.vec()) v = n(gen);
  return t;
}

inline SignalBlock random_block(std::size_t C, std::size_t T, std::mt19937_64& gen, double rate = 128.0) {
  return SignalBlock(random_tensor({C, T}, gen), rate);
}

}  // namespace cafe::test
