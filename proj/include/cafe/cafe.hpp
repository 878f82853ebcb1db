#pragma once

#include "cafe/error.hpp"
#include "cafe/rng.hpp"
#include "cafe/tensor.hpp"
#include "cafe/montage.hpp"
#include "cafe/signal.hpp"
#include "cafe/numerics.hpp"
#include "cafe/predictor.hpp"
#include "cafe/rollout.hpp"
#include "cafe/metrics.hpp"
#include "cafe/training.hpp"
#include "cafe/synthdata.hpp"
#include "cafe/config.hpp"
#include "cafe/ablation.hpp"
#include "cafe/gradcheck.hpp"
