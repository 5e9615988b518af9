#pragma once

#include "tps/baselines.hpp"
#include "tps/bench.hpp"
#include "tps/common.hpp"
#include "tps/config.hpp"
#include "tps/density.hpp"
#include "tps/metrics.hpp"
#include "tps/model.hpp"
#include "tps/numeric.hpp"
#include "tps/oracle.hpp"
#include "tps/resampling.hpp"
#include "tps/smoother.hpp"
#include "tps/tree.hpp"
