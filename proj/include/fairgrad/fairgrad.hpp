#pragma once

#include "fairgrad/aggregators.hpp"
#include "fairgrad/core_types.hpp"
#include "fairgrad/fairness.hpp"
#include "fairgrad/metrics.hpp"
#include "fairgrad/min_norm.hpp"
#include "fairgrad/optimizer.hpp"
#include "fairgrad/pareto.hpp"
#include "fairgrad/random.hpp"
#include "fairgrad/toybench.hpp"
#include "fairgrad/weight_solver.hpp"
