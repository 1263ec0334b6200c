#ifndef GPDPM_GPDPM_HPP
#define GPDPM_GPDPM_HPP

#include "gpdpm/bench.hpp"
#include "gpdpm/block_solver.hpp"
#include "gpdpm/cg.hpp"
#include "gpdpm/config.hpp"
#include "gpdpm/csv.hpp"
#include "gpdpm/data_model.hpp"
#include "gpdpm/ep.hpp"
#include "gpdpm/fit.hpp"
#include "gpdpm/kernels.hpp"
#include "gpdpm/linalg.hpp"
#include "gpdpm/model_io.hpp"
#include "gpdpm/normal.hpp"
#include "gpdpm/objective.hpp"
#include "gpdpm/predict.hpp"
#include "gpdpm/quantile.hpp"
#include "gpdpm/synth.hpp"

#endif
