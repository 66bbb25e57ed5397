// Umbrella header for the PGCA laboratory.
#pragma once

#include "pgca/aux_embed.hpp"
#include "pgca/checkpoint_io.hpp"
#include "pgca/config.hpp"
#include "pgca/data.hpp"
#include "pgca/eval.hpp"
#include "pgca/experiment.hpp"
#include "pgca/model.hpp"
#include "pgca/optim.hpp"
#include "pgca/reports.hpp"
#include "pgca/tensor.hpp"
#include "pgca/training.hpp"
