// SPDX-License-Identifier: Apache-2.0
// Umbrella header.
#pragma once

#include "tcrnn/commands.hpp"
#include "tcrnn/config.hpp"
#include "tcrnn/error.hpp"
#include "tcrnn/factorized_linear.hpp"
#include "tcrnn/metrics_eval.hpp"
#include "tcrnn/model.hpp"
#include "tcrnn/music_data.hpp"
#include "tcrnn/recurrent_cells.hpp"
#include "tcrnn/serialize.hpp"
#include "tcrnn/tensor_core.hpp"
#include "tcrnn/training.hpp"
