// SPDX-License-Identifier: Apache-2.0
//
// Scalar parameter counts by module.

#pragma once

#include <cstddef>
#include <map>
#include <string>

#include "gret/config.hpp"
#include "gret/nn.hpp"

namespace gret {

struct ParamBreakdown {
  std::map<std::string, std::size_t> modules;  // embed, encoder, decoder, output, global, fusion
  std::size_t total = 0;
};

/// Closed-form count from the config alone (allocates nothing).
ParamBreakdown param_count(const ModelConfig& cfg);

/// Count of an instantiated store, grouped by the first name component.
ParamBreakdown count_store(const nn::ParamStore& store);

}  // namespace gret
