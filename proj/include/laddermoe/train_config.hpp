// Copyright (c) 2026, laddermoe contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

#include "laddermoe/errors.hpp"

namespace laddermoe {

enum class Phase : std::uint8_t { Pretrain = 0, Plm = 1, Osf = 2 };

inline std::string_view phase_name(Phase p) {
  switch (p) {
    case Phase::Pretrain: return "pretrain";
    case Phase::Plm: return "plm";
    case Phase::Osf: return "osf";
  }
  return "unknown";
}

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t plm_epochs = 8;  // 35 in the full-scale schedule
  std::size_t osf_epochs = 2;  // 5 in the full-scale schedule
  std::size_t pretrain_epochs = 12;
  double learning_rate = 2e-3;
  double pretrain_learning_rate = 2e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;

  void validate() const {
    if (batch_size < 1) throw ParameterError("batch_size must be >= 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ParameterError("learning_rate must be > 0");
    if (!(pretrain_learning_rate > 0.0) || !std::isfinite(pretrain_learning_rate))
      throw ParameterError("pretrain_learning_rate must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ParameterError("beta1 must lie in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ParameterError("beta2 must lie in [0, 1)");
    if (!(adam_eps > 0.0)) throw ParameterError("adam_eps must be > 0");
  }
  bool operator==(const TrainConfig&) const = default;
};

}  // namespace laddermoe
