#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "greedyrank/autoencoder.hpp"

namespace greedyrank {

enum class OptimizerKind { Gd, Adam };

std::string_view to_string(OptimizerKind k);
OptimizerKind parse_optimizer(std::string_view name);

struct OptimizerState {
  OptimizerKind kind = OptimizerKind::Gd;
  double learning_rate = 0.03;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Rate multipliers per parameter group.
  double encoder_scale = 1.0;
  double bottleneck_scale = 1.0;
  double decoder_scale = 1.0;
  std::uint64_t step = 0;
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;

  double group_rate(ParamGroup g) const;
};

struct StepOutcome {
  /// Set when a gradient held NaN/Inf; no parameter is touched in that case.
  bool diverged = false;
};

StepOutcome sgd_step(std::span<const ParamSlot> params, OptimizerState& state);
/// Bias-corrected Adam.
StepOutcome adam_step(std::span<const ParamSlot> params, OptimizerState& state);

/// Dispatches on state.kind and bumps model.version after a successful step.
StepOutcome apply_step(AeModel& model, const Gradients& grads, OptimizerState& state);

}  // namespace greedyrank
