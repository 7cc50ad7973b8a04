#include "greedyrank/optimizer.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace greedyrank {

namespace {

bool gradients_finite(std::span<const ParamSlot> params) {
  for (const auto& p : params) {
    if (p.grad->rows() != p.value->rows() || p.grad->cols() != p.value->cols()) {
      throw std::invalid_argument("optimizer: gradient shape does not match parameter");
    }
    if (!p.grad->allFinite()) return false;
  }
  return true;
}

}  // namespace

std::string_view to_string(OptimizerKind k) { return k == OptimizerKind::Adam ? "adam" : "gd"; }

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "gd" || name == "sgd") return OptimizerKind::Gd;
  if (name == "adam") return OptimizerKind::Adam;
  throw std::invalid_argument("unknown optimizer '" + std::string(name) + "'");
}

double OptimizerState::group_rate(ParamGroup g) const {
  switch (g) {
    case ParamGroup::Encoder:
      return learning_rate * encoder_scale;
    case ParamGroup::Bottleneck:
      return learning_rate * bottleneck_scale;
    case ParamGroup::Decoder:
      return learning_rate * decoder_scale;
  }
  return learning_rate;
}

StepOutcome sgd_step(std::span<const ParamSlot> params, OptimizerState& state) {
  if (!gradients_finite(params)) return {true};
  for (const auto& p : params) *p.value -= state.group_rate(p.group) * *p.grad;
  ++state.step;
  return {};
}

StepOutcome adam_step(std::span<const ParamSlot> params, OptimizerState& state) {
  if (!gradients_finite(params)) return {true};
  if (state.first_moment.size() != params.size()) {
    state.first_moment.clear();
    state.second_moment.clear();
    for (const auto& p : params) {
      state.first_moment.push_back(Matrix::Zero(p.value->rows(), p.value->cols()));
      state.second_moment.push_back(Matrix::Zero(p.value->rows(), p.value->cols()));
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    Matrix& m = state.first_moment[i];
    Matrix& v = state.second_moment[i];
    if (m.rows() != p.value->rows() || m.cols() != p.value->cols()) {
      throw std::invalid_argument("adam_step: moment shape does not match parameter");
    }
    m = state.beta1 * m + (1.0 - state.beta1) * *p.grad;
    v = state.beta2 * v + (1.0 - state.beta2) * p.grad->cwiseAbs2();
    const double rate = state.group_rate(p.group);
    p.value->array() -=
        rate * (m.array() / correction1) / ((v.array() / correction2).sqrt() + state.epsilon);
  }
  return {};
}

StepOutcome apply_step(AeModel& model, const Gradients& grads, OptimizerState& state) {
  const auto slots = parameter_slots(model, grads);
  const StepOutcome out =
      state.kind == OptimizerKind::Adam ? adam_step(slots, state) : sgd_step(slots, state);
  if (!out.diverged) ++model.version;
  return out;
}

}  // namespace greedyrank
