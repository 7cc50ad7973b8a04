#include "greedyrank/autoencoder.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace greedyrank {

namespace {

Matrix activate(const Matrix& pre, Activation a) {
  switch (a) {
    case Activation::Relu:
      return pre.cwiseMax(0.0);
    case Activation::Tanh:
      return pre.array().tanh().matrix();
  }
  return pre;
}

// Derivative of the activation evaluated from the pre-activation.
Matrix activation_slope(const Matrix& pre, Activation a) {
  switch (a) {
    case Activation::Relu:
      return (pre.array() > 0.0).cast<double>().matrix();
    case Activation::Tanh:
      return (1.0 - pre.array().tanh().square()).matrix();
  }
  return Matrix::Ones(pre.rows(), pre.cols());
}

Matrix mlp_forward(const Mlp& net, const Matrix& x, MlpCache* cache) {
  Matrix h = x;
  const std::size_t n_layers = net.weights.size();
  for (std::size_t l = 0; l < n_layers; ++l) {
    Matrix pre(h.rows(), net.weights[l].rows());
    pre.noalias() = h * net.weights[l].transpose();
    if (net.biases[l].size() > 0) pre.rowwise() += net.biases[l].row(0);
    if (cache != nullptr) {
      cache->inputs.push_back(h);
      cache->pre.push_back(pre);
    }
    h = (l + 1 < n_layers) ? activate(pre, net.activation) : std::move(pre);
  }
  return h;
}

// Returns dL/d(input).
Matrix mlp_backward(const Mlp& net, const MlpCache& cache, const Matrix& grad_out, MlpGrads& grads,
                    bool need_input_grad) {
  const std::size_t n_layers = net.weights.size();
  grads.weights.assign(n_layers, Matrix());
  grads.biases.assign(n_layers, Matrix());
  Matrix g = grad_out;
  for (std::size_t k = n_layers; k-- > 0;) {
    if (k + 1 < n_layers) g = g.cwiseProduct(activation_slope(cache.pre[k], net.activation));
    grads.weights[k].noalias() = g.transpose() * cache.inputs[k];
    if (net.biases[k].size() > 0) grads.biases[k] = g.colwise().sum();
    if (k > 0 || need_input_grad) {
      Matrix next(g.rows(), net.weights[k].cols());
      next.noalias() = g * net.weights[k];
      g = std::move(next);
    }
  }
  return g;
}

Mlp make_mlp(RandomSource& rng, const std::vector<Eigen::Index>& dims, Activation act) {
  Mlp net;
  net.activation = act;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(dims[l]));
    net.weights.push_back(gaussian_matrix(rng, dims[l + 1], dims[l], 0.0, stddev));
    net.biases.push_back(Matrix::Zero(1, dims[l + 1]));
  }
  return net;
}

}  // namespace

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::Relu:
      return "relu";
    case Activation::Tanh:
      return "tanh";
  }
  return "?";
}

Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::Relu;
  if (name == "tanh") return Activation::Tanh;
  throw std::invalid_argument("unknown activation '" + std::string(name) + "'");
}

AeModel make_linear_ae(RandomSource& rng, Eigen::Index input_dim, Eigen::Index latent_dim,
                       double init_std, Bottleneck bottleneck) {
  if (input_dim < 1 || latent_dim < 1) throw std::invalid_argument("make_linear_ae: dimensions must be >= 1");
  AeModel model;
  model.encoder.weights.push_back(gaussian_matrix(rng, latent_dim, input_dim, 0.0, init_std));
  model.encoder.biases.emplace_back();
  model.decoder.weights.push_back(gaussian_matrix(rng, input_dim, latent_dim, 0.0, init_std));
  model.decoder.biases.emplace_back();
  model.bottleneck = std::move(bottleneck);
  return model;
}

AeModel make_mlp_ae(RandomSource& rng, Eigen::Index input_dim, const std::vector<Eigen::Index>& hidden,
                    Eigen::Index latent_dim, Activation activation, Bottleneck bottleneck) {
  std::vector<Eigen::Index> dims{input_dim};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(latent_dim);
  for (auto d : dims) {
    if (d < 1) throw std::invalid_argument("make_mlp_ae: dimensions must be >= 1");
  }
  AeModel model;
  model.encoder = make_mlp(rng, dims, activation);
  model.decoder = make_mlp(rng, std::vector<Eigen::Index>(dims.rbegin(), dims.rend()), activation);
  model.bottleneck = std::move(bottleneck);
  return model;
}

Matrix bottleneck_matrix(const AeModel& model) {
  if (const auto* s = std::get_if<LinearStack>(&model.bottleneck)) return effective_matrix(*s);
  if (const auto* e = std::get_if<ExplicitSubnet>(&model.bottleneck)) return e->product();
  return Matrix::Identity(model.latent_dim(), model.latent_dim());
}

ForwardCache forward(const AeModel& model, const Matrix& x) {
  if (x.cols() != model.input_dim()) {
    throw std::invalid_argument("forward: input has " + std::to_string(x.cols()) + " columns, model expects " +
                                std::to_string(model.input_dim()));
  }
  ForwardCache cache;
  cache.version = model.version;
  cache.codes.push_back(mlp_forward(model.encoder, x, &cache.encoder));

  if (const auto* s = std::get_if<LinearStack>(&model.bottleneck)) {
    for (const auto& layer : s->layers) {
      const Matrix& prev = cache.codes.back();
      Matrix next(prev.rows(), layer.rows());
      next.noalias() = prev * layer.transpose();
      if (s->alpha != 1.0) next *= s->alpha;
      cache.codes.push_back(std::move(next));
    }
  } else if (const auto* e = std::get_if<ExplicitSubnet>(&model.bottleneck)) {
    cache.codes.push_back(cache.codes.back() * e->down.transpose());
    cache.codes.push_back(cache.codes.back() * e->up.transpose());
  }

  cache.output = mlp_forward(model.decoder, cache.codes.back(), &cache.decoder);
  return cache;
}

Matrix latent_codes(const AeModel& model, const Matrix& x) {
  if (x.cols() != model.input_dim()) throw std::invalid_argument("latent_codes: input shape mismatch");
  Matrix z = mlp_forward(model.encoder, x, nullptr);
  if (const auto* s = std::get_if<LinearStack>(&model.bottleneck)) {
    for (const auto& layer : s->layers) z = s->alpha * (z * layer.transpose());
  } else if (const auto* e = std::get_if<ExplicitSubnet>(&model.bottleneck)) {
    z = (z * e->down.transpose()) * e->up.transpose();
  }
  return z;
}

LossResult mse_loss(const Matrix& x, const Matrix& reconstruction) {
  if (x.rows() != reconstruction.rows() || x.cols() != reconstruction.cols()) {
    throw std::invalid_argument("mse_loss: shape mismatch");
  }
  const double count = static_cast<double>(x.size());
  LossResult out;
  out.grad = reconstruction - x;
  out.loss = out.grad.squaredNorm() / count;
  out.grad *= 2.0 / count;
  return out;
}

Gradients backward(const AeModel& model, const ForwardCache& cache, const Matrix& grad_output) {
  if (cache.version != model.version) {
    throw std::logic_error("backward: forward cache is stale (model version " + std::to_string(model.version) +
                           ", cache version " + std::to_string(cache.version) + ")");
  }
  if (grad_output.rows() != cache.output.rows() || grad_output.cols() != cache.output.cols()) {
    throw std::invalid_argument("backward: gradient shape mismatch");
  }
  Gradients grads;
  Matrix g = mlp_backward(model.decoder, cache.decoder, grad_output, grads.decoder, true);

  if (const auto* s = std::get_if<LinearStack>(&model.bottleneck)) {
    const int n = s->depth();
    grads.bottleneck.assign(static_cast<std::size_t>(n), Matrix());
    for (int i = n - 1; i >= 0; --i) {
      const auto ui = static_cast<std::size_t>(i);
      // dL/dW_hat_i = alpha * dZ_i^T Z_{i-1}
      grads.bottleneck[ui].noalias() = g.transpose() * cache.codes[ui];
      if (s->alpha != 1.0) grads.bottleneck[ui] *= s->alpha;
      Matrix next(g.rows(), s->layers[ui].cols());
      next.noalias() = g * s->layers[ui];
      if (s->alpha != 1.0) next *= s->alpha;
      g = std::move(next);
    }
  } else if (const auto* e = std::get_if<ExplicitSubnet>(&model.bottleneck)) {
    const Matrix& z = cache.codes[0];
    const Matrix& h = cache.codes[1];
    Matrix grad_up = g.transpose() * h;
    Matrix gh = g * e->up;
    Matrix grad_down = gh.transpose() * z;
    g = gh * e->down;
    grads.bottleneck = {std::move(grad_down), std::move(grad_up)};
  }

  mlp_backward(model.encoder, cache.encoder, g, grads.encoder, false);
  return grads;
}

std::vector<ParamSlot> parameter_slots(AeModel& model, const Gradients& grads) {
  std::vector<ParamSlot> slots;
  auto add_mlp = [&](Mlp& net, const MlpGrads& g, ParamGroup group) {
    for (std::size_t l = 0; l < net.weights.size(); ++l) slots.push_back({&net.weights[l], &g.weights[l], group});
    for (std::size_t l = 0; l < net.biases.size(); ++l) {
      if (net.biases[l].size() > 0) slots.push_back({&net.biases[l], &g.biases[l], group});
    }
  };
  add_mlp(model.encoder, grads.encoder, ParamGroup::Encoder);
  if (auto* s = std::get_if<LinearStack>(&model.bottleneck)) {
    for (std::size_t i = 0; i < s->layers.size(); ++i) {
      slots.push_back({&s->layers[i], &grads.bottleneck[i], ParamGroup::Bottleneck});
    }
  } else if (auto* e = std::get_if<ExplicitSubnet>(&model.bottleneck)) {
    slots.push_back({&e->down, &grads.bottleneck[0], ParamGroup::Bottleneck});
    slots.push_back({&e->up, &grads.bottleneck[1], ParamGroup::Bottleneck});
  }
  add_mlp(model.decoder, grads.decoder, ParamGroup::Decoder);
  return slots;
}

}  // namespace greedyrank
