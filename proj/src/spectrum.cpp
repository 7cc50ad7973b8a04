#include "greedyrank/spectrum.hpp"

#include <algorithm>
#include <stdexcept>

namespace greedyrank {

namespace {

void validate_spectrum(std::span<const double> sv) {
  for (std::size_t i = 0; i < sv.size(); ++i) {
    if (!(sv[i] >= 0.0)) throw std::invalid_argument("estimate_rank: singular values must be non-negative");
    if (i > 0 && sv[i] > sv[i - 1]) throw std::invalid_argument("estimate_rank: singular values must be non-increasing");
  }
}

}  // namespace

std::size_t estimate_rank(std::span<const double> singular_values, double threshold) {
  validate_spectrum(singular_values);
  if (singular_values.empty() || singular_values.front() == 0.0) return 0;
  const double top = singular_values.front();
  return static_cast<std::size_t>(
      std::count_if(singular_values.begin(), singular_values.end(), [&](double s) { return s / top > threshold; }));
}

SpectrumReport spectrum_report(std::vector<double> singular_values, double threshold) {
  SpectrumReport r;
  r.rank = estimate_rank(singular_values, threshold);
  r.threshold = threshold;
  r.normalized_values.assign(singular_values.size(), 0.0);
  if (!singular_values.empty() && singular_values.front() > 0.0) {
    for (std::size_t i = 0; i < singular_values.size(); ++i) {
      r.normalized_values[i] = singular_values[i] / singular_values.front();
    }
  }
  r.singular_values = std::move(singular_values);
  return r;
}

SpectrumReport latent_spectrum(const Matrix& codes, double threshold) {
  return spectrum_report(singular_values(codes), threshold);
}

double balance_residual(const LinearStack& stack) {
  double worst = 0.0;
  for (int i = 0; i + 1 < stack.depth(); ++i) {
    const Matrix lower = stack.effective_layer(i);
    const Matrix upper = stack.effective_layer(i + 1);
    worst = std::max(worst, (upper.transpose() * upper - lower * lower.transpose()).norm());
  }
  return worst;
}

}  // namespace greedyrank
