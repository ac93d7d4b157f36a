#include "cory/rewards.hpp"

#include <cmath>
#include <stdexcept>

namespace cory {

namespace {
void check(std::span<const double> token_kls, double eta) {
  if (token_kls.empty()) throw std::invalid_argument("reward shaping needs at least one token");
  if (!(eta >= 0.0)) throw std::invalid_argument("eta must be >= 0");
  for (double k : token_kls)
    if (!(k >= 0.0) || !std::isfinite(k)) throw std::invalid_argument("token KL must be finite and >= 0");
}
}  // namespace

std::vector<double> shape_rewards(double task_score, std::span<const double> token_kls, double eta) {
  check(token_kls, eta);
  std::vector<double> out(token_kls.size());
  for (std::size_t i = 0; i < token_kls.size(); ++i) out[i] = -eta * token_kls[i];
  out.back() = task_score - eta * token_kls.back();
  return out;
}

double combined_metric(double task_score, std::span<const double> token_kls, double eta) {
  check(token_kls, eta);
  double kl = 0.0;
  for (double k : token_kls) kl += k;
  return task_score - eta * kl;
}

}  // namespace cory
