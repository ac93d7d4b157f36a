#pragma once

#include <span>
#include <vector>

namespace cory {

// Token-level shaped rewards: every token pays -eta * kl_i, and the last real
// token also carries the (individual or collective) task score.
std::vector<double> shape_rewards(double task_score, std::span<const double> token_kls, double eta);

// Both agents receive r(s0, a1) + r(s0, a2).
inline double collective_reward(double r_pioneer, double r_observer) { return r_pioneer + r_observer; }

// Monitoring metric: task score minus eta times the summed sentence KL.
double combined_metric(double task_score, std::span<const double> token_kls, double eta);

}  // namespace cory
