#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "cory/model.hpp"
#include "cory/mdp.hpp"
#include "cory/rng.hpp"

namespace fixtures {

// <pad>=0, <eos>=1, <sep>=2 followed by `extra` plain symbols s0, s1, ...
inline cory::Vocab small_vocab(std::size_t extra = 3) {
  std::vector<std::string> symbols = {"<pad>", "<eos>", "<sep>"};
  for (std::size_t i = 0; i < extra; ++i) symbols.push_back("s" + std::to_string(i));
  return cory::Vocab(symbols);
}

// A model with every parameter (heads included) drawn uniformly from
// [-scale, scale], so gradients through every slice are non-trivial.
inline cory::ParamStore random_model(const cory::ModelDims& dims, std::uint64_t seed, double scale = 0.5) {
  cory::ParamStore m(dims);
  cory::Rng rng = cory::make_rng(seed, {0xf1});
  for (auto& p : m.params()) p = scale * (2.0 * cory::uniform01(rng) - 1.0);
  return m;
}

inline double rel_err(double a, double b) {
  const double denom = std::max({std::abs(a), std::abs(b), 1e-8});
  return std::abs(a - b) / denom;
}

}  // namespace fixtures
