#pragma once

#include <cstdint>
#include <stdexcept>

namespace trialbart {

struct McmcConfig {
  int n_iter = 1100;
  int n_burn = 100;
  std::uint64_t seed = 0;

  int num_draws() const { return n_iter - n_burn; }

  void validate() const {
    if (n_iter <= 0) throw std::invalid_argument("mcmc: n_iter must be positive");
    if (n_burn < 0 || n_burn >= n_iter) {
      throw std::invalid_argument("mcmc: need 0 <= n_burn < n_iter");
    }
  }
};

}  // namespace trialbart
