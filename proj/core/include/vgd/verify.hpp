#pragma once

// Built-in oracle suite behind `vgd verify`.

#include <cstdint>
#include <string>
#include <vector>

namespace vgd {

struct VerifyCheck {
  std::string name;
  bool passed = false;
  double error = 0.0;  // worst observed deviation
  double tolerance = 0.0;
  double seconds = 0.0;
};

struct VerifyOptions {
  std::uint64_t seed = 0;
  /// Fault injection: perturbs the posterior under test so the posterior check must fail.
  bool break_posterior = false;
};

/// Transition products vs closed form, posterior vs Bayes enumeration, gradient checks of
/// every primitive and both losses, and Betti numbers vs traversal oracles.
std::vector<VerifyCheck> run_verification(const VerifyOptions& options = {});

}  // namespace vgd
