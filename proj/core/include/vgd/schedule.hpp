#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace vgd {

/// Per-step retention alpha[1..T] and cumulative products alpha_bar[0..T], alpha_bar[0] = 1.
/// Shared by the coordinate and the edge diffusion.
class NoiseSchedule {
 public:
  static constexpr double kDefaultOffset = 0.008;
  static constexpr double kMinAlpha = 0.001;
  static constexpr double kMaxAlpha = 0.9999;

  NoiseSchedule() = default;

  /// Squared-cosine alpha_bar profile with offset `s`; each per-step alpha is clipped to
  /// [min_alpha, max_alpha] and alpha_bar is rebuilt as the running product.
  static NoiseSchedule cosine(std::size_t T, double s = kDefaultOffset, double min_alpha = kMinAlpha,
                              double max_alpha = kMaxAlpha);

  /// Arbitrary per-step alphas (index 0 is step 1), each in (0, 1].
  static NoiseSchedule from_alphas(std::vector<double> alphas);

  std::size_t steps() const noexcept { return alpha_.size() - 1; }
  /// Valid for t in [1, T].
  double alpha(std::size_t t) const { return alpha_.at(t); }
  /// Valid for t in [0, T].
  double alpha_bar(std::size_t t) const { return alpha_bar_.at(t); }

  const std::string& family() const noexcept { return family_; }
  double offset() const noexcept { return offset_; }
  double min_alpha() const noexcept { return min_alpha_; }
  double max_alpha() const noexcept { return max_alpha_; }

  friend bool operator==(const NoiseSchedule&, const NoiseSchedule&) = default;

 private:
  std::vector<double> alpha_{1.0};      // alpha_[0] unused, kept at 1
  std::vector<double> alpha_bar_{1.0};
  std::string family_ = "custom";
  double offset_ = 0.0;
  double min_alpha_ = 0.0;
  double max_alpha_ = 1.0;
};

}  // namespace vgd
