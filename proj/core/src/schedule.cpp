#include "vgd/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "vgd/error.hpp"

namespace vgd {

NoiseSchedule NoiseSchedule::cosine(std::size_t T, double s, double min_alpha, double max_alpha) {
  if (T == 0) throw ConfigError("noise schedule needs T >= 1");
  if (!(s >= 0.0) || !(0.0 < min_alpha && min_alpha < max_alpha && max_alpha <= 1.0))
    throw ConfigError("invalid cosine schedule parameters");
  auto profile = [&](double t) {
    const double c = std::cos((t / static_cast<double>(T) + s) / (1.0 + s) * std::numbers::pi / 2.0);
    return c * c;
  };
  std::vector<double> alphas(T);
  const double f0 = profile(0.0);
  double prev = 1.0;
  for (std::size_t t = 1; t <= T; ++t) {
    const double bar = profile(static_cast<double>(t)) / f0;
    alphas[t - 1] = std::clamp(bar / prev, min_alpha, max_alpha);
    prev = bar;
  }
  NoiseSchedule sched = from_alphas(std::move(alphas));
  sched.family_ = "cosine";
  sched.offset_ = s;
  sched.min_alpha_ = min_alpha;
  sched.max_alpha_ = max_alpha;
  return sched;
}

NoiseSchedule NoiseSchedule::from_alphas(std::vector<double> alphas) {
  if (alphas.empty()) throw ConfigError("noise schedule needs T >= 1");
  NoiseSchedule sched;
  sched.alpha_.assign(1, 1.0);
  sched.alpha_bar_.assign(1, 1.0);
  for (double a : alphas) {
    if (!(a > 0.0 && a <= 1.0)) throw ConfigError("schedule alpha must lie in (0, 1]");
    sched.alpha_.push_back(a);
    sched.alpha_bar_.push_back(sched.alpha_bar_.back() * a);
  }
  return sched;
}

}  // namespace vgd
