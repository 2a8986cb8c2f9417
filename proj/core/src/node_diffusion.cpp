#include "vgd/node_diffusion.hpp"

#include <cmath>

#include "vgd/error.hpp"

namespace vgd {

namespace {

void check_steps(std::span<const std::size_t> t, std::size_t batch, const NoiseSchedule& schedule, bool allow_zero) {
  if (t.size() != batch) throw ShapeError("need one timestep per batch element");
  for (auto s : t)
    if (s > schedule.steps() || (!allow_zero && s == 0))
      throw ConfigError("timestep " + std::to_string(s) + " outside [1, " + std::to_string(schedule.steps()) + "]");
}

/// [B,n,3] tensor holding value_b for every coordinate of batch element b.
Tensor per_graph_constant(const Shape& shape, std::span<const double> values) {
  const std::size_t per = shape[1] * shape[2];
  std::vector<double> out(shape_numel(shape));
  for (std::size_t b = 0; b < shape[0]; ++b) std::fill_n(out.begin() + b * per, per, values[b]);
  return Tensor(shape, std::move(out));
}

}  // namespace

Tensor forward_noise_nodes(const Tensor& x0, const Tensor& mask, std::span<const std::size_t> t, const Tensor& eps,
                           const NoiseSchedule& schedule) {
  if (x0.shape() != eps.shape()) throw ShapeError("forward_noise_nodes: x0 " + shape_str(x0.shape()) + " vs eps " + shape_str(eps.shape()));
  check_steps(t, x0.dim(0), schedule, true);
  std::vector<double> keep(t.size()), noise(t.size());
  for (std::size_t b = 0; b < t.size(); ++b) {
    keep[b] = std::sqrt(schedule.alpha_bar(t[b]));
    noise[b] = std::sqrt(1.0 - schedule.alpha_bar(t[b]));
  }
  const Tensor m3 = coordinate_mask(mask);
  return mul(add(mul(x0, per_graph_constant(x0.shape(), keep)), mul(eps, per_graph_constant(x0.shape(), noise))), m3);
}

Tensor sample_coordinate_noise(const Tensor& mask, Rng& rng) {
  std::vector<double> out(mask.numel() * 3, 0.0);
  for (std::size_t r = 0; r < mask.numel(); ++r)
    if (mask[r] != 0.0)
      for (std::size_t a = 0; a < 3; ++a) out[r * 3 + a] = standard_normal(rng);
  return Tensor({mask.dim(0), mask.dim(1), 3}, std::move(out));
}

Tensor node_loss(NodeNoisePredictor& model, const GraphBatch& batch, const NoiseSchedule& schedule,
                 std::span<const std::size_t> steps, const Tensor& noise) {
  check_steps(steps, batch.batch_size(), schedule, false);
  const Tensor m3 = coordinate_mask(batch.mask);
  const Tensor eps = mul(noise, m3);
  const Tensor x_t = forward_noise_nodes(batch.coords, batch.mask, steps, eps, schedule);
  const Tensor pred = model.predict_noise(x_t, batch.mask, steps);
  double real = 0.0;
  for (double v : m3.data()) real += v;
  if (real == 0.0) throw ConfigError("node_loss: batch has no real nodes");
  return scale(sum(mul(square(sub(eps, pred)), m3)), 1.0 / real);
}

NodeLoss node_loss(NodeNoisePredictor& model, const GraphBatch& batch, const NoiseSchedule& schedule, Rng& rng) {
  NodeLoss out;
  std::uniform_int_distribution<std::size_t> step(1, schedule.steps());
  for (std::size_t b = 0; b < batch.batch_size(); ++b) out.steps.push_back(step(rng));
  out.noise = sample_coordinate_noise(batch.mask, rng);
  out.loss = node_loss(model, batch, schedule, out.steps, out.noise);
  return out;
}

Tensor reverse_node_step(const Tensor& x_t, const Tensor& eps_hat, const Tensor& z, const Tensor& mask, std::size_t t,
                         const NoiseSchedule& schedule) {
  if (t == 0 || t > schedule.steps()) throw ConfigError("reverse_node_step: t out of range");
  const double a = schedule.alpha(t);
  const double abar = schedule.alpha_bar(t);
  const double coef = (1.0 - a) / std::sqrt(1.0 - abar);
  const double inv_sqrt_a = 1.0 / std::sqrt(a);
  const double sigma = t > 1 ? std::sqrt(1.0 - a) : 0.0;
  std::vector<double> out(x_t.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = inv_sqrt_a * (x_t[i] - coef * eps_hat[i]) + sigma * z[i];
    if (mask[i / 3] == 0.0) out[i] = 0.0;
  }
  return Tensor(x_t.shape(), std::move(out));
}

std::vector<std::vector<Point3>> sample_nodes(NodeNoisePredictor& model, std::span<const std::size_t> counts,
                                              const NoiseSchedule& schedule, std::span<Rng> rngs) {
  if (counts.size() != rngs.size()) throw ConfigError("sample_nodes: need one generator per graph");
  if (counts.empty()) return {};
  std::size_t n = 0;
  for (auto c : counts) {
    if (c == 0) throw ConfigError("sample_nodes: n >= 1 required");
    n = std::max(n, c);
  }
  const std::size_t B = counts.size();
  std::vector<double> mask_values(B * n, 0.0);
  for (std::size_t b = 0; b < B; ++b) std::fill_n(mask_values.begin() + b * n, counts[b], 1.0);
  const Tensor mask({B, n}, std::move(mask_values));

  auto draw = [&] {
    std::vector<double> z(B * n * 3, 0.0);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t i = 0; i < counts[b] * 3; ++i) z[b * n * 3 + i] = standard_normal(rngs[b]);
    return Tensor({B, n, 3}, std::move(z));
  };

  Tensor x = draw();
  const Tensor zeros = Tensor::zeros({B, n, 3});
  for (std::size_t t = schedule.steps(); t >= 1; --t) {
    const std::vector<std::size_t> steps(B, t);
    const Tensor eps_hat = model.predict_noise(x, mask, steps);
    x = reverse_node_step(x, eps_hat, t > 1 ? draw() : zeros, mask, t, schedule);
  }
  std::vector<std::vector<Point3>> out(B);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < counts[b]; ++i)
      out[b].push_back({x[(b * n + i) * 3], x[(b * n + i) * 3 + 1], x[(b * n + i) * 3 + 2]});
  return out;
}

std::vector<Point3> sample_nodes(NodeNoisePredictor& model, std::size_t n, const NoiseSchedule& schedule, Rng& rng) {
  const std::size_t counts[1] = {n};
  return sample_nodes(model, counts, schedule, std::span<Rng>(&rng, 1)).front();
}

}  // namespace vgd
