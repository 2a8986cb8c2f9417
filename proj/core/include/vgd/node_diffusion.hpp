#pragma once

// Continuous diffusion over node coordinates (stage one).

#include <cstddef>
#include <span>
#include <vector>

#include "vgd/batch.hpp"
#include "vgd/nets.hpp"
#include "vgd/rng.hpp"
#include "vgd/schedule.hpp"
#include "vgd/tensor.hpp"

namespace vgd {

/// x_t = sqrt(alpha_bar[t]) x0 + sqrt(1 - alpha_bar[t]) eps, per batch element, zero on padding.
/// `t` holds one step in [0, T] per batch element (t = 0 returns x0).
Tensor forward_noise_nodes(const Tensor& x0, const Tensor& mask, std::span<const std::size_t> t, const Tensor& eps,
                           const NoiseSchedule& schedule);

/// Standard normal noise [B,n,3], zero on padding.
Tensor sample_coordinate_noise(const Tensor& mask, Rng& rng);

struct NodeLoss {
  Tensor loss;                     // scalar
  std::vector<std::size_t> steps;  // sampled t per batch element
  Tensor noise;                    // the eps that was added
};

/// Mean squared error between added and predicted noise over real node coordinates.
/// Draws t ~ U{1..T} per batch element and eps ~ N(0, I).
NodeLoss node_loss(NodeNoisePredictor& model, const GraphBatch& batch, const NoiseSchedule& schedule, Rng& rng);

/// Same loss with caller-provided steps and noise.
Tensor node_loss(NodeNoisePredictor& model, const GraphBatch& batch, const NoiseSchedule& schedule,
                 std::span<const std::size_t> steps, const Tensor& noise);

/// One reverse step: (x_t - (1 - a_t) / sqrt(1 - abar_t) * eps_hat) / sqrt(a_t) + sqrt(1 - a_t) * z,
/// with z = 0 when t == 1.
Tensor reverse_node_step(const Tensor& x_t, const Tensor& eps_hat, const Tensor& z, const Tensor& mask, std::size_t t,
                         const NoiseSchedule& schedule);

/// Ancestral sampling of one coordinate set per entry of `counts`, run as one padded batch.
/// Graph b draws all of its noise from rngs[b].
std::vector<std::vector<Point3>> sample_nodes(NodeNoisePredictor& model, std::span<const std::size_t> counts,
                                              const NoiseSchedule& schedule, std::span<Rng> rngs);

std::vector<Point3> sample_nodes(NodeNoisePredictor& model, std::size_t n, const NoiseSchedule& schedule, Rng& rng);

}  // namespace vgd
