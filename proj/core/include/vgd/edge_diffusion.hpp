#pragma once

// Discrete diffusion over categorical edges with node coordinates held fixed (stage two).
// Only the strict upper triangle is noised, scored and sampled; the lower triangle mirrors
// it and the diagonal stays background.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "vgd/batch.hpp"
#include "vgd/nets.hpp"
#include "vgd/rng.hpp"
#include "vgd/schedule.hpp"
#include "vgd/tensor.hpp"

namespace vgd {

/// Row-major c x c matrix.
class ClassMatrix {
 public:
  ClassMatrix() = default;
  explicit ClassMatrix(std::size_t c, double fill = 0.0) : c_(c), v_(c * c, fill) {}
  static ClassMatrix identity(std::size_t c);

  std::size_t classes() const noexcept { return c_; }
  double operator()(std::size_t i, std::size_t j) const { return v_[i * c_ + j]; }
  double& operator()(std::size_t i, std::size_t j) { return v_[i * c_ + j]; }
  std::span<const double> row(std::size_t i) const { return {v_.data() + i * c_, c_}; }

  ClassMatrix operator*(const ClassMatrix& rhs) const;
  double max_abs_diff(const ClassMatrix& rhs) const;

 private:
  std::size_t c_ = 0;
  std::vector<double> v_;
};

/// Marginal-preserving transitions Q[t] = alpha[t] I + (1 - alpha[t]) 1 m^T and their
/// running products Q_bar[t] = Q[1] ... Q[t] (Q_bar[0] = I), cached at construction.
class EdgeNoiseModel {
 public:
  EdgeNoiseModel() = default;
  EdgeNoiseModel(std::vector<double> marginal, NoiseSchedule schedule);

  /// Class frequencies over all strict-upper-triangle pairs of the training graphs,
  /// background included.
  static std::vector<double> estimate_marginal(std::span<const SpatialGraph> graphs, int num_classes);

  std::size_t classes() const noexcept { return marginal_.size(); }
  const std::vector<double>& marginal() const noexcept { return marginal_; }
  const NoiseSchedule& schedule() const noexcept { return schedule_; }

  /// Q[t] for t in [1, T].
  const ClassMatrix& transition(std::size_t t) const;
  /// Q_bar[t] for t in [0, T], from the explicit matrix product.
  const ClassMatrix& cumulative(std::size_t t) const;
  /// alpha_bar[t] I + (1 - alpha_bar[t]) 1 m^T.
  ClassMatrix cumulative_closed_form(std::size_t t) const;

 private:
  std::vector<double> marginal_;
  NoiseSchedule schedule_;
  std::vector<ClassMatrix> q_;      // index t, entry 0 is identity
  std::vector<ClassMatrix> q_bar_;  // index t
};

/// Q = alpha I + (1 - alpha) 1 m^T.
ClassMatrix build_transition(double alpha, std::span<const double> marginal);

/// Samples E_t for every upper pair from row E0[i][j] of Q_bar[t]; mirrors; diagonal and
/// padding stay background. `t` holds one step in [1, T] per graph.
std::vector<int> forward_noise_edges(const GraphBatch& batch, std::span<const std::size_t> t,
                                     const EdgeNoiseModel& noise, Rng& rng);

/// Posterior over the class at step t-1 of one pair, given its observed class at step t
/// and the predicted clean distribution:
///   (column e_t of Q[t]) * (e0_hat Q_bar[t-1]) / (e0_hat Q_bar[t] column e_t).
/// Throws NumericError when the normalizer is zero.
std::vector<double> edge_posterior(int e_t, std::span<const double> e0_hat, std::size_t t, const EdgeNoiseModel& noise);

/// Mixture of the exact per-class posteriors q(E_{t-1} | e_t, E_0 = j) weighted by e0_hat[j].
/// Equals edge_posterior when e0_hat is a point mass. Classes j that cannot produce e_t
/// are skipped; throws NumericError when none can.
std::vector<double> edge_posterior_mixture(int e_t, std::span<const double> e0_hat, std::size_t t,
                                           const EdgeNoiseModel& noise);

enum class PosteriorForm { kBayes, kMixture };

PosteriorForm parse_posterior_form(const std::string& name);
std::string posterior_form_name(PosteriorForm form);

/// [B,n,n] with 1 on real strict-upper pairs (i < j, both nodes present).
Tensor upper_pair_mask(const GraphBatch& batch);

struct EdgeLossOptions {
  double degree_weight = 1.0;  // 0 disables the degree term
  double temperature = 1.0;
  bool hard = true;
  bool sum_pairs = false;  // raw sum instead of mean over pairs
};

/// Cross-entropy between true classes and predicted logits over real upper pairs.
Tensor edge_ce_loss(const Tensor& logits, const GraphBatch& batch, bool sum_pairs = false);

/// Degree-histogram settings: bins 0..max_degree-1 plus an overflow bin at max_degree.
struct DegreeHistogram {
  static constexpr std::size_t kMaxDegree = 8;
  static constexpr double kSmoothing = 1e-6;
  static constexpr double kBandwidth = 0.3;
};

/// Pooled, smoothed degree histogram (kMaxDegree + 2 bins) of per-node degrees [B,n]
/// using Gaussian soft assignment to integer bin centres; differentiable in `degrees`.
Tensor degree_histogram(const Tensor& degrees, const Tensor& mask);

/// KL(p_deg(target) || p_deg(GS(logits))), pooled over the batch. Edges are drawn with the
/// Gumbel-softmax trick so the loss stays differentiable in `logits`.
Tensor degree_loss(const Tensor& logits, const GraphBatch& target, double temperature, Rng& rng, bool hard = true);

struct EdgeLoss {
  Tensor total;
  Tensor ce;
  Tensor degree;  // undefined when disabled
  std::vector<std::size_t> steps;
};

/// Corrupts the batch's edges at random steps, predicts the clean edges and returns
/// CE + degree_weight * degree.
EdgeLoss edge_loss(EdgeLogitPredictor& model, const GraphBatch& batch, const EdgeNoiseModel& noise, Rng& rng,
                   const EdgeLossOptions& options = {});

/// Same with caller-provided steps (one per graph).
EdgeLoss edge_loss(EdgeLogitPredictor& model, const GraphBatch& batch, const EdgeNoiseModel& noise,
                   std::span<const std::size_t> steps, Rng& rng, const EdgeLossOptions& options = {});

/// Reverse edge diffusion from E_T ~ m down to E_0 for every graph in `batch` (its edges
/// are ignored). Graph b draws from rngs[b]. Returns [B,n,n] labels.
std::vector<int> sample_edges(EdgeLogitPredictor& model, const GraphBatch& batch, const EdgeNoiseModel& noise,
                              std::span<Rng> rngs, PosteriorForm form = PosteriorForm::kBayes);

/// Convenience wrapper for a single coordinate set.
SpatialGraph sample_edges(EdgeLogitPredictor& model, const std::vector<Point3>& coords, const EdgeNoiseModel& noise,
                          Rng& rng, PosteriorForm form = PosteriorForm::kBayes);

}  // namespace vgd
