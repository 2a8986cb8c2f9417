#include "vgd/edge_diffusion.hpp"

#include <cmath>
#include <numeric>

#include "vgd/error.hpp"

namespace vgd {

namespace {

int sample_categorical(std::span<const double> probs, Rng& rng) {
  const double u = uniform01(rng);
  double acc = 0.0;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    acc += probs[k];
    if (u < acc) return static_cast<int>(k);
  }
  // Rounding left u above the final partial sum: take the last class with mass.
  for (std::size_t k = probs.size(); k-- > 0;)
    if (probs[k] > 0.0) return static_cast<int>(k);
  return 0;
}

}  // namespace

ClassMatrix ClassMatrix::identity(std::size_t c) {
  ClassMatrix m(c);
  for (std::size_t i = 0; i < c; ++i) m(i, i) = 1.0;
  return m;
}

ClassMatrix ClassMatrix::operator*(const ClassMatrix& rhs) const {
  if (c_ != rhs.c_) throw ShapeError("ClassMatrix product: size mismatch");
  ClassMatrix out(c_);
  for (std::size_t i = 0; i < c_; ++i)
    for (std::size_t k = 0; k < c_; ++k)
      for (std::size_t j = 0; j < c_; ++j) out(i, j) += (*this)(i, k) * rhs(k, j);
  return out;
}

double ClassMatrix::max_abs_diff(const ClassMatrix& rhs) const {
  double worst = 0.0;
  for (std::size_t i = 0; i < v_.size(); ++i) worst = std::max(worst, std::abs(v_[i] - rhs.v_[i]));
  return worst;
}

ClassMatrix build_transition(double alpha, std::span<const double> marginal) {
  const std::size_t c = marginal.size();
  ClassMatrix q(c);
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < c; ++j) q(i, j) = (i == j ? alpha : 0.0) + (1.0 - alpha) * marginal[j];
  return q;
}

EdgeNoiseModel::EdgeNoiseModel(std::vector<double> marginal, NoiseSchedule schedule)
    : marginal_(std::move(marginal)), schedule_(std::move(schedule)) {
  if (marginal_.size() < 2) throw ConfigError("edge marginal needs at least 2 classes");
  double total = 0.0;
  for (double p : marginal_) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw ConfigError("edge marginal entries must be finite and >= 0");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("edge marginal must sum to 1");
  const std::size_t c = marginal_.size();
  q_.push_back(ClassMatrix::identity(c));
  q_bar_.push_back(ClassMatrix::identity(c));
  for (std::size_t t = 1; t <= schedule_.steps(); ++t) {
    q_.push_back(build_transition(schedule_.alpha(t), marginal_));
    q_bar_.push_back(q_bar_.back() * q_.back());
  }
}

std::vector<double> EdgeNoiseModel::estimate_marginal(std::span<const SpatialGraph> graphs, int num_classes) {
  if (num_classes < 2) throw ConfigError("estimate_marginal: need at least 2 classes");
  std::vector<double> counts(static_cast<std::size_t>(num_classes), 0.0);
  double pairs = 0.0;
  for (const auto& g : graphs) {
    for (std::size_t i = 0; i < g.size(); ++i)
      for (std::size_t j = i + 1; j < g.size(); ++j) {
        const int label = g.edge(i, j);
        if (label < 0 || label >= num_classes) throw ValidationError("estimate_marginal: label out of range");
        counts[static_cast<std::size_t>(label)] += 1.0;
        pairs += 1.0;
      }
  }
  if (pairs == 0.0) throw ConfigError("estimate_marginal: training graphs have no node pairs");
  for (auto& v : counts) v /= pairs;
  return counts;
}

const ClassMatrix& EdgeNoiseModel::transition(std::size_t t) const {
  if (t == 0 || t > schedule_.steps()) throw ConfigError("transition: t must lie in [1, T]");
  return q_[t];
}

const ClassMatrix& EdgeNoiseModel::cumulative(std::size_t t) const {
  if (t > schedule_.steps()) throw ConfigError("cumulative: t must lie in [0, T]");
  return q_bar_[t];
}

ClassMatrix EdgeNoiseModel::cumulative_closed_form(std::size_t t) const {
  return build_transition(schedule_.alpha_bar(t), marginal_);
}

std::vector<int> forward_noise_edges(const GraphBatch& batch, std::span<const std::size_t> t, const EdgeNoiseModel& noise,
                                     Rng& rng) {
  const std::size_t B = batch.batch_size(), n = batch.max_nodes;
  if (t.size() != B) throw ShapeError("forward_noise_edges: need one timestep per graph");
  if (static_cast<std::size_t>(batch.num_classes) != noise.classes())
    throw ConfigError("forward_noise_edges: class count does not match the noise model");
  std::vector<int> out(B * n * n, kBackground);
  for (std::size_t b = 0; b < B; ++b) {
    if (t[b] == 0 || t[b] > noise.schedule().steps()) throw ConfigError("forward_noise_edges: t must lie in [1, T]");
    const ClassMatrix& qbar = noise.cumulative(t[b]);
    for (std::size_t i = 0; i < batch.sizes[b]; ++i)
      for (std::size_t j = i + 1; j < batch.sizes[b]; ++j) {
        const int label = sample_categorical(qbar.row(static_cast<std::size_t>(batch.edge(b, i, j))), rng);
        out[(b * n + i) * n + j] = label;
        out[(b * n + j) * n + i] = label;
      }
  }
  return out;
}

std::vector<double> edge_posterior(int e_t, std::span<const double> e0_hat, std::size_t t, const EdgeNoiseModel& noise) {
  const std::size_t c = noise.classes();
  if (e0_hat.size() != c) throw ShapeError("edge_posterior: distribution has wrong class count");
  if (e_t < 0 || static_cast<std::size_t>(e_t) >= c) throw ConfigError("edge_posterior: class out of range");
  const auto kt = static_cast<std::size_t>(e_t);
  const ClassMatrix& q = noise.transition(t);
  const ClassMatrix& qbar_prev = noise.cumulative(t - 1);
  const ClassMatrix& qbar = noise.cumulative(t);

  double denom = 0.0;
  for (std::size_t j = 0; j < c; ++j) denom += e0_hat[j] * qbar(j, kt);
  if (!(denom > 0.0)) throw NumericError("edge_posterior: zero normalizer for observed class " + std::to_string(e_t));
  std::vector<double> post(c, 0.0);
  for (std::size_t k = 0; k < c; ++k) {
    double prior = 0.0;
    for (std::size_t j = 0; j < c; ++j) prior += e0_hat[j] * qbar_prev(j, k);
    post[k] = q(k, kt) * prior / denom;
  }
  return post;
}

std::vector<double> edge_posterior_mixture(int e_t, std::span<const double> e0_hat, std::size_t t,
                                           const EdgeNoiseModel& noise) {
  const std::size_t c = noise.classes();
  if (e0_hat.size() != c) throw ShapeError("edge_posterior_mixture: distribution has wrong class count");
  if (e_t < 0 || static_cast<std::size_t>(e_t) >= c) throw ConfigError("edge_posterior_mixture: class out of range");
  const auto kt = static_cast<std::size_t>(e_t);
  const ClassMatrix& q = noise.transition(t);
  const ClassMatrix& qbar_prev = noise.cumulative(t - 1);
  const ClassMatrix& qbar = noise.cumulative(t);

  std::vector<double> post(c, 0.0);
  double weight = 0.0;
  for (std::size_t j = 0; j < c; ++j) {
    const double denom = qbar(j, kt);
    if (!(denom > 0.0) || e0_hat[j] == 0.0) continue;
    weight += e0_hat[j];
    for (std::size_t k = 0; k < c; ++k) post[k] += e0_hat[j] * q(k, kt) * qbar_prev(j, k) / denom;
  }
  if (!(weight > 0.0))
    throw NumericError("edge_posterior_mixture: no clean class can produce observed class " + std::to_string(e_t));
  for (double& v : post) v /= weight;
  return post;
}

PosteriorForm parse_posterior_form(const std::string& name) {
  if (name == "bayes") return PosteriorForm::kBayes;
  if (name == "mixture") return PosteriorForm::kMixture;
  throw ConfigError("unknown posterior form '" + name + "' (expected bayes or mixture)");
}

std::string posterior_form_name(PosteriorForm form) { return form == PosteriorForm::kBayes ? "bayes" : "mixture"; }

Tensor upper_pair_mask(const GraphBatch& batch) {
  const std::size_t B = batch.batch_size(), n = batch.max_nodes;
  std::vector<double> out(B * n * n, 0.0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < batch.sizes[b]; ++i)
      for (std::size_t j = i + 1; j < batch.sizes[b]; ++j) out[(b * n + i) * n + j] = 1.0;
  return Tensor({B, n, n}, std::move(out));
}

Tensor edge_ce_loss(const Tensor& logits, const GraphBatch& batch, bool sum_pairs) {
  const std::size_t B = batch.batch_size(), n = batch.max_nodes;
  const Tensor target = one_hot_edges(batch.edges, B, n, batch.num_classes);
  if (logits.shape() != target.shape())
    throw ShapeError("edge_ce_loss: logits " + shape_str(logits.shape()) + " vs target " + shape_str(target.shape()));
  const Tensor upper = upper_pair_mask(batch);
  double pairs = 0.0;
  for (double v : upper.data()) pairs += v;
  const Tensor picked = sum_axis(mul(log_softmax(logits), target), 3);
  const Tensor total = sum(mul(picked, upper));
  if (sum_pairs) return scale(total, -1.0);
  return scale(total, pairs > 0.0 ? -1.0 / pairs : 0.0);
}

Tensor degree_histogram(const Tensor& degrees, const Tensor& mask) {
  constexpr std::size_t K = DegreeHistogram::kMaxDegree + 2;
  constexpr double eps = DegreeHistogram::kSmoothing;
  if (degrees.shape() != mask.shape()) throw ShapeError("degree_histogram: degrees and mask shapes differ");
  const std::size_t rows = degrees.numel();
  double nodes = 0.0;
  for (double v : mask.data()) nodes += v;
  if (nodes == 0.0) throw ConfigError("degree_histogram: no real nodes");

  std::vector<double> centres(rows * K);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = 0; k < K; ++k) centres[r * K + k] = static_cast<double>(k);
  const Tensor spread = matmul(reshape(degrees, {rows, 1}), Tensor::full({1, K}, 1.0));
  const double inv = -1.0 / (2.0 * DegreeHistogram::kBandwidth * DegreeHistogram::kBandwidth);
  const Tensor assign = softmax(scale(square(sub(spread, Tensor({rows, K}, std::move(centres)))), inv));
  const Tensor pooled = matmul(reshape(mask.detach(), {1, rows}), assign);
  const Tensor normalized = scale(pooled, 1.0 / nodes);
  return reshape(scale(add_scalar(normalized, eps), 1.0 / (1.0 + static_cast<double>(K) * eps)), {K});
}

namespace {

Tensor target_degrees(const GraphBatch& batch) {
  const std::size_t B = batch.batch_size(), n = batch.max_nodes;
  std::vector<double> deg(B * n, 0.0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < batch.sizes[b]; ++i)
      for (std::size_t j = 0; j < batch.sizes[b]; ++j)
        if (i != j && batch.edge(b, i, j) != kBackground) deg[b * n + i] += 1.0;
  return Tensor({B, n}, std::move(deg));
}

}  // namespace

Tensor degree_loss(const Tensor& logits, const GraphBatch& target, double temperature, Rng& rng, bool hard) {
  if (!(temperature > 0.0)) throw ConfigError("degree_loss: temperature must be positive");
  const std::size_t B = target.batch_size(), n = target.max_nodes;
  const auto c = static_cast<std::size_t>(target.num_classes);
  if (logits.shape() != Shape{B, n, n, c}) throw ShapeError("degree_loss: logits shape " + shape_str(logits.shape()));

  const Tensor sample = gumbel_softmax(logits, temperature, hard, rng);
  const Tensor presence = reshape(add_scalar(scale(slice(sample, 0, 1), -1.0), 1.0), {B, n, n});
  const Tensor upper = mul(presence, upper_pair_mask(target));
  const Tensor degrees = sum_axis(add(upper, transpose(upper, 1, 2)), 2);

  const Tensor predicted = degree_histogram(degrees, target.mask);
  const Tensor expected = degree_histogram(target_degrees(target), target.mask);
  return sum(mul(expected, sub(log(expected), log(predicted))));
}

EdgeLoss edge_loss(EdgeLogitPredictor& model, const GraphBatch& batch, const EdgeNoiseModel& noise,
                   std::span<const std::size_t> steps, Rng& rng, const EdgeLossOptions& options) {
  const std::size_t B = batch.batch_size(), n = batch.max_nodes;
  EdgeLoss out;
  out.steps.assign(steps.begin(), steps.end());
  const std::vector<int> noisy = forward_noise_edges(batch, steps, noise, rng);
  const Tensor logits =
      model.predict_logits(one_hot_edges(noisy, B, n, batch.num_classes), batch.coords, batch.mask, steps);
  out.ce = edge_ce_loss(logits, batch, options.sum_pairs);
  out.total = out.ce;
  if (options.degree_weight != 0.0) {
    out.degree = degree_loss(logits, batch, options.temperature, rng, options.hard);
    out.total = add(out.ce, scale(out.degree, options.degree_weight));
  }
  return out;
}

EdgeLoss edge_loss(EdgeLogitPredictor& model, const GraphBatch& batch, const EdgeNoiseModel& noise, Rng& rng,
                   const EdgeLossOptions& options) {
  std::uniform_int_distribution<std::size_t> step(1, noise.schedule().steps());
  std::vector<std::size_t> steps;
  for (std::size_t b = 0; b < batch.batch_size(); ++b) steps.push_back(step(rng));
  return edge_loss(model, batch, noise, steps, rng, options);
}

std::vector<int> sample_edges(EdgeLogitPredictor& model, const GraphBatch& batch, const EdgeNoiseModel& noise,
                              std::span<Rng> rngs, PosteriorForm form) {
  const std::size_t B = batch.batch_size(), n = batch.max_nodes;
  const std::size_t c = noise.classes();
  if (rngs.size() != B) throw ConfigError("sample_edges: need one generator per graph");
  if (static_cast<std::size_t>(model.num_classes()) != c || static_cast<std::size_t>(batch.num_classes) != c)
    throw ConfigError("sample_edges: class count mismatch between model, batch and noise model");

  std::vector<int> state(B * n * n, kBackground);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < batch.sizes[b]; ++i)
      for (std::size_t j = i + 1; j < batch.sizes[b]; ++j) {
        const int label = sample_categorical(noise.marginal(), rngs[b]);
        state[(b * n + i) * n + j] = label;
        state[(b * n + j) * n + i] = label;
      }

  for (std::size_t t = noise.schedule().steps(); t >= 1; --t) {
    const std::vector<std::size_t> steps(B, t);
    const Tensor probs =
        softmax(model.predict_logits(one_hot_edges(state, B, n, batch.num_classes), batch.coords, batch.mask, steps));
    std::vector<int> next(B * n * n, kBackground);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t i = 0; i < batch.sizes[b]; ++i)
        for (std::size_t j = i + 1; j < batch.sizes[b]; ++j) {
          const std::size_t pair = (b * n + i) * n + j;
          std::vector<double> post;
          try {
            const auto e0_hat = probs.data().subspan(pair * c, c);
            post = form == PosteriorForm::kBayes ? edge_posterior(state[pair], e0_hat, t, noise)
                                                 : edge_posterior_mixture(state[pair], e0_hat, t, noise);
          } catch (const NumericError& e) {
            throw NumericError(std::string(e.what()) + " at graph " + std::to_string(b) + " pair (" +
                               std::to_string(i) + "," + std::to_string(j) + "), t = " + std::to_string(t));
          }
          const int label = sample_categorical(post, rngs[b]);
          next[pair] = label;
          next[(b * n + j) * n + i] = label;
        }
    state = std::move(next);
  }
  return state;
}

SpatialGraph sample_edges(EdgeLogitPredictor& model, const std::vector<Point3>& coords, const EdgeNoiseModel& noise,
                          Rng& rng, PosteriorForm form) {
  const std::vector<Point3> sets[1] = {coords};
  const GraphBatch batch = make_coordinate_batch(sets, model.num_classes());
  const std::vector<int> labels = sample_edges(model, batch, noise, std::span<Rng>(&rng, 1), form);
  SpatialGraph g(coords, model.num_classes());
  const std::size_t n = coords.size();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) g.edge(i, j) = labels[i * n + j];
  return g;
}

}  // namespace vgd
