#include <cmath>
#include <numeric>

#include "doctest.h"
#include "test_util.hpp"
#include "vgd/batch.hpp"
#include "vgd/edge_diffusion.hpp"
#include "vgd/error.hpp"
#include "vgd/node_diffusion.hpp"
#include "vgd/schedule.hpp"

using namespace vgd;

namespace {

/// Returns a fixed tensor regardless of input.
struct FixedNoise : NodeNoisePredictor {
  Tensor value;
  Tensor predict_noise(const Tensor& x_t, const Tensor&, std::span<const std::size_t>) override {
    return value.defined() ? value : Tensor::zeros(x_t.shape());
  }
};

/// Recovers the exact forward noise for a known clean x0.
struct KnownCleanNoise : NodeNoisePredictor {
  Tensor x0;
  const NoiseSchedule* schedule = nullptr;
  Tensor predict_noise(const Tensor& x_t, const Tensor&, std::span<const std::size_t> t) override {
    std::vector<double> out(x_t.numel());
    const std::size_t per = x_t.numel() / t.size();
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double ab = schedule->alpha_bar(t[i / per]);
      out[i] = (x_t[i] - std::sqrt(ab) * x0[i]) / std::sqrt(1.0 - ab);
    }
    return Tensor(x_t.shape(), std::move(out));
  }
};

/// Logits equal to `scale` times a fixed one-hot class per pair.
struct PointMassEdges : EdgeLogitPredictor {
  int classes = 3;
  int cls = 0;
  double strength = 1000.0;
  Tensor predict_logits(const Tensor& e_t, const Tensor&, const Tensor&, std::span<const std::size_t>) override {
    std::vector<double> out(e_t.numel(), 0.0);
    for (std::size_t p = 0; p < out.size() / classes; ++p) out[p * classes + cls] = strength;
    return Tensor(e_t.shape(), std::move(out));
  }
  int num_classes() const override { return classes; }
};

/// Logits from the true labels of a batch.
struct TrueEdges : EdgeLogitPredictor {
  const GraphBatch* batch = nullptr;
  double strength = 1000.0;
  Tensor predict_logits(const Tensor& e_t, const Tensor&, const Tensor&, std::span<const std::size_t>) override {
    return scale(one_hot_edges(batch->edges, batch->batch_size(), batch->max_nodes, batch->num_classes), strength);
  }
  int num_classes() const override { return batch->num_classes; }
};

/// Uniform logits.
struct FlatEdges : EdgeLogitPredictor {
  int classes = 4;
  Tensor predict_logits(const Tensor& e_t, const Tensor&, const Tensor&, std::span<const std::size_t>) override {
    return Tensor::zeros(e_t.shape());
  }
  int num_classes() const override { return classes; }
};

GraphBatch random_batch(Rng& rng, std::size_t graphs, std::size_t n, int classes, double p) {
  std::vector<SpatialGraph> gs;
  for (std::size_t k = 0; k < graphs; ++k) gs.push_back(test::random_graph(rng, n - k % 3, classes, p));
  return make_graph_batch(gs);
}

}  // namespace

TEST_CASE("cosine schedule endpoints and monotonicity") {
  const auto s = NoiseSchedule::cosine(1000);
  CHECK(s.steps() == 1000);
  CHECK(s.alpha_bar(0) == 1.0);
  CHECK(s.alpha_bar(1000) < 1e-3);
  CHECK(1.0 - s.alpha_bar(1000) > 0.999);
  CHECK(s.alpha(1) > 0.99);
  double product = 1.0;
  for (std::size_t t = 1; t <= 1000; ++t) {
    CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
    CHECK(s.alpha(t) >= 0.001);
    CHECK(s.alpha(t) <= 0.9999);
    product *= s.alpha(t);
    CHECK(std::abs(product - s.alpha_bar(t)) < 1e-12);
  }
}

TEST_CASE("single-step schedule") {
  const auto s = NoiseSchedule::cosine(1);
  CHECK(s.steps() == 1);
  CHECK(s.alpha(1) == s.alpha_bar(1));
  CHECK(s.alpha_bar(1) <= 1e-3);
  CHECK_THROWS_AS(NoiseSchedule::cosine(0), ConfigError);
}

TEST_CASE("short schedules keep the endpoint conditions") {
  for (std::size_t T : {50u, 200u, 1000u}) {
    const auto s = NoiseSchedule::cosine(T);
    CHECK(s.alpha(1) > 0.99);
    CHECK(s.alpha_bar(T) < 1e-3);
  }
  const auto two = NoiseSchedule::cosine(2);
  CHECK(two.alpha_bar(2) < 1e-3);
  CHECK(two.alpha_bar(1) > two.alpha_bar(2));
}

TEST_CASE("forward node noise endpoints") {
  Rng rng(1);
  const auto s = NoiseSchedule::cosine(50);
  const Tensor x0 = test::random_tensor({2, 4, 3}, rng);
  const Tensor mask({2, 4}, {1, 1, 1, 1, 1, 1, 1, 1});
  const Tensor eps = test::random_tensor({2, 4, 3}, rng);
  const std::vector<std::size_t> zero{0, 0};
  CHECK(test::max_abs_diff(forward_noise_nodes(x0, mask, zero, eps, s).data(), x0.data()) == 0.0);
  const std::vector<std::size_t> t{7, 30};
  const Tensor scaled = forward_noise_nodes(x0, mask, t, Tensor::zeros({2, 4, 3}), s);
  for (std::size_t i = 0; i < 24; ++i) CHECK(scaled[i] == doctest::Approx(std::sqrt(s.alpha_bar(t[i / 12])) * x0[i]));
  const std::vector<std::size_t> bad{1, 51};
  CHECK_THROWS(forward_noise_nodes(x0, mask, bad, eps, s));
}

TEST_CASE("forward node noise matches its closed-form moments") {
  Rng rng(2);
  const auto s = NoiseSchedule::cosine(100);
  const std::size_t t = 40, draws = 100000;
  const Tensor mask({1, 1}, {1});
  const Tensor x0({1, 1, 3}, {1.0, -0.5, 0.25});
  std::vector<double> mean(3, 0.0), sq(3, 0.0);
  const std::vector<std::size_t> steps{t};
  for (std::size_t d = 0; d < draws; ++d) {
    const Tensor x = forward_noise_nodes(x0, mask, steps, sample_coordinate_noise(mask, rng), s);
    for (int a = 0; a < 3; ++a) {
      mean[a] += x[a];
      sq[a] += x[a] * x[a];
    }
  }
  for (int a = 0; a < 3; ++a) {
    const double m = mean[a] / draws, v = sq[a] / draws - m * m;
    CHECK(m == doctest::Approx(std::sqrt(s.alpha_bar(t)) * x0[a]).epsilon(0.01));
    CHECK(v == doctest::Approx(1.0 - s.alpha_bar(t)).epsilon(0.01));
  }
}

TEST_CASE("composed one-step kernels match the closed form") {
  Rng rng(3);
  const auto s = NoiseSchedule::cosine(60);
  const std::size_t t = 25, draws = 40000;
  const double x0 = 0.8;
  double mean = 0.0, sq = 0.0;
  for (std::size_t d = 0; d < draws; ++d) {
    double x = x0;
    for (std::size_t k = 1; k <= t; ++k) x = std::sqrt(s.alpha(k)) * x + std::sqrt(1.0 - s.alpha(k)) * standard_normal(rng);
    mean += x;
    sq += x * x;
  }
  mean /= draws;
  CHECK(mean == doctest::Approx(std::sqrt(s.alpha_bar(t)) * x0).epsilon(0.01));
  CHECK(sq / draws - mean * mean == doctest::Approx(1.0 - s.alpha_bar(t)).epsilon(0.01));
}

TEST_CASE("node loss with a perfect and a null predictor") {
  Rng rng(4);
  const auto s = NoiseSchedule::cosine(100);
  std::vector<SpatialGraph> graphs;
  for (int k = 0; k < 64; ++k) graphs.push_back(test::random_graph(rng, 8 + k % 5, 2, 0.2));
  const GraphBatch batch = make_graph_batch(graphs);
  std::vector<std::size_t> steps(64);
  for (auto& t : steps) t = 1 + rng() % 100;
  const Tensor noise = sample_coordinate_noise(batch.mask, rng);

  FixedNoise perfect;
  perfect.value = noise;
  CHECK(node_loss(perfect, batch, s, steps, noise).item() == 0.0);

  FixedNoise null;
  const double loss = node_loss(null, batch, s, steps, noise).item();
  CHECK(loss == doctest::Approx(1.0).epsilon(0.05));
  double sum_sq = 0.0, count = 0.0;
  const Tensor cm = coordinate_mask(batch.mask);
  for (std::size_t i = 0; i < noise.numel(); ++i) {
    sum_sq += cm[i] * noise[i] * noise[i];
    count += cm[i];
  }
  CHECK(loss == doctest::Approx(sum_sq / count).epsilon(1e-12));

  const auto random = node_loss(null, batch, s, rng);
  CHECK(random.steps.size() == 64);
  for (auto t : random.steps) CHECK((t >= 1 && t <= 100));
}

TEST_CASE("padding never reaches the node loss") {
  Rng rng(5);
  const auto s = NoiseSchedule::cosine(20);
  std::vector<SpatialGraph> graphs{test::random_graph(rng, 5, 2, 0.5), test::random_graph(rng, 3, 2, 0.5)};
  const GraphBatch batch = make_graph_batch(graphs);
  const std::vector<std::size_t> steps{4, 9};
  Tensor noise = sample_coordinate_noise(batch.mask, rng);
  FixedNoise null;
  const double before = node_loss(null, batch, s, steps, noise).item();
  for (std::size_t a = 0; a < 3; ++a) noise.mutable_data()[(5 + 4) * 3 + a] = 42.0;  // graph 1, node 4 is padding
  CHECK(node_loss(null, batch, s, steps, noise).item() == before);
}

TEST_CASE("a single reverse step inverts the forward step") {
  Rng rng(6);
  const auto s = NoiseSchedule::cosine(1);
  const Tensor mask({1, 5}, {1, 1, 1, 1, 1});
  const Tensor x0 = test::random_tensor({1, 5, 3}, rng);
  const Tensor eps = sample_coordinate_noise(mask, rng);
  const std::vector<std::size_t> one{1};
  const Tensor x1 = forward_noise_nodes(x0, mask, one, eps, s);
  const Tensor back = reverse_node_step(x1, eps, test::random_tensor({1, 5, 3}, rng), mask, 1, s);
  CHECK(test::max_abs_diff(back.data(), x0.data()) < 1e-9);

  KnownCleanNoise oracle;
  oracle.x0 = x0;
  oracle.schedule = &s;
  Rng sampler(7);
  const auto pts = sample_nodes(oracle, 5, s, sampler);
  REQUIRE(pts.size() == 5);
  for (std::size_t v = 0; v < 5; ++v)
    for (int a = 0; a < 3; ++a) CHECK(std::abs(pts[v][a] - x0[v * 3 + a]) < 1e-9);
}

TEST_CASE("null-predictor sampling follows the variance recursion") {
  const auto s = NoiseSchedule::cosine(10);
  double var = 1.0;
  for (std::size_t t = s.steps(); t >= 1; --t) var = var / s.alpha(t) + (t > 1 ? 1.0 - s.alpha(t) : 0.0);

  FixedNoise null;
  const std::size_t graphs = 10000;
  std::vector<std::size_t> counts(graphs, 1);
  std::vector<Rng> rngs;
  for (std::size_t k = 0; k < graphs; ++k) rngs.push_back(substream(8, "s", k));
  const auto out = sample_nodes(null, counts, s, rngs);
  double sq = 0.0, mean = 0.0;
  for (const auto& g : out)
    for (double c : g[0]) {
      mean += c;
      sq += c * c;
    }
  const double n = 3.0 * graphs;
  mean /= n;
  CHECK(sq / n - mean * mean == doctest::Approx(var).epsilon(0.02));
}

TEST_CASE("node sampling is finite, shaped and deterministic") {
  FixedNoise null;
  const auto s = NoiseSchedule::cosine(20);
  Rng a(9), b(9);
  const auto x = sample_nodes(null, 7, s, a);
  const auto y = sample_nodes(null, 7, s, b);
  CHECK(x.size() == 7);
  CHECK(x == y);
  for (const auto& p : x)
    for (double c : p) CHECK(std::isfinite(c));
  CHECK_THROWS(sample_nodes(null, 0, s, a));
}

TEST_CASE("transition matrix limits and a hand-evaluated row") {
  const std::vector<double> m{0.5, 0.3, 0.2};
  const auto id = build_transition(1.0, m);
  CHECK(id.max_abs_diff(ClassMatrix::identity(3)) == 0.0);
  const auto full = build_transition(0.0, m);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) CHECK(full(i, j) == m[j]);
  const auto q = build_transition(0.6, m);
  CHECK(q(0, 0) == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(q(0, 1) == doctest::Approx(0.12).epsilon(1e-15));
  CHECK(q(0, 2) == doctest::Approx(0.08).epsilon(1e-15));
}

TEST_CASE("cumulative transitions equal the iterated product and the closed form") {
  Rng rng(10);
  std::vector<double> alphas(12);
  for (auto& a : alphas) a = 0.4 + 0.6 * uniform01(rng);
  const std::vector<double> m{0.4, 0.3, 0.2, 0.1};
  const EdgeNoiseModel noise(m, NoiseSchedule::from_alphas(alphas));
  CHECK(noise.cumulative(0).max_abs_diff(ClassMatrix::identity(4)) == 0.0);
  ClassMatrix product = ClassMatrix::identity(4);
  for (std::size_t t = 1; t <= 7; ++t) {
    ClassMatrix q(4);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) q(i, j) = (i == j ? alphas[t - 1] : 0.0) + (1.0 - alphas[t - 1]) * m[j];
    ClassMatrix next(4);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j)
        for (std::size_t k = 0; k < 4; ++k) next(i, j) += product(i, k) * q(k, j);
    product = next;
  }
  CHECK(noise.cumulative(7).max_abs_diff(product) < 1e-10);
  CHECK(noise.cumulative_closed_form(7).max_abs_diff(product) < 1e-10);
  for (std::size_t t = 0; t <= 12; ++t)
    for (std::size_t i = 0; i < 4; ++i) {
      double row = 0.0;
      for (std::size_t j = 0; j < 4; ++j) {
        CHECK(noise.cumulative(t)(i, j) >= 0.0);
        row += noise.cumulative(t)(i, j);
      }
      CHECK(std::abs(row - 1.0) < 1e-12);
    }
}

TEST_CASE("fully noised rows approach the marginal") {
  const std::vector<double> m{0.7, 0.2, 0.1};
  const EdgeNoiseModel noise(m, NoiseSchedule::cosine(200));
  for (std::size_t i = 0; i < 3; ++i) {
    double tv = 0.0;
    for (std::size_t j = 0; j < 3; ++j) tv += 0.5 * std::abs(noise.cumulative(200)(i, j) - m[j]);
    CHECK(tv < 1e-3);
  }
}

TEST_CASE("marginal estimate counts background pairs") {
  SpatialGraph g(4, 3);
  g.connect(0, 1, 1);
  g.connect(1, 2, 2);
  const std::vector<SpatialGraph> gs{g};
  const auto m = EdgeNoiseModel::estimate_marginal(gs, 3);
  CHECK(m[0] == doctest::Approx(4.0 / 6.0));
  CHECK(m[1] == doctest::Approx(1.0 / 6.0));
  CHECK(m[2] == doctest::Approx(1.0 / 6.0));
}

TEST_CASE("forward edge corruption at the first and last step") {
  Rng rng(11);
  const GraphBatch batch = random_batch(rng, 12, 14, 4, 0.3);
  std::vector<SpatialGraph> gs;
  const EdgeNoiseModel noise({0.6, 0.2, 0.1, 0.1}, NoiseSchedule::cosine(200));
  std::vector<std::size_t> first(12, 1), last(12, 200);
  std::size_t pairs = 0, flips = 0;
  std::vector<double> freq(4, 0.0);
  for (int rep = 0; rep < 10; ++rep) {
    const auto e1 = forward_noise_edges(batch, first, noise, rng);
    const auto eT = forward_noise_edges(batch, last, noise, rng);
    const std::size_t n = batch.max_nodes;
    for (std::size_t b = 0; b < 12; ++b)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t idx = (b * n + i) * n + j;
          CHECK(e1[idx] == e1[(b * n + j) * n + i]);
          CHECK(eT[idx] == eT[(b * n + j) * n + i]);
          if (i == j || i >= batch.sizes[b] || j >= batch.sizes[b]) {
            CHECK(eT[idx] == kBackground);
            continue;
          }
          if (i > j) continue;
          ++pairs;
          flips += e1[idx] != batch.edges[idx];
          freq[static_cast<std::size_t>(eT[idx])] += 1.0;
        }
  }
  CHECK(pairs >= 1000);
  CHECK(static_cast<double>(flips) / pairs < 0.03);
  for (std::size_t k = 0; k < 4; ++k) {
    const double p = noise.marginal()[k];
    CHECK(std::abs(freq[k] / pairs - p) < 3.0 * std::sqrt(p * (1 - p) / pairs));
  }
}

TEST_CASE("cross-entropy of perfect and uniform predictors") {
  Rng rng(12);
  const GraphBatch batch = random_batch(rng, 4, 7, 4, 0.4);
  TrueEdges oracle;
  oracle.batch = &batch;
  const Tensor e = one_hot_edges(batch.edges, 4, batch.max_nodes, 4);
  const std::vector<std::size_t> t(4, 3);
  CHECK(edge_ce_loss(oracle.predict_logits(e, batch.coords, batch.mask, t), batch).item() < 1e-9);
  FlatEdges flat;
  CHECK(edge_ce_loss(flat.predict_logits(e, batch.coords, batch.mask, t), batch).item() ==
        doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("degree loss of identical distributions is at the smoothing floor") {
  Rng rng(13);
  const GraphBatch batch = random_batch(rng, 6, 9, 3, 0.3);
  TrueEdges oracle;
  oracle.batch = &batch;
  const Tensor e = one_hot_edges(batch.edges, 6, batch.max_nodes, 3);
  const std::vector<std::size_t> t(6, 1);
  const Tensor logits = oracle.predict_logits(e, batch.coords, batch.mask, t);
  CHECK(degree_loss(logits, batch, 1.0, rng, true).item() < 1e-6);
  CHECK_THROWS_AS(degree_loss(logits, batch, 0.0, rng, true), ConfigError);
}

TEST_CASE("empty target against a predicted clique gives a large degree loss") {
  Rng rng(14);
  std::vector<SpatialGraph> gs{SpatialGraph(4, 3)};
  const GraphBatch batch = make_graph_batch(gs);
  PointMassEdges clique;
  clique.cls = 1;
  const Tensor e = one_hot_edges(batch.edges, 1, 4, 3);
  const std::vector<std::size_t> t{1};
  const double loss = degree_loss(clique.predict_logits(e, batch.coords, batch.mask, t), batch, 1.0, rng, true).item();
  CHECK(loss > 1.0);
}

TEST_CASE("degree loss passes gradient to the logits") {
  Rng rng(15);
  const GraphBatch batch = random_batch(rng, 1, 5, 3, 0.5);
  Tensor logits = Tensor::parameter({1, 5, 5, 3}, std::vector<double>(75, 0.0));
  for (auto& v : logits.mutable_data()) v = uniform01(rng) - 0.5;
  Tape tape;
  {
    TapeScope scope(tape);
    tape.backward(degree_loss(logits, batch, 1.0, rng, true));
  }
  double norm = 0.0;
  for (double g : logits.grad()) norm += std::abs(g);
  CHECK(norm > 0.0);
}

TEST_CASE("soft degree histogram sums to one") {
  const Tensor deg({1, 4}, {0.0, 2.5, 3.0, 12.0});
  const Tensor mask({1, 4}, {1, 1, 1, 0});
  const Tensor h = degree_histogram(deg, mask);
  CHECK(h.numel() == DegreeHistogram::kMaxDegree + 2);
  double total = 0.0;
  for (double v : h.data()) total += v;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(h[0] > 0.3);
}

TEST_CASE("total edge loss is cross-entropy plus degree term") {
  Rng rng(16);
  const GraphBatch batch = random_batch(rng, 3, 6, 3, 0.4);
  FlatEdges flat;
  flat.classes = 3;
  const EdgeNoiseModel noise({0.6, 0.3, 0.1}, NoiseSchedule::cosine(30));
  const auto loss = edge_loss(flat, batch, noise, rng);
  CHECK(loss.total.item() == loss.ce.item() + loss.degree.item());
  EdgeLossOptions off;
  off.degree_weight = 0.0;
  const auto ce_only = edge_loss(flat, batch, noise, rng, off);
  CHECK_FALSE(ce_only.degree.defined());
  CHECK(ce_only.total.item() == ce_only.ce.item());
}

TEST_CASE("posterior at the first step reweights the prediction") {
  const EdgeNoiseModel noise({0.5, 0.3, 0.2}, NoiseSchedule::cosine(10));
  const std::vector<double> e0{0.2, 0.5, 0.3};
  for (int obs = 0; obs < 3; ++obs) {
    const auto post = edge_posterior(obs, e0, 1, noise);
    std::vector<double> expect(3);
    double z = 0.0;
    for (std::size_t k = 0; k < 3; ++k) z += expect[k] = noise.transition(1)(k, obs) * e0[k];
    for (std::size_t k = 0; k < 3; ++k) CHECK(post[k] == doctest::Approx(expect[k] / z).epsilon(1e-12));
  }
}

TEST_CASE("posterior under an identity transition is the observed class") {
  const EdgeNoiseModel noise({0.5, 0.3, 0.2}, NoiseSchedule::from_alphas({0.5, 1.0, 0.7}));
  for (int obs = 0; obs < 3; ++obs) {
    const auto post = edge_posterior(obs, std::vector<double>{0.0, 1.0, 0.0}, 2, noise);
    for (int k = 0; k < 3; ++k) CHECK(post[k] == doctest::Approx(k == obs ? 1.0 : 0.0));
  }
}

TEST_CASE("posterior for a point-mass prediction equals the per-class Bayes posterior") {
  const EdgeNoiseModel noise({0.6, 0.25, 0.15}, NoiseSchedule::cosine(30));
  for (std::size_t t = 2; t <= 30; t += 7)
    for (int j = 0; j < 3; ++j)
      for (int obs = 0; obs < 3; ++obs) {
        std::vector<double> e0(3, 0.0);
        e0[static_cast<std::size_t>(j)] = 1.0;
        const auto post = edge_posterior(obs, e0, t, noise);
        // q(e_{t-1}=k | e_t, e_0=j) = q(e_t | k) q(k | j) / q(e_t | j)
        const double denom = noise.cumulative(t)(static_cast<std::size_t>(j), static_cast<std::size_t>(obs));
        for (std::size_t k = 0; k < 3; ++k) {
          const double bayes = noise.transition(t)(k, static_cast<std::size_t>(obs)) *
                               noise.cumulative(t - 1)(static_cast<std::size_t>(j), k) / denom;
          CHECK(std::abs(post[k] - bayes) < 1e-12);
        }
      }
}

TEST_CASE("posterior sums to one and rejects impossible observations") {
  Rng rng(17);
  const EdgeNoiseModel noise({0.4, 0.4, 0.2}, NoiseSchedule::cosine(40));
  for (int k = 0; k < 200; ++k) {
    std::vector<double> e0{uniform01(rng), uniform01(rng), uniform01(rng)};
    const double z = e0[0] + e0[1] + e0[2];
    for (auto& v : e0) v /= z;
    const auto post = edge_posterior(static_cast<int>(rng() % 3), e0, 1 + rng() % 40, noise);
    CHECK(std::accumulate(post.begin(), post.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-9));
  }
  const EdgeNoiseModel degenerate({1.0, 0.0}, NoiseSchedule::cosine(5));
  CHECK_THROWS_AS(edge_posterior(1, std::vector<double>{1.0, 0.0}, 3, degenerate), NumericError);
}

TEST_CASE("mixture posterior: enumeration oracle, point-mass agreement, distinct from the joint form") {
  Rng rng(21);
  const EdgeNoiseModel noise({0.5, 0.3, 0.2}, NoiseSchedule::cosine(25));
  double max_gap = 0.0;
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<double> e0{uniform01(rng), uniform01(rng), uniform01(rng)};
    const double z = e0[0] + e0[1] + e0[2];
    for (auto& v : e0) v /= z;
    const int obs = static_cast<int>(rng() % 3);
    const std::size_t t = 1 + rng() % 25;
    std::vector<double> oracle(3, 0.0);
    for (std::size_t j = 0; j < 3; ++j) {
      std::vector<double> joint(3);
      double norm = 0.0;
      for (std::size_t k = 0; k < 3; ++k) {
        joint[k] = noise.cumulative(t - 1)(j, k) * noise.transition(t)(k, static_cast<std::size_t>(obs));
        norm += joint[k];
      }
      for (std::size_t k = 0; k < 3; ++k) oracle[k] += e0[j] * joint[k] / norm;
    }
    const auto mix = edge_posterior_mixture(obs, e0, t, noise);
    const auto joint = edge_posterior(obs, e0, t, noise);
    for (std::size_t k = 0; k < 3; ++k) {
      CHECK(std::abs(mix[k] - oracle[k]) < 1e-12);
      max_gap = std::max(max_gap, std::abs(mix[k] - joint[k]));
    }
  }
  CHECK(max_gap > 1e-3);

  for (std::size_t t = 1; t <= 25; t += 6)
    for (std::size_t j = 0; j < 3; ++j)
      for (int obs = 0; obs < 3; ++obs) {
        std::vector<double> e0(3, 0.0);
        e0[j] = 1.0;
        const auto a = edge_posterior_mixture(obs, e0, t, noise);
        const auto b = edge_posterior(obs, e0, t, noise);
        for (std::size_t k = 0; k < 3; ++k) CHECK(std::abs(a[k] - b[k]) < 1e-12);
      }

  const EdgeNoiseModel degenerate({1.0, 0.0}, NoiseSchedule::cosine(5));
  CHECK_THROWS_AS(edge_posterior_mixture(1, std::vector<double>{1.0, 0.0}, 3, degenerate), NumericError);
  CHECK(parse_posterior_form("mixture") == PosteriorForm::kMixture);
  CHECK(posterior_form_name(parse_posterior_form("bayes")) == "bayes");
  CHECK_THROWS_AS(parse_posterior_form("exact"), ConfigError);
}

TEST_CASE("mixture sampling recovers a confident model's edges") {
  const EdgeNoiseModel noise({0.7, 0.2, 0.1}, NoiseSchedule::cosine(60));
  PointMassEdges model;
  model.cls = 2;
  Rng rng(22);
  const std::vector<Point3> pts{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  const SpatialGraph g = sample_edges(model, pts, noise, rng, PosteriorForm::kMixture);
  CHECK(validate(g).empty());
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) CHECK(g.edge(i, j) == (i == j ? 0 : 2));
}

TEST_CASE("edge sampling edge cases") {
  const EdgeNoiseModel noise({0.8, 0.15, 0.05}, NoiseSchedule::cosine(1000));
  PointMassEdges background;
  background.cls = 0;
  Rng rng(18);
  const auto one = sample_edges(background, std::vector<Point3>{{0, 0, 0}}, noise, rng);
  CHECK(one.num_edges() == 0);
  CHECK(validate(one).empty());

  std::vector<Point3> pts(12);
  for (auto& p : pts) p = {uniform01(rng), uniform01(rng), uniform01(rng)};
  const auto empty = sample_edges(background, pts, noise, rng);
  CHECK(empty.num_edges() == 0);
  CHECK(validate(empty).empty());

  FlatEdges flat;
  flat.classes = 3;
  const EdgeNoiseModel short_noise({0.8, 0.15, 0.05}, NoiseSchedule::cosine(20));
  Rng a(19), b(19);
  const auto g1 = sample_edges(flat, pts, short_noise, a);
  const auto g2 = sample_edges(flat, pts, short_noise, b);
  CHECK(g1 == g2);
  CHECK(validate(g1).empty());
  CHECK(g1.num_edges() > 0);
}
