#include "vgd/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <functional>

#include "vgd/batch.hpp"
#include "vgd/edge_diffusion.hpp"
#include "vgd/metrics.hpp"
#include "vgd/nets.hpp"
#include "vgd/node_diffusion.hpp"
#include "vgd/tensor.hpp"

namespace vgd {

namespace {

using Clock = std::chrono::steady_clock;

std::vector<double> random_simplex(std::size_t c, Rng& rng) {
  std::vector<double> p(c);
  double total = 0.0;
  for (auto& v : p) total += v = 0.05 + uniform01(rng);
  for (auto& v : p) v /= total;
  return p;
}

VerifyCheck timed(const std::string& name, double tolerance, const std::function<double()>& body) {
  const auto t0 = Clock::now();
  VerifyCheck check;
  check.name = name;
  check.tolerance = tolerance;
  check.error = body();
  check.passed = std::isfinite(check.error) && check.error <= tolerance;
  check.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  return check;
}

double transition_check(Rng& rng) {
  double worst = 0.0;
  for (std::size_t c : {2u, 3u, 4u, 14u}) {
    for (int trial = 0; trial < 5; ++trial) {
      std::vector<double> alphas(50);
      for (auto& a : alphas) a = 0.5 + 0.5 * uniform01(rng);
      const auto m = random_simplex(c, rng);
      const EdgeNoiseModel noise(m, NoiseSchedule::from_alphas(alphas));
      double abar = 1.0;
      for (std::size_t t = 1; t <= alphas.size(); ++t) {
        abar *= alphas[t - 1];
        const ClassMatrix& qbar = noise.cumulative(t);
        for (std::size_t i = 0; i < c; ++i) {
          double row = 0.0;
          for (std::size_t j = 0; j < c; ++j) {
            const double closed = (i == j ? abar : 0.0) + (1.0 - abar) * m[j];
            worst = std::max(worst, std::abs(qbar(i, j) - closed));
            row += qbar(i, j);
          }
          worst = std::max(worst, std::abs(row - 1.0) * 1e3);  // rows are held to 1e-12
        }
      }
    }
  }
  return worst;
}

double posterior_check(Rng& rng, bool broken) {
  double worst = 0.0;
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t c = 2 + static_cast<std::size_t>(trial % 3);
    const std::size_t T = 1 + static_cast<std::size_t>(uniform01(rng) * 20.0);
    std::vector<double> alphas(T);
    for (auto& a : alphas) a = 0.3 + 0.7 * uniform01(rng);
    const auto m = random_simplex(c, rng);
    const EdgeNoiseModel noise(m, NoiseSchedule::from_alphas(alphas));
    const std::size_t t = 1 + static_cast<std::size_t>(uniform01(rng) * static_cast<double>(T)) % T;
    const int e_t = static_cast<int>(static_cast<std::size_t>(uniform01(rng) * static_cast<double>(c)) % c);
    const auto e0 = random_simplex(c, rng);

    auto step = [&](const std::vector<double>& dist, std::size_t s) {
      std::vector<double> out(c, 0.0);
      for (std::size_t a = 0; a < c; ++a)
        for (std::size_t b = 0; b < c; ++b) out[b] += dist[a] * ((a == b ? alphas[s - 1] : 0.0) + (1.0 - alphas[s - 1]) * m[b]);
      return out;
    };
    // Joint over (x0 = j, x_{t-1} = k) given x_t, with e0 as the prior on x0.
    std::vector<double> oracle(c, 0.0);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      std::vector<double> dist(c, 0.0);
      dist[j] = 1.0;
      for (std::size_t s = 1; s < t; ++s) dist = step(dist, s);
      for (std::size_t k = 0; k < c; ++k) {
        const double q = (k == static_cast<std::size_t>(e_t) ? alphas[t - 1] : 0.0) + (1.0 - alphas[t - 1]) * m[e_t];
        const double joint = e0[j] * dist[k] * q;
        oracle[k] += joint;
        z += joint;
      }
    }
    auto post = edge_posterior(e_t, e0, t, noise);
    if (broken) post[0] += 1e-6;
    for (std::size_t k = 0; k < c; ++k) worst = std::max(worst, std::abs(post[k] - oracle[k] / z));
  }
  return worst;
}

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = lo + (hi - lo) * uniform01(rng);
  return Tensor(std::move(shape), std::move(v));
}

/// Scalar <W, y> with a fixed random W of y's shape, so every output coordinate matters.
Tensor project(const Tensor& y, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(y, random_tensor(y.shape(), rng)));
}

using UnaryOp = std::function<Tensor(const Tensor&)>;

struct PrimitiveCase {
  std::string name;
  std::vector<Tensor> inputs;
  std::function<Tensor(const std::vector<Tensor>&)> op;
};

double check_case(const PrimitiveCase& pc) {
  double worst = 0.0;
  for (std::size_t arg = 0; arg < pc.inputs.size(); ++arg) {
    const auto f = [&](const Tensor& x) {
      std::vector<Tensor> in = pc.inputs;
      in[arg] = x;
      return project(pc.op(in), 99 + arg);
    };
    worst = std::max(worst, grad_check(f, pc.inputs[arg], 1e-6));
  }
  return worst;
}

std::vector<PrimitiveCase> primitive_cases(Rng& rng) {
  auto r = [&](Shape s, double lo = -1.0, double hi = 1.0) { return random_tensor(std::move(s), rng, lo, hi); };
  auto away_from_zero = [&](Shape s) {
    Tensor t = r(std::move(s));
    for (auto& v : t.mutable_data()) v += v >= 0.0 ? 0.1 : -0.1;
    return t;
  };
  std::vector<double> mask_values{1, 1, 1, 0, 1, 1, 1, 1};
  const Tensor key_mask({2, 4}, mask_values);
  std::vector<PrimitiveCase> cases = {
      {"add", {r({2, 3}), r({2, 3})}, [](auto& x) { return add(x[0], x[1]); }},
      {"sub", {r({2, 3}), r({2, 3})}, [](auto& x) { return sub(x[0], x[1]); }},
      {"mul", {r({2, 3}), r({2, 3})}, [](auto& x) { return mul(x[0], x[1]); }},
      {"scale", {r({2, 3})}, [](auto& x) { return scale(x[0], -1.7); }},
      {"add_scalar", {r({2, 3})}, [](auto& x) { return add_scalar(x[0], 0.4); }},
      {"relu", {away_from_zero({2, 5})}, [](auto& x) { return relu(x[0]); }},
      {"gelu", {r({2, 5}, -3.0, 3.0)}, [](auto& x) { return gelu(x[0]); }},
      {"exp", {r({2, 3})}, [](auto& x) { return exp(x[0]); }},
      {"log", {r({2, 3}, 0.2, 2.0)}, [](auto& x) { return log(x[0]); }},
      {"square", {r({2, 3})}, [](auto& x) { return square(x[0]); }},
      {"expand", {r({3})}, [](auto& x) { return expand(x[0], {2, 4, 3}); }},
      {"reshape", {r({2, 6})}, [](auto& x) { return reshape(x[0], {3, 4}); }},
      {"matmul_shared", {r({2, 3, 4}), r({4, 5})}, [](auto& x) { return matmul(x[0], x[1]); }},
      {"matmul_batched", {r({2, 3, 4}), r({2, 4, 2})}, [](auto& x) { return matmul(x[0], x[1]); }},
      {"transpose", {r({2, 3, 4})}, [](auto& x) { return transpose(x[0], 1, 2); }},
      {"concat", {r({2, 3}), r({2, 2})}, [](auto& x) { return concat({x[0], x[1]}); }},
      {"slice", {r({2, 5})}, [](auto& x) { return slice(x[0], 1, 4); }},
      {"sum", {r({2, 3})}, [](auto& x) { return scale(sum(square(x[0])), 1.0); }},
      {"mean", {r({2, 3})}, [](auto& x) { return mean(square(x[0])); }},
      {"sum_axis", {r({2, 3, 4})}, [](auto& x) { return sum_axis(x[0], 1); }},
      {"softmax", {r({3, 4}, -2.0, 2.0)}, [](auto& x) { return softmax(x[0]); }},
      {"log_softmax", {r({3, 4}, -2.0, 2.0)}, [](auto& x) { return log_softmax(x[0]); }},
      {"layer_norm", {r({3, 5}), r({5}), r({5})}, [](auto& x) { return layer_norm(x[0], x[1], x[2]); }},
      {"embedding_lookup", {r({4, 3})},
       [](auto& x) {
         const std::vector<std::size_t> idx{2, 0, 2, 3};
         return embedding_lookup(x[0], idx);
       }},
      {"outer_add", {r({2, 3, 2}), r({2, 3, 2})}, [](auto& x) { return outer_add(x[0], x[1]); }},
      {"outer_mul", {r({2, 3, 2}), r({2, 3, 2})}, [](auto& x) { return outer_mul(x[0], x[1]); }},
      {"attention", {r({2, 4, 4}), r({2, 4, 4}), r({2, 4, 4}), r({2, 4, 4, 2})},
       [key_mask](auto& x) { return scaled_dot_attention(x[0], x[1], x[2], 2, x[3], key_mask); }},
      {"gumbel_softmax", {r({3, 4}, -2.0, 2.0)},
       [](auto& x) {
         Rng fixed(7);
         return gumbel_softmax(x[0], 0.7, false, fixed);
       }},
  };
  return cases;
}

GraphBatch five_node_batch(Rng& rng, int classes) {
  std::vector<SpatialGraph> graphs;
  for (std::size_t n : {5u, 4u}) {
    SpatialGraph g(n, classes);
    for (auto& p : g.coords)
      for (auto& c : p) c = 2.0 * uniform01(rng) - 1.0;
    for (std::size_t i = 0; i < n; ++i) g.connect(i, (i + 1) % n, 1 + static_cast<int>(i % static_cast<std::size_t>(classes - 1)));
    graphs.push_back(std::move(g));
  }
  return make_graph_batch(graphs);
}

double node_loss_check(Rng& rng) {
  NodeDenoiser net({.width = 8, .blocks = 2, .heads = 2, .time_dim = 8}, 11);
  const GraphBatch batch = five_node_batch(rng, 2);
  const NoiseSchedule schedule = NoiseSchedule::cosine(20);
  const std::vector<std::size_t> steps{3, 17};
  const Tensor noise = sample_coordinate_noise(batch.mask, rng);
  auto params = net.parameters().tensors();
  return grad_check_params([&] { return node_loss(net, batch, schedule, steps, noise); }, params, 1e-6, 6);
}

double edge_loss_check(Rng& rng) {
  EdgeDenoiserConfig cfg;
  cfg.num_classes = 3;
  cfg.blocks = 2;
  cfg.heads = 2;
  cfg.node_dim = 8;
  cfg.edge_dim = 6;
  cfg.time_dim = 8;
  cfg.distance_basis = 4;
  EdgeDenoiser net(cfg, 5);
  const GraphBatch batch = five_node_batch(rng, 3);
  const EdgeNoiseModel noise({0.6, 0.25, 0.15}, NoiseSchedule::cosine(20));
  const std::vector<std::size_t> steps{4, 12};
  EdgeLossOptions options;
  options.hard = false;
  auto params = net.parameters().tensors();
  return grad_check_params(
      [&] {
        Rng fixed(3);
        return edge_loss(net, batch, noise, steps, fixed, options).total;
      },
      params, 1e-6, 6);
}

double betti_check(Rng& rng) {
  double mismatches = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + static_cast<std::size_t>(uniform01(rng) * 20.0) % 20;
    const double p = uniform01(rng) * 0.4;
    SpatialGraph g(n, 2);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        if (uniform01(rng) < p) g.connect(i, j, 1);
    // Breadth-first search: components, and edges outside the BFS forest are cycles.
    std::vector<bool> seen(n, false);
    std::size_t components = 0, tree_edges = 0;
    for (std::size_t s = 0; s < n; ++s) {
      if (seen[s]) continue;
      ++components;
      seen[s] = true;
      std::deque<std::size_t> queue{s};
      while (!queue.empty()) {
        const std::size_t v = queue.front();
        queue.pop_front();
        for (std::size_t u = 0; u < n; ++u)
          if (g.edge(v, u) != kBackground && !seen[u]) {
            seen[u] = true;
            ++tree_edges;
            queue.push_back(u);
          }
      }
    }
    const std::size_t cycles = g.num_edges() - tree_edges;
    if (betti0(g) != components || betti1(g) != cycles) mismatches += 1.0;
  }
  return mismatches;
}

}  // namespace

std::vector<VerifyCheck> run_verification(const VerifyOptions& options) {
  std::vector<VerifyCheck> checks;
  Rng rng = substream(options.seed, "verify");
  checks.push_back(timed("transition-closed-form", 1e-9, [&] { return transition_check(rng); }));
  checks.push_back(timed("posterior-bayes", 1e-10, [&] { return posterior_check(rng, options.break_posterior); }));
  for (const auto& pc : primitive_cases(rng))
    checks.push_back(timed("grad-" + pc.name, 1e-6, [&] { return check_case(pc); }));
  checks.push_back(timed("grad-node-loss", 1e-4, [&] { return node_loss_check(rng); }));
  checks.push_back(timed("grad-edge-loss", 1e-4, [&] { return edge_loss_check(rng); }));
  checks.push_back(timed("betti-oracle", 0.0, [&] { return betti_check(rng); }));
  return checks;
}

}  // namespace vgd
