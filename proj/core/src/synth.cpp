#include "vgd/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <set>

#include "vgd/error.hpp"
#include "vgd/metrics.hpp"

namespace vgd {

SynthFamily parse_family(const std::string& name) {
  if (name == "capillary") return SynthFamily::kCapillary;
  if (name == "cow" || name == "cow-like") return SynthFamily::kCowLike;
  throw ConfigError("unknown family '" + name + "' (expected capillary or cow)");
}

std::string family_name(SynthFamily family) { return family == SynthFamily::kCapillary ? "capillary" : "cow"; }

SynthConfig SynthConfig::defaults(SynthFamily family) {
  SynthConfig cfg;
  cfg.family = family;
  if (family == SynthFamily::kCowLike) {
    cfg.min_nodes = 13;
    cfg.max_nodes = 13;
    cfg.num_classes = 14;
    cfg.max_cycles = 1;
  }
  return cfg;
}

void SynthConfig::check() const {
  if (num_classes < 2) throw ConfigError("synth: num_classes must be >= 2");
  if (min_nodes < 4 || max_nodes > 64 || min_nodes > max_nodes)
    throw ConfigError("synth: node count range must lie within [4, 64]");
  if (family == SynthFamily::kCowLike) {
    if (num_classes != 14) throw ConfigError("synth: the cow-like template uses 14 classes");
    if (min_nodes > 13 || max_nodes < 13) throw ConfigError("synth: the cow-like template has 13 nodes");
  }
  if (family == SynthFamily::kCapillary && max_cycles < 1) throw ConfigError("synth: max_cycles must be >= 1");
}

namespace {

double dist(const Point3& a, const Point3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

struct WorkGraph {
  std::vector<Point3> pts;
  std::vector<std::set<std::size_t>> adj;

  std::size_t degree(std::size_t v) const { return adj[v].size(); }
  void link(std::size_t a, std::size_t b) {
    adj[a].insert(b);
    adj[b].insert(a);
  }
  void unlink(std::size_t a, std::size_t b) {
    adj[a].erase(b);
    adj[b].erase(a);
  }
  std::size_t edge_count() const {
    std::size_t e = 0;
    for (const auto& s : adj) e += s.size();
    return e / 2;
  }
};

/// Prim's algorithm over the complete graph.
void minimum_spanning_tree(WorkGraph& g) {
  const std::size_t n = g.pts.size();
  std::vector<bool> in(n, false);
  std::vector<double> best(n, std::numeric_limits<double>::infinity());
  std::vector<std::size_t> from(n, 0);
  best[0] = 0.0;
  for (std::size_t it = 0; it < n; ++it) {
    std::size_t v = n;
    for (std::size_t u = 0; u < n; ++u)
      if (!in[u] && (v == n || best[u] < best[v])) v = u;
    in[v] = true;
    if (it > 0) g.link(v, from[v]);
    for (std::size_t u = 0; u < n; ++u) {
      const double d = dist(g.pts[v], g.pts[u]);
      if (!in[u] && d < best[u]) {
        best[u] = d;
        from[u] = v;
      }
    }
  }
}

/// Up to k nearest non-adjacent nodes of v, nearest first.
std::vector<std::size_t> nearest_candidates(const WorkGraph& g, std::size_t v, std::size_t k) {
  std::vector<std::size_t> order;
  for (std::size_t u = 0; u < g.pts.size(); ++u)
    if (u != v && !g.adj[v].count(u)) order.push_back(u);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dist(g.pts[v], g.pts[a]) < dist(g.pts[v], g.pts[b]);
  });
  if (order.size() > k) order.resize(k);
  return order;
}

/// Removes v (degree 2) and joins its neighbours.
void contract(WorkGraph& g, std::size_t v) {
  const std::size_t a = *g.adj[v].begin();
  const std::size_t b = *std::next(g.adj[v].begin());
  g.unlink(v, a);
  g.unlink(v, b);
  g.link(a, b);
}

SpatialGraph to_spatial(const WorkGraph& g, int num_classes) {
  // Drop nodes that lost all edges through contraction.
  std::vector<std::size_t> keep;
  for (std::size_t v = 0; v < g.pts.size(); ++v)
    if (g.degree(v) > 0) keep.push_back(v);
  std::vector<std::size_t> remap(g.pts.size(), 0);
  std::vector<Point3> pts;
  for (std::size_t k = 0; k < keep.size(); ++k) {
    remap[keep[k]] = k;
    pts.push_back(g.pts[keep[k]]);
  }
  SpatialGraph out(std::move(pts), num_classes);
  std::vector<std::pair<double, std::pair<std::size_t, std::size_t>>> edges;
  for (std::size_t v : keep)
    for (std::size_t u : g.adj[v])
      if (v < u) edges.push_back({dist(g.pts[v], g.pts[u]), {remap[v], remap[u]}});
  std::sort(edges.begin(), edges.end());
  const std::size_t groups = static_cast<std::size_t>(num_classes - 1);
  for (std::size_t r = 0; r < edges.size(); ++r) {
    const std::size_t q = std::min(groups - 1, r * groups / edges.size());
    out.connect(edges[r].second.first, edges[r].second.second, static_cast<int>(q + 1));
  }
  return out;
}

}  // namespace

SpatialGraph gen_capillary_patch(const SynthConfig& cfg) {
  cfg.check();
  if (cfg.family != SynthFamily::kCapillary) throw ConfigError("gen_capillary_patch: family must be capillary");
  Rng rng = substream(cfg.seed, "capillary");
  constexpr int kMaxAttempts = 1000;
  constexpr std::size_t kCandidates = 4;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    // Contraction removes nodes, so start from up to twice the largest target size.
    const std::size_t n = std::uniform_int_distribution<std::size_t>(cfg.min_nodes, 2 * cfg.max_nodes)(rng);
    const std::size_t cycle_target = std::uniform_int_distribution<std::size_t>(1, cfg.max_cycles)(rng);
    WorkGraph g;
    g.pts.resize(n);
    g.adj.resize(n);
    for (auto& p : g.pts)
      for (auto& c : p) c = uniform01(rng);
    minimum_spanning_tree(g);

    // Short chords from the k-nearest candidates until the cycle target is met.
    std::vector<std::pair<double, std::pair<std::size_t, std::size_t>>> chords;
    for (std::size_t v = 0; v < n; ++v)
      for (std::size_t u : nearest_candidates(g, v, kCandidates))
        if (v < u) chords.push_back({dist(g.pts[v], g.pts[u]), {v, u}});
    std::sort(chords.begin(), chords.end());
    std::shuffle(chords.begin(), chords.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(chords.size(), 2 * cycle_target)), rng);
    for (const auto& [len, e] : chords) {
      if (g.edge_count() + 1 - n >= cycle_target) break;
      if (!g.adj[e.first].count(e.second)) g.link(e.first, e.second);
    }

    // Contract degree-2 nodes until none remain.
    for (bool changed = true; changed;) {
      changed = false;
      for (std::size_t v = 0; v < n; ++v)
        if (g.degree(v) == 2) {
          contract(g, v);
          changed = true;
        }
    }

    SpatialGraph out = to_spatial(g, cfg.num_classes);
    if (out.size() < cfg.min_nodes || out.size() > cfg.max_nodes) continue;
    const auto deg = out.degrees();
    if (std::count(deg.begin(), deg.end(), 2u) != 0) continue;
    const std::size_t cycles = betti1(out);
    if (betti0(out) != 1 || cycles < 1 || cycles > cfg.max_cycles) continue;
    return out;
  }
  throw Error("gen_capillary_patch: no valid graph after " + std::to_string(kMaxAttempts) +
              " attempts (seed " + std::to_string(cfg.seed) + ")");
}

namespace {

struct TemplateSegment {
  std::size_t a, b;
  int cls;
};

struct CowTemplate {
  std::vector<Point3> nodes;
  std::vector<TemplateSegment> segments;
};

CowTemplate make_cow_template() {
  CowTemplate t;
  constexpr double kRadius = 0.4;
  // Ring in the axial (x-y) plane; node k at 60k + 60 degrees, node 5 at 0 degrees.
  for (int k = 0; k < 6; ++k) {
    const double angle = std::numbers::pi / 3.0 * static_cast<double>((k + 1) % 6);
    t.nodes.push_back({kRadius * std::cos(angle), kRadius * std::sin(angle), 0.0});
  }
  for (int k = 0; k < 6; ++k) t.segments.push_back({static_cast<std::size_t>(k), static_cast<std::size_t>((k + 1) % 6), k + 1});

  int cls = 7;
  auto chain = [&](std::size_t root, Point3 step, int length) {
    std::size_t prev = root;
    Point3 at = t.nodes[root];
    for (int s = 0; s < length; ++s) {
      for (int a = 0; a < 3; ++a) at[a] += step[a];
      t.nodes.push_back(at);
      t.segments.push_back({prev, t.nodes.size() - 1, cls++});
      prev = t.nodes.size() - 1;
    }
  };
  chain(0, {0.1, 0.45, 0.3}, 2);    // anterior, right
  chain(1, {-0.1, 0.45, 0.3}, 2);   // anterior, left
  chain(2, {-0.55, 0.0, 0.1}, 1);   // lateral, left
  chain(5, {0.55, 0.0, 0.1}, 1);    // lateral, right
  chain(4, {-0.15, -0.2, -0.6}, 1); // posterior, descending
  return t;
}

}  // namespace

SpatialGraph gen_cow_like(const SynthConfig& cfg, bool jitter) {
  cfg.check();
  if (cfg.family != SynthFamily::kCowLike) throw ConfigError("gen_cow_like: family must be cow");
  static const CowTemplate tmpl = make_cow_template();
  Rng rng = substream(cfg.seed, "cow");
  std::normal_distribution<double> noise(0.0, 0.05);
  std::vector<Point3> pts = tmpl.nodes;
  if (jitter)
    for (auto& p : pts)
      for (auto& c : p) c += noise(rng);
  SpatialGraph g(std::move(pts), cfg.num_classes);
  for (const auto& s : tmpl.segments) g.connect(s.a, s.b, s.cls);
  return g;
}

std::vector<SpatialGraph> generate_dataset(const SynthConfig& cfg, std::size_t count) {
  cfg.check();
  std::vector<SpatialGraph> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    SynthConfig item = cfg;
    item.seed = substream(cfg.seed, "synth", k)();
    out.push_back(cfg.family == SynthFamily::kCapillary ? gen_capillary_patch(item) : gen_cow_like(item));
  }
  return out;
}

}  // namespace vgd
