#include "vgd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "vgd/error.hpp"

namespace vgd {

namespace {

struct DisjointSet {
  std::vector<std::size_t> parent;
  explicit DisjointSet(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  bool unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    parent[std::max(a, b)] = std::min(a, b);
    return true;
  }
};

constexpr double kRadToDeg = 180.0 / std::numbers::pi;

double angle_between(const Point3& u, const Point3& v) {
  const double dot = u[0] * v[0] + u[1] * v[1] + u[2] * v[2];
  const double nu = std::sqrt(u[0] * u[0] + u[1] * u[1] + u[2] * u[2]);
  const double nv = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  return std::acos(std::clamp(dot / (nu * nv), -1.0, 1.0)) * kRadToDeg;
}

std::vector<double> smooth(std::vector<double> counts, double total, double eps) {
  const double k = static_cast<double>(counts.size());
  for (auto& c : counts) c = (total > 0.0 ? c / total : 0.0) + eps;
  const double z = (total > 0.0 ? 1.0 : 0.0) + k * eps;
  for (auto& c : counts) c /= z;
  return counts;
}

double kl_of(const std::vector<double>& p, const std::vector<double>& q) {
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) kl += p[i] * std::log(p[i] / q[i]);
  return std::max(kl, 0.0);
}

// Continuous KL that tolerates an empty side: an empty set becomes the uniform smoothing floor.
double continuous_kl_tolerant(std::span<const double> ref, std::span<const double> gen, const KlOptions& options,
                              Histogram* hist);

}  // namespace

std::size_t betti0(const SpatialGraph& g) {
  DisjointSet ds(g.size());
  std::size_t components = g.size();
  for (const auto& e : g.edge_list())
    if (ds.unite(e.src, e.dst)) --components;
  return components;
}

std::size_t betti1(const SpatialGraph& g) { return g.num_edges() + betti0(g) - g.size(); }

EdgeStatistics edge_statistics(const SpatialGraph& g) {
  EdgeStatistics stats;
  const std::size_t n = g.size();
  std::vector<std::vector<Point3>> incident(n);
  for (const auto& e : g.edge_list()) {
    const Point3& a = g.coords[e.src];
    const Point3& b = g.coords[e.dst];
    const Point3 d{b[0] - a[0], b[1] - a[1], b[2] - a[2]};
    const double len = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
    stats.lengths.push_back(len);
    if (!(len > 0.0)) {
      ++stats.degenerate_edges;
      continue;
    }
    for (std::size_t axis = 0; axis < 3; ++axis)
      stats.orientation[axis].push_back(std::acos(std::min(1.0, std::abs(d[axis]) / len)) * kRadToDeg);
    incident[e.src].push_back(d);
    incident[e.dst].push_back({-d[0], -d[1], -d[2]});
  }
  for (std::size_t v = 0; v < n; ++v)
    for (std::size_t a = 0; a < incident[v].size(); ++a)
      for (std::size_t b = a + 1; b < incident[v].size(); ++b)
        stats.inter_edge_angles.push_back(angle_between(incident[v][a], incident[v][b]));
  return stats;
}

double histogram_kl(std::span<const double> reference, std::span<const double> generated, const KlOptions& options,
                    Histogram* histogram) {
  if (reference.empty() || generated.empty()) throw ConfigError("histogram_kl: empty sample set");
  if (options.bins < 2) throw ConfigError("histogram_kl: need at least 2 bins");
  return continuous_kl_tolerant(reference, generated, options, histogram);
}

namespace {

double continuous_kl_tolerant(std::span<const double> ref, std::span<const double> gen, const KlOptions& options,
                              Histogram* hist) {
  const std::size_t bins = options.bins;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (auto s : {ref, gen})
    for (double v : s) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  if (!std::isfinite(lo)) {
    lo = 0.0;
    hi = 1.0;
  }
  const double width = hi > lo ? (hi - lo) / static_cast<double>(bins) : 1.0;
  auto count = [&](std::span<const double> s) {
    std::vector<double> c(bins, 0.0);
    for (double v : s) {
      const auto idx = static_cast<std::size_t>(std::clamp(std::floor((v - lo) / width), 0.0, static_cast<double>(bins - 1)));
      c[idx] += 1.0;
    }
    return c;
  };
  const auto p = smooth(count(ref), static_cast<double>(ref.size()), options.smoothing);
  const auto q = smooth(count(gen), static_cast<double>(gen.size()), options.smoothing);
  if (hist) {
    hist->left.clear();
    hist->right.clear();
    for (std::size_t b = 0; b < bins; ++b) {
      hist->left.push_back(lo + width * static_cast<double>(b));
      hist->right.push_back(lo + width * static_cast<double>(b + 1));
    }
    hist->ref_mass = p;
    hist->gen_mass = q;
  }
  return kl_of(p, q);
}

}  // namespace

double discrete_kl(std::span<const double> reference, std::span<const double> generated, std::size_t max_value,
                   double smoothing, Histogram* histogram) {
  if (reference.empty() || generated.empty()) throw ConfigError("discrete_kl: empty sample set");
  const std::size_t bins = max_value + 2;
  auto count = [&](std::span<const double> s) {
    std::vector<double> c(bins, 0.0);
    for (double v : s) {
      const double r = std::round(v);
      if (r < 0.0) throw ConfigError("discrete_kl: negative value");
      c[std::min(static_cast<std::size_t>(r), max_value + 1)] += 1.0;
    }
    return c;
  };
  const auto p = smooth(count(reference), static_cast<double>(reference.size()), smoothing);
  const auto q = smooth(count(generated), static_cast<double>(generated.size()), smoothing);
  if (histogram) {
    histogram->left.clear();
    histogram->right.clear();
    for (std::size_t b = 0; b < bins; ++b) {
      histogram->left.push_back(static_cast<double>(b));
      histogram->right.push_back(b + 1 < bins ? static_cast<double>(b + 1) : std::numeric_limits<double>::infinity());
    }
    histogram->ref_mass = p;
    histogram->gen_mass = q;
  }
  return kl_of(p, q);
}

std::vector<double> GraphStatsReport::row() const {
  std::vector<double> out;
  for (const char* col : kReportColumns) out.push_back(kl.at(col));
  return out;
}

namespace {

struct Pooled {
  std::array<std::vector<double>, 3> coords;
  std::vector<double> degree, edges, lengths, angles, b0, b1;
  std::array<std::vector<double>, 3> orientation;
};

Pooled pool(std::span<const SpatialGraph> graphs) {
  Pooled p;
  for (const auto& g : graphs) {
    for (const auto& pt : g.coords)
      for (std::size_t a = 0; a < 3; ++a) p.coords[a].push_back(pt[a]);
    for (auto d : g.degrees()) p.degree.push_back(static_cast<double>(d));
    p.edges.push_back(static_cast<double>(g.num_edges()));
    p.b0.push_back(static_cast<double>(betti0(g)));
    p.b1.push_back(static_cast<double>(betti1(g)));
    const auto stats = edge_statistics(g);
    p.lengths.insert(p.lengths.end(), stats.lengths.begin(), stats.lengths.end());
    p.angles.insert(p.angles.end(), stats.inter_edge_angles.begin(), stats.inter_edge_angles.end());
    for (std::size_t a = 0; a < 3; ++a)
      p.orientation[a].insert(p.orientation[a].end(), stats.orientation[a].begin(), stats.orientation[a].end());
  }
  return p;
}

}  // namespace

GraphStatsReport evaluate_sets(std::span<const SpatialGraph> reference, std::span<const SpatialGraph> generated,
                               const KlOptions& options) {
  if (reference.empty() || generated.empty()) throw ConfigError("evaluate_sets: both graph sets must be non-empty");
  const Pooled ref = pool(reference);
  const Pooled gen = pool(generated);
  GraphStatsReport report;
  report.reference_graphs = reference.size();
  report.generated_graphs = generated.size();

  auto continuous = [&](const std::string& name, const std::vector<double>& r, const std::vector<double>& g) {
    Histogram h;
    const double kl = r.empty() && g.empty() ? 0.0 : continuous_kl_tolerant(r, g, options, &h);
    report.histograms[name] = std::move(h);
    return kl;
  };
  auto discrete = [&](const std::string& name, const std::vector<double>& r, const std::vector<double>& g) {
    Histogram h;
    const double kl = discrete_kl(r, g, 255, options.smoothing, &h);
    report.histograms[name] = std::move(h);
    return kl;
  };

  static constexpr std::array<const char*, 3> kAxes = {"x", "y", "z"};
  static constexpr std::array<const char*, 3> kAngles = {"theta", "phi", "psi"};
  double xyz = 0.0, orient = 0.0;
  for (std::size_t a = 0; a < 3; ++a) {
    report.axis_kl[kAxes[a]] = continuous(kAxes[a], ref.coords[a], gen.coords[a]);
    xyz += report.axis_kl[kAxes[a]] / 3.0;
    report.axis_kl[kAngles[a]] = continuous(kAngles[a], ref.orientation[a], gen.orientation[a]);
    orient += report.axis_kl[kAngles[a]] / 3.0;
  }
  report.kl["xyz"] = xyz;
  report.kl["deg"] = discrete("deg", ref.degree, gen.degree);
  report.kl["E"] = discrete("E", ref.edges, gen.edges);
  report.kl["len"] = continuous("len", ref.lengths, gen.lengths);
  report.kl["angle"] = continuous("angle", ref.angles, gen.angles);
  report.kl["orient"] = orient;
  report.kl["b0"] = discrete("b0", ref.b0, gen.b0);
  report.kl["b1"] = discrete("b1", ref.b1, gen.b1);
  return report;
}

std::string report_csv_header() {
  std::string h;
  for (const char* col : kReportColumns) h += std::string(col) + ",";
  return h + "method,n_ref,n_gen";
}

std::string report_csv_row(const GraphStatsReport& report, const std::string& method) {
  std::ostringstream os;
  for (double v : report.row()) os << format_double(v) << ',';
  os << method << ',' << report.reference_graphs << ',' << report.generated_graphs;
  return os.str();
}

void write_report(const std::filesystem::path& report_path, const GraphStatsReport& report, const std::string& method) {
  if (report_path.has_parent_path()) std::filesystem::create_directories(report_path.parent_path());
  {
    std::ofstream out(report_path);
    if (!out) throw IoError("cannot write " + report_path.string());
    out << report_csv_header() << '\n' << report_csv_row(report, method) << '\n';
  }
  const auto dir = report_path.has_parent_path() ? report_path.parent_path() : std::filesystem::path(".");
  for (const auto& [name, h] : report.histograms) {
    std::ofstream out(dir / ("hist_" + name + ".csv"));
    if (!out) throw IoError("cannot write histogram " + name);
    out << "bin_left,bin_right,ref_mass,gen_mass\n";
    for (std::size_t b = 0; b < h.left.size(); ++b)
      out << format_double(h.left[b]) << ',' << format_double(h.right[b]) << ',' << format_double(h.ref_mass[b]) << ','
          << format_double(h.gen_mass[b]) << '\n';
  }
}

}  // namespace vgd
