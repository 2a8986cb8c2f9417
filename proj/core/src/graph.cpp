#include "vgd/graph.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "json.hpp"
#include "vgd/error.hpp"

namespace vgd {

namespace fs = std::filesystem;
using nlohmann::json;

SpatialGraph::SpatialGraph(std::size_t n, int classes)
    : coords(n, Point3{0.0, 0.0, 0.0}), edges(n * n, kBackground), num_classes(classes) {}

SpatialGraph::SpatialGraph(std::vector<Point3> points, int classes)
    : coords(std::move(points)), edges(coords.size() * coords.size(), kBackground), num_classes(classes) {}

void SpatialGraph::connect(std::size_t i, std::size_t j, int cls) {
  edge(i, j) = cls;
  edge(j, i) = cls;
}

std::vector<UndirectedEdge> SpatialGraph::edge_list() const {
  std::vector<UndirectedEdge> out;
  const std::size_t n = size();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (edge(i, j) != kBackground) out.push_back({i, j, edge(i, j)});
  return out;
}

std::size_t SpatialGraph::num_edges() const {
  std::size_t count = 0;
  const std::size_t n = size();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) count += edge(i, j) != kBackground;
  return count;
}

std::vector<std::size_t> SpatialGraph::degrees() const {
  const std::size_t n = size();
  std::vector<std::size_t> deg(n, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j && edge(i, j) != kBackground) ++deg[i];
  return deg;
}

std::vector<Violation> validate(const SpatialGraph& g) {
  using K = Violation::Kind;
  std::vector<Violation> out;
  const std::size_t n = g.size();
  if (g.num_classes < 2) out.push_back({K::kClassCount, 0, 0, "num_classes must be >= 2"});
  if (n == 0) {
    out.push_back({K::kEmpty, 0, 0, "n >= 1 violated"});
    return out;
  }
  if (g.edges.size() != n * n) {
    out.push_back({K::kShape, 0, 0, "edge matrix has " + std::to_string(g.edges.size()) + " entries, expected " +
                                        std::to_string(n * n)});
    return out;
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (double v : g.coords[i]) {
      if (!std::isfinite(v)) {
        out.push_back({K::kNonFinite, i, i, "non-finite coordinate at node " + std::to_string(i)});
        break;
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (g.edge(i, i) != kBackground)
      out.push_back({K::kSelfLoop, i, i, "diagonal entry at " + std::to_string(i) + " is not background"});
    for (std::size_t j = 0; j < n; ++j) {
      const int label = g.edge(i, j);
      if (label < 0 || label >= g.num_classes)
        out.push_back({K::kLabelRange, i, j,
                       "label " + std::to_string(label) + " at (" + std::to_string(i) + "," + std::to_string(j) +
                           ") outside [0," + std::to_string(g.num_classes - 1) + "]"});
      if (j > i && label != g.edge(j, i))
        out.push_back({K::kAsymmetric, i, j, "asymmetric labels at (" + std::to_string(i) + "," + std::to_string(j) + ")"});
    }
  }
  return out;
}

Point3 DatasetNormalization::normalize(const Point3& p) const {
  return {(p[0] - shift[0]) / scale[0], (p[1] - shift[1]) / scale[1], (p[2] - shift[2]) / scale[2]};
}

Point3 DatasetNormalization::denormalize(const Point3& p) const {
  return {p[0] * scale[0] + shift[0], p[1] * scale[1] + shift[1], p[2] * scale[2] + shift[2]};
}

SpatialGraph DatasetNormalization::normalize(const SpatialGraph& g) const {
  SpatialGraph out = g;
  for (auto& p : out.coords) p = normalize(p);
  return out;
}

SpatialGraph DatasetNormalization::denormalize(const SpatialGraph& g) const {
  SpatialGraph out = g;
  for (auto& p : out.coords) p = denormalize(p);
  return out;
}

DatasetNormalization fit_normalization(const std::vector<SpatialGraph>& graphs) {
  Point3 lo, hi;
  lo.fill(std::numeric_limits<double>::infinity());
  hi.fill(-std::numeric_limits<double>::infinity());
  std::size_t total = 0;
  for (const auto& g : graphs) {
    for (const auto& p : g.coords) {
      for (int a = 0; a < 3; ++a) {
        lo[a] = std::min(lo[a], p[a]);
        hi[a] = std::max(hi[a], p[a]);
      }
      ++total;
    }
  }
  if (total == 0) throw ConfigError("fit_normalization: need at least one node");
  DatasetNormalization norm;
  for (int a = 0; a < 3; ++a) {
    norm.shift[a] = 0.5 * (lo[a] + hi[a]);
    const double half = 0.5 * (hi[a] - lo[a]);
    norm.degenerate[a] = !(half > 0.0);
    norm.scale[a] = norm.degenerate[a] ? 1.0 : half;
  }
  return norm;
}

NodeCountDistribution::NodeCountDistribution(std::map<std::size_t, double> probabilities)
    : probs_(std::move(probabilities)) {
  double total = 0.0;
  for (auto& [n, p] : probs_) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw ConfigError("node-count probability must be finite and >= 0");
    total += p;
  }
  if (probs_.empty() || !(total > 0.0)) throw ConfigError("node-count distribution has no mass");
  for (auto& [n, p] : probs_) p /= total;
}

NodeCountDistribution NodeCountDistribution::fit(const std::vector<SpatialGraph>& graphs) {
  std::map<std::size_t, double> counts;
  for (const auto& g : graphs) counts[g.size()] += 1.0;
  return NodeCountDistribution(std::move(counts));
}

std::size_t NodeCountDistribution::sample(Rng& rng) const {
  const double u = uniform01(rng);
  double acc = 0.0;
  for (const auto& [n, p] : probs_) {
    acc += p;
    if (u < acc) return n;
  }
  return probs_.rbegin()->first;
}

double NodeCountDistribution::probability(std::size_t n) const {
  auto it = probs_.find(n);
  return it == probs_.end() ? 0.0 : it->second;
}

std::string format_double(double v) {
  char buf[64];
  const double mag = std::abs(v);
  const bool fixed = mag == 0.0 || (mag >= 1e-5 && mag < 1e15);
  const auto res = fixed ? std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed)
                         : std::to_chars(buf, buf + sizeof buf, v, std::chars_format::scientific);
  return std::string(buf, res.ptr);
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  fields.push_back(cur);
  return fields;
}

template <typename T>
T parse_integer(const std::string& s, const std::string& file, std::size_t line) {
  T value{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw ParseError(file, line, "expected integer, got '" + s + "'");
  return value;
}

double parse_real(const std::string& s, const std::string& file, std::size_t line) {
  if (s.empty()) throw ParseError(file, line, "empty numeric field");
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size()) throw ParseError(file, line, "expected real, got '" + s + "'");
  return v;
}

}  // namespace

void save_graph(const SpatialGraph& g, const fs::path& dir) {
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "nodes.csv");
    if (!out) throw IoError("cannot write " + (dir / "nodes.csv").string());
    out << "id,x,y,z\n";
    for (std::size_t i = 0; i < g.size(); ++i)
      out << i << ',' << format_double(g.coords[i][0]) << ',' << format_double(g.coords[i][1]) << ','
          << format_double(g.coords[i][2]) << '\n';
  }
  std::ofstream out(dir / "edges.csv");
  if (!out) throw IoError("cannot write " + (dir / "edges.csv").string());
  out << "src,dst,class\n";
  for (const auto& e : g.edge_list()) out << e.src << ',' << e.dst << ',' << e.cls << '\n';
}

SpatialGraph load_graph(const fs::path& dir, int num_classes) {
  const std::string nodes_file = (dir / "nodes.csv").string();
  const std::string edges_file = (dir / "edges.csv").string();
  std::ifstream nodes_in(nodes_file);
  if (!nodes_in) throw IoError("cannot read " + nodes_file);

  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(nodes_in, line)) throw ParseError(nodes_file, 1, "missing header");
  ++lineno;
  if (split_csv(line) != std::vector<std::string>{"id", "x", "y", "z"})
    throw ParseError(nodes_file, lineno, "header must be id,x,y,z");
  std::vector<Point3> coords;
  while (std::getline(nodes_in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv(line);
    if (f.size() != 4) throw ParseError(nodes_file, lineno, "expected 4 fields");
    const auto id = parse_integer<std::size_t>(f[0], nodes_file, lineno);
    if (id != coords.size())
      throw ParseError(nodes_file, lineno, "node ids must be consecutive from 0; got " + f[0]);
    coords.push_back({parse_real(f[1], nodes_file, lineno), parse_real(f[2], nodes_file, lineno),
                      parse_real(f[3], nodes_file, lineno)});
  }
  if (coords.empty()) throw ParseError(nodes_file, lineno, "n >= 1 violated");

  SpatialGraph g(std::move(coords), std::max(num_classes, 2));
  const std::size_t n = g.size();

  std::ifstream edges_in(edges_file);
  if (!edges_in) throw IoError("cannot read " + edges_file);
  lineno = 0;
  if (!std::getline(edges_in, line)) throw ParseError(edges_file, 1, "missing header");
  ++lineno;
  if (split_csv(line) != std::vector<std::string>{"src", "dst", "class"})
    throw ParseError(edges_file, lineno, "header must be src,dst,class");
  int max_label = 0;
  while (std::getline(edges_in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv(line);
    if (f.size() != 3) throw ParseError(edges_file, lineno, "expected 3 fields");
    const auto src = parse_integer<std::size_t>(f[0], edges_file, lineno);
    const auto dst = parse_integer<std::size_t>(f[1], edges_file, lineno);
    const auto cls = parse_integer<int>(f[2], edges_file, lineno);
    if (src >= n || dst >= n)
      throw ParseError(edges_file, lineno, "index out of bounds (n = " + std::to_string(n) + ")");
    if (src == dst) throw ValidationError(edges_file + ":" + std::to_string(lineno) + ": self-loop on node " + f[0]);
    if (cls < 0 || (num_classes > 0 && cls >= num_classes))
      throw ValidationError(edges_file + ":" + std::to_string(lineno) + ": label " + f[2] + " out of range");
    if (g.edge(src, dst) != kBackground && g.edge(src, dst) != cls)
      throw ParseError(edges_file, lineno, "conflicting duplicate edge");
    g.connect(src, dst, cls);
    max_label = std::max(max_label, cls);
  }
  if (num_classes <= 0) g.num_classes = std::max(2, max_label + 1);
  return g;
}

namespace {

json normalization_to_json(const DatasetNormalization& n) {
  return {{"shift", {n.shift[0], n.shift[1], n.shift[2]}},
          {"scale", {n.scale[0], n.scale[1], n.scale[2]}},
          {"degenerate", {n.degenerate[0], n.degenerate[1], n.degenerate[2]}}};
}

DatasetNormalization normalization_from_json(const json& j) {
  DatasetNormalization n;
  for (int a = 0; a < 3; ++a) {
    n.shift[a] = j.at("shift").at(a).get<double>();
    n.scale[a] = j.at("scale").at(a).get<double>();
    n.degenerate[a] = j.contains("degenerate") ? j["degenerate"].at(a).get<bool>() : false;
    if (!(n.scale[a] > 0.0)) throw ConfigError("normalization scale must be positive");
  }
  return n;
}

}  // namespace

std::string meta_to_json(const DatasetMeta& meta) {
  json j;
  j["num_classes"] = meta.num_classes;
  j["family"] = meta.family;
  j["normalization"] = normalization_to_json(meta.normalization);
  json hist = json::object();
  for (const auto& [n, p] : meta.node_counts.histogram()) hist[std::to_string(n)] = p;
  j["node_counts"] = hist;
  j["splits"] = meta.splits;
  return j.dump(2);
}

DatasetMeta meta_from_json(const std::string& text, const std::string& source) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(source, 0, e.what());
  }
  try {
    DatasetMeta meta;
    meta.num_classes = j.at("num_classes").get<int>();
    if (meta.num_classes < 2) throw ConfigError(source + ": num_classes must be >= 2");
    meta.family = j.value("family", std::string{});
    meta.normalization = normalization_from_json(j.at("normalization"));
    std::map<std::size_t, double> hist;
    for (const auto& [key, value] : j.at("node_counts").items()) hist[std::stoul(key)] = value.get<double>();
    meta.node_counts = NodeCountDistribution(std::move(hist));
    if (j.contains("splits")) meta.splits = j["splits"].get<std::map<std::string, std::size_t>>();
    return meta;
  } catch (const json::exception& e) {
    throw ParseError(source, 0, e.what());
  }
}

void save_meta(const fs::path& root, const DatasetMeta& meta) {
  fs::create_directories(root);
  std::ofstream out(root / "meta.json");
  if (!out) throw IoError("cannot write " + (root / "meta.json").string());
  out << meta_to_json(meta) << '\n';
}

DatasetMeta load_meta(const fs::path& root) {
  const fs::path file = root / "meta.json";
  std::ifstream in(file);
  if (!in) throw IoError("cannot read " + file.string());
  std::stringstream text;
  text << in.rdbuf();
  return meta_from_json(text.str(), file.string());
}

void save_dataset(const fs::path& root, const std::string& split, const std::vector<SpatialGraph>& graphs,
                  const std::string& family) {
  if (graphs.empty()) throw ConfigError("save_dataset: empty graph set");
  for (std::size_t k = 0; k < graphs.size(); ++k) {
    char name[32];
    std::snprintf(name, sizeof name, "g%06zu", k);
    save_graph(graphs[k], root / split / name);
  }
  DatasetMeta meta;
  meta.num_classes = graphs.front().num_classes;
  meta.family = family;
  meta.normalization = fit_normalization(graphs);
  meta.node_counts = NodeCountDistribution::fit(graphs);
  meta.splits[split] = graphs.size();
  save_meta(root, meta);
}

std::vector<fs::path> find_graph_dirs(const fs::path& root) {
  std::vector<fs::path> dirs;
  if (!fs::is_directory(root)) return dirs;
  if (fs::exists(root / "nodes.csv")) dirs.push_back(root);
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (entry.is_directory() && fs::exists(entry.path() / "nodes.csv")) dirs.push_back(entry.path());
  }
  std::sort(dirs.begin(), dirs.end());
  return dirs;
}

std::vector<SpatialGraph> load_graph_set(const fs::path& root) {
  int classes = 0;
  if (fs::exists(root / "meta.json")) classes = load_meta(root).num_classes;
  std::vector<SpatialGraph> graphs;
  for (const auto& dir : find_graph_dirs(root)) graphs.push_back(load_graph(dir, classes));
  if (classes == 0 && !graphs.empty()) {
    int c = 2;
    for (const auto& g : graphs) c = std::max(c, g.num_classes);
    for (auto& g : graphs) g.num_classes = c;
  }
  return graphs;
}

}  // namespace vgd
