#pragma once

// Spatial vessel graph: node coordinates plus a symmetric categorical edge matrix.
// Class 0 is background ("no edge") everywhere in the library.

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "vgd/rng.hpp"

namespace vgd {

using Point3 = std::array<double, 3>;

inline constexpr int kBackground = 0;

struct UndirectedEdge {
  std::size_t src;  // src < dst
  std::size_t dst;
  int cls;

  friend bool operator==(const UndirectedEdge&, const UndirectedEdge&) = default;
};

struct SpatialGraph {
  std::vector<Point3> coords;
  std::vector<int> edges;  // row-major n x n class labels
  int num_classes = 2;

  SpatialGraph() = default;
  /// n nodes at the origin, all pairs background.
  SpatialGraph(std::size_t n, int classes);
  SpatialGraph(std::vector<Point3> points, int classes);

  std::size_t size() const noexcept { return coords.size(); }

  int edge(std::size_t i, std::size_t j) const { return edges[i * coords.size() + j]; }
  int& edge(std::size_t i, std::size_t j) { return edges[i * coords.size() + j]; }

  /// Writes both (i,j) and (j,i).
  void connect(std::size_t i, std::size_t j, int cls);

  /// Non-background edges with src < dst, in row-major order.
  std::vector<UndirectedEdge> edge_list() const;
  std::size_t num_edges() const;
  std::vector<std::size_t> degrees() const;

  friend bool operator==(const SpatialGraph&, const SpatialGraph&) = default;
};

struct Violation {
  enum class Kind { kEmpty, kShape, kAsymmetric, kSelfLoop, kLabelRange, kNonFinite, kClassCount };
  Kind kind;
  std::size_t i = 0;
  std::size_t j = 0;
  std::string message;
};

/// Every invariant violation of `g`; empty iff the graph is well formed.
std::vector<Violation> validate(const SpatialGraph& g);

/// Per-axis affine map raw -> normalized: (x - shift) / scale.
struct DatasetNormalization {
  Point3 shift{0.0, 0.0, 0.0};
  Point3 scale{1.0, 1.0, 1.0};
  std::array<bool, 3> degenerate{false, false, false};

  Point3 normalize(const Point3& p) const;
  Point3 denormalize(const Point3& p) const;
  SpatialGraph normalize(const SpatialGraph& g) const;
  SpatialGraph denormalize(const SpatialGraph& g) const;
};

/// Min-max fit mapping every training coordinate into [-1, 1] per axis.
/// Throws ConfigError when there are no nodes at all.
DatasetNormalization fit_normalization(const std::vector<SpatialGraph>& graphs);

class NodeCountDistribution {
 public:
  NodeCountDistribution() = default;
  explicit NodeCountDistribution(std::map<std::size_t, double> probabilities);

  static NodeCountDistribution fit(const std::vector<SpatialGraph>& graphs);

  std::size_t sample(Rng& rng) const;
  double probability(std::size_t n) const;
  const std::map<std::size_t, double>& histogram() const noexcept { return probs_; }
  bool empty() const noexcept { return probs_.empty(); }

 private:
  std::map<std::size_t, double> probs_;
};

/// Writes `dir/nodes.csv` and `dir/edges.csv`, creating `dir`.
void save_graph(const SpatialGraph& g, const std::filesystem::path& dir);

/// Reads the two CSV files. Throws ParseError (with line) on malformed input and
/// ValidationError on out-of-range labels.
SpatialGraph load_graph(const std::filesystem::path& dir, int num_classes);

struct DatasetMeta {
  int num_classes = 2;
  std::string family;
  DatasetNormalization normalization;
  NodeCountDistribution node_counts;
  std::map<std::string, std::size_t> splits;
};

/// Layout: `root/<split>/<graph_id>/{nodes,edges}.csv` plus `root/meta.json`.
void save_dataset(const std::filesystem::path& root, const std::string& split,
                  const std::vector<SpatialGraph>& graphs, const std::string& family);

void save_meta(const std::filesystem::path& root, const DatasetMeta& meta);
DatasetMeta load_meta(const std::filesystem::path& root);
std::string meta_to_json(const DatasetMeta& meta);
DatasetMeta meta_from_json(const std::string& text, const std::string& source = "meta.json");

/// Every graph directory (one holding nodes.csv) below `root`, in path order.
std::vector<std::filesystem::path> find_graph_dirs(const std::filesystem::path& root);

/// Loads graphs below `root`. The class count comes from `root/meta.json` when present,
/// otherwise it is inferred as max label + 1 (at least 2).
std::vector<SpatialGraph> load_graph_set(const std::filesystem::path& root);

std::string format_double(double v);

}  // namespace vgd
