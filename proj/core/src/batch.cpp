#include "vgd/batch.hpp"

#include <algorithm>

#include "vgd/error.hpp"

namespace vgd {

GraphBatch make_graph_batch(std::span<const SpatialGraph> graphs) {
  if (graphs.empty()) throw ConfigError("make_graph_batch: no graphs");
  GraphBatch batch;
  batch.num_classes = graphs.front().num_classes;
  for (const auto& g : graphs) {
    if (g.num_classes != batch.num_classes) throw ConfigError("make_graph_batch: mixed class counts");
    batch.max_nodes = std::max(batch.max_nodes, g.size());
    batch.sizes.push_back(g.size());
  }
  const std::size_t B = graphs.size(), n = batch.max_nodes;
  std::vector<double> coords(B * n * 3, 0.0), mask(B * n, 0.0);
  batch.edges.assign(B * n * n, kBackground);
  for (std::size_t b = 0; b < B; ++b) {
    const auto& g = graphs[b];
    for (std::size_t i = 0; i < g.size(); ++i) {
      mask[b * n + i] = 1.0;
      for (std::size_t a = 0; a < 3; ++a) coords[(b * n + i) * 3 + a] = g.coords[i][a];
      for (std::size_t j = 0; j < g.size(); ++j) batch.edges[(b * n + i) * n + j] = g.edge(i, j);
    }
  }
  batch.coords = Tensor({B, n, 3}, std::move(coords));
  batch.mask = Tensor({B, n}, std::move(mask));
  return batch;
}

GraphBatch make_coordinate_batch(std::span<const std::vector<Point3>> node_sets, int num_classes) {
  std::vector<SpatialGraph> graphs;
  graphs.reserve(node_sets.size());
  for (const auto& pts : node_sets) graphs.emplace_back(pts, num_classes);
  return make_graph_batch(graphs);
}

Tensor one_hot_edges(std::span<const int> labels, std::size_t batch, std::size_t n, int num_classes) {
  const auto c = static_cast<std::size_t>(num_classes);
  if (labels.size() != batch * n * n) throw ShapeError("one_hot_edges: label count does not match batch shape");
  std::vector<double> out(labels.size() * c, 0.0);
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] < 0 || labels[r] >= num_classes) throw ShapeError("one_hot_edges: label out of range");
    out[r * c + static_cast<std::size_t>(labels[r])] = 1.0;
  }
  return Tensor({batch, n, n, c}, std::move(out));
}

Tensor coordinate_mask(const Tensor& mask) {
  std::vector<double> out(mask.numel() * 3);
  for (std::size_t r = 0; r < mask.numel(); ++r) std::fill_n(out.begin() + r * 3, 3, mask[r]);
  return Tensor({mask.dim(0), mask.dim(1), 3}, std::move(out));
}

}  // namespace vgd
