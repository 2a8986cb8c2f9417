#pragma once

// Graph statistics and histogram KL divergences between a reference and a generated set.

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "vgd/graph.hpp"

namespace vgd {

/// Connected components, isolated nodes included.
std::size_t betti0(const SpatialGraph& g);
/// Independent cycles: |E| - |V| + betti0.
std::size_t betti1(const SpatialGraph& g);

struct EdgeStatistics {
  std::vector<double> lengths;
  /// Angle in degrees between every pair of edges sharing a node.
  std::vector<double> inter_edge_angles;
  /// Per edge, angle in degrees to the x/y/z axis, folded into [0, 90].
  std::array<std::vector<double>, 3> orientation;
  std::size_t degenerate_edges = 0;
};

EdgeStatistics edge_statistics(const SpatialGraph& g);

struct Histogram {
  std::vector<double> left;   // bin edges
  std::vector<double> right;
  std::vector<double> ref_mass;  // smoothed, normalized
  std::vector<double> gen_mass;
};

struct KlOptions {
  std::size_t bins = 50;
  double smoothing = 1e-6;
};

/// KL(reference || generated) over a uniform binning of the pooled range.
/// Throws ConfigError on an empty sample set or bins < 2.
double histogram_kl(std::span<const double> reference, std::span<const double> generated, const KlOptions& options = {},
                    Histogram* histogram = nullptr);

/// Same for integer-valued samples: one bin per integer in [0, max_value] plus an overflow bin.
double discrete_kl(std::span<const double> reference, std::span<const double> generated, std::size_t max_value = 255,
                   double smoothing = 1e-6, Histogram* histogram = nullptr);

/// Column order of the report: coordinates, degree, edge count, edge length, inter-edge angle,
/// orientation, betti-0, betti-1.
inline constexpr std::array<const char*, 8> kReportColumns = {"xyz", "deg", "E", "len", "angle", "orient", "b0", "b1"};

struct GraphStatsReport {
  std::map<std::string, double> kl;              // keyed by kReportColumns
  std::map<std::string, double> axis_kl;         // x, y, z, theta, phi, psi
  std::map<std::string, Histogram> histograms;   // x, y, z, deg, E, len, angle, theta, phi, psi, b0, b1
  std::size_t reference_graphs = 0;
  std::size_t generated_graphs = 0;

  /// Values in kReportColumns order.
  std::vector<double> row() const;
};

GraphStatsReport evaluate_sets(std::span<const SpatialGraph> reference, std::span<const SpatialGraph> generated,
                               const KlOptions& options = {});

/// `xyz,deg,E,len,angle,orient,b0,b1,method,n_ref,n_gen` header followed by one row.
std::string report_csv_header();
std::string report_csv_row(const GraphStatsReport& report, const std::string& method);

/// Writes report.csv (header + one row) and hist_<stat>.csv files next to it.
void write_report(const std::filesystem::path& report_path, const GraphStatsReport& report, const std::string& method);

}  // namespace vgd
