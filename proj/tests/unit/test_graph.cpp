#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "test_util.hpp"
#include "vgd/error.hpp"
#include "vgd/graph.hpp"

using namespace vgd;
namespace fs = std::filesystem;

TEST_CASE("validate accepts the one-node graph") {
  SpatialGraph g(1, 2);
  CHECK(validate(g).empty());
}

TEST_CASE("validate reports asymmetry once at the upper pair") {
  SpatialGraph g(2, 3);
  g.edge(0, 1) = 1;
  g.edge(1, 0) = 2;
  const auto v = validate(g);
  REQUIRE(v.size() == 1);
  CHECK(v[0].kind == Violation::Kind::kAsymmetric);
  CHECK(v[0].i == 0);
  CHECK(v[0].j == 1);
}

TEST_CASE("validate reports a diagonal label") {
  SpatialGraph g(2, 4);
  g.edge(0, 0) = 3;
  const auto v = validate(g);
  REQUIRE(v.size() == 1);
  CHECK(v[0].kind == Violation::Kind::kSelfLoop);
  CHECK(v[0].i == 0);
}

TEST_CASE("validate reports labels out of range, empty graphs and non-finite coordinates") {
  SpatialGraph g(3, 2);
  g.connect(0, 2, 5);
  g.coords[1][2] = std::numeric_limits<double>::quiet_NaN();
  const auto v = validate(g);
  bool range = false, finite = false;
  for (const auto& x : v) {
    range = range || x.kind == Violation::Kind::kLabelRange;
    finite = finite || x.kind == Violation::Kind::kNonFinite;
  }
  CHECK(range);
  CHECK(finite);
  CHECK(validate(SpatialGraph(0, 2)).size() == 1);
}

TEST_CASE("min-max normalization of two points") {
  SpatialGraph g({{0, 0, 0}, {2, 4, 8}}, 2);
  const auto n = fit_normalization({g});
  CHECK(n.shift == Point3{1, 2, 4});
  CHECK(n.scale == Point3{1, 2, 4});
  const auto m = n.normalize(g);
  CHECK(m.coords[0] == Point3{-1, -1, -1});
  CHECK(m.coords[1] == Point3{1, 1, 1});
}

TEST_CASE("degenerate axes keep unit scale and are flagged") {
  SpatialGraph g({{5, 5, 5}, {5, 5, 5}}, 2);
  const auto n = fit_normalization({g});
  CHECK(n.shift == Point3{5, 5, 5});
  CHECK(n.scale == Point3{1, 1, 1});
  CHECK(n.degenerate == std::array<bool, 3>{true, true, true});
  CHECK_THROWS_AS(fit_normalization({}), ConfigError);
}

TEST_CASE("normalization maps the fitting set into the unit box and inverts") {
  Rng rng(3);
  std::vector<SpatialGraph> graphs;
  for (int k = 0; k < 10; ++k) graphs.push_back(test::random_graph(rng, 2 + k, 4, 0.3, 50.0));
  const auto n = fit_normalization(graphs);
  for (const auto& g : graphs) {
    const auto m = n.normalize(g);
    for (std::size_t v = 0; v < g.size(); ++v)
      for (int a = 0; a < 3; ++a) {
        CHECK(m.coords[v][a] >= -1.0 - 1e-15);
        CHECK(m.coords[v][a] <= 1.0 + 1e-15);
        CHECK(n.denormalize(m.coords[v])[a] == doctest::Approx(g.coords[v][a]).epsilon(1e-12));
      }
  }
}

TEST_CASE("node-count distribution is a normalized histogram") {
  std::vector<SpatialGraph> graphs{SpatialGraph(3, 2), SpatialGraph(3, 2), SpatialGraph(5, 2), SpatialGraph(7, 2)};
  const auto d = NodeCountDistribution::fit(graphs);
  double total = 0.0;
  for (const auto& [n, p] : d.histogram()) total += p;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(d.probability(3) == doctest::Approx(0.5));
  CHECK(d.probability(4) == 0.0);
  Rng rng(1);
  for (int k = 0; k < 200; ++k) {
    const auto n = d.sample(rng);
    CHECK((n == 3 || n == 5 || n == 7));
  }
}

TEST_CASE("graph files round-trip exactly") {
  test::TempDir dir;
  Rng rng(11);
  for (int k = 0; k < 20; ++k) {
    SpatialGraph g = test::random_graph(rng, 1 + k % 12, 5, 0.4, 1e3);
    g.coords[0][0] = 0.1 + 1e-17 * k;
    const auto path = dir.path / ("g" + std::to_string(k));
    save_graph(g, path);
    CHECK(load_graph(path, 5) == g);
  }
}

TEST_CASE("edge file layout lists each edge once with src < dst") {
  test::TempDir dir;
  SpatialGraph g({{0, 0, 0}, {1, 0, 0}, {0, 1, 0}}, 4);
  g.connect(2, 0, 3);
  g.connect(1, 2, 1);
  save_graph(g, dir.path);
  std::ifstream in(dir.path / "edges.csv");
  std::string header, a, b, c;
  std::getline(in, header);
  std::getline(in, a);
  std::getline(in, b);
  CHECK(header == "src,dst,class");
  CHECK(a == "0,2,3");
  CHECK(b == "1,2,1");
  CHECK_FALSE(std::getline(in, c));
  std::ifstream nodes(dir.path / "nodes.csv");
  std::getline(nodes, header);
  CHECK(header == "id,x,y,z");
}

TEST_CASE("malformed graph files produce located errors") {
  test::TempDir dir;
  auto write = [&](const std::string& nodes, const std::string& edges) {
    std::ofstream(dir.path / "nodes.csv") << nodes;
    std::ofstream(dir.path / "edges.csv") << edges;
  };

  write("id,x,y,z\n", "src,dst,class\n");
  CHECK_THROWS_WITH_AS(load_graph(dir.path, 2), doctest::Contains("n >= 1 violated"), ParseError);

  write("id,x,y,z\n0,0,0,0\n1,1,1,1\n", "src,dst,class\n0,2,1\n");
  try {
    load_graph(dir.path, 2);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("index out of bounds") != std::string::npos);
    CHECK(e.line() == 2);
  }

  write("id,x,y,z\n0,0,0,0\n1,abc,1,1\n", "src,dst,class\n");
  try {
    load_graph(dir.path, 2);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }

  write("id,x,y,z\n0,0,0,0\n1,1,1,1\n", "src,dst,class\n0,1,7\n");
  CHECK_THROWS_AS(load_graph(dir.path, 4), ValidationError);
}

TEST_CASE("dataset layout and meta round-trip") {
  test::TempDir dir;
  Rng rng(5);
  std::vector<SpatialGraph> graphs;
  for (int k = 0; k < 6; ++k) graphs.push_back(test::random_graph(rng, 3 + k, 4, 0.5, 2.0));
  save_dataset(dir.path, "train", graphs, "capillary");
  const auto meta = load_meta(dir.path);
  CHECK(meta.num_classes == 4);
  CHECK(meta.family == "capillary");
  CHECK(meta.splits.at("train") == 6);
  CHECK(meta.node_counts.probability(3) == doctest::Approx(1.0 / 6.0));
  const auto again = meta_from_json(meta_to_json(meta));
  CHECK(again.normalization.shift == meta.normalization.shift);
  CHECK(again.normalization.scale == meta.normalization.scale);
  CHECK(find_graph_dirs(dir.path).size() == 6);
  CHECK(load_graph_set(dir.path) == graphs);
}

TEST_CASE("format_double round-trips") {
  Rng rng(9);
  for (int k = 0; k < 1000; ++k) {
    const double v = (uniform01(rng) - 0.5) * std::pow(10.0, static_cast<int>(uniform01(rng) * 40) - 20);
    CHECK(std::stod(format_double(v)) == v);
  }
  CHECK(format_double(3e-4) == "0.0003");
}
