#include <cmath>
#include <fstream>

#include "doctest.h"
#include "test_util.hpp"
#include "vgd/error.hpp"
#include "vgd/synth.hpp"
#include "vgd/train.hpp"

using namespace vgd;

namespace {

DatasetMeta make_meta(const std::vector<SpatialGraph>& graphs) {
  DatasetMeta meta;
  meta.num_classes = graphs.front().num_classes;
  meta.family = "capillary";
  meta.normalization = fit_normalization(graphs);
  meta.node_counts = NodeCountDistribution::fit(graphs);
  meta.splits = {{"train", graphs.size()}};
  return meta;
}

std::vector<SpatialGraph> capillary_set(std::size_t count, std::uint64_t seed) {
  SynthConfig cfg = SynthConfig::defaults(SynthFamily::kCapillary);
  cfg.seed = seed;
  return generate_dataset(cfg, count);
}

TrainConfig tiny(Stage stage) {
  TrainConfig cfg = TrainConfig::preset_config("desk", stage);
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.steps = 20;
  cfg.seed = 3;
  cfg.node_net = {.width = 16, .blocks = 1, .heads = 2, .time_dim = 16};
  cfg.edge_net.blocks = 1;
  cfg.edge_net.heads = 2;
  cfg.edge_net.node_dim = 16;
  cfg.edge_net.edge_dim = 8;
  cfg.edge_net.time_dim = 16;
  return cfg;
}

std::size_t count_lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) n += !line.empty();
  return n;
}

}  // namespace

TEST_CASE("adamw leaves parameters alone with zero gradient and no decay") {
  std::vector<NamedTensor> params{{"p", Tensor::parameter({3}, {1.0, -2.0, 0.5})}};
  AdamWState state;
  AdamWOptions opts;
  opts.weight_decay = 0.0;
  for (int k = 0; k < 10; ++k) adamw_step(params, state, opts);
  CHECK(params[0].value[0] == 1.0);
  CHECK(params[0].value[1] == -2.0);
  CHECK(params[0].value[2] == 0.5);
}

TEST_CASE("adamw step size approaches lr under a constant gradient") {
  std::vector<NamedTensor> params{{"p", Tensor::parameter({2}, {0.0, 0.0})}};
  AdamWState state;
  AdamWOptions opts;
  opts.lr = 1e-3;
  opts.weight_decay = 0.0;
  double last_delta = 0.0;
  for (int k = 0; k < 500; ++k) {
    const double before = params[0].value[0];
    params[0].value.zero_grad();
    params[0].value.mutable_grad()[0] = 0.7;
    params[0].value.mutable_grad()[1] = -3.0;
    adamw_step(params, state, opts);
    last_delta = std::abs(params[0].value[0] - before);
  }
  CHECK(std::abs(last_delta - opts.lr) / opts.lr < 0.01);
  CHECK(params[0].value[1] > 0.0);
  CHECK(state.step == 500);
}

TEST_CASE("adamw decoupled decay is geometric") {
  std::vector<NamedTensor> params{{"p", Tensor::parameter({1}, {2.0})}};
  AdamWState state;
  AdamWOptions opts;
  opts.lr = 0.1;
  opts.weight_decay = 0.5;
  for (int k = 0; k < 20; ++k) adamw_step(params, state, opts);
  CHECK(params[0].value[0] == doctest::Approx(2.0 * std::pow(1.0 - 0.05, 20)).epsilon(1e-12));
}

TEST_CASE("adamw rejects non-finite gradients by name") {
  std::vector<NamedTensor> params{{"layer.w", Tensor::parameter({1}, {1.0})}};
  params[0].value.mutable_grad()[0] = NAN;
  AdamWState state;
  CHECK_THROWS_WITH_AS(adamw_step(params, state, {}), doctest::Contains("layer.w"), NumericError);
}

TEST_CASE("two-epoch smoke run writes a checkpoint and two log rows") {
  test::TempDir dir;
  const auto graphs = capillary_set(8, 1);
  const DatasetMeta meta = make_meta(graphs);
  for (Stage stage : {Stage::kNodes, Stage::kEdges}) {
    TrainOptions opts;
    opts.checkpoint = dir.path / (stage_name(stage) + ".json");
    opts.log = dir.path / (stage_name(stage) + ".csv");
    const TrainResult r = train_stage(graphs, meta, tiny(stage), opts);
    CHECK(r.epoch_losses.size() == 2);
    CHECK(std::isfinite(r.epoch_losses[1]));
    CHECK(count_lines(opts.log) == 3);
    CHECK(std::filesystem::exists(opts.checkpoint));
  }
  const NodeModel nodes = load_node_model(dir.path / "nodes.json");
  CHECK(nodes.epochs_done == 2);
  CHECK(nodes.schedule.steps() == 20);
  CHECK_THROWS_AS(load_edge_model(dir.path / "nodes.json"), ConfigError);
  CHECK_THROWS_AS(load_node_model(dir.path / "edges.json"), ConfigError);
}

TEST_CASE("resume reproduces the uninterrupted run bit-exactly") {
  test::TempDir dir;
  const auto graphs = capillary_set(8, 2);
  const DatasetMeta meta = make_meta(graphs);
  for (Stage stage : {Stage::kNodes, Stage::kEdges}) {
    TrainConfig cfg = tiny(stage);
    TrainOptions full;
    full.checkpoint = dir.path / "full.json";
    const TrainResult straight = train_stage(graphs, meta, cfg, full);

    TrainConfig first = cfg;
    first.epochs = 1;
    TrainOptions half;
    half.checkpoint = dir.path / "half.json";
    train_stage(graphs, meta, first, half);
    TrainOptions rest;
    rest.checkpoint = dir.path / "resumed.json";
    rest.resume = dir.path / "half.json";
    const TrainResult resumed = train_stage(graphs, meta, cfg, rest);
    REQUIRE(resumed.epoch_losses.size() == 1);
    CHECK(resumed.first_epoch == 2);
    CHECK(resumed.epoch_losses[0] == straight.epoch_losses[1]);

    const CheckpointData a = load_checkpoint(dir.path / "full.json");
    const CheckpointData b = load_checkpoint(dir.path / "resumed.json");
    REQUIRE(a.parameters.size() == b.parameters.size());
    for (std::size_t i = 0; i < a.parameters.size(); ++i)
      CHECK(test::max_abs_diff(a.parameters[i].value.data(), b.parameters[i].value.data()) == 0.0);
  }
}

TEST_CASE("edge options: augmentation, rank features and cosine lr resume bit-exactly") {
  test::TempDir dir;
  const auto graphs = capillary_set(8, 3);
  const DatasetMeta meta = make_meta(graphs);
  TrainConfig cfg = tiny(Stage::kEdges);
  cfg.epochs = 3;
  cfg.edge_augment = true;
  cfg.edge_net.neighbor_ranks = 4;
  cfg.lr_schedule = "cosine";
  TrainOptions full;
  full.checkpoint = dir.path / "full.json";
  const TrainResult straight = train_stage(graphs, meta, cfg, full);

  TrainConfig plain = cfg;
  plain.lr_schedule = "constant";
  TrainOptions other;
  other.checkpoint = dir.path / "constant.json";
  const TrainResult constant = train_stage(graphs, meta, plain, other);
  CHECK(constant.epoch_losses[0] == straight.epoch_losses[0]);
  CHECK(constant.epoch_losses[2] != straight.epoch_losses[2]);

  TrainConfig first = cfg;
  first.epochs = 1;
  TrainOptions half;
  half.checkpoint = dir.path / "half.json";
  train_stage(graphs, meta, first, half);
  TrainOptions rest;
  rest.checkpoint = dir.path / "resumed.json";
  rest.resume = dir.path / "half.json";
  train_stage(graphs, meta, cfg, rest);
  const CheckpointData a = load_checkpoint(dir.path / "full.json");
  const CheckpointData b = load_checkpoint(dir.path / "resumed.json");
  REQUIRE(a.parameters.size() == b.parameters.size());
  for (std::size_t i = 0; i < a.parameters.size(); ++i)
    CHECK(test::max_abs_diff(a.parameters[i].value.data(), b.parameters[i].value.data()) == 0.0);

  const EdgeModel model = load_edge_model(dir.path / "full.json");
  CHECK(model.net->config().neighbor_ranks == 4);
}

TEST_CASE("parameter averaging is stored, resumed and used for sampling") {
  test::TempDir dir;
  const auto graphs = capillary_set(8, 4);
  const DatasetMeta meta = make_meta(graphs);
  TrainConfig cfg = tiny(Stage::kNodes);
  cfg.epochs = 3;
  cfg.ema_decay = 0.9;
  TrainOptions full;
  full.checkpoint = dir.path / "full.json";
  train_stage(graphs, meta, cfg, full);
  const CheckpointData a = load_checkpoint(full.checkpoint);
  REQUIRE(a.averaged.size() == a.parameters.size());
  double moved = 0.0;
  for (std::size_t i = 0; i < a.parameters.size(); ++i)
    moved = std::max(moved, test::max_abs_diff(a.parameters[i].value.data(), a.averaged[i].value.data()));
  CHECK(moved > 0.0);

  TrainConfig first = cfg;
  first.epochs = 2;
  TrainOptions half;
  half.checkpoint = dir.path / "half.json";
  train_stage(graphs, meta, first, half);
  TrainOptions rest;
  rest.checkpoint = dir.path / "resumed.json";
  rest.resume = half.checkpoint;
  train_stage(graphs, meta, cfg, rest);
  const CheckpointData b = load_checkpoint(rest.checkpoint);
  REQUIRE(b.averaged.size() == a.averaged.size());
  for (std::size_t i = 0; i < a.averaged.size(); ++i)
    CHECK(test::max_abs_diff(a.averaged[i].value.data(), b.averaged[i].value.data()) == 0.0);

  const NodeModel model = load_node_model(full.checkpoint);
  const auto loaded = model.net->parameters().all();
  for (std::size_t i = 0; i < loaded.size(); ++i)
    CHECK(test::max_abs_diff(loaded[i].value.data(), a.averaged[i].value.data()) == 0.0);

  TrainConfig plain = tiny(Stage::kNodes);
  plain.ema_decay = 0.0;
  TrainOptions none;
  none.checkpoint = dir.path / "plain.json";
  train_stage(graphs, meta, plain, none);
  CHECK(load_checkpoint(none.checkpoint).averaged.empty());
}

TEST_CASE("node loss drops by at least 30 percent within 50 epochs") {
  const auto graphs = capillary_set(100, 5);
  TrainConfig cfg = TrainConfig::preset_config("desk", Stage::kNodes);
  cfg.epochs = 50;
  cfg.seed = 5;
  test::TempDir dir;
  TrainOptions opts;
  opts.checkpoint = dir.path / "n.json";
  const TrainResult r = train_stage(graphs, make_meta(graphs), cfg, opts);
  REQUIRE(r.epoch_losses.size() == 50);
  MESSAGE("epoch 1 loss " << r.epoch_losses.front() << ", epoch 50 loss " << r.epoch_losses.back());
  CHECK(r.epoch_losses.back() <= 0.7 * r.epoch_losses.front());
}

TEST_CASE("sampling refuses models with different schedules") {
  test::TempDir dir;
  const auto graphs = capillary_set(6, 4);
  const DatasetMeta meta = make_meta(graphs);
  TrainConfig n = tiny(Stage::kNodes);
  n.epochs = 1;
  TrainConfig e = tiny(Stage::kEdges);
  e.epochs = 1;
  e.steps = 30;
  TrainOptions on, oe;
  on.checkpoint = dir.path / "n.json";
  oe.checkpoint = dir.path / "e.json";
  train_stage(graphs, meta, n, on);
  train_stage(graphs, meta, e, oe);
  NodeModel nodes = load_node_model(on.checkpoint);
  EdgeModel edges = load_edge_model(oe.checkpoint);
  CHECK_THROWS_WITH_AS(sample_graphs(nodes, edges, 2, 1), doctest::Contains("incompatible schedules"), ConfigError);
}

TEST_CASE("sampling from matched models yields valid graphs deterministically") {
  test::TempDir dir;
  const auto graphs = capillary_set(6, 6);
  const DatasetMeta meta = make_meta(graphs);
  TrainOptions on, oe;
  on.checkpoint = dir.path / "n.json";
  oe.checkpoint = dir.path / "e.json";
  train_stage(graphs, meta, tiny(Stage::kNodes), on);
  train_stage(graphs, meta, tiny(Stage::kEdges), oe);
  NodeModel nodes = load_node_model(on.checkpoint);
  EdgeModel edges = load_edge_model(oe.checkpoint);
  const auto a = sample_graphs(nodes, edges, 5, 9, 2);
  const auto b = sample_graphs(nodes, edges, 5, 9, 3);
  REQUIRE(a.size() == 5);
  CHECK(a == b);
  for (const auto& g : a) {
    CHECK(validate(g).empty());
    CHECK(meta.node_counts.probability(g.size()) > 0.0);
  }
  CHECK_THROWS_AS(sample_graphs(nodes, edges, 0, 9), ConfigError);
}

TEST_CASE("config keys round-trip and bad values are rejected") {
  TrainConfig cfg = TrainConfig::preset_config("paper", Stage::kEdges);
  CHECK(cfg.steps == 1000);
  CHECK(cfg.lr == 3e-4);
  const TrainConfig desk = TrainConfig::preset_config("desk", Stage::kNodes);
  CHECK(desk.steps == 200);
  CHECK(desk.node_net.width == 64);
  CHECK(desk.edge_net.blocks == 4);
  CHECK(desk.edge_posterior == PosteriorForm::kMixture);
  CHECK(desk.edge_loss.degree_weight == 1.0);
  CHECK(cfg.edge_posterior == PosteriorForm::kBayes);
  CHECK(cfg.ema_decay == 0.0);
  CHECK_FALSE(cfg.edge_net.structure_features);
  cfg.set("lr", "0.002");
  cfg.set("edge_blocks", "3");
  cfg.set("gumbel_hard", "false");
  CHECK(cfg.lr == 0.002);
  CHECK(cfg.edge_net.blocks == 3);
  CHECK_FALSE(cfg.edge_loss.hard);
  for (const auto& [key, value] : cfg.to_map()) {
    TrainConfig copy = TrainConfig::preset_config("paper", Stage::kEdges);
    copy.set(key, value);
    CHECK(copy.to_map().at(key) == value);
  }
  CHECK_THROWS_AS(cfg.set("nonsense", "1"), ConfigError);
  CHECK_THROWS_AS(cfg.set("lr", "fast"), ConfigError);
  CHECK_THROWS_AS(TrainConfig::preset_config("huge", Stage::kNodes), ConfigError);
  TrainConfig bad = desk;
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.check(), ConfigError);
  bad = desk;
  bad.lr_schedule = "step";
  CHECK_THROWS_AS(bad.check(), ConfigError);
  bad = desk;
  bad.ema_decay = 1.0;
  CHECK_THROWS_AS(bad.check(), ConfigError);
  CHECK_THROWS_AS(parse_stage("both"), ConfigError);
}

TEST_CASE("key-value config files") {
  test::TempDir dir;
  {
    std::ofstream out(dir.path / "a.cfg");
    out << "# comment\nlr = 0.01\n\nbatch_size=8  # trailing\n";
  }
  const auto kv = read_key_values(dir.path / "a.cfg");
  CHECK(kv.at("lr") == "0.01");
  CHECK(kv.at("batch_size") == "8");
  {
    std::ofstream out(dir.path / "b.cfg");
    out << "lr = 0.01\nno equals sign\n";
  }
  try {
    read_key_values(dir.path / "b.cfg");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
}
