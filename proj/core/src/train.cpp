#include "vgd/train.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "vgd/batch.hpp"
#include "vgd/error.hpp"
#include "vgd/node_diffusion.hpp"

namespace vgd {

namespace fs = std::filesystem;
using nlohmann::json;

Stage parse_stage(const std::string& name) {
  if (name == "nodes") return Stage::kNodes;
  if (name == "edges") return Stage::kEdges;
  throw ConfigError("unknown stage '" + name + "' (expected nodes or edges)");
}

std::string stage_name(Stage stage) { return stage == Stage::kNodes ? "nodes" : "edges"; }

TrainConfig TrainConfig::preset_config(const std::string& name, Stage stage) {
  TrainConfig cfg;
  cfg.stage = stage;
  cfg.preset = name;
  if (name == "paper") return cfg;
  if (name != "desk") throw ConfigError("unknown preset '" + name + "' (expected desk or paper)");
  cfg.steps = 200;
  cfg.batch_size = 16;
  cfg.epochs = stage == Stage::kNodes ? 300 : 150;
  cfg.lr = 1e-3;
  cfg.ema_decay = 0.995;
  cfg.node_net = {.width = 64, .blocks = 2, .heads = 4, .time_dim = 64};
  cfg.edge_net.blocks = 4;
  cfg.edge_net.heads = 4;
  cfg.edge_net.node_dim = 64;
  cfg.edge_net.edge_dim = 32;
  cfg.edge_net.time_dim = 64;
  cfg.edge_net.neighbor_ranks = 6;
  cfg.edge_net.structure_features = true;
  cfg.edge_augment = true;
  cfg.edge_posterior = PosteriorForm::kMixture;
  return cfg;
}

namespace {

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end) throw ConfigError("config key '" + key + "': cannot parse '" + text + "'");
  return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" + text + "'");
}

std::string num(double v) { return format_double(v); }

/// One of the 48 symmetries of the cube [-1, 1]^3, applied to every node.
void reflect_axes(SpatialGraph& g, Rng& rng) {
  std::array<std::size_t, 3> axes{0, 1, 2};
  std::shuffle(axes.begin(), axes.end(), rng);
  const auto signs = rng();
  for (auto& p : g.coords) {
    const Point3 q = p;
    for (std::size_t a = 0; a < 3; ++a) p[a] = ((signs >> a) & 1u ? -1.0 : 1.0) * q[axes[a]];
  }
}
std::string num(std::size_t v) { return std::to_string(v); }

}  // namespace

void TrainConfig::set(const std::string& key, const std::string& value) {
  auto sz = [&](std::size_t& dst) { dst = parse_number<std::size_t>(key, value); };
  auto dbl = [&](double& dst) { dst = parse_number<double>(key, value); };
  if (key == "preset") preset = value;
  else if (key == "stage") stage = parse_stage(value);
  else if (key == "lr") dbl(lr);
  else if (key == "lr_schedule") lr_schedule = value;
  else if (key == "batch_size") sz(batch_size);
  else if (key == "epochs") sz(epochs);
  else if (key == "weight_decay") dbl(weight_decay);
  else if (key == "beta1") dbl(beta1);
  else if (key == "beta2") dbl(beta2);
  else if (key == "adam_eps") dbl(adam_eps);
  else if (key == "seed") seed = parse_number<std::uint64_t>(key, value);
  else if (key == "steps") sz(steps);
  else if (key == "checkpoint_every") sz(checkpoint_every);
  else if (key == "ema_decay") dbl(ema_decay);
  else if (key == "node_width") sz(node_net.width);
  else if (key == "node_blocks") sz(node_net.blocks);
  else if (key == "node_heads") sz(node_net.heads);
  else if (key == "node_time_dim") sz(node_net.time_dim);
  else if (key == "edge_blocks") sz(edge_net.blocks);
  else if (key == "edge_heads") sz(edge_net.heads);
  else if (key == "edge_node_dim") sz(edge_net.node_dim);
  else if (key == "edge_edge_dim") sz(edge_net.edge_dim);
  else if (key == "edge_time_dim") sz(edge_net.time_dim);
  else if (key == "edge_distance_basis") sz(edge_net.distance_basis);
  else if (key == "edge_distance_cutoff") dbl(edge_net.distance_cutoff);
  else if (key == "edge_neighbor_ranks") sz(edge_net.neighbor_ranks);
  else if (key == "edge_structure_features") edge_net.structure_features = parse_bool(key, value);
  else if (key == "edge_augment") edge_augment = parse_bool(key, value);
  else if (key == "degree_weight") dbl(edge_loss.degree_weight);
  else if (key == "gumbel_temperature") dbl(edge_loss.temperature);
  else if (key == "gumbel_hard") edge_loss.hard = parse_bool(key, value);
  else if (key == "edge_posterior") edge_posterior = parse_posterior_form(value);
  else if (key == "ce_sum") edge_loss.sum_pairs = parse_bool(key, value);
  else throw ConfigError("unknown config key '" + key + "'");
}

std::map<std::string, std::string> TrainConfig::to_map() const {
  return {
      {"preset", preset},
      {"stage", stage_name(stage)},
      {"lr", num(lr)},
      {"lr_schedule", lr_schedule},
      {"batch_size", num(batch_size)},
      {"epochs", num(epochs)},
      {"weight_decay", num(weight_decay)},
      {"beta1", num(beta1)},
      {"beta2", num(beta2)},
      {"adam_eps", num(adam_eps)},
      {"seed", std::to_string(seed)},
      {"steps", num(steps)},
      {"checkpoint_every", num(checkpoint_every)},
      {"ema_decay", num(ema_decay)},
      {"node_width", num(node_net.width)},
      {"node_blocks", num(node_net.blocks)},
      {"node_heads", num(node_net.heads)},
      {"node_time_dim", num(node_net.time_dim)},
      {"edge_blocks", num(edge_net.blocks)},
      {"edge_heads", num(edge_net.heads)},
      {"edge_node_dim", num(edge_net.node_dim)},
      {"edge_edge_dim", num(edge_net.edge_dim)},
      {"edge_time_dim", num(edge_net.time_dim)},
      {"edge_distance_basis", num(edge_net.distance_basis)},
      {"edge_distance_cutoff", num(edge_net.distance_cutoff)},
      {"edge_neighbor_ranks", num(edge_net.neighbor_ranks)},
      {"edge_structure_features", edge_net.structure_features ? "true" : "false"},
      {"edge_augment", edge_augment ? "true" : "false"},
      {"degree_weight", num(edge_loss.degree_weight)},
      {"gumbel_temperature", num(edge_loss.temperature)},
      {"gumbel_hard", edge_loss.hard ? "true" : "false"},
      {"edge_posterior", posterior_form_name(edge_posterior)},
      {"ce_sum", edge_loss.sum_pairs ? "true" : "false"},
  };
}

void TrainConfig::check() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be > 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (lr_schedule != "constant" && lr_schedule != "cosine")
    throw ConfigError("lr_schedule must be constant or cosine, got '" + lr_schedule + "'");
  if (steps < 1) throw ConfigError("steps must be >= 1");
  if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw ConfigError("ema_decay must be in [0, 1)");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be > 0");
  if (node_net.width == 0 || node_net.heads == 0 || node_net.width % node_net.heads != 0)
    throw ConfigError("node_width must be a positive multiple of node_heads");
  if (edge_net.heads == 0 || edge_net.node_dim == 0 || edge_net.node_dim % edge_net.heads != 0)
    throw ConfigError("edge_node_dim must be a positive multiple of edge_heads");
  if (edge_loss.degree_weight < 0.0) throw ConfigError("degree_weight must be >= 0");
  if (!(edge_loss.temperature > 0.0)) throw ConfigError("gumbel_temperature must be > 0");
}

std::map<std::string, std::string> read_key_values(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string{};
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(path.string(), lineno, "expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ParseError(path.string(), lineno, "empty key");
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

void adamw_step(std::vector<NamedTensor>& params, AdamWState& state, const AdamWOptions& o) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.value.numel(), 0.0);
      state.v.emplace_back(p.value.numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adamw_step: optimizer state does not match parameters");
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto g = params[k].value.grad();
    if (state.m[k].size() != params[k].value.numel()) throw ShapeError("adamw_step: state shape mismatch for " + params[k].name);
    for (double x : g)
      if (!std::isfinite(x)) throw NumericError("non-finite gradient in parameter " + params[k].name);
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k].value.mutable_data();
    const auto g = params[k].value.grad();
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g.empty() ? 0.0 : g[i];
      p[i] -= o.lr * o.weight_decay * p[i];
      m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * gi;
      v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * gi * gi;
      p[i] -= o.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + o.eps);
    }
  }
}

namespace {

json schedule_json(const NoiseSchedule& s) {
  return {{"family", s.family()}, {"steps", s.steps()}, {"offset", s.offset()}, {"min_alpha", s.min_alpha()},
          {"max_alpha", s.max_alpha()}};
}

NoiseSchedule schedule_from_json(const json& j) {
  if (j.at("family").get<std::string>() != "cosine") throw ConfigError("checkpoint: unsupported schedule family");
  return NoiseSchedule::cosine(j.at("steps").get<std::size_t>(), j.at("offset").get<double>(),
                               j.at("min_alpha").get<double>(), j.at("max_alpha").get<double>());
}

TrainConfig config_from_json(const json& j) {
  TrainConfig cfg;
  for (const auto& [key, value] : j.items()) cfg.set(key, value.get<std::string>());
  return cfg;
}

std::vector<NamedTensor> moments(const std::vector<NamedTensor>& params, const std::vector<std::vector<double>>& m) {
  std::vector<NamedTensor> out;
  for (std::size_t k = 0; k < params.size() && k < m.size(); ++k)
    out.push_back({params[k].name, Tensor(params[k].value.shape(), m[k])});
  return out;
}

std::vector<std::vector<double>> moments_from(const std::vector<NamedTensor>& params,
                                              const std::vector<NamedTensor>& stored) {
  std::vector<NamedTensor> target;
  for (const auto& p : params) target.push_back({p.name, Tensor::zeros(p.value.shape())});
  assign_parameters(target, stored);
  std::vector<std::vector<double>> out;
  for (const auto& t : target) out.emplace_back(t.value.data().begin(), t.value.data().end());
  return out;
}

struct Progress {
  json meta;
  std::size_t epochs_done = 0;
};

Progress read_progress(const CheckpointData& data) {
  Progress p;
  try {
    p.meta = json::parse(data.metadata_json);
    p.epochs_done = p.meta.at("epochs_done").get<std::size_t>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("checkpoint metadata: ") + e.what());
  }
  return p;
}

void dump_batch(const fs::path& dir, const std::vector<SpatialGraph>& graphs) {
  for (std::size_t k = 0; k < graphs.size(); ++k) {
    char name[32];
    std::snprintf(name, sizeof name, "g%06zu", k);
    save_graph(graphs[k], dir / name);
  }
}

}  // namespace

TrainResult train_stage(const std::vector<SpatialGraph>& graphs, const DatasetMeta& meta, const TrainConfig& cfg,
                        const TrainOptions& options) {
  cfg.check();
  if (graphs.empty()) throw ConfigError("train: dataset is empty");
  if (options.checkpoint.empty()) throw ConfigError("train: no checkpoint path");
  std::vector<SpatialGraph> data;
  data.reserve(graphs.size());
  for (const auto& g : graphs) data.push_back(meta.normalization.normalize(g));

  const bool nodes = cfg.stage == Stage::kNodes;
  const std::string stream = nodes ? "node-train" : "edge-train";
  const NoiseSchedule schedule = NoiseSchedule::cosine(cfg.steps);

  std::unique_ptr<NodeDenoiser> node_net;
  std::unique_ptr<EdgeDenoiser> edge_net;
  EdgeNoiseModel noise;
  std::vector<NamedTensor>* params = nullptr;
  if (nodes) {
    node_net = std::make_unique<NodeDenoiser>(cfg.node_net, substream(cfg.seed, "node-init")());
    params = &node_net->parameters().all();
  } else {
    EdgeDenoiserConfig ec = cfg.edge_net;
    ec.num_classes = meta.num_classes;
    edge_net = std::make_unique<EdgeDenoiser>(ec, substream(cfg.seed, "edge-init")());
    params = &edge_net->parameters().all();
    noise = EdgeNoiseModel(EdgeNoiseModel::estimate_marginal(data, meta.num_classes), schedule);
  }

  AdamWState adam;
  std::vector<std::vector<double>> ema;
  if (cfg.ema_decay > 0.0)
    for (const auto& p : *params) ema.emplace_back(p.value.data().begin(), p.value.data().end());
  std::size_t start = 0;
  if (!options.resume.empty()) {
    const CheckpointData ck = load_checkpoint(options.resume);
    const Progress progress = read_progress(ck);
    if (progress.meta.at("stage").get<std::string>() != stage_name(cfg.stage))
      throw ConfigError("resume: checkpoint belongs to the " + progress.meta.at("stage").get<std::string>() + " stage");
    if (schedule_from_json(progress.meta.at("schedule")) != schedule)
      throw ConfigError("resume: checkpoint schedule differs from the configuration");
    assign_parameters(*params, ck.parameters);
    adam.step = ck.optimizer_step;
    adam.m = moments_from(*params, ck.first_moments);
    adam.v = moments_from(*params, ck.second_moments);
    if (cfg.ema_decay > 0.0) ema = moments_from(*params, ck.averaged.empty() ? ck.parameters : ck.averaged);
    start = progress.epochs_done;
  }

  auto save = [&](std::size_t epochs_done) {
    CheckpointData ck;
    ck.parameters = *params;
    ck.optimizer_step = adam.step;
    ck.first_moments = moments(*params, adam.m);
    ck.second_moments = moments(*params, adam.v);
    ck.averaged = moments(*params, ema);
    json m;
    m["stage"] = stage_name(cfg.stage);
    m["epochs_done"] = epochs_done;
    m["schedule"] = schedule_json(schedule);
    m["config"] = cfg.to_map();
    m["dataset"] = json::parse(meta_to_json(meta));
    m["num_classes"] = meta.num_classes;
    if (!nodes) m["marginal"] = noise.marginal();
    ck.metadata_json = m.dump(2);
    save_checkpoint(options.checkpoint, ck);
  };

  std::ofstream log;
  if (!options.log.empty()) {
    if (options.log.has_parent_path()) fs::create_directories(options.log.parent_path());
    const bool append = !options.resume.empty() && fs::exists(options.log);
    log.open(options.log, append ? std::ios::app : std::ios::trunc);
    if (!log) throw IoError("cannot write " + options.log.string());
    if (!append) log << "epoch,stage,mean_loss,wallclock\n";
  }

  AdamWOptions adam_options{cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay};
  TrainResult result;
  result.first_epoch = start + 1;
  result.parameter_count = std::accumulate(params->begin(), params->end(), std::size_t{0},
                                           [](std::size_t acc, const NamedTensor& p) { return acc + p.value.numel(); });
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::size_t> order(data.size());

  for (std::size_t epoch = start + 1; epoch <= cfg.epochs; ++epoch) {
    Rng rng = substream(cfg.seed, stream, epoch);
    if (cfg.lr_schedule == "cosine" && cfg.epochs > 1) {
      const double progress = static_cast<double>(epoch - 1) / static_cast<double>(cfg.epochs - 1);
      adam_options.lr = cfg.lr * (0.1 + 0.45 * (1.0 + std::cos(std::numbers::pi * progress)));
    }
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t first = 0; first < order.size(); first += cfg.batch_size) {
      std::vector<SpatialGraph> members;
      for (std::size_t k = first; k < std::min(order.size(), first + cfg.batch_size); ++k)
        members.push_back(data[order[k]]);
      if (!nodes && cfg.edge_augment)
        for (auto& g : members) reflect_axes(g, rng);
      const GraphBatch batch = make_graph_batch(members);
      for (auto& p : *params) p.value.zero_grad();
      Tape tape;
      double value = 0.0;
      {
        TapeScope scope(tape);
        Tensor loss = nodes ? node_loss(*node_net, batch, schedule, rng).loss
                            : edge_loss(*edge_net, batch, noise, rng, cfg.edge_loss).total;
        value = loss.item();
        if (!std::isfinite(value)) {
          fs::path dump = options.checkpoint;
          dump += ".nan_batch";
          dump_batch(dump, members);
          throw NumericError("non-finite " + stage_name(cfg.stage) + " loss in epoch " + std::to_string(epoch) +
                             "; offending batch written to " + dump.string());
        }
        tape.backward(loss);
      }
      adamw_step(*params, adam, adam_options);
      for (std::size_t k = 0; k < ema.size(); ++k) {
        const auto& p = (*params)[k].value.data();
        for (std::size_t i = 0; i < p.size(); ++i) ema[k][i] = cfg.ema_decay * ema[k][i] + (1.0 - cfg.ema_decay) * p[i];
      }
      total += value;
      ++batches;
    }
    const double mean = total / static_cast<double>(batches);
    result.epoch_losses.push_back(mean);
    if (log) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      log << epoch << ',' << stage_name(cfg.stage) << ',' << format_double(mean) << ',' << format_double(secs) << '\n';
      log.flush();
    }
    if (options.on_epoch) options.on_epoch(epoch, mean);
    if (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 && epoch != cfg.epochs) save(epoch);
  }
  save(std::max(start, cfg.epochs));
  return result;
}

namespace {

struct Loaded {
  CheckpointData data;
  Progress progress;
  TrainConfig config;
  DatasetMeta meta;
  NoiseSchedule schedule;
};

Loaded load_common(const fs::path& path, Stage expected) {
  Loaded l;
  l.data = load_checkpoint(path);
  l.progress = read_progress(l.data);
  try {
    const auto stage = l.progress.meta.at("stage").get<std::string>();
    if (stage != stage_name(expected))
      throw ConfigError(path.string() + " is a " + stage + " checkpoint, expected " + stage_name(expected));
    l.config = config_from_json(l.progress.meta.at("config"));
    l.meta = meta_from_json(l.progress.meta.at("dataset").dump(), path.string());
    l.schedule = schedule_from_json(l.progress.meta.at("schedule"));
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return l;
}

}  // namespace

NodeModel load_node_model(const fs::path& checkpoint) {
  Loaded l = load_common(checkpoint, Stage::kNodes);
  NodeModel m;
  m.net = std::make_unique<NodeDenoiser>(l.config.node_net, 0);
  assign_parameters(m.net->parameters().all(), l.data.averaged.empty() ? l.data.parameters : l.data.averaged);
  m.schedule = l.schedule;
  m.meta = std::move(l.meta);
  m.config = l.config;
  m.epochs_done = l.progress.epochs_done;
  return m;
}

EdgeModel load_edge_model(const fs::path& checkpoint) {
  Loaded l = load_common(checkpoint, Stage::kEdges);
  EdgeModel m;
  EdgeDenoiserConfig ec = l.config.edge_net;
  ec.num_classes = l.meta.num_classes;
  m.net = std::make_unique<EdgeDenoiser>(ec, 0);
  assign_parameters(m.net->parameters().all(), l.data.averaged.empty() ? l.data.parameters : l.data.averaged);
  std::vector<double> marginal;
  try {
    marginal = l.progress.meta.at("marginal").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw ConfigError(checkpoint.string() + ": " + e.what());
  }
  m.noise = EdgeNoiseModel(std::move(marginal), l.schedule);
  m.meta = std::move(l.meta);
  m.config = l.config;
  m.epochs_done = l.progress.epochs_done;
  return m;
}

std::vector<SpatialGraph> sample_graphs(NodeModel& nodes, EdgeModel& edges, std::size_t count, std::uint64_t seed,
                                        std::size_t batch_size) {
  if (count == 0) throw ConfigError("count >= 1 required");
  if (batch_size == 0) throw ConfigError("sample batch size must be >= 1");
  if (nodes.schedule.steps() != edges.noise.schedule().steps())
    throw ConfigError("incompatible schedules: node model T=" + std::to_string(nodes.schedule.steps()) +
                      ", edge model T=" + std::to_string(edges.noise.schedule().steps()));
  if (!(nodes.schedule == edges.noise.schedule())) throw ConfigError("incompatible schedules: parameters differ");
  if (nodes.meta.node_counts.empty()) throw ConfigError("node checkpoint has no node-count distribution");
  const int classes = edges.net->num_classes();

  std::vector<Rng> rngs;
  std::vector<std::size_t> counts;
  for (std::size_t k = 0; k < count; ++k) {
    rngs.push_back(substream(seed, "sample", k));
    counts.push_back(nodes.meta.node_counts.sample(rngs.back()));
  }
  std::vector<SpatialGraph> out;
  out.reserve(count);
  for (std::size_t first = 0; first < count; first += batch_size) {
    const std::size_t len = std::min(batch_size, count - first);
    const std::span<Rng> chunk(rngs.data() + first, len);
    auto coords = sample_nodes(*nodes.net, std::span<const std::size_t>(counts.data() + first, len), nodes.schedule, chunk);
    // Node-model space -> raw -> edge-model space.
    std::vector<std::vector<Point3>> raw = coords;
    for (auto& set : raw)
      for (auto& p : set) p = nodes.meta.normalization.denormalize(p);
    for (std::size_t k = 0; k < len; ++k)
      for (std::size_t v = 0; v < coords[k].size(); ++v) coords[k][v] = edges.meta.normalization.normalize(raw[k][v]);
    const GraphBatch batch = make_coordinate_batch(coords, classes);
    const auto labels = sample_edges(*edges.net, batch, edges.noise, chunk, edges.config.edge_posterior);
    const std::size_t n = batch.max_nodes;
    for (std::size_t k = 0; k < len; ++k) {
      SpatialGraph g(raw[k], classes);
      for (std::size_t i = 0; i < g.size(); ++i)
        for (std::size_t j = i + 1; j < g.size(); ++j) {
          const int label = labels[(k * n + i) * n + j];
          if (label != kBackground) g.connect(i, j, label);
        }
      out.push_back(std::move(g));
    }
  }
  return out;
}

}  // namespace vgd
