// vgd: synthesize datasets, train both diffusion stages, sample, evaluate, self-verify.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "vgd/error.hpp"
#include "vgd/graph.hpp"
#include "vgd/metrics.hpp"
#include "vgd/synth.hpp"
#include "vgd/train.hpp"
#include "vgd/verify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

enum Exit { kOk = 0, kIo = 1, kConfig = 2, kNumeric = 3, kVerify = 4 };

std::string timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct Manifest {
  std::string command;
  std::string started = timestamp();
  std::uint64_t seed = 0;
  json config = json::object();
  json inputs = json::object();
  json outputs = json::object();
  json extra = json::object();

  void write(const fs::path& dir) const {
    json j;
    j["command"] = command;
    j["tool_version"] = kVersion;
    j["seed"] = seed;
    j["config"] = config;
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    for (const auto& [k, v] : extra.items()) j[k] = v;
    j["started"] = started;
    j["finished"] = timestamp();
    fs::create_directories(dir);
    const fs::path tmp = dir / "manifest.json.tmp";
    {
      std::ofstream out(tmp);
      if (!out) throw vgd::IoError("cannot write " + tmp.string());
      out << j.dump(2) << '\n';
      if (!out) throw vgd::IoError("cannot write " + tmp.string());
    }
    fs::rename(tmp, dir / "manifest.json");
  }
};

fs::path checkpoint_file(const fs::path& p) { return fs::is_directory(p) ? p / "checkpoint.json" : p; }

fs::path dataset_split(const fs::path& root) {
  return fs::is_directory(root / "train") ? root / "train" : root;
}

int run_synth(const std::string& family, std::size_t count, const fs::path& out, std::uint64_t seed,
              std::size_t min_nodes, std::size_t max_nodes) {
  if (count < 1) throw vgd::ConfigError("count ≥ 1");
  vgd::SynthConfig cfg = vgd::SynthConfig::defaults(vgd::parse_family(family));
  cfg.seed = seed;
  if (min_nodes > 0) cfg.min_nodes = min_nodes;
  if (max_nodes > 0) cfg.max_nodes = max_nodes;
  cfg.check();
  Manifest manifest;
  manifest.command = "synth";
  manifest.seed = seed;
  manifest.config = {{"family", vgd::family_name(cfg.family)},
                     {"count", count},
                     {"min_nodes", cfg.min_nodes},
                     {"max_nodes", cfg.max_nodes},
                     {"num_classes", cfg.num_classes}};
  const auto graphs = vgd::generate_dataset(cfg, count);
  vgd::save_dataset(out, "train", graphs, vgd::family_name(cfg.family));
  manifest.outputs = {{"dataset", out.string()}};
  manifest.write(out);
  std::cout << "wrote " << graphs.size() << " " << vgd::family_name(cfg.family) << " graphs to " << out.string() << '\n';
  return kOk;
}

int run_train(const std::string& stage_text, const fs::path& data, const fs::path& out, const std::string& preset,
              const fs::path& config_file, const std::map<std::string, std::string>& flags, const fs::path& resume) {
  const vgd::Stage stage = vgd::parse_stage(stage_text);
  if (!fs::is_directory(data)) throw vgd::ConfigError("dataset directory " + data.string() + " does not exist");
  const vgd::TrainConfig base = vgd::TrainConfig::preset_config(preset, stage);
  vgd::TrainConfig cfg = base;
  if (!config_file.empty())
    for (const auto& [k, v] : vgd::read_key_values(config_file)) cfg.set(k, v);
  for (const auto& [k, v] : flags) cfg.set(k, v);
  cfg.stage = stage;
  cfg.preset = preset;
  cfg.check();

  const auto graphs = vgd::load_graph_set(dataset_split(data));
  if (graphs.empty()) throw vgd::ConfigError("dataset " + data.string() + " holds no graphs");
  vgd::DatasetMeta meta;
  if (fs::exists(data / "meta.json")) {
    meta = vgd::load_meta(data);
  } else if (stage == vgd::Stage::kEdges) {
    throw vgd::ConfigError("edge training needs " + (data / "meta.json").string());
  } else {
    meta.num_classes = graphs.front().num_classes;
    meta.normalization = vgd::fit_normalization(graphs);
    meta.node_counts = vgd::NodeCountDistribution::fit(graphs);
  }

  Manifest manifest;
  manifest.command = "train";
  manifest.seed = cfg.seed;
  manifest.config = cfg.to_map();
  json diffs = json::object();
  const auto preset_map = base.to_map();
  for (const auto& [k, v] : cfg.to_map())
    if (preset_map.at(k) != v) diffs[k] = {{"preset", preset_map.at(k)}, {"resolved", v}};
  manifest.extra["preset_diffs"] = diffs;
  manifest.inputs = {{"data", data.string()}};

  fs::create_directories(out);
  vgd::TrainOptions options;
  options.checkpoint = out / "checkpoint.json";
  options.log = out / "train.log.csv";
  if (!resume.empty()) options.resume = checkpoint_file(resume);
  options.on_epoch = [&](std::size_t epoch, double loss) {
    std::cout << stage_text << " epoch " << epoch << "/" << cfg.epochs << " loss " << vgd::format_double(loss) << '\n'
              << std::flush;
  };
  const auto result = vgd::train_stage(graphs, meta, cfg, options);
  manifest.outputs = {{"checkpoint", options.checkpoint.string()}, {"log", options.log.string()}};
  manifest.extra["parameters"] = result.parameter_count;
  manifest.write(out);
  return kOk;
}

int run_sample(const fs::path& nodes, const fs::path& edges, std::size_t count, const fs::path& out,
               std::uint64_t seed, std::size_t batch, const std::string& posterior) {
  if (count < 1) throw vgd::ConfigError("count ≥ 1");
  vgd::NodeModel node_model = vgd::load_node_model(checkpoint_file(nodes));
  vgd::EdgeModel edge_model = vgd::load_edge_model(checkpoint_file(edges));
  if (!posterior.empty()) edge_model.config.edge_posterior = vgd::parse_posterior_form(posterior);
  const auto graphs = vgd::sample_graphs(node_model, edge_model, count, seed, batch);
  for (std::size_t k = 0; k < graphs.size(); ++k) {
    char name[32];
    std::snprintf(name, sizeof name, "g%06zu", k);
    vgd::save_graph(graphs[k], out / name);
  }
  vgd::DatasetMeta meta = edge_model.meta;
  meta.family = "generated";
  meta.splits = {{"generated", graphs.size()}};
  vgd::save_meta(out, meta);
  Manifest manifest;
  manifest.command = "sample";
  manifest.seed = seed;
  manifest.config = {{"count", count},
                     {"batch", batch},
                     {"steps", node_model.schedule.steps()},
                     {"posterior", vgd::posterior_form_name(edge_model.config.edge_posterior)}};
  manifest.inputs = {{"nodes", checkpoint_file(nodes).string()}, {"edges", checkpoint_file(edges).string()}};
  manifest.outputs = {{"graphs", out.string()}};
  manifest.write(out);
  std::cout << "wrote " << graphs.size() << " graphs to " << out.string() << '\n';
  return kOk;
}

int run_eval(const fs::path& ref, const fs::path& gen, const fs::path& out, const std::string& method) {
  for (const auto& dir : {ref, gen})
    if (!fs::is_directory(dir)) throw vgd::ConfigError("graph directory " + dir.string() + " does not exist");
  const auto ref_graphs = vgd::load_graph_set(ref);
  const auto gen_graphs = vgd::load_graph_set(gen);
  if (ref_graphs.empty() || gen_graphs.empty()) throw vgd::ConfigError("eval: both graph sets must be non-empty");
  const auto report = vgd::evaluate_sets(ref_graphs, gen_graphs);
  vgd::write_report(out, report, method);
  Manifest manifest;
  manifest.command = "eval";
  manifest.config = {{"method", method}};
  manifest.inputs = {{"ref", ref.string()}, {"gen", gen.string()}};
  manifest.outputs = {{"report", out.string()}};
  manifest.write(out.has_parent_path() ? out.parent_path() : fs::path("."));
  std::cout << vgd::report_csv_header() << '\n' << vgd::report_csv_row(report, method) << '\n';
  return kOk;
}

int run_verify(std::uint64_t seed, bool break_posterior) {
  vgd::VerifyOptions options;
  options.seed = seed;
  options.break_posterior = break_posterior;
  bool ok = true;
  for (const auto& c : vgd::run_verification(options)) {
    std::printf("%-4s %-28s error %.3g (tol %.3g) %.2fs\n", c.passed ? "PASS" : "FAIL", c.name.c_str(), c.error,
                c.tolerance, c.seconds);
    ok = ok && c.passed;
  }
  return ok ? kOk : kVerify;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-stage diffusion generator for 3D vessel graphs"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  std::uint64_t seed = 0;
  std::size_t count = 0;
  fs::path out;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  std::string family;
  std::size_t min_nodes = 0, max_nodes = 0;
  synth->add_option("--family", family, "capillary or cow")->required();
  synth->add_option("--count", count, "Number of graphs")->required();
  synth->add_option("--out", out, "Output directory")->required();
  synth->add_option("--seed", seed, "Root seed");
  synth->add_option("--min-nodes", min_nodes, "Smallest node count (capillary)");
  synth->add_option("--max-nodes", max_nodes, "Largest node count (capillary)");

  auto* train = app.add_subcommand("train", "Train one diffusion stage");
  std::string stage, preset = "desk";
  fs::path data, config_file, resume;
  std::map<std::string, std::string> flags;
  std::vector<std::string> sets;
  train->add_option("--stage", stage, "nodes or edges")->required();
  train->add_option("--data", data, "Dataset directory")->required();
  train->add_option("--out", out, "Run directory for checkpoint.json, train.log.csv, manifest.json")->required();
  train->add_option("--preset", preset, "desk or paper");
  train->add_option("--config", config_file, "Flat key = value file");
  train->add_option("--resume", resume, "Checkpoint (or run directory) to continue from");
  train->add_option("--set", sets, "Override key=value (repeatable)");
  for (const char* key : {"seed", "epochs", "lr", "batch_size", "steps", "degree_weight", "checkpoint_every"}) {
    std::string flag = std::string("--") + key;
    for (auto& ch : flag)
      if (ch == '_') ch = '-';
    train->add_option_function<std::string>(flag, [&flags, key](const std::string& v) { flags[key] = v; }, key);
  }

  auto* sample = app.add_subcommand("sample", "Generate graphs from trained checkpoints");
  fs::path nodes_ckpt, edges_ckpt;
  std::size_t batch = 32;
  sample->add_option("--nodes", nodes_ckpt, "Node-stage checkpoint or run directory")->required();
  sample->add_option("--edges", edges_ckpt, "Edge-stage checkpoint or run directory")->required();
  sample->add_option("--count", count, "Number of graphs")->required();
  sample->add_option("--out", out, "Output directory")->required();
  sample->add_option("--seed", seed, "Root seed");
  sample->add_option("--batch", batch, "Graphs per sampling batch");
  std::string posterior;
  sample->add_option("--posterior", posterior, "Reverse-step posterior: bayes or mixture (default: from the edge run)");

  auto* eval = app.add_subcommand("eval", "Compare generated graphs against a reference set");
  fs::path ref, gen;
  std::string method = "vgd";
  eval->add_option("--ref", ref, "Reference graph directory")->required();
  eval->add_option("--gen", gen, "Generated graph directory")->required();
  eval->add_option("--out", out, "Report CSV path")->required();
  eval->add_option("--method", method, "Method label for the report row");

  auto* verify = app.add_subcommand("verify", "Run the built-in oracle suite");
  bool break_posterior = false;
  verify->add_option("--seed", seed, "Root seed");
  verify->add_flag("--break-posterior", break_posterior)->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*synth) return run_synth(family, count, out, seed, min_nodes, max_nodes);
    if (*train) {
      for (const auto& s : sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw vgd::ConfigError("--set expects key=value, got '" + s + "'");
        flags[s.substr(0, eq)] = s.substr(eq + 1);
      }
      return run_train(stage, data, out, preset, config_file, flags, resume);
    }
    if (*sample) return run_sample(nodes_ckpt, edges_ckpt, count, out, seed, batch, posterior);
    if (*eval) return run_eval(ref, gen, out, method);
    if (*verify) return run_verify(seed, break_posterior);
  } catch (const vgd::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfig;
  } catch (const vgd::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const vgd::IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kIo;
  } catch (const vgd::ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return kIo;
  } catch (const vgd::ValidationError& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIo;
  }
  return kConfig;
}
