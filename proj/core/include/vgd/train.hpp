#pragma once

// Optimization harness: AdamW, the per-stage epoch loop, checkpoints and resume.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "vgd/checkpoint.hpp"
#include "vgd/edge_diffusion.hpp"
#include "vgd/graph.hpp"
#include "vgd/nets.hpp"
#include "vgd/schedule.hpp"

namespace vgd {

enum class Stage { kNodes, kEdges };

Stage parse_stage(const std::string& name);
std::string stage_name(Stage stage);

struct TrainConfig {
  std::string preset = "paper";
  Stage stage = Stage::kNodes;
  double lr = 3e-4;
  /// "constant" or "cosine" (per epoch, from lr down to 0.1 * lr at the last epoch).
  std::string lr_schedule = "constant";
  std::size_t batch_size = 64;
  std::size_t epochs = 1000;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  std::size_t steps = 1000;  // diffusion length T
  std::size_t checkpoint_every = 0;  // 0: only at the end
  /// Per-step decay of a parameter average used for sampling; 0 disables it.
  double ema_decay = 0.0;
  /// Edge stage: each training graph gets a random signed permutation of its (normalized) axes.
  bool edge_augment = false;
  NodeDenoiserConfig node_net;
  EdgeDenoiserConfig edge_net;
  EdgeLossOptions edge_loss;
  /// Reverse-step posterior used when sampling from an edge model.
  PosteriorForm edge_posterior = PosteriorForm::kBayes;

  /// "paper" (full size, T = 1000) or "desk" (T = 200, node width 64, 4 edge blocks,
  /// parameter averaging, rank and structure inputs, mixture posterior).
  static TrainConfig preset_config(const std::string& name, Stage stage);

  /// Throws ConfigError on an unknown key or unparsable value.
  void set(const std::string& key, const std::string& value);
  /// Every key accepted by set(), with its current value.
  std::map<std::string, std::string> to_map() const;
  /// Throws ConfigError when a value is out of range.
  void check() const;
};

/// Reads a flat `key = value` file ('#' starts a comment).
std::map<std::string, std::string> read_key_values(const std::filesystem::path& path);

struct AdamWOptions {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct AdamWState {
  std::size_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

/// One AdamW update from the accumulated gradients of `params` (missing gradients count
/// as zero). Decoupled decay: p -= lr * wd * p, then the bias-corrected adaptive step.
/// Throws NumericError naming the first parameter with a non-finite gradient.
void adamw_step(std::vector<NamedTensor>& params, AdamWState& state, const AdamWOptions& options);

struct TrainOptions {
  std::filesystem::path checkpoint;  // written every checkpoint_every epochs and at the end
  std::filesystem::path log;         // train.log.csv; empty disables logging
  std::filesystem::path resume;      // checkpoint to continue from; empty starts fresh
  std::function<void(std::size_t epoch, double mean_loss)> on_epoch;
};

struct TrainResult {
  std::vector<double> epoch_losses;  // epochs run by this call
  std::size_t first_epoch = 1;
  std::size_t parameter_count = 0;
};

/// Trains one stage on raw-coordinate graphs normalized with `meta.normalization`.
/// Batch order and diffusion noise for epoch e come from (seed, stage, e) substreams, so a
/// resumed run reproduces the uninterrupted one bit-exactly. A non-finite loss writes the
/// offending batch next to the checkpoint and throws NumericError.
TrainResult train_stage(const std::vector<SpatialGraph>& graphs, const DatasetMeta& meta, const TrainConfig& cfg,
                        const TrainOptions& options);

struct NodeModel {
  std::unique_ptr<NodeDenoiser> net;
  NoiseSchedule schedule;
  DatasetMeta meta;
  TrainConfig config;
  std::size_t epochs_done = 0;
};

struct EdgeModel {
  std::unique_ptr<EdgeDenoiser> net;
  EdgeNoiseModel noise;
  DatasetMeta meta;
  TrainConfig config;
  std::size_t epochs_done = 0;
};

/// Throws ConfigError when the checkpoint belongs to the other stage.
NodeModel load_node_model(const std::filesystem::path& checkpoint);
EdgeModel load_edge_model(const std::filesystem::path& checkpoint);

/// Two-stage generation of `count` graphs in raw coordinates: n from the node-count
/// distribution, coordinates from the node model, then edges. Graph k draws only from the
/// (seed, "sample", k) substream. Throws ConfigError when the two schedules differ.
std::vector<SpatialGraph> sample_graphs(NodeModel& nodes, EdgeModel& edges, std::size_t count, std::uint64_t seed,
                                        std::size_t batch_size = 32);

}  // namespace vgd
