#pragma once

// Checkpoint file: one JSON document mapping parameter names to shape + row-major values.
// Doubles are written in shortest round-trip form, so loading reproduces them bit-exactly.

#include <filesystem>
#include <string>
#include <vector>

#include "vgd/tensor.hpp"

namespace vgd {

struct NamedTensor {
  std::string name;
  Tensor value;
};

struct CheckpointData {
  std::vector<NamedTensor> parameters;
  /// Optimizer moments keyed by parameter name.
  std::vector<NamedTensor> first_moments;
  std::vector<NamedTensor> second_moments;
  std::size_t optimizer_step = 0;
  /// Exponential moving average of the parameters; empty when not tracked.
  std::vector<NamedTensor> averaged;
  /// Free-form JSON object text (schedule, normalization, config, progress).
  std::string metadata_json = "{}";
};

void save_checkpoint(const std::filesystem::path& path, const CheckpointData& data);
CheckpointData load_checkpoint(const std::filesystem::path& path);

/// Copies values of `source` into same-named, same-shaped tensors of `target`.
/// Throws ConfigError on a missing name or shape mismatch.
void assign_parameters(std::vector<NamedTensor>& target, const std::vector<NamedTensor>& source);

}  // namespace vgd
