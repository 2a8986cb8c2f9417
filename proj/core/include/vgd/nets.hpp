#pragma once

// Denoiser networks. Both operate on padded batches: coordinates [B, n, 3] with a
// node mask [B, n] (1 = real node, 0 = padding).

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "vgd/checkpoint.hpp"
#include "vgd/rng.hpp"
#include "vgd/tensor.hpp"

namespace vgd {

/// Predicts the Gaussian noise that was added to node coordinates.
class NodeNoisePredictor {
 public:
  virtual ~NodeNoisePredictor() = default;
  /// x_t [B,n,3], mask [B,n], one timestep per batch element. Returns [B,n,3], zero on padding.
  virtual Tensor predict_noise(const Tensor& x_t, const Tensor& mask, std::span<const std::size_t> t) = 0;
};

/// Predicts clean edge-class logits from a noisy edge state and fixed coordinates.
class EdgeLogitPredictor {
 public:
  virtual ~EdgeLogitPredictor() = default;
  /// e_t one-hot [B,n,n,c], x0 [B,n,3], mask [B,n]. Returns symmetric logits [B,n,n,c].
  virtual Tensor predict_logits(const Tensor& e_t, const Tensor& x0, const Tensor& mask,
                                std::span<const std::size_t> t) = 0;
  virtual int num_classes() const = 0;
};

/// [len(t), dim] sinusoidal embedding, frequencies geometric from 1 down to 1/10^4.
Tensor timestep_embedding(std::span<const std::size_t> t, std::size_t dim);

/// Named parameter registry with deterministic initialization.
class ParameterStore {
 public:
  explicit ParameterStore(std::string prefix) : prefix_(std::move(prefix)) {}

  /// Weight [in, out] drawn from N(0, gain^2 / in).
  Tensor weight(const std::string& name, std::size_t in, std::size_t out, Rng& rng, double gain = 1.0);
  Tensor constant(const std::string& name, Shape shape, double value);

  std::vector<NamedTensor>& all() noexcept { return params_; }
  const std::vector<NamedTensor>& all() const noexcept { return params_; }
  std::vector<Tensor> tensors() const;
  std::size_t count() const;

 private:
  std::string prefix_;
  std::vector<NamedTensor> params_;
};

struct Linear {
  Tensor w;
  Tensor b;  // undefined for bias-free layers

  static Linear make(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                     bool bias = true, double gain = 1.0);
  Tensor operator()(const Tensor& x) const;
};

/// Linear -> gelu -> Linear.
struct Mlp {
  Linear l0;
  Linear l1;

  static Mlp make(ParameterStore& store, const std::string& name, std::size_t in, std::size_t hidden,
                  std::size_t out, Rng& rng, double out_gain = 1.0);
  Tensor operator()(const Tensor& x) const;
};

struct LayerNorm {
  Tensor gamma;
  Tensor beta;

  static LayerNorm make(ParameterStore& store, const std::string& name, std::size_t dim);
  Tensor operator()(const Tensor& x) const;
};

struct NodeDenoiserConfig {
  std::size_t width = 256;
  std::size_t blocks = 2;
  std::size_t heads = 4;
  std::size_t time_dim = 256;
};

/// Per block: an MLP over coordinates (features after the first block), an MLP over the
/// sinusoidal timestep embedding, and multi-head self-attention over their sum. A final
/// MLP projects to 3 coordinates.
class NodeDenoiser final : public NodeNoisePredictor {
 public:
  NodeDenoiser(const NodeDenoiserConfig& cfg, std::uint64_t seed);

  Tensor predict_noise(const Tensor& x_t, const Tensor& mask, std::span<const std::size_t> t) override;

  const NodeDenoiserConfig& config() const noexcept { return cfg_; }
  ParameterStore& parameters() noexcept { return store_; }
  const ParameterStore& parameters() const noexcept { return store_; }

 private:
  struct Block {
    Mlp coord_mlp;
    Mlp time_mlp;
    LayerNorm norm;
    Linear q, k, v, o;
  };

  NodeDenoiserConfig cfg_;
  ParameterStore store_{"node_net"};
  std::vector<Block> blocks_;
  Mlp out_mlp_;
};

struct EdgeDenoiserConfig {
  int num_classes = 4;
  std::size_t blocks = 8;
  std::size_t heads = 8;
  std::size_t node_dim = 128;
  std::size_t edge_dim = 64;
  std::size_t time_dim = 128;
  std::size_t distance_basis = 16;
  double distance_cutoff = 2.0;  // normalized units
  std::size_t neighbor_ranks = 0;
  /// Adds node degree (one-hot, 0..5+) and a same-component pair flag, both read off E^t.
  bool structure_features = false;
};

/// Graph transformer over fixed coordinates. Each block modulates node features with a
/// FiLM layer fed by (mean incident edge features, timestep embedding), runs multi-head
/// self-attention with an edge-derived additive bias, then refreshes the edge features
/// from the endpoint node states. The head scores each pair from [h_i + h_j, h_i * h_j, e_ij].
class EdgeDenoiser final : public EdgeLogitPredictor {
 public:
  EdgeDenoiser(const EdgeDenoiserConfig& cfg, std::uint64_t seed);

  Tensor predict_logits(const Tensor& e_t, const Tensor& x0, const Tensor& mask,
                        std::span<const std::size_t> t) override;
  int num_classes() const override { return cfg_.num_classes; }

  const EdgeDenoiserConfig& config() const noexcept { return cfg_; }
  ParameterStore& parameters() noexcept { return store_; }
  const ParameterStore& parameters() const noexcept { return store_; }

 private:
  struct Block {
    Linear film;
    LayerNorm attn_norm;
    Linear q, k, v, o, bias;
    LayerNorm ffn_norm;
    Mlp ffn;
    LayerNorm edge_norm;
    Linear edge_in, edge_node, edge_out;
  };

  EdgeDenoiserConfig cfg_;
  ParameterStore store_{"edge_net"};
  Linear node_lift_;
  Linear edge_lift_;
  std::vector<Block> blocks_;
  LayerNorm head_norm_;
  Mlp head_;
};

/// Pairwise distance features [B,n,n,1+basis]: the Euclidean norm of x_i - x_j followed
/// by Gaussian radial basis values on [0, cutoff].
Tensor distance_features(const Tensor& x0, std::size_t basis, double cutoff);

/// [B,n,n,2k]: one-hot of min and max over (rank of j among i's neighbours by distance,
/// rank of i among j's), ranks 1..k among real nodes; farther ranks are all zero.
Tensor neighbor_rank_features(const Tensor& x0, const Tensor& mask, std::size_t k);

inline constexpr std::size_t kDegreeFeatures = 6;

/// Structure of the noisy edge state (any non-background argmax counts as an edge):
/// node degree one-hot [B,n,6] with the last slot for degree >= 5, and [B,n,n,1] that is 1
/// where i != j lie in the same connected component.
std::pair<Tensor, Tensor> edge_state_structure(const Tensor& e_t, const Tensor& mask);

/// [B,n,n] with 1 where both endpoints are real nodes and i != j.
Tensor pair_mask(const Tensor& mask);

}  // namespace vgd
