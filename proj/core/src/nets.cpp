#include "vgd/nets.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>

#include "vgd/error.hpp"

namespace vgd {

Tensor timestep_embedding(std::span<const std::size_t> t, std::size_t dim) {
  if (dim < 2 || dim % 2 != 0) throw ConfigError("timestep embedding dimension must be even and >= 2");
  const std::size_t half = dim / 2;
  std::vector<double> out(t.size() * dim);
  for (std::size_t r = 0; r < t.size(); ++r) {
    for (std::size_t i = 0; i < half; ++i) {
      const double exponent = half > 1 ? static_cast<double>(i) / static_cast<double>(half - 1) : 0.0;
      const double freq = std::pow(1e-4, exponent);
      const double angle = static_cast<double>(t[r]) * freq;
      out[r * dim + 2 * i] = std::sin(angle);
      out[r * dim + 2 * i + 1] = std::cos(angle);
    }
  }
  return Tensor({t.size(), dim}, std::move(out));
}

Tensor ParameterStore::weight(const std::string& name, std::size_t in, std::size_t out, Rng& rng, double gain) {
  std::normal_distribution<double> dist(0.0, gain / std::sqrt(static_cast<double>(in)));
  std::vector<double> values(in * out);
  for (auto& v : values) v = dist(rng);
  Tensor p = Tensor::parameter({in, out}, std::move(values));
  params_.push_back({prefix_ + "." + name, p});
  return p;
}

Tensor ParameterStore::constant(const std::string& name, Shape shape, double value) {
  const auto n = shape_numel(shape);
  Tensor p = Tensor::parameter(std::move(shape), std::vector<double>(n, value));
  params_.push_back({prefix_ + "." + name, p});
  return p;
}

std::vector<Tensor> ParameterStore::tensors() const {
  std::vector<Tensor> out;
  for (const auto& p : params_) out.push_back(p.value);
  return out;
}

std::size_t ParameterStore::count() const {
  std::size_t total = 0;
  for (const auto& p : params_) total += p.value.numel();
  return total;
}

Linear Linear::make(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                    bool bias, double gain) {
  Linear l;
  l.w = store.weight(name + ".w", in, out, rng, gain);
  if (bias) l.b = store.constant(name + ".b", {out}, 0.0);
  return l;
}

Tensor Linear::operator()(const Tensor& x) const {
  Tensor y = matmul(x, w);
  return b.defined() ? add(y, expand(b, y.shape())) : y;
}

Mlp Mlp::make(ParameterStore& store, const std::string& name, std::size_t in, std::size_t hidden, std::size_t out,
              Rng& rng, double out_gain) {
  return {Linear::make(store, name + ".l0", in, hidden, rng), Linear::make(store, name + ".l1", hidden, out, rng, true, out_gain)};
}

Tensor Mlp::operator()(const Tensor& x) const { return l1(gelu(l0(x))); }

LayerNorm LayerNorm::make(ParameterStore& store, const std::string& name, std::size_t dim) {
  return {store.constant(name + ".gamma", {dim}, 1.0), store.constant(name + ".beta", {dim}, 0.0)};
}

Tensor LayerNorm::operator()(const Tensor& x) const { return layer_norm(x, gamma, beta); }

namespace {

void check_batch(const Tensor& x, const Tensor& mask, std::span<const std::size_t> t, const char* who) {
  if (x.rank() != 3 || x.dim(2) != 3) throw ShapeError(std::string(who) + ": coordinates must be [B,n,3], got " + shape_str(x.shape()));
  if (mask.shape() != Shape{x.dim(0), x.dim(1)})
    throw ShapeError(std::string(who) + ": mask shape " + shape_str(mask.shape()) + " does not match " + shape_str(x.shape()));
  if (t.size() != x.dim(0)) throw ShapeError(std::string(who) + ": need one timestep per batch element");
}

/// [B,n,width] copy of the mask along a new feature axis.
Tensor mask_features(const Tensor& mask, std::size_t width) {
  std::vector<double> out(mask.numel() * width);
  for (std::size_t r = 0; r < mask.numel(); ++r) std::fill_n(out.begin() + r * width, width, mask[r]);
  return Tensor({mask.dim(0), mask.dim(1), width}, std::move(out));
}

/// Timestep embedding repeated for every node: [B,n,dim].
Tensor node_time_features(std::span<const std::size_t> t, std::size_t n, std::size_t dim) {
  const Tensor emb = timestep_embedding(t, dim);
  std::vector<double> out(t.size() * n * dim);
  for (std::size_t b = 0; b < t.size(); ++b)
    for (std::size_t i = 0; i < n; ++i)
      std::copy_n(emb.data().begin() + b * dim, dim, out.begin() + (b * n + i) * dim);
  return Tensor({t.size(), n, dim}, std::move(out));
}

}  // namespace

// ---------------------------------------------------------------------------
// Node denoiser

NodeDenoiser::NodeDenoiser(const NodeDenoiserConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg.width == 0 || cfg.blocks == 0 || cfg.heads == 0 || cfg.width % cfg.heads != 0)
    throw ConfigError("node denoiser: width must be a positive multiple of heads");
  Rng rng = substream(seed, "node_net.init");
  for (std::size_t b = 0; b < cfg.blocks; ++b) {
    const std::string p = "block" + std::to_string(b);
    Block blk{
        Mlp::make(store_, p + ".coord_mlp", b == 0 ? 3 : cfg.width, cfg.width, cfg.width, rng),
        Mlp::make(store_, p + ".time_mlp", cfg.time_dim, cfg.width, cfg.width, rng),
        LayerNorm::make(store_, p + ".norm", cfg.width),
        Linear::make(store_, p + ".attn.q", cfg.width, cfg.width, rng, false),
        Linear::make(store_, p + ".attn.k", cfg.width, cfg.width, rng, false),
        Linear::make(store_, p + ".attn.v", cfg.width, cfg.width, rng, false),
        Linear::make(store_, p + ".attn.o", cfg.width, cfg.width, rng, true, 0.5),
    };
    blocks_.push_back(std::move(blk));
  }
  out_mlp_ = Mlp::make(store_, "out_mlp", cfg.width, cfg.width, 3, rng, 0.5);
}

Tensor NodeDenoiser::predict_noise(const Tensor& x_t, const Tensor& mask, std::span<const std::size_t> t) {
  check_batch(x_t, mask, t, "node_denoiser_forward");
  const std::size_t n = x_t.dim(1);
  const Tensor temb = node_time_features(t, n, cfg_.time_dim);
  const Tensor mw = mask_features(mask, cfg_.width);
  Tensor h;
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const Block& blk = blocks_[b];
    Tensor s = add(blk.coord_mlp(b == 0 ? x_t : h), blk.time_mlp(temb));
    if (b > 0) s = add(s, h);
    s = mul(s, mw);
    const Tensor hn = blk.norm(s);
    const Tensor att = scaled_dot_attention(blk.q(hn), blk.k(hn), blk.v(hn), cfg_.heads, {}, mask);
    h = mul(add(s, blk.o(att)), mw);
  }
  return mul(out_mlp_(h), mask_features(mask, 3));
}

// ---------------------------------------------------------------------------
// Edge denoiser

Tensor distance_features(const Tensor& x0, std::size_t basis, double cutoff) {
  const std::size_t B = x0.dim(0), n = x0.dim(1);
  const std::size_t width = 1 + basis;
  const double spacing = basis > 1 ? cutoff / static_cast<double>(basis - 1) : cutoff;
  const double inv_var = 1.0 / (spacing * spacing);
  std::vector<double> out(B * n * n * width);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double d2 = 0.0;
        for (std::size_t a = 0; a < 3; ++a) {
          const double diff = x0[(b * n + i) * 3 + a] - x0[(b * n + j) * 3 + a];
          d2 += diff * diff;
        }
        const double d = std::sqrt(d2);
        double* row = out.data() + ((b * n + i) * n + j) * width;
        row[0] = d;
        for (std::size_t k = 0; k < basis; ++k) {
          const double c = spacing * static_cast<double>(k);
          row[1 + k] = std::exp(-0.5 * (d - c) * (d - c) * inv_var);
        }
      }
  return Tensor({B, n, n, width}, std::move(out));
}

Tensor neighbor_rank_features(const Tensor& x0, const Tensor& mask, std::size_t k) {
  const std::size_t B = x0.dim(0), n = x0.dim(1);
  std::vector<std::size_t> rank(n * n, 0);
  std::vector<double> out(B * n * n * 2 * k, 0.0);
  std::vector<std::pair<double, std::size_t>> order;
  for (std::size_t b = 0; b < B; ++b) {
    std::fill(rank.begin(), rank.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      if (mask[b * n + i] == 0.0) continue;
      order.clear();
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i || mask[b * n + j] == 0.0) continue;
        double d2 = 0.0;
        for (std::size_t a = 0; a < 3; ++a) {
          const double diff = x0[(b * n + i) * 3 + a] - x0[(b * n + j) * 3 + a];
          d2 += diff * diff;
        }
        order.emplace_back(d2, j);
      }
      std::sort(order.begin(), order.end());
      for (std::size_t r = 0; r < order.size(); ++r) rank[i * n + order[r].second] = r + 1;
    }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const std::size_t a = rank[i * n + j], c = rank[j * n + i];
        if (a == 0 || c == 0) continue;
        double* row = out.data() + ((b * n + i) * n + j) * 2 * k;
        const std::size_t lo = std::min(a, c), hi = std::max(a, c);
        if (lo <= k) row[lo - 1] = 1.0;
        if (hi <= k) row[k + hi - 1] = 1.0;
      }
  }
  return Tensor({B, n, n, 2 * k}, std::move(out));
}

std::pair<Tensor, Tensor> edge_state_structure(const Tensor& e_t, const Tensor& mask) {
  const std::size_t B = e_t.dim(0), n = e_t.dim(1), c = e_t.dim(3);
  std::vector<double> deg_out(B * n * kDegreeFeatures, 0.0), same(B * n * n, 0.0);
  std::vector<std::size_t> parent(n);
  auto find = [&](std::size_t v) {
    while (parent[v] != v) v = parent[v] = parent[parent[v]];
    return v;
  };
  for (std::size_t b = 0; b < B; ++b) {
    std::iota(parent.begin(), parent.end(), 0);
    std::vector<std::size_t> deg(n, 0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        if (mask[b * n + i] == 0.0 || mask[b * n + j] == 0.0) continue;
        const double* row = e_t.data().data() + ((b * n + i) * n + j) * c;
        if (std::max_element(row, row + c) == row) continue;
        ++deg[i];
        ++deg[j];
        parent[find(i)] = find(j);
      }
    for (std::size_t i = 0; i < n; ++i) {
      if (mask[b * n + i] == 0.0) continue;
      deg_out[(b * n + i) * kDegreeFeatures + std::min(deg[i], kDegreeFeatures - 1)] = 1.0;
      for (std::size_t j = 0; j < n; ++j)
        if (j != i && mask[b * n + j] != 0.0 && find(i) == find(j)) same[(b * n + i) * n + j] = 1.0;
    }
  }
  return {Tensor({B, n, kDegreeFeatures}, std::move(deg_out)), Tensor({B, n, n, 1}, std::move(same))};
}

Tensor pair_mask(const Tensor& mask) {
  const std::size_t B = mask.dim(0), n = mask.dim(1);
  std::vector<double> out(B * n * n, 0.0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) out[(b * n + i) * n + j] = mask[b * n + i] * mask[b * n + j];
  return Tensor({B, n, n}, std::move(out));
}

EdgeDenoiser::EdgeDenoiser(const EdgeDenoiserConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg.num_classes < 2) throw ConfigError("edge denoiser: need at least 2 classes");
  if (cfg.node_dim == 0 || cfg.heads == 0 || cfg.node_dim % cfg.heads != 0 || cfg.edge_dim == 0 || cfg.blocks == 0)
    throw ConfigError("edge denoiser: node_dim must be a positive multiple of heads");
  Rng rng = substream(seed, "edge_net.init");
  const std::size_t dn = cfg.node_dim, de = cfg.edge_dim;
  const auto c = static_cast<std::size_t>(cfg.num_classes);
  const std::size_t extra_node = cfg.structure_features ? kDegreeFeatures : 0;
  const std::size_t extra_pair = 2 * cfg.neighbor_ranks + (cfg.structure_features ? 1 : 0);
  node_lift_ = Linear::make(store_, "node_lift", 3 + extra_node, dn, rng);
  edge_lift_ = Linear::make(store_, "edge_lift", c + 1 + cfg.distance_basis + extra_pair, de, rng);
  for (std::size_t b = 0; b < cfg.blocks; ++b) {
    const std::string p = "block" + std::to_string(b);
    Block blk{
        Linear::make(store_, p + ".film", de + cfg.time_dim, 2 * dn, rng, true, 0.1),
        LayerNorm::make(store_, p + ".attn_norm", dn),
        Linear::make(store_, p + ".attn.q", dn, dn, rng, false),
        Linear::make(store_, p + ".attn.k", dn, dn, rng, false),
        Linear::make(store_, p + ".attn.v", dn, dn, rng, false),
        Linear::make(store_, p + ".attn.o", dn, dn, rng, true, 0.5),
        Linear::make(store_, p + ".attn.bias", de, cfg.heads, rng, false),
        LayerNorm::make(store_, p + ".ffn_norm", dn),
        Mlp::make(store_, p + ".ffn", dn, 2 * dn, dn, rng, 0.5),
        LayerNorm::make(store_, p + ".edge_norm", de),
        Linear::make(store_, p + ".edge_in", de, de, rng),
        Linear::make(store_, p + ".edge_node", dn, de, rng, false),
        Linear::make(store_, p + ".edge_out", de, de, rng, true, 0.5),
    };
    blocks_.push_back(std::move(blk));
  }
  head_norm_ = LayerNorm::make(store_, "head_norm", dn);
  head_ = Mlp::make(store_, "head", 2 * dn + de, dn, c, rng);
}

Tensor EdgeDenoiser::predict_logits(const Tensor& e_t, const Tensor& x0, const Tensor& mask,
                                    std::span<const std::size_t> t) {
  check_batch(x0, mask, t, "edge_denoiser_forward");
  const std::size_t B = x0.dim(0), n = x0.dim(1);
  const auto c = static_cast<std::size_t>(cfg_.num_classes);
  if (e_t.shape() != Shape{B, n, n, c})
    throw ShapeError("edge_denoiser_forward: edge state " + shape_str(e_t.shape()) + " does not match " +
                     shape_str(Shape{B, n, n, c}));
  const std::size_t dn = cfg_.node_dim, de = cfg_.edge_dim;

  const Tensor pmask = pair_mask(mask);
  std::vector<double> pm_edge(B * n * n * de), inv_count(B * n * de);
  for (std::size_t r = 0; r < B * n * n; ++r) std::fill_n(pm_edge.begin() + r * de, de, pmask[r]);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < n; ++i) {
      double count = 0.0;
      for (std::size_t j = 0; j < n; ++j) count += pmask[(b * n + i) * n + j];
      std::fill_n(inv_count.begin() + (b * n + i) * de, de, count > 0.0 ? 1.0 / count : 0.0);
    }
  const Tensor pair_mask_e({B, n, n, de}, std::move(pm_edge));
  const Tensor mean_weights({B, n, de}, std::move(inv_count));
  const Tensor node_mask_n = mask_features(mask, dn);
  const Tensor temb = node_time_features(t, n, cfg_.time_dim);

  std::vector<Tensor> node_in{x0};
  std::vector<Tensor> pair_in{e_t, distance_features(x0, cfg_.distance_basis, cfg_.distance_cutoff)};
  if (cfg_.neighbor_ranks > 0) pair_in.push_back(neighbor_rank_features(x0, mask, cfg_.neighbor_ranks));
  if (cfg_.structure_features) {
    auto [deg, same] = edge_state_structure(e_t, mask);
    node_in.push_back(std::move(deg));
    pair_in.push_back(std::move(same));
  }
  Tensor h = mul(node_lift_(concat(node_in)), node_mask_n);
  Tensor e = mul(edge_lift_(concat(pair_in)), pair_mask_e);

  for (const Block& blk : blocks_) {
    const Tensor agg = mul(sum_axis(e, 2), mean_weights);
    const Tensor film = blk.film(concat({agg, temb}));
    h = add(mul(h, add_scalar(slice(film, 0, dn), 1.0)), slice(film, dn, 2 * dn));
    const Tensor hn = blk.attn_norm(h);
    const Tensor att = scaled_dot_attention(blk.q(hn), blk.k(hn), blk.v(hn), cfg_.heads, blk.bias(e), mask);
    h = add(h, blk.o(att));
    h = mul(add(h, blk.ffn(blk.ffn_norm(h))), node_mask_n);

    const Tensor hp = blk.edge_node(blk.attn_norm(h));
    const Tensor update = blk.edge_out(gelu(add(blk.edge_in(blk.edge_norm(e)), outer_add(hp, hp))));
    e = mul(add(e, update), pair_mask_e);
  }

  const Tensor hf = head_norm_(h);
  const Tensor logits = head_(concat({outer_add(hf, hf), outer_mul(hf, hf), e}));
  return scale(add(logits, transpose(logits, 1, 2)), 0.5);
}

}  // namespace vgd
