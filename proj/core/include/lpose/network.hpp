#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "lpose/attention.hpp"
#include "lpose/embedding.hpp"
#include "lpose/params.hpp"
#include "lpose/skeleton.hpp"
#include "lpose/tape.hpp"

namespace lpose {

struct ModelConfig {
  int d = 64;
  int heads = 4;
  int spatial_blocks = 3;
  std::vector<int> windows = {3, 9, 27};  // one temporal block per entry
  int mlp_ratio = 4;
  int head_mlp_ratio = 4;
  double dropout = 0.1;
  int joints = 17;
  int frames = 27;  // nominal sequence length; forward accepts any T >= 1
  bool shared_lambda = false;
  // the head decodes metre-scale coordinates; this fixed unit conversion maps
  // them to the millimetre targets (keeps head weights O(1))
  double output_scale = 1000.0;

  void validate() const {
    if (d <= 0 || heads <= 0 || spatial_blocks <= 0 || mlp_ratio <= 0 || head_mlp_ratio <= 0 ||
        joints <= 0 || frames <= 0)
      throw std::invalid_argument("model config: extents must be positive");
    if (d % heads != 0) throw std::invalid_argument("model config: d must be divisible by heads");
    if (static_cast<int>(windows.size()) != spatial_blocks)
      throw std::invalid_argument("model config: one temporal window per spatial block required");
    for (int w : windows)
      if (w < 1) throw std::invalid_argument("model config: windows must be >= 1");
    if (dropout < 0 || dropout >= 1) throw std::invalid_argument("model config: dropout out of range");
  }

  /// Desk-scale defaults: W = 13 covers all 27 frames in the last block.
  static ModelConfig desk() {
    ModelConfig c;
    c.d = 64;
    c.heads = 4;
    c.windows = {3, 9, 13};
    c.frames = 27;
    return c;
  }

  /// Full-size configuration (parameter-count reporting only).
  static ModelConfig full() {
    ModelConfig c;
    c.d = 512;
    c.heads = 8;
    c.windows = {3, 9, 27};
    c.frames = 243;
    return c;
  }
};

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

struct HeadRefs {
  int ln_g = -1, ln_b = -1;
  int w1 = -1;  // [J, d_ffh, d]
  int w2 = -1;  // [J, 3, d_ffh]
};

/// Closed-form trainable-scalar count for a configuration (network only, the
/// Kendall uncertainty scalars live with the trainer).
inline std::size_t analytic_param_count(const ModelConfig& cfg) {
  const std::size_t d = static_cast<std::size_t>(cfg.d);
  const std::size_t h = static_cast<std::size_t>(cfg.heads);
  const std::size_t j = static_cast<std::size_t>(cfg.joints);
  const std::size_t dff = static_cast<std::size_t>(cfg.mlp_ratio) * d;
  const std::size_t dffh = static_cast<std::size_t>(cfg.head_mlp_ratio) * d;
  const std::size_t blocks = static_cast<std::size_t>(cfg.spatial_blocks);
  const std::size_t embedding = d * 2 + d * 2 + 2 + j * d;
  const std::size_t mlp = dff * d + dff + d * dff + d;
  const std::size_t spatial = 3 * d * d + h + (cfg.shared_lambda ? 1 : h) + 3 * h + 2 * d + mlp + 2 * d;
  const std::size_t temporal = 3 * d * d + h + 2 * d + mlp + 2 * d;
  const std::size_t head = 2 * d + j * (dffh * d + 3 * dffh);
  return embedding + blocks * (spatial + temporal) + head;
}

/// Per-joint output head: y_j = W2_j GELU(W1_j LN(h_j)).
template <typename T>
ad::Var<T> output_head(const ForwardCtx<T>& ctx, const HeadRefs& refs, ad::Var<T> h) {
  const auto shape = h.val().shape;  // [T,J,d]
  const int t_n = shape[0], j_n = shape[1], d = shape[2];
  const int dffh = ctx.p(refs.w1).val().shape[1];
  auto x = ad::layernorm_last(h, ctx.p(refs.ln_g), ctx.p(refs.ln_b));
  std::vector<ad::Var<T>> per_joint;
  per_joint.reserve(static_cast<std::size_t>(j_n));
  for (int j = 0; j < j_n; ++j) {
    auto hj = ad::reshape(ad::slice(x, 1, j, 1), {t_n, d});
    auto w1 = ad::reshape(ad::slice(ctx.p(refs.w1), 0, j, 1), {dffh, d});
    auto w2 = ad::reshape(ad::slice(ctx.p(refs.w2), 0, j, 1), {3, dffh});
    auto y = ad::matmul(ad::gelu(ad::matmul(hj, w1, false, true)), w2, false, true);  // [T,3]
    per_joint.push_back(ad::reshape(y, {t_n, 1, 3}));
  }
  return j_n == 1 ? per_joint[0] : ad::concat<T>(per_joint, 1);
}

template <typename T>
struct ForwardOptions {
  bool training = false;
  std::mt19937_64* rng = nullptr;
  ForwardStats* stats = nullptr;
};

template <typename T>
struct ForwardOutput {
  ad::Var<T> prediction;  // [T,J,3]
  ad::Var<T> hidden;      // [T,J,d] final tangent hidden state (pre-head)
};

/// The block stack: confidence-gated embedding, then interleaved
/// (spatial, temporal-W) pairs with the configured window per depth, then the
/// per-joint head. Hidden state stays an origin-tangent vector between
/// blocks; the only manifold lifts happen inside the spatial attention.
template <typename T>
class Model {
 public:
  Model(ModelConfig cfg, Skeleton skeleton, std::uint64_t init_seed = 1)
      : cfg_(std::move(cfg)), skeleton_(std::move(skeleton)) {
    cfg_.validate();
    if (skeleton_.joint_count() != cfg_.joints)
      throw std::invalid_argument("model: skeleton joint count does not match config");
    for (int k = 0; k < 3; ++k)
      hop_powers_[static_cast<std::size_t>(k)] =
          skeleton_.adjacency_powers[static_cast<std::size_t>(k)].template cast<T>();
    init_params(init_seed);
  }

  const ModelConfig& config() const { return cfg_; }
  const Skeleton& skeleton() const { return skeleton_; }
  ParamStore<T>& params() { return store_; }
  const ParamStore<T>& params() const { return store_; }
  std::size_t parameter_count() const { return store_.count(); }

  std::vector<ad::Var<T>> bind(ad::Tape<T>& tape, bool requires_grad) const {
    return store_.bind(tape, requires_grad);
  }

  ForwardOutput<T> forward(ad::Tape<T>& tape, const std::vector<ad::Var<T>>& vars,
                           const ad::Tensor<T>& input, const ForwardOptions<T>& opts = {}) const {
    if (input.rank() != 3 || input.shape[1] != cfg_.joints || input.dim(-1) != 3)
      throw std::invalid_argument("model forward: input must be [T," + std::to_string(cfg_.joints) +
                                  ",3]");
    ForwardCtx<T> ctx;
    ctx.tape = &tape;
    ctx.params = &vars;
    ctx.training = opts.training;
    ctx.dropout = static_cast<T>(cfg_.dropout);
    ctx.rng = opts.rng;
    ctx.stats = opts.stats;

    auto embedded = embed_sequence(tape, vars, embed_refs_, input, ctx.stability);
    ad::Var<T> h = embedded.hidden;
    for (int i = 0; i < cfg_.spatial_blocks; ++i) {
      h = spatial_attention(ctx, spatial_refs_[static_cast<std::size_t>(i)], h, embedded.velocity,
                            hop_powers_, cfg_.heads, "spatial" + std::to_string(i));
      h = temporal_attention(ctx, temporal_refs_[static_cast<std::size_t>(i)], h,
                             cfg_.windows[static_cast<std::size_t>(i)], cfg_.heads);
    }
    auto decoded = output_head(ctx, head_refs_, h);
    if (cfg_.output_scale != 1.0)
      decoded = ad::mul_scalar(decoded, static_cast<T>(cfg_.output_scale));
    return {decoded, h};
  }

  /// Value-only prediction on a fresh non-recording tape.
  ad::Tensor<T> predict(const ad::Tensor<T>& input, ForwardStats* stats = nullptr) const {
    ad::Tape<T> tape;
    tape.set_grad_enabled(false);
    auto vars = bind(tape, false);
    ForwardOptions<T> opts;
    opts.stats = stats;
    return forward(tape, vars, input, opts).prediction.val();
  }

  void save_checkpoint(const std::string& path) const;
  void load_checkpoint(const std::string& path);

  const EmbeddingRefs& embedding_refs() const { return embed_refs_; }
  const std::vector<SpatialBlockRefs>& spatial_refs() const { return spatial_refs_; }
  const std::vector<TemporalBlockRefs>& temporal_refs() const { return temporal_refs_; }
  const HeadRefs& head_refs() const { return head_refs_; }

 private:
  void init_params(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const int d = cfg_.d, j = cfg_.joints, h = cfg_.heads;
    const int dff = cfg_.mlp_ratio * d, dffh = cfg_.head_mlp_ratio * d;
    const T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
    const T inv_sqrtd = T(1) / std::sqrt(static_cast<T>(d));
    const T inv_sqrtdff = T(1) / std::sqrt(static_cast<T>(dff));
    const T softplus_inv_1 = static_cast<T>(0.5413248546129181);  // softplus(x) = 1

    auto uniform = [&](std::vector<int> shape, T scale) {
      return ad::Tensor<T>::uniform(std::move(shape), -scale, scale, rng);
    };

    embed_refs_.w_pos = store_.add("embed.w_pos", uniform({d, 2}, inv_sqrt2), true);
    embed_refs_.w_vel = store_.add("embed.w_vel", uniform({d, 2}, inv_sqrt2), true);
    embed_refs_.alpha = store_.add("embed.alpha", ad::Tensor<T>::scalar(T(1)), false);
    embed_refs_.beta = store_.add("embed.beta", ad::Tensor<T>::scalar(T(0)), false);
    embed_refs_.joint_id = store_.add("embed.joint_id", uniform({j, d}, inv_sqrtd), true);

    for (int i = 0; i < cfg_.spatial_blocks; ++i) {
      const std::string base = "spatial" + std::to_string(i) + ".";
      SpatialBlockRefs r;
      r.ln1_g = store_.add(base + "ln1.g", ad::Tensor<T>::full({d}, T(1)), false);
      r.ln1_b = store_.add(base + "ln1.b", ad::Tensor<T>::zeros({d}), false);
      r.w_qkv = store_.add(base + "w_qkv", uniform({3 * d, d}, inv_sqrtd), true);
      r.tau_raw = store_.add(base + "tau_raw", ad::Tensor<T>::full({h}, softplus_inv_1), false);
      r.lambda_raw = store_.add(base + "lambda_raw",
                                ad::Tensor<T>::full({cfg_.shared_lambda ? 1 : h}, softplus_inv_1), false);
      ad::Tensor<T> gamma = ad::Tensor<T>::zeros({h, 3});
      for (int hh = 0; hh < h; ++hh) gamma.data[static_cast<std::size_t>(hh * 3)] = T(1);
      r.gamma = store_.add(base + "gamma", std::move(gamma), false);
      r.ln2_g = store_.add(base + "ln2.g", ad::Tensor<T>::full({d}, T(1)), false);
      r.ln2_b = store_.add(base + "ln2.b", ad::Tensor<T>::zeros({d}), false);
      r.mlp_w1 = store_.add(base + "mlp.w1", uniform({dff, d}, inv_sqrtd), true);
      r.mlp_b1 = store_.add(base + "mlp.b1", ad::Tensor<T>::zeros({dff}), false);
      r.mlp_w2 = store_.add(base + "mlp.w2", uniform({d, dff}, inv_sqrtdff), true);
      r.mlp_b2 = store_.add(base + "mlp.b2", ad::Tensor<T>::zeros({d}), false);
      spatial_refs_.push_back(r);

      const std::string tbase = "temporal" + std::to_string(i) + ".";
      TemporalBlockRefs tr;
      tr.ln1_g = store_.add(tbase + "ln1.g", ad::Tensor<T>::full({d}, T(1)), false);
      tr.ln1_b = store_.add(tbase + "ln1.b", ad::Tensor<T>::zeros({d}), false);
      tr.w_qkv = store_.add(tbase + "w_qkv", uniform({3 * d, d}, inv_sqrtd), true);
      tr.tau_raw = store_.add(tbase + "tau_raw", ad::Tensor<T>::full({h}, softplus_inv_1), false);
      tr.ln2_g = store_.add(tbase + "ln2.g", ad::Tensor<T>::full({d}, T(1)), false);
      tr.ln2_b = store_.add(tbase + "ln2.b", ad::Tensor<T>::zeros({d}), false);
      tr.mlp_w1 = store_.add(tbase + "mlp.w1", uniform({dff, d}, inv_sqrtd), true);
      tr.mlp_b1 = store_.add(tbase + "mlp.b1", ad::Tensor<T>::zeros({dff}), false);
      tr.mlp_w2 = store_.add(tbase + "mlp.w2", uniform({d, dff}, inv_sqrtdff), true);
      tr.mlp_b2 = store_.add(tbase + "mlp.b2", ad::Tensor<T>::zeros({d}), false);
      temporal_refs_.push_back(tr);
    }

    head_refs_.ln_g = store_.add("head.ln.g", ad::Tensor<T>::full({d}, T(1)), false);
    head_refs_.ln_b = store_.add("head.ln.b", ad::Tensor<T>::zeros({d}), false);
    head_refs_.w1 = store_.add("head.w1", uniform({j, dffh, d}, inv_sqrtd), true);
    head_refs_.w2 = store_.add("head.w2",
                               uniform({j, 3, dffh}, T(1) / std::sqrt(static_cast<T>(dffh))), true);
  }

  ModelConfig cfg_;
  Skeleton skeleton_;
  ParamStore<T> store_;
  EmbeddingRefs embed_refs_;
  std::vector<SpatialBlockRefs> spatial_refs_;
  std::vector<TemporalBlockRefs> temporal_refs_;
  HeadRefs head_refs_;
  std::array<ad::Tensor<T>, 3> hop_powers_;
};

// ---------------------------------------------------------------------------
// Checkpoints: a flat sequence of records, one per parameter tensor, in
// store order. Record layout: u32 name length, name bytes, u32 rank,
// u32 extents, fp32 little-endian payload. Round-trips bit-exactly.
// ---------------------------------------------------------------------------

namespace detail {

static_assert(std::endian::native == std::endian::little,
              "checkpoint/dataset serialisation assumes a little-endian host");

inline void write_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), 4);
}

inline std::uint32_t read_u32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

}  // namespace detail

template <typename T>
void save_checkpoint_store(const ParamStore<T>& store, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  for (const auto& e : store.entries) {
    detail::write_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    detail::write_u32(out, static_cast<std::uint32_t>(e.value.shape.size()));
    for (int ext : e.value.shape) detail::write_u32(out, static_cast<std::uint32_t>(ext));
    ad::Tensor<float> payload = e.value.template cast<float>();
    out.write(reinterpret_cast<const char*>(payload.data.data()),
              static_cast<std::streamsize>(payload.numel() * sizeof(float)));
  }
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

inline std::vector<std::pair<std::string, ad::Tensor<float>>> load_checkpoint_file(
    const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  std::vector<std::pair<std::string, ad::Tensor<float>>> out;
  while (true) {
    std::uint32_t name_len = 0;
    in.read(reinterpret_cast<char*>(&name_len), 4);
    if (in.eof()) break;
    if (!in) throw std::runtime_error("checkpoint: truncated record header");
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    std::uint32_t rank = detail::read_u32(in);
    std::vector<int> shape(rank);
    for (auto& ext : shape) ext = static_cast<int>(detail::read_u32(in));
    ad::Tensor<float> tensor(shape);
    in.read(reinterpret_cast<char*>(tensor.data.data()),
            static_cast<std::streamsize>(tensor.numel() * sizeof(float)));
    if (!in) throw std::runtime_error("checkpoint: truncated payload for " + name);
    out.emplace_back(std::move(name), std::move(tensor));
  }
  return out;
}

template <typename T>
void load_checkpoint_store(ParamStore<T>& store, const std::string& path) {
  auto records = load_checkpoint_file(path);
  if (records.size() != store.size())
    throw std::runtime_error("checkpoint: tensor count mismatch (" + std::to_string(records.size()) +
                             " in file, " + std::to_string(store.size()) + " expected)");
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto& e = store.entries[i];
    if (records[i].first != e.name)
      throw std::runtime_error("checkpoint: name mismatch at record " + std::to_string(i) + ": " +
                               records[i].first + " vs " + e.name);
    if (records[i].second.shape != e.value.shape)
      throw std::runtime_error("checkpoint: shape mismatch for " + e.name);
    e.value = records[i].second.template cast<T>();
  }
}

template <typename T>
void Model<T>::save_checkpoint(const std::string& path) const {
  save_checkpoint_store(store_, path);
}

template <typename T>
void Model<T>::load_checkpoint(const std::string& path) {
  load_checkpoint_store(store_, path);
}

}  // namespace lpose
