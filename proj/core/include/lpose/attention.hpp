#pragma once

#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "lpose/lorentz.hpp"
#include "lpose/params.hpp"
#include "lpose/skeleton.hpp"
#include "lpose/tape.hpp"

namespace lpose {

/// Per-forward diagnostics, collected from detached node values only; never
/// part of the gradient graph.
struct ForwardStats {
  double drift_sum = 0;  // sum over lifted rows of |<x,x>+1|
  std::uint64_t drift_rows = 0;
  double entropy_sum = 0;  // sum over softmax rows of natural-log entropy
  std::uint64_t entropy_rows = 0;
  std::vector<std::pair<std::string, double>> site_drift;  // per Q/K lift site mean

  double mean_drift() const { return drift_rows ? drift_sum / static_cast<double>(drift_rows) : 0.0; }
  double mean_entropy() const {
    return entropy_rows ? entropy_sum / static_cast<double>(entropy_rows) : 0.0;
  }
};

/// Shared forward-pass context: tape, bound parameter leaves, train/eval
/// mode, dropout rng and the optional stats sink.
template <typename T>
struct ForwardCtx {
  ad::Tape<T>* tape = nullptr;
  const std::vector<ad::Var<T>>* params = nullptr;
  bool training = false;
  T dropout = T(0);
  std::mt19937_64* rng = nullptr;
  ForwardStats* stats = nullptr;
  lorentz::StabilityConfig stability = lorentz::default_stability();

  const ad::Var<T>& p(int id) const { return (*params)[static_cast<std::size_t>(id)]; }
};

struct SpatialBlockRefs {
  int ln1_g = -1, ln1_b = -1;
  int w_qkv = -1;       // [3d,d]
  int tau_raw = -1;     // [H], softplus pre-activation
  int lambda_raw = -1;  // [H] (or [1] when shared)
  int gamma = -1;       // [H,3]
  int ln2_g = -1, ln2_b = -1;
  int mlp_w1 = -1, mlp_b1 = -1, mlp_w2 = -1, mlp_b2 = -1;
};

struct TemporalBlockRefs {
  int ln1_g = -1, ln1_b = -1;
  int w_qkv = -1;    // [3d,d]
  int tau_raw = -1;  // [H]
  int ln2_g = -1, ln2_b = -1;
  int mlp_w1 = -1, mlp_b1 = -1, mlp_w2 = -1, mlp_b2 = -1;
};

/// Mean natural-log Shannon entropy over the last-axis rows of an attention
/// weight tensor. Rows must be nonnegative and sum to 1 within row_sum_tol.
template <typename T>
double attention_entropy(const ad::Tensor<T>& weights, double row_sum_tol = 1e-5) {
  std::size_t d = static_cast<std::size_t>(weights.dim(-1));
  std::size_t rows = weights.numel() / d;
  if (rows == 0) throw std::invalid_argument("attention_entropy: empty weights");
  double total = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    double sum = 0, ent = 0;
    for (std::size_t i = 0; i < d; ++i) {
      double w = static_cast<double>(weights.data[r * d + i]);
      if (w < -row_sum_tol || !std::isfinite(w))
        throw std::invalid_argument("attention_entropy: malformed distribution (negative weight)");
      sum += w;
      if (w > 0) ent -= w * std::log(w);
    }
    if (std::abs(sum - 1.0) > row_sum_tol)
      throw std::invalid_argument("attention_entropy: malformed distribution (row sum off 1)");
    total += ent;
  }
  return total / static_cast<double>(rows);
}

namespace detail {

template <typename T>
void accumulate_lift_stats(ForwardStats* stats, const ad::Tensor<T>& lifted, const std::string& label) {
  if (!stats) return;
  std::size_t k = static_cast<std::size_t>(lifted.dim(-1));
  std::size_t rows = lifted.numel() / k;
  double sum = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    double inner = -static_cast<double>(lifted.data[r * k]) * static_cast<double>(lifted.data[r * k]);
    for (std::size_t i = 1; i < k; ++i)
      inner += static_cast<double>(lifted.data[r * k + i]) * static_cast<double>(lifted.data[r * k + i]);
    sum += std::abs(inner + 1.0);
  }
  stats->drift_sum += sum;
  stats->drift_rows += rows;
  stats->site_drift.emplace_back(label, sum / static_cast<double>(rows));
}

template <typename T>
void accumulate_entropy_stats(ForwardStats* stats, const ad::Tensor<T>& weights) {
  if (!stats) return;
  std::size_t d = static_cast<std::size_t>(weights.dim(-1));
  std::size_t rows = weights.numel() / d;
  double total = 0;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t i = 0; i < d; ++i) {
      double w = static_cast<double>(weights.data[r * d + i]);
      if (w > 0) total -= w * std::log(w);
    }
  stats->entropy_sum += total;
  stats->entropy_rows += rows;
}

/// Inverted dropout mask as a constant tensor; identity when not training.
template <typename T>
ad::Var<T> dropout(const ForwardCtx<T>& ctx, ad::Var<T> x) {
  if (!ctx.training || ctx.dropout <= T(0)) return x;
  if (!ctx.rng) throw std::invalid_argument("dropout: training mode requires an rng");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ad::Tensor<T> mask(x.val().shape);
  const T keep_scale = T(1) / (T(1) - ctx.dropout);
  for (auto& m : mask.data) m = (u(*ctx.rng) < static_cast<double>(ctx.dropout)) ? T(0) : keep_scale;
  return ad::mul(x, ctx.tape->constant(std::move(mask), "dropout_mask"));
}

/// Pointwise MLP sub-layer with pre-norm and residual addition.
template <typename T>
ad::Var<T> mlp_sublayer(const ForwardCtx<T>& ctx, ad::Var<T> h, int ln_g, int ln_b, int w1, int b1,
                        int w2, int b2) {
  // copy: node storage reallocates as ops are emitted
  const std::vector<int> shape = h.val().shape;
  const int rows = shape[0] * shape[1];
  const int d = shape[2];
  auto x = ad::layernorm_last(h, ctx.p(ln_g), ctx.p(ln_b));
  auto flat = ad::reshape(x, {rows, d});
  auto z = ad::gelu(ad::add(ad::matmul(flat, ctx.p(w1), false, true), ctx.p(b1)));
  auto y = ad::add(ad::matmul(z, ctx.p(w2), false, true), ctx.p(b2));
  y = dropout(ctx, y);
  return ad::add(h, ad::reshape(y, shape));
}

}  // namespace detail

/// The proximity logit (1 + <q,k>_L)/tau on lifted points; <= 0 with equality
/// iff q == k. Plain-value helper used by tests and diagnostics.
template <typename T>
T lorentz_proximity_logit(std::span<const T> q, std::span<const T> k, T tau) {
  if (tau <= T(0)) throw std::invalid_argument("lorentz_proximity_logit: tau must be positive");
  return (T(1) + lorentz::inner(q, k)) / tau;
}

/// Spatial attention over joints for every frame. Per head the logits sum a
/// Lorentzian proximity term on lifted Q/K, a velocity-coherence penalty on
/// the tangent velocity stream, and the multi-hop tree bias; values stay on
/// the tangent data path.
template <typename T>
ad::Var<T> spatial_attention(const ForwardCtx<T>& ctx, const SpatialBlockRefs& refs, ad::Var<T> h,
                             const ad::Var<T>& h_vel, const std::array<ad::Tensor<T>, 3>& hop_powers,
                             int heads, const std::string& label) {
  ad::Tape<T>& tape = *ctx.tape;
  const auto shape = h.val().shape;  // [T,J,d]
  const int t_n = shape[0], j_n = shape[1], d = shape[2];
  if (d % heads != 0) throw std::invalid_argument("spatial_attention: d must divide into heads");
  const int dh = d / heads;
  const T r_q = static_cast<T>(ctx.stability.r_q);

  auto x = ad::layernorm_last(h, ctx.p(refs.ln1_g), ctx.p(refs.ln1_b));
  auto qkv_pos = ad::matmul(ad::reshape(x, {t_n * j_n, d}), ctx.p(refs.w_qkv), false, true);
  auto qkv_vel = ad::matmul(ad::reshape(h_vel, {t_n * j_n, d}), ctx.p(refs.w_qkv), false, true);

  const bool shared_lambda = ctx.p(refs.lambda_raw).val().numel() == 1;
  std::vector<ad::Var<T>> head_outputs;
  head_outputs.reserve(static_cast<std::size_t>(heads));
  for (int hh = 0; hh < heads; ++hh) {
    auto take = [&](const ad::Var<T>& qkv, int part) {
      return ad::reshape(ad::slice(qkv, 1, part * d + hh * dh, dh), {t_n, j_n, dh});
    };
    auto q_pos = take(qkv_pos, 0);
    auto k_pos = take(qkv_pos, 1);
    auto v_pos = take(qkv_pos, 2);
    auto q_vel = take(qkv_vel, 0);
    auto k_vel = take(qkv_vel, 1);

    // proximity: clip to R_q, lift to the head hyperboloid, Lorentz gram
    auto q_lift = ad::lorentz_lift(ad::row_norm_clip(q_pos, r_q), lorentz::MapSite::kAttentionLift);
    auto k_lift = ad::lorentz_lift(ad::row_norm_clip(k_pos, r_q), lorentz::MapSite::kAttentionLift);
    detail::accumulate_lift_stats(ctx.stats, q_lift.val(), label + ".h" + std::to_string(hh) + ".q");
    detail::accumulate_lift_stats(ctx.stats, k_lift.val(), label + ".h" + std::to_string(hh) + ".k");
    auto gram = ad::sub(ad::bmm(ad::slice(q_lift, 2, 1, dh), ad::slice(k_lift, 2, 1, dh), false, true),
                        ad::bmm(ad::slice(q_lift, 2, 0, 1), ad::slice(k_lift, 2, 0, 1), false, true));
    auto tau = ad::softplus(ad::slice(ctx.p(refs.tau_raw), 0, hh, 1));
    auto s_prox = ad::div(ad::add_scalar(gram, T(1)), tau);

    // velocity coherence in the origin tangent space
    auto lambda =
        ad::softplus(ad::slice(ctx.p(refs.lambda_raw), 0, shared_lambda ? 0 : hh, 1));
    auto s_kin = ad::neg(ad::mul(ad::pairwise_sqdist(q_vel, k_vel), lambda));

    // multi-hop tree bias
    auto gamma_h = ad::slice(ctx.p(refs.gamma), 0, hh, 1);  // [1,3]
    ad::Var<T> s_topo = ad::mul(tape.constant(hop_powers[0], "hop1"), ad::slice(gamma_h, 1, 0, 1));
    s_topo = ad::add(s_topo, ad::mul(tape.constant(hop_powers[1], "hop2"), ad::slice(gamma_h, 1, 1, 1)));
    s_topo = ad::add(s_topo, ad::mul(tape.constant(hop_powers[2], "hop3"), ad::slice(gamma_h, 1, 2, 1)));

    auto logits = ad::add(ad::add(s_prox, s_kin), s_topo);
    auto alpha = ad::softmax_last(logits);
    detail::accumulate_entropy_stats(ctx.stats, alpha.val());
    alpha = detail::dropout(ctx, alpha);
    head_outputs.push_back(ad::bmm(alpha, v_pos));
  }
  auto out = heads == 1 ? head_outputs[0] : ad::concat<T>(head_outputs, 2);
  h = ad::add(h, out);
  return detail::mlp_sublayer(ctx, h, refs.ln2_g, refs.ln2_b, refs.mlp_w1, refs.mlp_b1, refs.mlp_w2,
                              refs.mlp_b2);
}

/// Windowed temporal attention over frames for every joint: banded
/// dot-product logits within +-W frames, softmax over the surviving band
/// (boundaries truncate; no padding keys). O(T*W) per joint and head.
template <typename T>
ad::Var<T> temporal_attention(const ForwardCtx<T>& ctx, const TemporalBlockRefs& refs, ad::Var<T> h,
                              int window, int heads) {
  ad::Tape<T>& tape = *ctx.tape;
  const auto shape = h.val().shape;  // [T,J,d]
  const int t_n = shape[0], j_n = shape[1], d = shape[2];
  if (d % heads != 0) throw std::invalid_argument("temporal_attention: d must divide into heads");
  const int dh = d / heads;
  const T inv_sqrt_dh = T(1) / std::sqrt(static_cast<T>(dh));

  auto x = ad::layernorm_last(h, ctx.p(refs.ln1_g), ctx.p(refs.ln1_b));
  auto qkv = ad::matmul(ad::reshape(x, {t_n * j_n, d}), ctx.p(refs.w_qkv), false, true);
  ad::Tensor<T> mask = ad::band_mask<T>(t_n, window);

  std::vector<ad::Var<T>> head_outputs;
  head_outputs.reserve(static_cast<std::size_t>(heads));
  for (int hh = 0; hh < heads; ++hh) {
    auto take = [&](int part) {
      auto s = ad::reshape(ad::slice(qkv, 1, part * d + hh * dh, dh), {t_n, j_n, dh});
      return ad::permute(s, {1, 0, 2});  // [J,T,dh]
    };
    auto q = take(0);
    auto k = take(1);
    auto v = take(2);
    auto tau = ad::softplus(ad::slice(ctx.p(refs.tau_raw), 0, hh, 1));
    auto logits = ad::div(ad::mul_scalar(ad::band_qk(q, k, window), inv_sqrt_dh), tau);
    auto alpha = ad::softmax_last(logits, &mask);
    detail::accumulate_entropy_stats(ctx.stats, alpha.val());
    alpha = detail::dropout(ctx, alpha);
    head_outputs.push_back(ad::permute(ad::band_av(alpha, v, window), {1, 0, 2}));
  }
  auto out = heads == 1 ? head_outputs[0] : ad::concat<T>(head_outputs, 2);
  h = ad::add(h, out);
  return detail::mlp_sublayer(ctx, h, refs.ln2_g, refs.ln2_b, refs.mlp_w1, refs.mlp_b1, refs.mlp_w2,
                              refs.mlp_b2);
}

}  // namespace lpose
