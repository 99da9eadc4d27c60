#pragma once

#include <cmath>
#include <stdexcept>

#include "lpose/lorentz.hpp"
#include "lpose/params.hpp"
#include "lpose/tape.hpp"
#include "lpose/tensor.hpp"

namespace lpose {

/// Parameter-store indices of the input embedding.
struct EmbeddingRefs {
  int w_pos = -1;   // [d,2]
  int w_vel = -1;   // [d,2]
  int alpha = -1;   // [1]
  int beta = -1;    // [1]
  int joint_id = -1;  // [J,d]
};

/// 1 + tanh(alpha*c + beta), strictly inside (0, 2).
template <typename T>
T confidence_gate(T c, T alpha, T beta) {
  return T(1) + std::tanh(alpha * c + beta);
}

/// Central finite differences of the (x, y) channels: interior frames use
/// (p[t+1] - p[t-1])/2, the boundaries fall back to one-sided differences,
/// and T = 1 sequences get zero velocity. The confidence channel is ignored.
template <typename T>
ad::Tensor<T> velocity_differences(const ad::Tensor<T>& inputs) {
  if (inputs.rank() != 3 || inputs.dim(-1) != 3)
    throw std::invalid_argument("velocity_differences: [T,J,3] input required");
  const int t_n = inputs.shape[0], j_n = inputs.shape[1];
  ad::Tensor<T> out({t_n * j_n, 2});
  if (t_n < 2) return out;
  auto at = [&](int t, int j, int c) {
    return inputs.data[static_cast<std::size_t>((t * j_n + j) * 3 + c)];
  };
  for (int t = 0; t < t_n; ++t)
    for (int j = 0; j < j_n; ++j)
      for (int c = 0; c < 2; ++c) {
        T v;
        if (t == 0)
          v = at(1, j, c) - at(0, j, c);
        else if (t == t_n - 1)
          v = at(t, j, c) - at(t - 1, j, c);
        else
          v = (at(t + 1, j, c) - at(t - 1, j, c)) / T(2);
        out.data[static_cast<std::size_t>((t * j_n + j) * 2 + c)] = v;
      }
  return out;
}

template <typename T>
struct EmbeddedSequence {
  ad::Var<T> hidden;    // [T,J,d] position stream (with joint identity)
  ad::Var<T> velocity;  // [T,J,d] velocity stream
};

/// Confidence-gated phase-space embedding of one [T,J,3] keypoint sequence
/// into origin-tangent space. The position branch runs through the
/// hyperboloid projection and log map; the velocity branch is a plain linear
/// map of the central differences.
template <typename T>
EmbeddedSequence<T> embed_sequence(ad::Tape<T>& tape, const std::vector<ad::Var<T>>& p,
                                   const EmbeddingRefs& refs, const ad::Tensor<T>& inputs,
                                   const lorentz::StabilityConfig& stability = lorentz::default_stability()) {
  if (inputs.rank() != 3 || inputs.dim(-1) != 3)
    throw std::invalid_argument("embed_sequence: [T,J,3] input required");
  const int t_n = inputs.shape[0], j_n = inputs.shape[1];
  const int d = p[static_cast<std::size_t>(refs.w_pos)].val().shape[0];

  ad::Tensor<T> xy({t_n * j_n, 2});
  ad::Tensor<T> conf({t_n * j_n});
  for (int r = 0; r < t_n * j_n; ++r) {
    xy.data[static_cast<std::size_t>(r * 2)] = inputs.data[static_cast<std::size_t>(r * 3)];
    xy.data[static_cast<std::size_t>(r * 2 + 1)] = inputs.data[static_cast<std::size_t>(r * 3 + 1)];
    conf.data[static_cast<std::size_t>(r)] = inputs.data[static_cast<std::size_t>(r * 3 + 2)];
  }

  auto xy_c = tape.constant(std::move(xy), "input.xy");
  auto conf_c = tape.constant(std::move(conf), "input.conf");

  // position branch: phi = gate * W_p (x,y)^T, then pi and log_o
  auto proj = ad::matmul(xy_c, p[static_cast<std::size_t>(refs.w_pos)], false, true);  // [TJ,d]
  auto gate = ad::add_scalar(
      ad::tanh(ad::add(ad::mul(conf_c, p[static_cast<std::size_t>(refs.alpha)]),
                       p[static_cast<std::size_t>(refs.beta)])),
      T(1));
  auto phi = ad::row_scale(proj, gate);
  auto h = ad::lorentz_logmap(ad::hyperboloid_project(phi), lorentz::MapSite::kEmbedding);
  h = ad::reshape(h, {t_n, j_n, d});
  h = ad::add(h, p[static_cast<std::size_t>(refs.joint_id)]);

  // velocity branch on the (x, y) channels only
  auto dv = tape.constant(velocity_differences<T>(inputs), "input.velocity");
  auto hv = ad::reshape(ad::matmul(dv, p[static_cast<std::size_t>(refs.w_vel)], false, true), {t_n, j_n, d});

  // secondary global bound on tangent norms
  const T r_safety = static_cast<T>(stability.r_safety);
  return {ad::row_norm_clip(h, r_safety), ad::row_norm_clip(hv, r_safety)};
}

}  // namespace lpose
