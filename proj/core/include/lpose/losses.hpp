#pragma once

#include <algorithm>
#include <stdexcept>
#include <vector>

#include "lpose/skeleton.hpp"
#include "lpose/tape.hpp"

namespace lpose {

/// Scale applied to millimetre coordinates before the hyperboloid lift; keeps
/// lifted points in the well-conditioned ||phi|| <~ 1 regime.
inline constexpr double kDefaultLiftScale = 1e-3;

/// Epoch ramp for the Riemannian loss terms: 0 through epoch `zero_until`,
/// 1 from epoch `full_from`, linear in between.
struct CurriculumSchedule {
  int zero_until = 9;
  int full_from = 20;

  double weight(int epoch) const {
    if (epoch < 0) throw std::invalid_argument("curriculum: negative epoch");
    if (full_from <= zero_until) throw std::invalid_argument("curriculum: full_from must exceed zero_until");
    double w = static_cast<double>(epoch - zero_until) / static_cast<double>(full_from - zero_until);
    return std::clamp(w, 0.0, 1.0);
  }
};

/// Mean Euclidean per-joint error (the anchor loss, in input units).
template <typename T>
ad::Var<T> loss_mpjpe(const ad::Var<T>& pred, const ad::Var<T>& gt) {
  if (pred.val().shape != gt.val().shape)
    throw std::invalid_argument("loss_mpjpe: shape mismatch");
  auto diff = ad::sub(pred, gt);
  return ad::mean_all(ad::sqrt(ad::sum_axis(ad::mul(diff, diff), -1)));
}

/// pi(scale * y) per row: [.., 3] -> [.., 4] points on the hyperboloid.
template <typename T>
ad::Var<T> lift_to_hyperboloid(const ad::Var<T>& y, T scale) {
  return ad::hyperboloid_project(scale == T(1) ? y : ad::mul_scalar(y, scale));
}

namespace detail {

/// Geodesic distances between consecutive-frame lifted joints: [T,J,3] ->
/// [(T-1)*J] distances.
template <typename T>
ad::Var<T> consecutive_geodesics(const ad::Var<T>& points, T scale, T eps) {
  const std::vector<int> shape = points.val().shape;
  const int t_n = shape[0], j_n = shape[1];
  auto lifted = lift_to_hyperboloid(points, scale);  // [T,J,4]
  auto a = ad::reshape(ad::slice(lifted, 0, 0, t_n - 1), {(t_n - 1) * j_n, 4});
  auto b = ad::reshape(ad::slice(lifted, 0, 1, t_n - 1), {(t_n - 1) * j_n, 4});
  return ad::acosh_clamped(ad::neg(ad::row_lorentz_inner(a, b)), eps);
}

/// Geodesic bone lengths on lifted joints: [T,J,3] -> [T*E] distances.
template <typename T>
ad::Var<T> bone_geodesics(const ad::Var<T>& points, const Skeleton& skeleton, T scale, T eps) {
  const std::vector<int> shape = points.val().shape;
  const int t_n = shape[0];
  std::vector<int> children, parents;
  for (const auto& [c, p] : skeleton.bones) {
    children.push_back(c);
    parents.push_back(p);
  }
  const int e_n = static_cast<int>(children.size());
  auto lifted = lift_to_hyperboloid(points, scale);
  auto a = ad::reshape(ad::index_select(lifted, 1, children), {t_n * e_n, 4});
  auto b = ad::reshape(ad::index_select(lifted, 1, parents), {t_n * e_n, 4});
  return ad::acosh_clamped(ad::neg(ad::row_lorentz_inner(a, b)), eps);
}

}  // namespace detail

/// Geodesic velocity consistency: mean |d_L(pred_t, pred_t+1) -
/// d_L(gt_t, gt_t+1)| over joints and consecutive frames of the lifted
/// sequences. Zero iff every per-joint geodesic displacement matches.
template <typename T>
ad::Var<T> loss_velocity(const ad::Var<T>& pred, const ad::Var<T>& gt,
                         T scale = static_cast<T>(kDefaultLiftScale), T eps = T(1e-7)) {
  if (pred.val().shape != gt.val().shape)
    throw std::invalid_argument("loss_velocity: shape mismatch");
  if (pred.val().rank() != 3 || pred.val().shape[0] < 2)
    throw std::invalid_argument("loss_velocity: at least two frames required");
  auto dp = detail::consecutive_geodesics(pred, scale, eps);
  auto dg = detail::consecutive_geodesics(gt, scale, eps);
  return ad::mean_all(ad::abs(ad::sub(dp, dg)));
}

/// Geodesic bone-length consistency over the kinematic tree edges.
template <typename T>
ad::Var<T> loss_bone(const ad::Var<T>& pred, const ad::Var<T>& gt, const Skeleton& skeleton,
                     T scale = static_cast<T>(kDefaultLiftScale), T eps = T(1e-7)) {
  if (pred.val().shape != gt.val().shape) throw std::invalid_argument("loss_bone: shape mismatch");
  if (pred.val().rank() != 3 || pred.val().shape[1] != skeleton.joint_count())
    throw std::invalid_argument("loss_bone: joint count does not match skeleton");
  auto dp = detail::bone_geodesics(pred, skeleton, scale, eps);
  auto dg = detail::bone_geodesics(gt, skeleton, scale, eps);
  return ad::mean_all(ad::abs(ad::sub(dp, dg)));
}

template <typename T>
struct LossTerms {
  ad::Var<T> total;
  ad::Var<T> mpjpe;
  ad::Var<T> velocity;
  ad::Var<T> bone;
};

/// Homoscedastic uncertainty combination with the epoch curriculum:
/// L_mpjpe/(2 s_m^2) + w(e) * sum_k L_k/(2 s_k^2) + 1/2 sum_k log s_k^2,
/// with s_k^2 = exp(log_sigma_sq[k]) in the order (mpjpe, velocity, bone).
template <typename T>
ad::Var<T> total_loss(const ad::Var<T>& mpjpe, const ad::Var<T>& velocity, const ad::Var<T>& bone,
                      const ad::Var<T>& log_sigma_sq, double omega) {
  if (log_sigma_sq.val().numel() != 3)
    throw std::invalid_argument("total_loss: log_sigma_sq must hold 3 scalars");
  auto weighted = [&](const ad::Var<T>& term, int k, double w) {
    auto inv_var = ad::exp(ad::neg(ad::slice(log_sigma_sq, 0, k, 1)));
    return ad::mul_scalar(ad::mul(term, inv_var), static_cast<T>(0.5 * w));
  };
  auto out = weighted(mpjpe, 0, 1.0);
  out = ad::add(out, weighted(velocity, 1, omega));
  out = ad::add(out, weighted(bone, 2, omega));
  return ad::add(out, ad::mul_scalar(ad::sum_all(log_sigma_sq), T(0.5)));
}

}  // namespace lpose
