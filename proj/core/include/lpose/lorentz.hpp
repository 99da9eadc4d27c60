#pragma once

#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lpose::lorentz {

/// Numerical guard constants for the curvature -1 hyperboloid.
/// eps is the arccosh-argument clamp used on differentiable paths,
/// r_q bounds Q/K tangent norms before the lift, r_safety is the
/// secondary global bound on any tangent-space vector.
struct StabilityConfig {
  double eps = 1e-7;
  double r_q = 3.0;
  double r_safety = 15.0;
  double drift_tol_f64 = 1e-6;
  double drift_tol_f32 = 1e-4;

  template <typename T>
  T drift_tol() const {
    return static_cast<T>(sizeof(T) == 8 ? drift_tol_f64 : drift_tol_f32);
  }
};

inline const StabilityConfig& default_stability() {
  static StabilityConfig cfg;
  return cfg;
}

// ---------------------------------------------------------------------------
// Checked/unchecked mode. Checked mode validates manifold preconditions and
// throws std::domain_error / std::invalid_argument; unchecked mode skips the
// validation for throughput. Tests run checked; the training loop may not.
// ---------------------------------------------------------------------------

namespace detail {
inline std::atomic<bool>& checked_flag() {
#ifdef LPOSE_UNCHECKED_DEFAULT
  static std::atomic<bool> f{false};
#else
  static std::atomic<bool> f{true};
#endif
  return f;
}
}  // namespace detail

inline bool checked() { return detail::checked_flag().load(std::memory_order_relaxed); }
inline void set_checked(bool on) { detail::checked_flag().store(on, std::memory_order_relaxed); }

/// RAII toggle for the checked mode, restores the previous value.
struct CheckedGuard {
  bool prev;
  explicit CheckedGuard(bool on) : prev(checked()) { set_checked(on); }
  ~CheckedGuard() { set_checked(prev); }
};

// ---------------------------------------------------------------------------
// Origin-map call accounting. The tangent-flow contract is that exp_origin
// fires only inside spatial-attention Q/K lifts and log_origin only inside
// the input embedding; the per-site counters make that testable.
// ---------------------------------------------------------------------------

enum class MapSite : int { kEmbedding = 0, kAttentionLift = 1, kLoss = 2, kDiagnostic = 3, kOther = 4 };
inline constexpr int kNumMapSites = 5;

struct MapCallCounts {
  std::array<std::uint64_t, kNumMapSites> exp_origin{};
  std::array<std::uint64_t, kNumMapSites> log_origin{};

  std::uint64_t exp_total() const {
    std::uint64_t s = 0;
    for (auto v : exp_origin) s += v;
    return s;
  }
  std::uint64_t log_total() const {
    std::uint64_t s = 0;
    for (auto v : log_origin) s += v;
    return s;
  }
};

namespace detail {
inline MapCallCounts& counters() {
  thread_local MapCallCounts c;
  return c;
}
}  // namespace detail

inline const MapCallCounts& map_call_counts() { return detail::counters(); }
inline void reset_map_call_counts() { detail::counters() = MapCallCounts{}; }
inline void count_exp_origin(MapSite site) { ++detail::counters().exp_origin[static_cast<int>(site)]; }
inline void count_log_origin(MapSite site) { ++detail::counters().log_origin[static_cast<int>(site)]; }

// ---------------------------------------------------------------------------
// Primitives. All take (d+1)-vectors for points on H^d and d-vectors for
// tangent vectors at the origin (the zero time coordinate is implicit).
// ---------------------------------------------------------------------------

/// Lorentzian inner product <x,y> = -x0*y0 + sum_i xi*yi.
template <typename T>
T inner(std::span<const T> x, std::span<const T> y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("lorentz::inner: dimension mismatch");
  T s = -x[0] * y[0];
  for (std::size_t i = 1; i < x.size(); ++i) s += x[i] * y[i];
  return s;
}

template <typename T>
T sqnorm(std::span<const T> v) {
  T s = 0;
  for (T e : v) s += e * e;
  return s;
}

template <typename T>
T norm(std::span<const T> v) {
  return std::sqrt(sqnorm(v));
}

/// |<x,x> + 1| for a single point.
template <typename T>
T point_drift(std::span<const T> x) {
  return std::abs(inner(x, x) + T(1));
}

template <typename T>
void check_on_manifold(std::span<const T> x, const StabilityConfig& cfg = default_stability()) {
  if (!checked()) return;
  if (x[0] < T(1) - cfg.drift_tol<T>())
    throw std::domain_error("lorentz: point off the upper sheet (x0 < 1)");
  if (point_drift(x) > cfg.drift_tol<T>())
    throw std::domain_error("lorentz: point off-manifold beyond drift tolerance");
}

/// Geodesic distance arccosh(-<x,y>). The argument is clamped to >= 1
/// exactly (values below 1 arise only from rounding), so d(x,x) == 0.
template <typename T>
T geodesic_distance(std::span<const T> x, std::span<const T> y,
                    const StabilityConfig& cfg = default_stability()) {
  check_on_manifold(x, cfg);
  check_on_manifold(y, cfg);
  T a = -inner(x, y);
  if (a < T(1)) a = T(1);
  return std::acosh(a);
}

/// exp_o(v) = (cosh r, sinh(r)/r * v) with r = ||v||; second-order series
/// below r = 1e-6 to avoid 0/0.
template <typename T>
void exp_origin(std::span<const T> v, std::span<T> out, MapSite site = MapSite::kOther) {
  if (out.size() != v.size() + 1) throw std::invalid_argument("lorentz::exp_origin: output must be d+1");
  count_exp_origin(site);
  T r = norm(v);
  T scale;
  if (r < T(1e-6)) {
    out[0] = T(1) + r * r / T(2);
    scale = T(1) + r * r / T(6);
  } else {
    out[0] = std::cosh(r);
    scale = std::sinh(r) / r;
  }
  for (std::size_t i = 0; i < v.size(); ++i) out[i + 1] = scale * v[i];
}

/// log_o(y) = (arccosh(y0)/||y_s||) * y_s. On-manifold arccosh(y0) equals
/// asinh(||y_s||), which stays well-conditioned near the origin, so the
/// spatial norm drives the evaluation; second-order series below 1e-6.
template <typename T>
void log_origin(std::span<const T> y, std::span<T> out, MapSite site = MapSite::kOther,
                const StabilityConfig& cfg = default_stability()) {
  if (out.size() + 1 != y.size()) throw std::invalid_argument("lorentz::log_origin: output must be d");
  if (y[0] < T(1) - cfg.drift_tol<T>()) throw std::domain_error("lorentz::log_origin: y0 < 1");
  check_on_manifold(y, cfg);
  count_log_origin(site);
  auto ys = y.subspan(1);
  T s = norm(ys);
  T scale = (s < T(1e-6)) ? T(1) - s * s / T(6) : std::asinh(s) / s;
  for (std::size_t i = 0; i < ys.size(); ++i) out[i] = scale * ys[i];
}

/// pi(phi) = (sqrt(1 + ||phi||^2), phi); exactly on-manifold in exact
/// arithmetic.
template <typename T>
void project_hyperboloid(std::span<const T> phi, std::span<T> out) {
  if (out.size() != phi.size() + 1) throw std::invalid_argument("lorentz::project: output must be d+1");
  out[0] = std::sqrt(T(1) + sqnorm(phi));
  for (std::size_t i = 0; i < phi.size(); ++i) out[i + 1] = phi[i];
}

/// Parallel transport of v from T_x to T_y:
/// PT(v) = v + <y,v>/(1 - <x,y>) * (x + y). Linear isometry; preserves
/// Lorentz inner products and maps tangents at x to tangents at y.
template <typename T>
void parallel_transport(std::span<const T> x, std::span<const T> y, std::span<const T> v,
                        std::span<T> out, const StabilityConfig& cfg = default_stability()) {
  if (x.size() != y.size() || x.size() != v.size() || out.size() != v.size())
    throw std::invalid_argument("lorentz::parallel_transport: dimension mismatch");
  check_on_manifold(x, cfg);
  check_on_manifold(y, cfg);
  if (checked()) {
    T tangency = std::abs(inner(x, v));
    T vmag = std::sqrt(std::abs(inner(v, v))) + T(1);
    if (tangency > T(100) * cfg.drift_tol<T>() * vmag)
      throw std::domain_error("lorentz::parallel_transport: v not tangent at x");
  }
  T denom = T(1) - inner(x, y);
  if (std::abs(denom) < T(1e-12))
    throw std::domain_error("lorentz::parallel_transport: degenerate x,y pair");
  T c = inner(y, v) / denom;
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] + c * (x[i] + y[i]);
}

/// v unchanged if ||v|| <= r, else rescaled to norm exactly r.
template <typename T>
void clip_tangent_norm(std::span<const T> v, T r, std::span<T> out) {
  if (r <= T(0)) throw std::invalid_argument("lorentz::clip_tangent_norm: r must be positive");
  if (out.size() != v.size()) throw std::invalid_argument("lorentz::clip_tangent_norm: size mismatch");
  T n = norm(v);
  T scale = (n > r) ? r / n : T(1);
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = scale * v[i];
}

/// Mean |<x,x> + 1| over a batch of points stored row-major as [n, d+1].
/// Diagnostic only; never feeds gradients.
template <typename T>
T manifold_drift(std::span<const T> points, std::size_t point_dim) {
  if (point_dim < 2 || points.size() % point_dim != 0)
    throw std::invalid_argument("lorentz::manifold_drift: bad layout");
  std::size_t n = points.size() / point_dim;
  if (n == 0) return T(0);
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += point_drift(points.subspan(i * point_dim, point_dim));
  return acc / static_cast<T>(n);
}

/// ||a_i - b_j||^2 for rows of A [n,d] and B [m,d] via the expanded form
/// ||a||^2 + ||b||^2 - 2<a,b>, clamped at zero; O(nd + md + nm*d) work,
/// no [n,m,d] difference tensor.
template <typename T>
void pairwise_sqdist_expanded(std::span<const T> a, std::size_t n, std::span<const T> b,
                              std::size_t m, std::size_t d, std::span<T> out) {
  if (a.size() != n * d || b.size() != m * d || out.size() != n * m)
    throw std::invalid_argument("lorentz::pairwise_sqdist_expanded: size mismatch");
  std::vector<T> an(n), bn(m);
  for (std::size_t i = 0; i < n; ++i) an[i] = sqnorm(a.subspan(i * d, d));
  for (std::size_t j = 0; j < m; ++j) bn[j] = sqnorm(b.subspan(j * d, d));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      T dot = 0;
      for (std::size_t k = 0; k < d; ++k) dot += a[i * d + k] * b[j * d + k];
      T v = an[i] + bn[j] - T(2) * dot;
      out[i * m + j] = v < T(0) ? T(0) : v;
    }
  }
}

}  // namespace lpose::lorentz
