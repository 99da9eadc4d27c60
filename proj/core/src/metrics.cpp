#include "lpose/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

#include "lpose/lorentz.hpp"

namespace lpose::metrics {

namespace {

using Mat3 = std::array<double, 9>;
using Vec3 = std::array<double, 3>;

Mat3 matmul3(const Mat3& a, const Mat3& b) {
  Mat3 c{};
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k)
      for (int j = 0; j < 3; ++j) c[i * 3 + j] += a[i * 3 + k] * b[k * 3 + j];
  return c;
}

double det3(const Mat3& m) {
  return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
         m[2] * (m[3] * m[7] - m[4] * m[6]);
}

Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

double norm3(const Vec3& v) { return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]); }

/// Cyclic Jacobi eigendecomposition of a symmetric 3x3: S = V diag(e) V^T,
/// V column-major in the sense V[r*3+c] = c-th eigenvector's r-th entry.
void jacobi_eigen3(Mat3 s, Vec3& eigenvalues, Mat3& v) {
  v = {1, 0, 0, 0, 1, 0, 0, 0, 1};
  for (int sweep = 0; sweep < 32; ++sweep) {
    double off = std::abs(s[1]) + std::abs(s[2]) + std::abs(s[5]);
    if (off < 1e-15 * (std::abs(s[0]) + std::abs(s[4]) + std::abs(s[8]) + 1e-300)) break;
    for (int p = 0; p < 2; ++p)
      for (int q = p + 1; q < 3; ++q) {
        double apq = s[p * 3 + q];
        if (std::abs(apq) < 1e-300) continue;
        double app = s[p * 3 + p], aqq = s[q * 3 + q];
        double theta = (aqq - app) / (2 * apq);
        double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1));
        double c = 1 / std::sqrt(t * t + 1), sn = t * c;
        for (int k = 0; k < 3; ++k) {
          double skp = s[k * 3 + p], skq = s[k * 3 + q];
          s[k * 3 + p] = c * skp - sn * skq;
          s[k * 3 + q] = sn * skp + c * skq;
        }
        for (int k = 0; k < 3; ++k) {
          double spk = s[p * 3 + k], sqk = s[q * 3 + k];
          s[p * 3 + k] = c * spk - sn * sqk;
          s[q * 3 + k] = sn * spk + c * sqk;
        }
        for (int k = 0; k < 3; ++k) {
          double vkp = v[k * 3 + p], vkq = v[k * 3 + q];
          v[k * 3 + p] = c * vkp - sn * vkq;
          v[k * 3 + q] = sn * vkp + c * vkq;
        }
      }
  }
  eigenvalues = {s[0], s[4], s[8]};
}

void check_pose_pair(const ad::Tensor<double>& pred, const ad::Tensor<double>& gt, const char* who) {
  if (pred.rank() != 3 || pred.dim(-1) != 3 || pred.shape != gt.shape)
    throw std::invalid_argument(std::string(who) + ": matching [T,J,3] tensors required");
}

}  // namespace

ProcrustesResult procrustes_fit(const double* pred, const double* gt, int n) {
  ProcrustesResult res;
  if (n < 1) throw std::invalid_argument("procrustes_fit: empty point set");
  Vec3 mu_p{}, mu_g{};
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) {
      mu_p[static_cast<std::size_t>(c)] += pred[i * 3 + c] / n;
      mu_g[static_cast<std::size_t>(c)] += gt[i * 3 + c] / n;
    }
  // cross-covariance H = sum x y^T over centred pairs, and the spreads
  Mat3 h{};
  double sx = 0, sy = 0;
  for (int i = 0; i < n; ++i) {
    Vec3 x, y;
    for (int c = 0; c < 3; ++c) {
      x[static_cast<std::size_t>(c)] = pred[i * 3 + c] - mu_p[static_cast<std::size_t>(c)];
      y[static_cast<std::size_t>(c)] = gt[i * 3 + c] - mu_g[static_cast<std::size_t>(c)];
    }
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c)
        h[r * 3 + c] += x[static_cast<std::size_t>(r)] * y[static_cast<std::size_t>(c)];
    sx += x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
    sy += y[0] * y[0] + y[1] * y[1] + y[2] * y[2];
  }
  if (sx < 1e-12 || sy < 1e-12) {
    res.degenerate = true;
    return res;
  }

  // SVD H = U S V^T via Jacobi on H^T H, U recovered column by column
  Mat3 hth{};
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c)
      for (int k = 0; k < 3; ++k) hth[r * 3 + c] += h[k * 3 + r] * h[k * 3 + c];
  Vec3 eig;
  Mat3 v;
  jacobi_eigen3(hth, eig, v);
  std::array<int, 3> order = {0, 1, 2};
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return eig[static_cast<std::size_t>(a)] > eig[static_cast<std::size_t>(b)];
  });
  Mat3 vs;  // sorted eigenvectors as columns
  Vec3 sigma;
  for (int c = 0; c < 3; ++c) {
    int src = order[static_cast<std::size_t>(c)];
    sigma[static_cast<std::size_t>(c)] = std::sqrt(std::max(0.0, eig[static_cast<std::size_t>(src)]));
    for (int r = 0; r < 3; ++r) vs[r * 3 + c] = v[r * 3 + src];
  }

  Mat3 u{};
  const double tiny = 1e-9 * std::max(1.0, sigma[0]);
  int solid = 0;
  for (int c = 0; c < 3; ++c) {
    if (sigma[static_cast<std::size_t>(c)] > tiny) {
      for (int r = 0; r < 3; ++r) {
        double acc = 0;
        for (int k = 0; k < 3; ++k) acc += h[r * 3 + k] * vs[k * 3 + c];
        u[r * 3 + c] = acc / sigma[static_cast<std::size_t>(c)];
      }
      solid = c + 1;
    }
  }
  if (solid == 2) {
    Vec3 u0 = {u[0], u[3], u[6]}, u1 = {u[1], u[4], u[7]};
    Vec3 u2 = cross(u0, u1);
    double nn = norm3(u2);
    for (int r = 0; r < 3; ++r) u[r * 3 + 2] = u2[static_cast<std::size_t>(r)] / nn;
  } else if (solid < 2) {
    // rank-deficient beyond repair by one cross product: collinear clouds
    res.degenerate = true;
    return res;
  }

  // R = V D U^T with D absorbing the reflection into the smallest direction
  double sign = det3(u) * det3(vs) < 0 ? -1.0 : 1.0;
  Mat3 ut;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) ut[r * 3 + c] = u[c * 3 + r] * (r == 2 ? sign : 1.0);
  res.rotation = matmul3(vs, ut);
  res.scale = (sigma[0] + sigma[1] + sign * sigma[2]) / sx;
  for (int c = 0; c < 3; ++c) {
    double acc = 0;
    for (int k = 0; k < 3; ++k) acc += res.rotation[c * 3 + k] * mu_p[static_cast<std::size_t>(k)];
    res.translation[static_cast<std::size_t>(c)] = mu_g[static_cast<std::size_t>(c)] - res.scale * acc;
  }
  return res;
}

double mpjpe(const ad::Tensor<double>& pred, const ad::Tensor<double>& gt) {
  check_pose_pair(pred, gt, "mpjpe");
  double acc = 0;
  std::size_t rows = pred.numel() / 3;
  for (std::size_t r = 0; r < rows; ++r) {
    double d2 = 0;
    for (int c = 0; c < 3; ++c) {
      double d = pred.data[r * 3 + static_cast<std::size_t>(c)] - gt.data[r * 3 + static_cast<std::size_t>(c)];
      d2 += d * d;
    }
    acc += std::sqrt(d2);
  }
  return acc / static_cast<double>(rows);
}

double p_mpjpe(const ad::Tensor<double>& pred, const ad::Tensor<double>& gt, bool* any_degenerate) {
  check_pose_pair(pred, gt, "p_mpjpe");
  const int t_n = pred.shape[0], j_n = pred.shape[1];
  if (any_degenerate) *any_degenerate = false;
  double acc = 0;
  for (int t = 0; t < t_n; ++t) {
    const double* p = pred.data.data() + static_cast<std::size_t>(t) * j_n * 3;
    const double* g = gt.data.data() + static_cast<std::size_t>(t) * j_n * 3;
    auto fit = procrustes_fit(p, g, j_n);
    double frame = 0;
    if (fit.degenerate) {
      if (any_degenerate) *any_degenerate = true;
      for (int j = 0; j < j_n; ++j) {
        double d2 = 0;
        for (int c = 0; c < 3; ++c) {
          double d = p[j * 3 + c] - g[j * 3 + c];
          d2 += d * d;
        }
        frame += std::sqrt(d2);
      }
    } else {
      for (int j = 0; j < j_n; ++j) {
        double d2 = 0;
        for (int c = 0; c < 3; ++c) {
          double rx = 0;
          for (int k = 0; k < 3; ++k) rx += fit.rotation[c * 3 + k] * p[j * 3 + k];
          double d = fit.scale * rx + fit.translation[static_cast<std::size_t>(c)] - g[j * 3 + c];
          d2 += d * d;
        }
        frame += std::sqrt(d2);
      }
    }
    acc += frame / j_n;
  }
  return acc / t_n;
}

double n_mpjpe(const ad::Tensor<double>& pred, const ad::Tensor<double>& gt, bool* any_degenerate) {
  check_pose_pair(pred, gt, "n_mpjpe");
  const int t_n = pred.shape[0], j_n = pred.shape[1];
  if (any_degenerate) *any_degenerate = false;
  double acc = 0;
  for (int t = 0; t < t_n; ++t) {
    const double* p = pred.data.data() + static_cast<std::size_t>(t) * j_n * 3;
    const double* g = gt.data.data() + static_cast<std::size_t>(t) * j_n * 3;
    double pg = 0, pp = 0;
    for (int i = 0; i < j_n * 3; ++i) {
      pg += p[i] * g[i];
      pp += p[i] * p[i];
    }
    double s = 1.0;
    if (pp < 1e-12) {
      if (any_degenerate) *any_degenerate = true;
    } else {
      s = pg / pp;
    }
    double frame = 0;
    for (int j = 0; j < j_n; ++j) {
      double d2 = 0;
      for (int c = 0; c < 3; ++c) {
        double d = s * p[j * 3 + c] - g[j * 3 + c];
        d2 += d * d;
      }
      frame += std::sqrt(d2);
    }
    acc += frame / j_n;
  }
  return acc / t_n;
}

namespace {

double diff_error(const ad::Tensor<double>& pred, const ad::Tensor<double>& gt, int order,
                  const char* who) {
  check_pose_pair(pred, gt, who);
  const int t_n = pred.shape[0], j_n = pred.shape[1];
  if (t_n < order + 1)
    throw std::invalid_argument(std::string(who) + ": needs at least " + std::to_string(order + 1) +
                                " frames");
  auto at = [&](const ad::Tensor<double>& x, int t, int j, int c) {
    return x.data[static_cast<std::size_t>((t * j_n + j) * 3 + c)];
  };
  double acc = 0;
  int count = 0;
  for (int t = 0; t < t_n - order; ++t)
    for (int j = 0; j < j_n; ++j) {
      double d2 = 0;
      for (int c = 0; c < 3; ++c) {
        double dp, dg;
        if (order == 1) {
          dp = at(pred, t + 1, j, c) - at(pred, t, j, c);
          dg = at(gt, t + 1, j, c) - at(gt, t, j, c);
        } else {
          dp = at(pred, t + 2, j, c) - 2 * at(pred, t + 1, j, c) + at(pred, t, j, c);
          dg = at(gt, t + 2, j, c) - 2 * at(gt, t + 1, j, c) + at(gt, t, j, c);
        }
        d2 += (dp - dg) * (dp - dg);
      }
      acc += std::sqrt(d2);
      ++count;
    }
  return acc / count;
}

}  // namespace

double mpjve(const ad::Tensor<double>& pred, const ad::Tensor<double>& gt) {
  return diff_error(pred, gt, 1, "mpjve");
}

double accel_error(const ad::Tensor<double>& pred, const ad::Tensor<double>& gt) {
  return diff_error(pred, gt, 2, "accel_error");
}

double blc(const ad::Tensor<double>& pred, const ad::Tensor<double>& gt, const Skeleton& skeleton) {
  check_pose_pair(pred, gt, "blc");
  const int t_n = pred.shape[0], j_n = pred.shape[1];
  if (j_n != skeleton.joint_count()) throw std::invalid_argument("blc: joint count mismatch");
  double acc = 0;
  int count = 0;
  auto bone_len = [&](const ad::Tensor<double>& x, int t, int a, int b) {
    double d2 = 0;
    for (int c = 0; c < 3; ++c) {
      double d = x.data[static_cast<std::size_t>((t * j_n + a) * 3 + c)] -
                 x.data[static_cast<std::size_t>((t * j_n + b) * 3 + c)];
      d2 += d * d;
    }
    return std::sqrt(d2);
  };
  for (int t = 0; t < t_n; ++t)
    for (const auto& [child, parent] : skeleton.bones) {
      acc += std::abs(bone_len(pred, t, child, parent) - bone_len(gt, t, child, parent));
      ++count;
    }
  return acc / count;
}

namespace {

/// Lift a tangent row to the hyperboloid and return the Lorentz inner with
/// another lifted row; distances derive via arccosh(-inner).
std::vector<double> lift_rows(const ad::Tensor<double>& emb) {
  std::size_t d = static_cast<std::size_t>(emb.dim(-1));
  std::size_t rows = emb.numel() / d;
  std::vector<double> out(rows * (d + 1));
  for (std::size_t r = 0; r < rows; ++r)
    lorentz::exp_origin<double>(std::span<const double>(emb.data.data() + r * d, d),
                                std::span<double>(out.data() + r * (d + 1), d + 1),
                                lorentz::MapSite::kDiagnostic);
  return out;
}

double lifted_inner(const std::vector<double>& pts, std::size_t k, std::size_t a, std::size_t b) {
  const double* x = pts.data() + a * k;
  const double* y = pts.data() + b * k;
  double s = -x[0] * y[0];
  for (std::size_t i = 1; i < k; ++i) s += x[i] * y[i];
  return s;
}

}  // namespace

double distortion_ratio(const ad::Tensor<double>& embeddings, const Skeleton& skeleton) {
  if (embeddings.rank() != 3) throw std::invalid_argument("distortion_ratio: [T,J,d] embeddings required");
  const int t_n = embeddings.shape[0], j_n = embeddings.shape[1];
  if (j_n != skeleton.joint_count())
    throw std::invalid_argument("distortion_ratio: joint count mismatch");
  if (j_n < 2) throw std::invalid_argument("distortion_ratio: needs at least two joints");
  const std::size_t d = static_cast<std::size_t>(embeddings.dim(-1));
  auto hops = skeleton.hop_distances();
  auto lifted = lift_rows(embeddings);
  const std::size_t k = d + 1;
  double acc = 0;
  for (int t = 0; t < t_n; ++t) {
    double lo = std::numeric_limits<double>::infinity(), hi = 0;
    for (int a = 0; a < j_n; ++a)
      for (int b = a + 1; b < j_n; ++b) {
        std::size_t ra = static_cast<std::size_t>(t * j_n + a);
        std::size_t rb = static_cast<std::size_t>(t * j_n + b);
        double inner = lifted_inner(lifted, k, ra, rb);
        double dist = std::acosh(std::max(1.0, -inner));
        double ratio = dist / hops[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)];
        lo = std::min(lo, ratio);
        hi = std::max(hi, ratio);
      }
    acc += hi / std::max(lo, 1e-12);
  }
  return acc / t_n;
}

double map_retrieval(const ad::Tensor<double>& embeddings) {
  if (embeddings.rank() != 3) throw std::invalid_argument("map_retrieval: [T,J,d] embeddings required");
  const int t_n = embeddings.shape[0], j_n = embeddings.shape[1];
  if (t_n < 2) throw std::invalid_argument("map_retrieval: needs at least two frames");
  const std::size_t d = static_cast<std::size_t>(embeddings.dim(-1));
  auto lifted = lift_rows(embeddings);
  const std::size_t k = d + 1;
  double ap_sum = 0;
  std::size_t queries = 0;
  std::vector<std::pair<double, int>> ranked;  // (-inner is monotone in geodesic distance, index tiebreak)
  for (int qt = 0; qt < t_n; ++qt)
    for (int qj = 0; qj < j_n; ++qj) {
      std::size_t q = static_cast<std::size_t>(qt * j_n + qj);
      ranked.clear();
      for (int ct = 0; ct < t_n; ++ct) {
        if (ct == qt) continue;
        for (int cj = 0; cj < j_n; ++cj) {
          std::size_t c = static_cast<std::size_t>(ct * j_n + cj);
          ranked.emplace_back(-lifted_inner(lifted, k, q, c), static_cast<int>(c));
        }
      }
      std::stable_sort(ranked.begin(), ranked.end());
      int relevant_seen = 0;
      double ap = 0;
      const int relevant_total = t_n - 1;
      for (std::size_t rank = 0; rank < ranked.size(); ++rank) {
        int cj = ranked[rank].second % j_n;
        if (cj == qj) {
          ++relevant_seen;
          ap += static_cast<double>(relevant_seen) / static_cast<double>(rank + 1);
        }
      }
      ap_sum += ap / relevant_total;
      ++queries;
    }
  return 100.0 * ap_sum / static_cast<double>(queries);
}

SequenceMetrics EvalReport::average() const {
  SequenceMetrics avg;
  avg.name = "AVG";
  if (rows.empty()) return avg;
  for (const auto& r : rows) {
    avg.mpjpe += r.mpjpe;
    avg.p_mpjpe += r.p_mpjpe;
    avg.n_mpjpe += r.n_mpjpe;
    avg.mpjve += r.mpjve;
    avg.accel += r.accel;
    avg.blc += r.blc;
    avg.distortion += r.distortion;
    avg.map += r.map;
    avg.entropy += r.entropy;
  }
  const double n = static_cast<double>(rows.size());
  avg.mpjpe /= n;
  avg.p_mpjpe /= n;
  avg.n_mpjpe /= n;
  avg.mpjve /= n;
  avg.accel /= n;
  avg.blc /= n;
  avg.distortion /= n;
  avg.map /= n;
  avg.entropy /= n;
  return avg;
}

std::string EvalReport::to_csv() const {
  std::string out =
      "sequence,mpjpe,p_mpjpe,n_mpjpe,mpjve,accel,blc,distortion,map,entropy,definition_id\n";
  auto emit = [&](const SequenceMetrics& m) {
    char buf[512];
    std::snprintf(buf, sizeof(buf), "%s,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%s\n",
                  m.name.c_str(), m.mpjpe, m.p_mpjpe, m.n_mpjpe, m.mpjve, m.accel, m.blc, m.distortion,
                  m.map, m.entropy, kDiagnosticsDefinitionId);
    out += buf;
  };
  for (const auto& r : rows) emit(r);
  emit(average());
  return out;
}

}  // namespace lpose::metrics
