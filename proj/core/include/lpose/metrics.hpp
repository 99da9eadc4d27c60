#pragma once

#include <array>
#include <string>
#include <vector>

#include "lpose/skeleton.hpp"
#include "lpose/tensor.hpp"

namespace lpose::metrics {

/// Tag stamped on every report so downstream comparisons cannot silently mix
/// diagnostic definitions. Definitions: distortion = mean over frames of the
/// max/min spread of (lifted-embedding geodesic distance / tree hop distance)
/// over joint pairs; MAP = mean average precision of retrieving same-joint
/// embeddings across frames by geodesic nearest neighbour; entropy = mean
/// natural-log Shannon entropy of attention rows.
inline constexpr const char* kDiagnosticsDefinitionId = "local-v1";

struct ProcrustesResult {
  std::array<double, 9> rotation{1, 0, 0, 0, 1, 0, 0, 0, 1};  // row-major
  double scale = 1.0;
  std::array<double, 3> translation{};
  bool degenerate = false;
};

/// Least-squares similarity fit gt ~ scale * R * pred + t over n point pairs
/// (row-major [n,3] buffers). The rotation is proper (det +1); reflections are
/// excluded by sign-correcting the smallest singular direction. All-coincident
/// clouds are flagged degenerate and yield the identity transform.
ProcrustesResult procrustes_fit(const double* pred, const double* gt, int n);

double mpjpe(const ad::Tensor<double>& pred, const ad::Tensor<double>& gt);
/// MPJPE after per-frame similarity (Procrustes) alignment of pred onto gt.
double p_mpjpe(const ad::Tensor<double>& pred, const ad::Tensor<double>& gt,
               bool* any_degenerate = nullptr);
/// MPJPE after the per-frame optimal global scale s* = <pred,gt>/<pred,pred>.
double n_mpjpe(const ad::Tensor<double>& pred, const ad::Tensor<double>& gt,
               bool* any_degenerate = nullptr);
/// Mean norm of the first temporal difference error (T >= 2).
double mpjve(const ad::Tensor<double>& pred, const ad::Tensor<double>& gt);
/// Mean norm of the second temporal difference error (T >= 3).
double accel_error(const ad::Tensor<double>& pred, const ad::Tensor<double>& gt);
/// Mean absolute Euclidean bone-length deviation over frames and bones.
double blc(const ad::Tensor<double>& pred, const ad::Tensor<double>& gt, const Skeleton& skeleton);

/// Diagnostics under kDiagnosticsDefinitionId (see above); embeddings are
/// origin-tangent vectors of shape [T,J,d].
double distortion_ratio(const ad::Tensor<double>& embeddings, const Skeleton& skeleton);
double map_retrieval(const ad::Tensor<double>& embeddings);

struct SequenceMetrics {
  std::string name;
  double mpjpe = 0, p_mpjpe = 0, n_mpjpe = 0;
  double mpjve = 0, accel = 0, blc = 0;
  double distortion = 0, map = 0, entropy = 0;
};

/// Per-sequence rows plus the AVG row (plain mean of the rows), mirroring the
/// per-sequence result tables.
struct EvalReport {
  std::vector<SequenceMetrics> rows;
  SequenceMetrics average() const;
  std::string to_csv() const;
};

}  // namespace lpose::metrics
