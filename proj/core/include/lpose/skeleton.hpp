#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "lpose/tensor.hpp"

namespace lpose {

/// How the k-hop matrices entering the topology bias are built.
/// kHopDistance marks pairs at tree distance exactly k (disjoint hop
/// classes); kRawPower uses the literal k-th power of the adjacency matrix,
/// whose entries count walks. Diagonals are zero in both conventions.
enum class HopConvention { kHopDistance, kRawPower };

/// Kinematic tree: joint names, parent indices (root = -1), bone edge list
/// and the cached hop matrices A^1..A^3 used by the spatial attention bias.
/// Immutable after construction; safe to share across threads.
struct Skeleton {
  std::vector<std::string> joint_names;
  std::vector<int> parents;
  int root = 0;
  std::vector<std::pair<int, int>> bones;  // (child, parent)
  std::vector<int> mirror;                 // left/right counterpart per joint (identity if unset)
  std::array<ad::Tensor<double>, 3> adjacency_powers;
  HopConvention convention = HopConvention::kHopDistance;

  int joint_count() const { return static_cast<int>(parents.size()); }

  /// Validates tree-ness (single root, no cycles, indices in range) and
  /// caches bones + hop matrices. Throws std::runtime_error naming the
  /// offending joint on malformed input.
  static Skeleton from_parents(std::vector<std::string> names, std::vector<int> parents,
                               std::vector<int> mirror = {},
                               HopConvention convention = HopConvention::kHopDistance);

  /// Built-in 17-joint preset (pelvis-rooted, spine/arms/legs) with its
  /// left/right mirror map.
  static Skeleton preset17(HopConvention convention = HopConvention::kHopDistance);

  /// Parses the JSON document {"joints": [...], "parents": [...], "root": n,
  /// "mirror": [...]} (mirror optional).
  static Skeleton from_json(const std::string& text,
                            HopConvention convention = HopConvention::kHopDistance);
  static Skeleton load_file(const std::string& path,
                            HopConvention convention = HopConvention::kHopDistance);
  std::string to_json() const;

  /// All-pairs tree distances (BFS per joint).
  std::vector<std::vector<int>> hop_distances() const;

  /// Recomputes the hop matrices from scratch (test hook for the caching
  /// contract; the cached copies are built once at construction).
  std::array<ad::Tensor<double>, 3> compute_adjacency_powers() const;
};

/// s_topo[h] = sum_k gamma[h,k] * A^(k+1): [H,3] -> [H,J,J].
/// At the standard init (gamma[h] = {1,0,0}) this equals A^1 for every head.
ad::Tensor<double> hop_bias_logits(const Skeleton& skeleton, const ad::Tensor<double>& gamma);

}  // namespace lpose
