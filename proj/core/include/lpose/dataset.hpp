#pragma once

#include <string>
#include <vector>

#include "lpose/tensor.hpp"

namespace lpose {

/// One motion clip: inputs are normalized 2D keypoints plus detection
/// confidence (x, y, c) and targets are pelvis-centred 3D joints in
/// millimetres, both [T,J,3].
struct PoseSequence {
  ad::Tensor<float> inputs;
  ad::Tensor<float> targets;
};

/// A uniform-shape collection of sequences with binary (de)serialisation.
/// Wire format: magic "HPSE", u32 version, u32 dims (N,T,J,C_in=3,C_out=3),
/// fp32 little-endian payloads (all inputs, then all targets).
struct Dataset {
  std::vector<PoseSequence> sequences;
  int frames = 0;
  int joints = 0;

  static constexpr std::uint32_t kVersion = 1;

  void validate() const;
  void save(const std::string& path) const;
  static Dataset load(const std::string& path);

  static Dataset from_sequences(std::vector<PoseSequence> seqs);
};

}  // namespace lpose
