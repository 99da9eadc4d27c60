#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lpose/dataset.hpp"
#include "lpose/skeleton.hpp"

namespace lpose {

/// Synthetic kinematic-tree motion: joint angles animate a fixed-bone-length
/// skeleton via forward kinematics, 2D inputs are the exact orthographic
/// projection of the absolute 3D joints (normalized by camera_extent), and
/// targets are pelvis-centred millimetre coordinates. Confidence is 1 except
/// inside optional occlusion episodes. Fully deterministic given the seed.
struct SyntheticSpec {
  std::string generator = "gait-sine";  // gait-sine | random-smooth-spline
  int sequences = 8;
  int frames = 27;
  std::uint64_t seed = 1;
  int period = 16;           // frames per gait cycle (gait-sine)
  double amplitude = 0.35;   // joint-angle swing, radians
  double occlusion_prob = 0.0;
  double noise_std = 0.0;    // optional 2D projection noise, off by default
  double camera_extent = 1200.0;  // mm mapped to [-1, 1]
  std::string skeleton = "preset17";
};

std::vector<PoseSequence> synthesize(const SyntheticSpec& spec, const Skeleton& skeleton);

std::string synthetic_spec_to_json(const SyntheticSpec& spec);
SyntheticSpec synthetic_spec_from_json(const std::string& text);

/// Manifest written next to the dataset binary: the spec, the seed and the
/// full skeleton document.
void write_manifest(const std::string& path, const SyntheticSpec& spec, const Skeleton& skeleton);

}  // namespace lpose
