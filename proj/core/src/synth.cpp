#include "lpose/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <stdexcept>

#include <json.hpp>

namespace lpose {

namespace {

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<double, 9>;

Mat3 identity3() { return {1, 0, 0, 0, 1, 0, 0, 0, 1}; }

Mat3 matmul3(const Mat3& a, const Mat3& b) {
  Mat3 c{};
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k)
      for (int j = 0; j < 3; ++j) c[i * 3 + j] += a[i * 3 + k] * b[k * 3 + j];
  return c;
}

Vec3 apply3(const Mat3& m, const Vec3& v) {
  Vec3 out{};
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) out[static_cast<std::size_t>(i)] += m[i * 3 + k] * v[static_cast<std::size_t>(k)];
  return out;
}

Mat3 axis_angle(const Vec3& axis, double angle) {
  double c = std::cos(angle), s = std::sin(angle), ic = 1 - c;
  double x = axis[0], y = axis[1], z = axis[2];
  return {c + x * x * ic,     x * y * ic - z * s, x * z * ic + y * s,
          y * x * ic + z * s, c + y * y * ic,     y * z * ic - x * s,
          z * x * ic - y * s, z * y * ic + x * s, c + z * z * ic};
}

/// Bilaterally symmetric bone offsets (mm) for the 17-joint preset; custom
/// skeletons get seeded random offsets instead.
std::vector<Vec3> bone_offsets(const Skeleton& skeleton, std::mt19937_64& rng) {
  const int j = skeleton.joint_count();
  std::vector<Vec3> offsets(static_cast<std::size_t>(j), Vec3{0, 0, 0});
  if (j == 17 && skeleton.joint_names[0] == "pelvis") {
    offsets[1] = {-130, 0, -40};   // r_hip
    offsets[2] = {0, 0, -430};     // r_knee
    offsets[3] = {0, 0, -440};     // r_ankle
    offsets[4] = {130, 0, -40};    // l_hip
    offsets[5] = {0, 0, -430};     // l_knee
    offsets[6] = {0, 0, -440};     // l_ankle
    offsets[7] = {0, 0, 240};      // spine
    offsets[8] = {0, 0, 250};      // thorax
    offsets[9] = {0, 0, 110};      // neck
    offsets[10] = {0, 0, 120};     // head
    offsets[11] = {170, 0, -20};   // l_shoulder
    offsets[12] = {280, 0, 0};     // l_elbow
    offsets[13] = {250, 0, 0};     // l_wrist
    offsets[14] = {-170, 0, -20};  // r_shoulder
    offsets[15] = {-280, 0, 0};    // r_elbow
    offsets[16] = {-250, 0, 0};    // r_wrist
    return offsets;
  }
  std::uniform_real_distribution<double> len(120.0, 350.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int i = 0; i < j; ++i) {
    if (skeleton.parents[static_cast<std::size_t>(i)] < 0) continue;
    Vec3 dir = {gauss(rng), gauss(rng), gauss(rng)};
    double n = std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]) + 1e-12;
    double l = len(rng);
    offsets[static_cast<std::size_t>(i)] = {dir[0] / n * l, dir[1] / n * l, dir[2] / n * l};
  }
  return offsets;
}

Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Vec3 v = {gauss(rng), gauss(rng), gauss(rng)};
  double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]) + 1e-12;
  return {v[0] / n, v[1] / n, v[2] / n};
}

/// Catmull-Rom interpolation through seeded control points, one control every
/// `stride` frames, clamped ends.
struct SmoothSpline {
  std::vector<double> controls;
  int stride = 8;

  double at(int frame) const {
    double u = static_cast<double>(frame) / stride;
    int seg = static_cast<int>(std::floor(u));
    double t = u - seg;
    auto ctrl = [&](int i) {
      int idx = std::clamp(i, 0, static_cast<int>(controls.size()) - 1);
      return controls[static_cast<std::size_t>(idx)];
    };
    double p0 = ctrl(seg - 1), p1 = ctrl(seg), p2 = ctrl(seg + 1), p3 = ctrl(seg + 2);
    return 0.5 * ((2 * p1) + (-p0 + p2) * t + (2 * p0 - 5 * p1 + 4 * p2 - p3) * t * t +
                  (-p0 + 3 * p1 - 3 * p2 + p3) * t * t * t);
  }
};

/// Per-joint angle track: sinusoid for gait-sine, spline for
/// random-smooth-spline.
struct AngleTrack {
  bool sine = true;
  double amplitude = 0, phase = 0, mean = 0;
  double omega = 0;
  SmoothSpline spline;

  double at(int frame) const {
    if (sine) return mean + amplitude * std::sin(omega * frame + phase);
    return mean + spline.at(frame);
  }
};

}  // namespace

std::vector<PoseSequence> synthesize(const SyntheticSpec& spec, const Skeleton& skeleton) {
  if (spec.sequences < 1 || spec.frames < 1) throw std::invalid_argument("synth: empty spec");
  if (spec.period < 2) throw std::invalid_argument("synth: period must be >= 2");
  if (spec.generator != "gait-sine" && spec.generator != "random-smooth-spline")
    throw std::invalid_argument("synth: unknown generator '" + spec.generator + "'");
  const bool sine = spec.generator == "gait-sine";
  const int j = skeleton.joint_count();
  const int t_n = spec.frames;
  const double omega = 2.0 * std::numbers::pi / spec.period;

  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> uphase(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> uamp(0.3, 1.0);
  std::uniform_real_distribution<double> umean(-0.2, 0.2);
  std::uniform_real_distribution<double> uctrl(-1.0, 1.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  // joint ordering guaranteeing parents are processed first
  std::vector<int> order;
  {
    std::vector<int> depth(static_cast<std::size_t>(j), 0);
    for (int i = 0; i < j; ++i) {
      int cur = i, d = 0;
      while (skeleton.parents[static_cast<std::size_t>(cur)] >= 0) {
        cur = skeleton.parents[static_cast<std::size_t>(cur)];
        ++d;
      }
      depth[static_cast<std::size_t>(i)] = d;
    }
    for (int d = 0; d < j; ++d)
      for (int i = 0; i < j; ++i)
        if (depth[static_cast<std::size_t>(i)] == d) order.push_back(i);
  }

  std::vector<PoseSequence> out;
  out.reserve(static_cast<std::size_t>(spec.sequences));
  for (int s = 0; s < spec.sequences; ++s) {
    auto offsets = bone_offsets(skeleton, rng);
    std::vector<Vec3> axes(static_cast<std::size_t>(j));
    std::vector<AngleTrack> tracks(static_cast<std::size_t>(j));
    for (int i = 0; i < j; ++i) {
      axes[static_cast<std::size_t>(i)] = random_unit(rng);
      AngleTrack& tr = tracks[static_cast<std::size_t>(i)];
      tr.sine = sine;
      tr.mean = umean(rng);
      if (sine) {
        tr.amplitude = spec.amplitude * uamp(rng);
        tr.phase = uphase(rng);
        tr.omega = omega;
      } else {
        tr.spline.stride = std::max(4, spec.period / 2);
        int controls = t_n / tr.spline.stride + 3;
        tr.spline.controls.resize(static_cast<std::size_t>(controls));
        for (auto& c : tr.spline.controls) c = spec.amplitude * uctrl(rng);
      }
    }
    // root translation: small periodic sway/bob on the base harmonics
    Vec3 sway_amp = {30 * uamp(rng), 15 * uamp(rng), 20 * uamp(rng)};
    Vec3 sway_phase = {uphase(rng), uphase(rng), uphase(rng)};

    // occlusion episodes: confidence dips toward zero and recovers
    std::vector<std::array<int, 2>> occl(static_cast<std::size_t>(j), {-1, -1});
    for (int i = 0; i < j; ++i)
      if (spec.occlusion_prob > 0 && u01(rng) < spec.occlusion_prob) {
        int len = 3 + static_cast<int>(u01(rng) * std::max(1, t_n / 3));
        int start = static_cast<int>(u01(rng) * std::max(1, t_n - len));
        occl[static_cast<std::size_t>(i)] = {start, len};
      }

    PoseSequence seq;
    seq.inputs = ad::Tensor<float>({t_n, j, 3});
    seq.targets = ad::Tensor<float>({t_n, j, 3});
    for (int t = 0; t < t_n; ++t) {
      std::vector<Vec3> pos(static_cast<std::size_t>(j));
      std::vector<Mat3> acc(static_cast<std::size_t>(j));
      for (int idx : order) {
        double angle = tracks[static_cast<std::size_t>(idx)].at(t);
        Mat3 local = axis_angle(axes[static_cast<std::size_t>(idx)], angle);
        int parent = skeleton.parents[static_cast<std::size_t>(idx)];
        if (parent < 0) {
          pos[static_cast<std::size_t>(idx)] = {
              sway_amp[0] * std::sin(omega * t + sway_phase[0]),
              sway_amp[1] * std::sin(2 * omega * t + sway_phase[1]),
              sway_amp[2] * std::sin(omega * t + sway_phase[2])};
          acc[static_cast<std::size_t>(idx)] = local;
        } else {
          const Mat3& pacc = acc[static_cast<std::size_t>(parent)];
          Vec3 limb = apply3(pacc, offsets[static_cast<std::size_t>(idx)]);
          const Vec3& ppos = pos[static_cast<std::size_t>(parent)];
          pos[static_cast<std::size_t>(idx)] = {ppos[0] + limb[0], ppos[1] + limb[1], ppos[2] + limb[2]};
          acc[static_cast<std::size_t>(idx)] = matmul3(pacc, local);
        }
      }
      const Vec3 root = pos[static_cast<std::size_t>(skeleton.root)];
      for (int i = 0; i < j; ++i) {
        const Vec3& p = pos[static_cast<std::size_t>(i)];
        double u = p[0] / spec.camera_extent;
        double v = p[2] / spec.camera_extent;
        if (spec.noise_std > 0) {
          u += spec.noise_std * gauss(rng);
          v += spec.noise_std * gauss(rng);
        }
        double conf = 1.0;
        const auto& ep = occl[static_cast<std::size_t>(i)];
        if (ep[0] >= 0 && t >= ep[0] && t < ep[0] + ep[1]) {
          double mid = ep[0] + 0.5 * ep[1];
          double frac = 1.0 - std::abs(t - mid) / (0.5 * ep[1]);
          conf = std::max(0.05, 1.0 - 0.95 * frac);
        }
        std::size_t base = static_cast<std::size_t>((t * j + i) * 3);
        seq.inputs.data[base] = static_cast<float>(u);
        seq.inputs.data[base + 1] = static_cast<float>(v);
        seq.inputs.data[base + 2] = static_cast<float>(conf);
        seq.targets.data[base] = static_cast<float>(p[0] - root[0]);
        seq.targets.data[base + 1] = static_cast<float>(p[1] - root[1]);
        seq.targets.data[base + 2] = static_cast<float>(p[2] - root[2]);
      }
    }
    out.push_back(std::move(seq));
  }
  return out;
}

std::string synthetic_spec_to_json(const SyntheticSpec& spec) {
  nlohmann::json doc;
  doc["generator"] = spec.generator;
  doc["sequences"] = spec.sequences;
  doc["frames"] = spec.frames;
  doc["seed"] = spec.seed;
  doc["period"] = spec.period;
  doc["amplitude"] = spec.amplitude;
  doc["occlusion_prob"] = spec.occlusion_prob;
  doc["noise_std"] = spec.noise_std;
  doc["camera_extent"] = spec.camera_extent;
  doc["skeleton"] = spec.skeleton;
  return doc.dump(2);
}

SyntheticSpec synthetic_spec_from_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("synthetic spec: invalid JSON: ") + e.what());
  }
  SyntheticSpec spec;
  if (doc.contains("generator")) spec.generator = doc["generator"].get<std::string>();
  if (doc.contains("sequences")) spec.sequences = doc["sequences"].get<int>();
  if (doc.contains("frames")) spec.frames = doc["frames"].get<int>();
  if (doc.contains("seed")) spec.seed = doc["seed"].get<std::uint64_t>();
  if (doc.contains("period")) spec.period = doc["period"].get<int>();
  if (doc.contains("amplitude")) spec.amplitude = doc["amplitude"].get<double>();
  if (doc.contains("occlusion_prob")) spec.occlusion_prob = doc["occlusion_prob"].get<double>();
  if (doc.contains("noise_std")) spec.noise_std = doc["noise_std"].get<double>();
  if (doc.contains("camera_extent")) spec.camera_extent = doc["camera_extent"].get<double>();
  if (doc.contains("skeleton")) spec.skeleton = doc["skeleton"].get<std::string>();
  return spec;
}

void write_manifest(const std::string& path, const SyntheticSpec& spec, const Skeleton& skeleton) {
  nlohmann::json doc;
  doc["spec"] = nlohmann::json::parse(synthetic_spec_to_json(spec));
  doc["seed"] = spec.seed;
  doc["skeleton"] = nlohmann::json::parse(skeleton.to_json());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("manifest: cannot open " + path + " for writing");
  out << doc.dump(2) << "\n";
}

}  // namespace lpose
