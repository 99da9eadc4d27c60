#include "lpose/skeleton.hpp"

#include <fstream>
#include <queue>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace lpose {

namespace {

std::string joint_label(const std::vector<std::string>& names, int i) {
  std::ostringstream os;
  os << "joint " << i;
  if (i >= 0 && i < static_cast<int>(names.size())) os << " ('" << names[static_cast<std::size_t>(i)] << "')";
  return os.str();
}

}  // namespace

Skeleton Skeleton::from_parents(std::vector<std::string> names, std::vector<int> parents,
                                std::vector<int> mirror, HopConvention convention) {
  const int j = static_cast<int>(parents.size());
  if (j == 0) throw std::runtime_error("skeleton: empty parent array");
  if (names.size() != parents.size()) throw std::runtime_error("skeleton: joint/parent count mismatch");

  Skeleton s;
  s.joint_names = std::move(names);
  s.parents = std::move(parents);
  s.convention = convention;

  int root = -1;
  for (int i = 0; i < j; ++i) {
    int p = s.parents[static_cast<std::size_t>(i)];
    if (p == -1) {
      if (root != -1)
        throw std::runtime_error("skeleton: multiple roots, second at " + joint_label(s.joint_names, i));
      root = i;
    } else if (p < 0 || p >= j) {
      throw std::runtime_error("skeleton: parent index out of range at " + joint_label(s.joint_names, i));
    } else if (p == i) {
      throw std::runtime_error("skeleton: self-parent cycle at " + joint_label(s.joint_names, i));
    }
  }
  if (root == -1) throw std::runtime_error("skeleton: no root (no joint with parent -1)");
  s.root = root;

  // every joint must chain to the root without revisiting itself
  for (int i = 0; i < j; ++i) {
    int cur = i;
    int steps = 0;
    while (cur != -1) {
      cur = s.parents[static_cast<std::size_t>(cur)];
      if (++steps > j)
        throw std::runtime_error("skeleton: cycle (disconnected from root) at " +
                                 joint_label(s.joint_names, i));
    }
  }

  for (int i = 0; i < j; ++i)
    if (i != root) s.bones.emplace_back(i, s.parents[static_cast<std::size_t>(i)]);

  if (mirror.empty()) {
    s.mirror.resize(static_cast<std::size_t>(j));
    for (int i = 0; i < j; ++i) s.mirror[static_cast<std::size_t>(i)] = i;
  } else {
    if (static_cast<int>(mirror.size()) != j) throw std::runtime_error("skeleton: mirror map size mismatch");
    for (int i = 0; i < j; ++i) {
      int m = mirror[static_cast<std::size_t>(i)];
      if (m < 0 || m >= j || mirror[static_cast<std::size_t>(m)] != i)
        throw std::runtime_error("skeleton: mirror map is not an involution at " +
                                 joint_label(s.joint_names, i));
    }
    s.mirror = std::move(mirror);
  }

  s.adjacency_powers = s.compute_adjacency_powers();
  return s;
}

std::vector<std::vector<int>> Skeleton::hop_distances() const {
  const int j = joint_count();
  std::vector<std::vector<int>> adj(static_cast<std::size_t>(j));
  for (const auto& [c, p] : bones) {
    adj[static_cast<std::size_t>(c)].push_back(p);
    adj[static_cast<std::size_t>(p)].push_back(c);
  }
  std::vector<std::vector<int>> dist(static_cast<std::size_t>(j),
                                     std::vector<int>(static_cast<std::size_t>(j), -1));
  for (int src = 0; src < j; ++src) {
    auto& d = dist[static_cast<std::size_t>(src)];
    d[static_cast<std::size_t>(src)] = 0;
    std::queue<int> q;
    q.push(src);
    while (!q.empty()) {
      int u = q.front();
      q.pop();
      for (int v : adj[static_cast<std::size_t>(u)])
        if (d[static_cast<std::size_t>(v)] < 0) {
          d[static_cast<std::size_t>(v)] = d[static_cast<std::size_t>(u)] + 1;
          q.push(v);
        }
    }
  }
  return dist;
}

std::array<ad::Tensor<double>, 3> Skeleton::compute_adjacency_powers() const {
  const int j = joint_count();
  std::array<ad::Tensor<double>, 3> powers;
  for (auto& p : powers) p = ad::Tensor<double>::zeros({j, j});

  if (convention == HopConvention::kHopDistance) {
    auto dist = hop_distances();
    for (int k = 1; k <= 3; ++k)
      for (int a = 0; a < j; ++a)
        for (int b = 0; b < j; ++b)
          if (dist[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] == k)
            powers[static_cast<std::size_t>(k - 1)].data[static_cast<std::size_t>(a * j + b)] = 1.0;
  } else {
    ad::Tensor<double> a1 = ad::Tensor<double>::zeros({j, j});
    for (const auto& [c, p] : bones) {
      a1.data[static_cast<std::size_t>(c * j + p)] = 1.0;
      a1.data[static_cast<std::size_t>(p * j + c)] = 1.0;
    }
    ad::Tensor<double> cur = a1;
    for (int k = 1; k <= 3; ++k) {
      if (k > 1) {
        ad::Tensor<double> next = ad::Tensor<double>::zeros({j, j});
        for (int r = 0; r < j; ++r)
          for (int m = 0; m < j; ++m) {
            double v = cur.data[static_cast<std::size_t>(r * j + m)];
            if (v == 0.0) continue;
            for (int c = 0; c < j; ++c)
              next.data[static_cast<std::size_t>(r * j + c)] +=
                  v * a1.data[static_cast<std::size_t>(m * j + c)];
          }
        cur = std::move(next);
      }
      powers[static_cast<std::size_t>(k - 1)] = cur;
      for (int r = 0; r < j; ++r)  // a joint is not its own neighbour
        powers[static_cast<std::size_t>(k - 1)].data[static_cast<std::size_t>(r * j + r)] = 0.0;
    }
  }
  return powers;
}

Skeleton Skeleton::preset17(HopConvention convention) {
  std::vector<std::string> names = {"pelvis",     "r_hip",   "r_knee",   "r_ankle", "l_hip",   "l_knee",
                                    "l_ankle",    "spine",   "thorax",   "neck",    "head",    "l_shoulder",
                                    "l_elbow",    "l_wrist", "r_shoulder", "r_elbow", "r_wrist"};
  std::vector<int> parents = {-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14, 15};
  std::vector<int> mirror = {0, 4, 5, 6, 1, 2, 3, 7, 8, 9, 10, 14, 15, 16, 11, 12, 13};
  return from_parents(std::move(names), std::move(parents), std::move(mirror), convention);
}

Skeleton Skeleton::from_json(const std::string& text, HopConvention convention) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("skeleton: invalid JSON: ") + e.what());
  }
  if (!doc.contains("joints") || !doc.contains("parents"))
    throw std::runtime_error("skeleton: document must contain 'joints' and 'parents'");
  std::vector<std::string> names = doc["joints"].get<std::vector<std::string>>();
  std::vector<int> parents = doc["parents"].get<std::vector<int>>();
  std::vector<int> mirror;
  if (doc.contains("mirror")) mirror = doc["mirror"].get<std::vector<int>>();
  Skeleton s = from_parents(std::move(names), std::move(parents), std::move(mirror), convention);
  if (doc.contains("root")) {
    int declared = doc["root"].get<int>();
    if (declared != s.root)
      throw std::runtime_error("skeleton: declared root " + std::to_string(declared) +
                               " does not match parent array root " + std::to_string(s.root));
  }
  return s;
}

Skeleton Skeleton::load_file(const std::string& path, HopConvention convention) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("skeleton: cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_json(buf.str(), convention);
}

std::string Skeleton::to_json() const {
  nlohmann::json doc;
  doc["joints"] = joint_names;
  doc["parents"] = parents;
  doc["root"] = root;
  doc["mirror"] = mirror;
  return doc.dump(2);
}

ad::Tensor<double> hop_bias_logits(const Skeleton& skeleton, const ad::Tensor<double>& gamma) {
  if (gamma.rank() != 2 || gamma.shape[1] != 3)
    throw std::invalid_argument("hop_bias_logits: gamma must be [H,3]");
  const int h = gamma.shape[0];
  const int j = skeleton.joint_count();
  ad::Tensor<double> out({h, j, j});
  for (int hh = 0; hh < h; ++hh)
    for (int k = 0; k < 3; ++k) {
      double g = gamma.data[static_cast<std::size_t>(hh * 3 + k)];
      if (g == 0.0) continue;
      const auto& a = skeleton.adjacency_powers[static_cast<std::size_t>(k)];
      for (int e = 0; e < j * j; ++e)
        out.data[static_cast<std::size_t>(hh * j * j + e)] += g * a.data[static_cast<std::size_t>(e)];
    }
  return out;
}

}  // namespace lpose
