#include "lpose/dataset.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace lpose {

namespace {

constexpr char kMagic[4] = {'H', 'P', 'S', 'E'};

void write_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }

std::uint32_t read_u32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  if (!in) throw std::runtime_error("dataset: truncated header");
  return v;
}

}  // namespace

Dataset Dataset::from_sequences(std::vector<PoseSequence> seqs) {
  Dataset d;
  d.sequences = std::move(seqs);
  if (!d.sequences.empty()) {
    d.frames = d.sequences.front().inputs.shape[0];
    d.joints = d.sequences.front().inputs.shape[1];
  }
  d.validate();
  return d;
}

void Dataset::validate() const {
  for (const auto& s : sequences) {
    if (s.inputs.rank() != 3 || s.inputs.dim(-1) != 3 || s.targets.rank() != 3 || s.targets.dim(-1) != 3)
      throw std::runtime_error("dataset: sequences must be [T,J,3]");
    if (s.inputs.shape[0] != frames || s.inputs.shape[1] != joints || s.targets.shape != s.inputs.shape)
      throw std::runtime_error("dataset: inconsistent sequence shapes");
    if (frames < 1) throw std::runtime_error("dataset: empty sequence");
    for (std::size_t r = 0; r < s.inputs.numel() / 3; ++r) {
      float c = s.inputs.data[r * 3 + 2];
      if (!(c >= 0.0f && c <= 1.0f))
        throw std::runtime_error("dataset: confidence outside [0,1]");
    }
    if (!s.inputs.all_finite() || !s.targets.all_finite())
      throw std::runtime_error("dataset: non-finite values");
  }
}

void Dataset::save(const std::string& path) const {
  validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("dataset: cannot open " + path + " for writing");
  out.write(kMagic, 4);
  write_u32(out, kVersion);
  write_u32(out, static_cast<std::uint32_t>(sequences.size()));
  write_u32(out, static_cast<std::uint32_t>(frames));
  write_u32(out, static_cast<std::uint32_t>(joints));
  write_u32(out, 3);
  write_u32(out, 3);
  for (const auto& s : sequences)
    out.write(reinterpret_cast<const char*>(s.inputs.data.data()),
              static_cast<std::streamsize>(s.inputs.numel() * sizeof(float)));
  for (const auto& s : sequences)
    out.write(reinterpret_cast<const char*>(s.targets.data.data()),
              static_cast<std::streamsize>(s.targets.numel() * sizeof(float)));
  if (!out) throw std::runtime_error("dataset: write failed for " + path);
}

Dataset Dataset::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("dataset: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("dataset: bad magic in " + path);
  std::uint32_t version = read_u32(in);
  if (version != kVersion)
    throw std::runtime_error("dataset: unsupported version " + std::to_string(version));
  std::uint32_t n = read_u32(in), t = read_u32(in), j = read_u32(in);
  std::uint32_t c_in = read_u32(in), c_out = read_u32(in);
  if (c_in != 3 || c_out != 3) throw std::runtime_error("dataset: unexpected channel counts");

  Dataset d;
  d.frames = static_cast<int>(t);
  d.joints = static_cast<int>(j);
  d.sequences.resize(n);
  auto read_tensor = [&](ad::Tensor<float>& tensor) {
    tensor = ad::Tensor<float>({static_cast<int>(t), static_cast<int>(j), 3});
    in.read(reinterpret_cast<char*>(tensor.data.data()),
            static_cast<std::streamsize>(tensor.numel() * sizeof(float)));
    if (!in) throw std::runtime_error("dataset: truncated payload in " + path);
  };
  for (auto& s : d.sequences) read_tensor(s.inputs);
  for (auto& s : d.sequences) read_tensor(s.targets);
  in.peek();
  if (!in.eof()) throw std::runtime_error("dataset: trailing bytes in " + path);
  d.validate();
  return d;
}

}  // namespace lpose
