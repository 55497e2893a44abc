#include "sunet/diff/checkpoint.hpp"

#include <fstream>

#include "sunet/binary_io.hpp"
#include "sunet/errors.hpp"

namespace sunet::diff {

namespace {
constexpr char kMagic[6] = {'S', 'U', 'N', 'C', 'K', '1'};
}

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

void save_checkpoint(const std::filesystem::path& path, const CheckpointHeader& header, const ParamStore& store) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  BinaryWriter w(out);
  w.write_bytes(kMagic, sizeof(kMagic));
  w.write(header.version);
  w.write(header.z_max_global);
  w.write(header.config_hash);
  w.write_string(header.config_text);
  w.write<std::uint64_t>(store.params().size());
  for (const auto& p : store.params()) {
    w.write_string(p.name);
    w.write<std::uint32_t>(static_cast<std::uint32_t>(p.tensor.rank()));
    for (int d : p.tensor.shape()) w.write<std::uint64_t>(static_cast<std::uint64_t>(d));
    for (double v : p.tensor.values()) w.write(v);
  }
  if (!out) throw IoError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  BinaryReader r(in, path.string());
  r.expect_magic(kMagic, sizeof(kMagic));
  Checkpoint ck;
  ck.header.version = r.read<std::uint32_t>();
  if (ck.header.version != kCheckpointVersion) {
    throw ArtifactMismatch("unsupported checkpoint version " + std::to_string(ck.header.version));
  }
  ck.header.z_max_global = r.read<double>();
  ck.header.config_hash = r.read<std::uint64_t>();
  ck.header.config_text = r.read_string();
  if (fnv1a(ck.header.config_text) != ck.header.config_hash) {
    throw FormatError("checkpoint config hash does not match its config text: " + path.string());
  }
  const auto count = r.read<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = r.read_string(4096);
    const auto rank = r.read<std::uint32_t>();
    if (rank == 0 || rank > 8) throw FormatError("bad tensor rank for " + name);
    Shape shape;
    for (std::uint32_t a = 0; a < rank; ++a) {
      const auto d = r.read<std::uint64_t>();
      if (d == 0 || d > (1u << 30)) throw FormatError("bad tensor dim for " + name);
      shape.push_back(static_cast<int>(d));
    }
    std::vector<double> values(shape_size(shape));
    for (double& v : values) v = r.read<double>();
    ck.tensors.emplace(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  r.expect_eof();
  return ck;
}

}  // namespace sunet::diff
