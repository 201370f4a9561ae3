#include "effzero/serialize.hpp"

namespace effzero {

void write_checkpoint(const std::string& path, const std::string& metadata,
                      const std::vector<NamedArray>& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw SerializeError("checkpoint: cannot write '" + path + "'");
  os.write(kCheckpointMagic, 8);
  bin::write_u32(os, kCheckpointVersion);
  bin::write_string(os, metadata);
  bin::write_u32(os, static_cast<uint32_t>(params.size()));
  for (const auto& p : params) {
    bin::write_string(os, p.name);
    bin::write_u32(os, static_cast<uint32_t>(p.shape.size()));
    for (int d : p.shape) bin::write_u32(os, static_cast<uint32_t>(d));
    bin::write_f32(os, p.values.data(),
                   static_cast<int64_t>(p.values.size()));
  }
  if (!os) throw SerializeError("checkpoint: write failed for '" + path + "'");
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw SerializeError("checkpoint: cannot open '" + path + "'");
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw SerializeError("checkpoint: bad magic in '" + path + "'");
  const uint32_t version = bin::read_u32(is);
  if (version != kCheckpointVersion)
    throw SerializeError("checkpoint: unsupported version " +
                         std::to_string(version));
  Checkpoint ck;
  ck.metadata = bin::read_string(is);
  const uint32_t count = bin::read_u32(is);
  ck.params.resize(count);
  for (uint32_t i = 0; i < count; ++i) {
    auto& p = ck.params[i];
    p.name = bin::read_string(is);
    const uint32_t ndim = bin::read_u32(is);
    p.shape.resize(ndim);
    int64_t n = 1;
    for (uint32_t d = 0; d < ndim; ++d) {
      p.shape[d] = static_cast<int>(bin::read_u32(is));
      n *= p.shape[d];
    }
    p.values.resize(n);
    bin::read_f32(is, p.values.data(), n);
  }
  return ck;
}

}  // namespace effzero
