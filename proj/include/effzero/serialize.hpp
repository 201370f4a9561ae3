#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "effzero/tensor.hpp"

namespace effzero {

struct SerializeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Little-endian binary container:
//   magic (8 bytes) | version u32 | metadata u32 length + bytes |
//   param count u32 | per param: name (u32 + bytes), ndim u32, dims i32...,
//   float32 values.
// Metadata is a free-form string (JSON in practice) carrying env name,
// shapes and the config hash.
namespace bin {

inline void write_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw SerializeError("checkpoint: truncated stream");
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) |
         (static_cast<uint32_t>(b[3]) << 24);
}

inline void write_i64(std::ostream& os, int64_t v) {
  write_u32(os, static_cast<uint32_t>(static_cast<uint64_t>(v) & 0xffffffffu));
  write_u32(os, static_cast<uint32_t>(static_cast<uint64_t>(v) >> 32));
}

inline int64_t read_i64(std::istream& is) {
  const uint64_t lo = read_u32(is);
  const uint64_t hi = read_u32(is);
  return static_cast<int64_t>(lo | (hi << 32));
}

inline void write_string(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is) {
  const uint32_t n = read_u32(is);
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw SerializeError("checkpoint: truncated stream");
  return s;
}

inline void write_f32(std::ostream& os, const float* data, int64_t n) {
  static_assert(sizeof(float) == 4);
  os.write(reinterpret_cast<const char*>(data),
           static_cast<std::streamsize>(n * 4));
}

inline void read_f32(std::istream& is, float* data, int64_t n) {
  is.read(reinterpret_cast<char*>(data),
          static_cast<std::streamsize>(n * 4));
  if (!is) throw SerializeError("checkpoint: truncated stream");
}

}  // namespace bin

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

constexpr char kCheckpointMagic[8] = {'E', 'F', 'Z', 'C', 'K', 'P', 'T', 0};
constexpr uint32_t kCheckpointVersion = 1;

void write_checkpoint(const std::string& path, const std::string& metadata,
                      const std::vector<NamedArray>& params);

struct Checkpoint {
  std::string metadata;
  std::vector<NamedArray> params;
};

Checkpoint read_checkpoint(const std::string& path);

}  // namespace effzero
