#pragma once

// Versioned binary container of named float64 arrays.
//
// Layout (all integers little-endian):
//   magic     8 bytes  "CVTCKPT\0"
//   version   u32      (currently 1)
//   seed      u64
//   kind      u32 length + UTF-8 bytes
//   metadata  u32 length + UTF-8 JSON (model configuration)
//   count     u32
//   count x { name: u32 length + bytes; ndim: u32; dims: ndim x u64;
//             data: prod(dims) x f64 little-endian, row-major }

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "convtree/numerics.hpp"

namespace convtree {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  std::vector<std::uint64_t> shape;
  std::vector<double> data;  // row-major
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::uint64_t seed = 0;
  std::string kind;
  std::string metadata;
  std::vector<NamedArray> arrays;

  const NamedArray& array(const std::string& name) const;
};

NamedArray to_named_array(std::string name, const Matrix& m);
Matrix to_matrix(const NamedArray& a);

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace convtree
