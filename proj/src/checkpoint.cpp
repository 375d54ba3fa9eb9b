#include "convtree/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace convtree {

namespace {

constexpr char kMagic[8] = {'C', 'V', 'T', 'C', 'K', 'P', 'T', '\0'};

template <typename UInt>
void put_le(std::ostream& out, UInt v) {
  unsigned char bytes[sizeof(UInt)];
  for (std::size_t i = 0; i < sizeof(UInt); ++i) bytes[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes), sizeof bytes);
}

template <typename UInt>
UInt get_le(std::istream& in) {
  unsigned char bytes[sizeof(UInt)];
  in.read(reinterpret_cast<char*>(bytes), sizeof bytes);
  require(static_cast<bool>(in), ErrorKind::Io, "truncated checkpoint");
  UInt v = 0;
  for (std::size_t i = 0; i < sizeof(UInt); ++i) v |= static_cast<UInt>(bytes[i]) << (8 * i);
  return v;
}

void put_string(std::ostream& out, const std::string& s) {
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in) {
  const auto n = get_le<std::uint32_t>(in);
  std::string s(n, '\0');
  in.read(s.data(), n);
  require(static_cast<bool>(in), ErrorKind::Io, "truncated checkpoint string");
  return s;
}

}  // namespace

const NamedArray& Checkpoint::array(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return a;
  fail(ErrorKind::UnknownId, "checkpoint has no array '" + name + "'");
}

NamedArray to_named_array(std::string name, const Matrix& m) {
  NamedArray a{std::move(name), {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())}, {}};
  a.data.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) a.data.push_back(m(r, c));
  return a;
}

Matrix to_matrix(const NamedArray& a) {
  require(a.shape.size() == 2, ErrorKind::ShapeMismatch, "array '" + a.name + "' is not two-dimensional");
  const auto rows = static_cast<Eigen::Index>(a.shape[0]);
  const auto cols = static_cast<Eigen::Index>(a.shape[1]);
  Matrix m(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = a.data[k++];
  return m;
}

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  out.write(kMagic, sizeof kMagic);
  put_le<std::uint32_t>(out, ckpt.version);
  put_le<std::uint64_t>(out, ckpt.seed);
  put_string(out, ckpt.kind);
  put_string(out, ckpt.metadata);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.arrays.size()));
  for (const auto& a : ckpt.arrays) {
    std::uint64_t count = 1;
    for (auto d : a.shape) count *= d;
    require(count == a.data.size(), ErrorKind::ShapeMismatch, "array '" + a.name + "' shape/data mismatch");
    put_string(out, a.name);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(a.shape.size()));
    for (auto d : a.shape) put_le<std::uint64_t>(out, d);
    std::string buf(a.data.size() * 8, '\0');
    for (std::size_t k = 0; k < a.data.size(); ++k) {
      const auto bits = std::bit_cast<std::uint64_t>(a.data[k]);
      for (std::size_t b = 0; b < 8; ++b) buf[8 * k + b] = static_cast<char>(bits >> (8 * b));
    }
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  }
  require(static_cast<bool>(out), ErrorKind::Io, "failed writing checkpoint");
}

Checkpoint read_checkpoint(std::istream& in) {
  char magic[8];
  in.read(magic, sizeof magic);
  require(static_cast<bool>(in) && std::memcmp(magic, kMagic, sizeof magic) == 0, ErrorKind::Io,
          "not a checkpoint file");
  Checkpoint ckpt;
  ckpt.version = get_le<std::uint32_t>(in);
  require(ckpt.version == kCheckpointVersion, ErrorKind::Io,
          "unsupported checkpoint version " + std::to_string(ckpt.version));
  ckpt.seed = get_le<std::uint64_t>(in);
  ckpt.kind = get_string(in);
  ckpt.metadata = get_string(in);
  const auto count = get_le<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray a;
    a.name = get_string(in);
    const auto ndim = get_le<std::uint32_t>(in);
    std::uint64_t total = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      a.shape.push_back(get_le<std::uint64_t>(in));
      total *= a.shape.back();
    }
    a.data.resize(total);
    std::string buf(total * 8, '\0');
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    require(static_cast<bool>(in), ErrorKind::Io, "truncated checkpoint array '" + a.name + "'");
    for (std::size_t k = 0; k < total; ++k) {
      std::uint64_t bits = 0;
      for (std::size_t b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[8 * k + b])) << (8 * b);
      a.data[k] = std::bit_cast<double>(bits);
    }
    ckpt.arrays.push_back(std::move(a));
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot open " + path.string());
  write_checkpoint(out, ckpt);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + path.string());
  return read_checkpoint(in);
}

}  // namespace convtree
