#include "dcst/serialize.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace dcst {

namespace {

static_assert(std::endian::native == std::endian::little,
              "serialization assumes a little-endian host");

constexpr std::array<char, 4> kTensorMagic{'D', 'C', 'S', 'T'};
constexpr std::array<char, 4> kCheckpointMagic{'D', 'C', 'K', 'P'};
constexpr std::uint32_t kCheckpointVersion = 1;
constexpr std::uint32_t kMaxRank = 16;

void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw DataError("unexpected end of file");
  return v;
}

void write_string(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is) {
  const auto len = read_u32(is);
  if (len > (1u << 26)) throw DataError("string record too long");
  std::string s(len, '\0');
  if (!is.read(s.data(), len)) throw DataError("unexpected end of file");
  return s;
}

void expect_magic(std::istream& is, const std::array<char, 4>& magic, const char* what) {
  std::array<char, 4> got{};
  if (!is.read(got.data(), 4) || got != magic) {
    throw DataError(std::string("bad magic bytes, expected ") + what);
  }
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor& t) {
  os.write(kTensorMagic.data(), 4);
  write_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) write_u32(os, static_cast<std::uint32_t>(d));
  auto v = t.data();
  os.write(reinterpret_cast<const char*>(v.data()),
           static_cast<std::streamsize>(v.size() * sizeof(float)));
  if (!os) throw DataError("failed to write tensor");
}

Tensor read_tensor(std::istream& is) {
  expect_magic(is, kTensorMagic, "DCST");
  const auto rank = read_u32(is);
  if (rank > kMaxRank) throw DataError("tensor rank too large");
  Shape shape(rank);
  for (auto& d : shape) {
    d = read_u32(is);
    if (d == 0) throw DataError("tensor dim of zero");
  }
  std::vector<float> values(static_cast<std::size_t>(numel(shape)));
  if (!is.read(reinterpret_cast<char*>(values.data()),
               static_cast<std::streamsize>(values.size() * sizeof(float)))) {
    throw DataError("truncated tensor payload");
  }
  return Tensor::from(std::move(shape), std::move(values));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  write_tensor(os, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  return read_tensor(is);
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  // Write to a sibling file first so an interrupted save never clobbers the
  // previous checkpoint.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw DataError("cannot open " + tmp.string() + " for writing");
    os.write(kCheckpointMagic.data(), 4);
    write_u32(os, kCheckpointVersion);
    write_u32(os, static_cast<std::uint32_t>(ckpt.metadata.size()));
    for (const auto& [k, v] : ckpt.metadata) {
      write_string(os, k);
      write_string(os, v);
    }
    write_u32(os, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, t] : ckpt.tensors) {
      write_string(os, name);
      write_tensor(os, t);
    }
    if (!os) throw DataError("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path.string());
  expect_magic(is, kCheckpointMagic, "DCKP");
  const auto version = read_u32(is);
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  const auto n_meta = read_u32(is);
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    auto k = read_string(is);
    ckpt.metadata[k] = read_string(is);
  }
  const auto n_tensors = read_u32(is);
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    auto name = read_string(is);
    ckpt.tensors.emplace(std::move(name), read_tensor(is));
  }
  return ckpt;
}

}  // namespace dcst
