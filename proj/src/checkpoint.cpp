#include "ftn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace ftn {

namespace {

static_assert(sizeof(float) == 4, "32-bit IEEE floats required");

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xFF),
                        static_cast<unsigned char>((v >> 8) & 0xFF),
                        static_cast<unsigned char>((v >> 16) & 0xFF),
                        static_cast<unsigned char>((v >> 24) & 0xFF)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw Error("checkpoint: truncated file");
  return static_cast<std::uint32_t>(b[0]) |
         (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f32(std::ostream& os, float v) {
  std::uint32_t u;
  std::memcpy(&u, &v, 4);
  put_u32(os, u);
}

float get_f32(std::istream& is) {
  const std::uint32_t u = get_u32(is);
  float v;
  std::memcpy(&v, &u, 4);
  return v;
}

constexpr bool little_endian_host() {
  return std::endian::native == std::endian::little;
}

}  // namespace

void save_checkpoint(const std::string& path,
                     const std::vector<NamedTensor>& tensors) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("checkpoint: cannot open '" + path + "' for writing");
  os.write("FTN1", 4);
  put_u32(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    put_u32(os, static_cast<std::uint32_t>(t.name.size()));
    os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put_u32(os, static_cast<std::uint32_t>(t.shape.size()));
    idx n = 1;
    for (idx e : t.shape) {
      put_u32(os, static_cast<std::uint32_t>(e));
      n *= e;
    }
    if (n != static_cast<idx>(t.data.size()))
      throw Error("checkpoint: tensor '" + t.name + "' data/shape mismatch");
    if (little_endian_host()) {
      os.write(reinterpret_cast<const char*>(t.data.data()),
               static_cast<std::streamsize>(t.data.size() * 4));
    } else {
      for (float v : t.data) put_f32(os, v);
    }
  }
  if (!os) throw Error("checkpoint: write to '" + path + "' failed");
}

std::vector<NamedTensor> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("checkpoint: cannot open '" + path + "'");
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "FTN1", 4) != 0)
    throw Error("checkpoint: '" + path + "' lacks the FTN1 magic");
  const std::uint32_t count = get_u32(is);
  std::vector<NamedTensor> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    const std::uint32_t name_len = get_u32(is);
    t.name.resize(name_len);
    if (!is.read(t.name.data(), name_len))
      throw Error("checkpoint: truncated name");
    const std::uint32_t rank = get_u32(is);
    idx n = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      const std::uint32_t e = get_u32(is);
      if (e == 0) throw Error("checkpoint: zero extent in '" + t.name + "'");
      t.shape.push_back(static_cast<idx>(e));
      n *= static_cast<idx>(e);
    }
    t.data.resize(static_cast<size_t>(n));
    if (little_endian_host()) {
      if (!is.read(reinterpret_cast<char*>(t.data.data()),
                   static_cast<std::streamsize>(t.data.size() * 4)))
        throw Error("checkpoint: truncated data in '" + t.name + "'");
    } else {
      for (auto& v : t.data) v = get_f32(is);
    }
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace ftn
