#include "numerics/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>

namespace numerics::checkpoint {

namespace {

static_assert(std::numeric_limits<double>::is_iec559, "IEEE-754 doubles required");

template <class T>
T byteswap_int(T v) {
  T out{};
  auto* src = reinterpret_cast<const unsigned char*>(&v);
  auto* dst = reinterpret_cast<unsigned char*>(&out);
  for (std::size_t i = 0; i < sizeof(T); ++i) dst[i] = src[sizeof(T) - 1 - i];
  return out;
}

template <class T>
void write_le(std::ostream& os, T v) {
  if constexpr (std::endian::native == std::endian::big) v = byteswap_int(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_le(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw IoError("checkpoint: truncated stream");
  if constexpr (std::endian::native == std::endian::big) v = byteswap_int(v);
  return v;
}

}  // namespace

void write_records(std::ostream& os, const NamedTensors& records) {
  os.write(kMagic, sizeof(kMagic));
  const char version = static_cast<char>(kVersion);
  os.write(&version, 1);
  for (const auto& [name, tensor] : records) {
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(tensor.rank()));
    for (std::size_t d = 0; d < tensor.rank(); ++d) {
      write_le<std::uint64_t>(os, static_cast<std::uint64_t>(tensor.extent(d)));
    }
    for (double v : tensor.values()) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof(bits));
      write_le<std::uint64_t>(os, bits);
    }
  }
  if (!os) throw IoError("checkpoint: write failed");
}

NamedTensors read_records(std::istream& is) {
  char magic[sizeof(kMagic)];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw IoError("checkpoint: bad magic");
  }
  char version = 0;
  is.read(&version, 1);
  if (!is || static_cast<unsigned char>(version) != kVersion) {
    throw IoError("checkpoint: unsupported version");
  }
  NamedTensors out;
  while (true) {
    std::uint32_t name_len;
    is.read(reinterpret_cast<char*>(&name_len), sizeof(name_len));
    if (is.eof()) break;
    if (!is) throw IoError("checkpoint: truncated record header");
    if constexpr (std::endian::native == std::endian::big) {
      name_len = byteswap_int(name_len);
    }
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw IoError("checkpoint: truncated name");
    const auto rank = read_le<std::uint32_t>(is);
    Shape shape(rank);
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      shape[d] = static_cast<std::size_t>(read_le<std::uint64_t>(is));
      numel *= shape[d];
    }
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < numel; ++i) {
      const std::uint64_t bits = read_le<std::uint64_t>(is);
      double v;
      std::memcpy(&v, &bits, sizeof(v));
      t[i] = v;
    }
    out.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

void save_file(const std::filesystem::path& path, const NamedTensors& records) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("checkpoint: cannot open " + path.string() + " for writing");
  write_records(os, records);
}

NamedTensors load_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint: cannot open " + path.string());
  return read_records(is);
}

}  // namespace numerics::checkpoint
