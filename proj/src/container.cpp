#include "boxseg/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "boxseg/error.hpp"

namespace boxseg::container {
namespace {

constexpr char kMagic[4] = {'S', 'T', 'N', 'S'};

std::size_t dtype_size(DType d) {
  switch (d) {
    case DType::kF32: return 4;
    case DType::kF64: return 8;
    case DType::kU8: return 1;
  }
  throw Error(ErrorKind::kFormat, "unknown dtype code");
}

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <typename U>
U get_le(const std::uint8_t* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
  return v;
}

void read_exact(std::istream& in, void* dst, std::size_t n, const char* what) {
  in.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) {
    throw Error(ErrorKind::kFormat, std::string("truncated tensor container (") + what + ")");
  }
}

}  // namespace

void write_raw(std::ostream& out, const Raw& raw) {
  if (raw.dims.size() > 255) throw Error(ErrorKind::kFormat, "rank exceeds 255");
  if (raw.payload.size() != shape_numel(raw.dims) * dtype_size(raw.dtype)) {
    throw Error(ErrorKind::kFormat, "payload size does not match dims");
  }
  std::vector<std::uint8_t> header(kMagic, kMagic + 4);
  header.push_back(kVersion);
  header.push_back(static_cast<std::uint8_t>(raw.dtype));
  header.push_back(static_cast<std::uint8_t>(raw.dims.size()));
  for (std::size_t d : raw.dims) {
    if (d > 0xffffffffu) throw Error(ErrorKind::kFormat, "dim exceeds u32");
    put_le(header, static_cast<std::uint32_t>(d));
  }
  out.write(reinterpret_cast<const char*>(header.data()), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(raw.payload.data()),
            static_cast<std::streamsize>(raw.payload.size()));
  if (!out) throw Error(ErrorKind::kIo, "failed writing tensor container");
}

Raw read_raw(std::istream& in) {
  std::uint8_t head[7];
  read_exact(in, head, sizeof head, "header");
  if (std::memcmp(head, kMagic, 4) != 0) throw Error(ErrorKind::kFormat, "bad magic, expected STNS");
  if (head[4] != kVersion) {
    throw Error(ErrorKind::kFormat, "unsupported container version " + std::to_string(head[4]));
  }
  if (head[5] > 2) throw Error(ErrorKind::kFormat, "unknown dtype code " + std::to_string(head[5]));
  Raw raw;
  raw.dtype = static_cast<DType>(head[5]);
  const std::size_t rank = head[6];
  std::vector<std::uint8_t> dims(rank * 4);
  read_exact(in, dims.data(), dims.size(), "dims");
  for (std::size_t i = 0; i < rank; ++i) raw.dims.push_back(get_le<std::uint32_t>(dims.data() + 4 * i));
  raw.payload.resize(shape_numel(raw.dims) * dtype_size(raw.dtype));
  read_exact(in, raw.payload.data(), raw.payload.size(), "payload");
  return raw;
}

std::vector<std::uint8_t> encode(const Tensor& t, DType dtype) {
  std::vector<std::uint8_t> out;
  out.reserve(t.numel() * dtype_size(dtype));
  for (double v : t.data()) {
    switch (dtype) {
      case DType::kF64: put_le(out, std::bit_cast<std::uint64_t>(v)); break;
      case DType::kF32: put_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(v))); break;
      case DType::kU8:
        if (v < 0.0 || v > 255.0 || v != static_cast<double>(static_cast<std::uint8_t>(v))) {
          throw Error(ErrorKind::kFormat, "value not representable as u8");
        }
        out.push_back(static_cast<std::uint8_t>(v));
        break;
    }
  }
  return out;
}

Tensor decode(const Raw& raw) {
  Tensor t(raw.dims);
  const std::uint8_t* p = raw.payload.data();
  for (std::size_t i = 0; i < t.numel(); ++i) {
    switch (raw.dtype) {
      case DType::kF64: t[i] = std::bit_cast<double>(get_le<std::uint64_t>(p + 8 * i)); break;
      case DType::kF32: t[i] = std::bit_cast<float>(get_le<std::uint32_t>(p + 4 * i)); break;
      case DType::kU8: t[i] = p[i]; break;
    }
  }
  return t;
}

void write_tensor(const std::filesystem::path& path, const Tensor& t, DType dtype) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot open " + path.string() + " for writing");
  write_raw(out, Raw{dtype, t.dims(), encode(t, dtype)});
}

Tensor read_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  return decode(read_raw(in));
}

void write_u8(const std::filesystem::path& path, const Shape& dims,
              const std::vector<std::uint8_t>& values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot open " + path.string() + " for writing");
  write_raw(out, Raw{DType::kU8, dims, values});
}

std::vector<std::uint8_t> read_u8(const std::filesystem::path& path, Shape* dims) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  Raw raw = read_raw(in);
  if (raw.dtype != DType::kU8) throw Error(ErrorKind::kFormat, path.string() + ": expected u8 payload");
  if (dims) *dims = raw.dims;
  return std::move(raw.payload);
}

}  // namespace boxseg::container
