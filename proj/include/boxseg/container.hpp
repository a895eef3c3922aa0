#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "boxseg/tensor.hpp"

// Tensor container format: magic "STNS", version u8, dtype u8 (0=f32,
// 1=f64, 2=u8), rank u8, dims as little-endian u32, then the raw
// little-endian payload.
namespace boxseg::container {

inline constexpr std::uint8_t kVersion = 1;

enum class DType : std::uint8_t { kF32 = 0, kF64 = 1, kU8 = 2 };

struct Raw {
  DType dtype = DType::kF64;
  Shape dims;
  std::vector<std::uint8_t> payload;
};

void write_raw(std::ostream& out, const Raw& raw);
Raw read_raw(std::istream& in);

std::vector<std::uint8_t> encode(const Tensor& t, DType dtype);
// Decodes any dtype into 64-bit reals.
Tensor decode(const Raw& raw);

void write_tensor(const std::filesystem::path& path, const Tensor& t,
                  DType dtype = DType::kF64);
Tensor read_tensor(const std::filesystem::path& path);

// u8 payloads (label masks) without a round trip through reals.
void write_u8(const std::filesystem::path& path, const Shape& dims,
              const std::vector<std::uint8_t>& values);
std::vector<std::uint8_t> read_u8(const std::filesystem::path& path, Shape* dims);

}  // namespace boxseg::container
