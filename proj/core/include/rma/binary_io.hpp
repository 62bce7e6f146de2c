#pragma once

// Little-endian binary encodings shared by image, corpus and weight files,
// plus atomic file replacement.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "rma/tensor.hpp"

namespace rma {

using Magic = std::array<char, 8>;

inline constexpr Magic kImageMagic = {'R', 'M', 'A', 'I', 'M', 'G', '0', '1'};
inline constexpr Magic kWeightsMagic = {'R', 'M', 'A', 'W', 'G', 'T', '0', '1'};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void append_u32(std::string& out, std::uint32_t v);
void append_u64(std::string& out, std::uint64_t v);
void append_f64(std::string& out, double v);

/// Cursor over a byte buffer; throws FormatError on truncation.
class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}
  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  std::string_view take(std::size_t n);
  std::size_t offset() const noexcept { return pos_; }
  bool done() const noexcept { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

/// magic(8) | rank u32 | dims u64[rank] | data f64[prod(dims)], all LE.
std::string encode_tensor(const Tensor& t, const Magic& magic = kImageMagic);
Tensor decode_tensor(ByteReader& reader, const Magic& magic = kImageMagic);
Tensor decode_tensor(std::string_view bytes, const Magic& magic = kImageMagic);

std::string read_file(const std::filesystem::path& path);
/// Writes to a sibling temp file then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

void write_image_file(const std::filesystem::path& path, const Tensor& image);
Tensor read_image_file(const std::filesystem::path& path);

/// 64-bit FNV-1a as 16 lowercase hex digits.
std::string hash_hex(std::string_view bytes);

}  // namespace rma
