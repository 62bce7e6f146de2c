#include "rma/binary_io.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace rma {

void append_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_f64(std::string& out, double v) { append_u64(out, std::bit_cast<std::uint64_t>(v)); }

std::string_view ByteReader::take(std::size_t n) {
  if (bytes_.size() - pos_ < n) {
    throw FormatError("truncated input: need " + std::to_string(n) + " bytes at offset " +
                      std::to_string(pos_));
  }
  auto s = bytes_.substr(pos_, n);
  pos_ += n;
  return s;
}

std::uint32_t ByteReader::u32() {
  auto s = take(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[i])) << (8 * i);
  return v;
}

std::uint64_t ByteReader::u64() {
  auto s = take(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[i])) << (8 * i);
  return v;
}

double ByteReader::f64() { return std::bit_cast<double>(u64()); }

std::string encode_tensor(const Tensor& t, const Magic& magic) {
  std::string out(magic.begin(), magic.end());
  out.reserve(8 + 4 + 8 * t.rank() + 8 * t.size());
  append_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) append_u64(out, d);
  for (double v : t.data()) append_f64(out, v);
  return out;
}

Tensor decode_tensor(ByteReader& r, const Magic& magic) {
  auto m = r.take(8);
  if (m != std::string_view(magic.data(), magic.size())) {
    throw FormatError("bad magic: expected " + std::string(magic.data(), magic.size()));
  }
  const auto rank = r.u32();
  if (rank > 8) throw FormatError("implausible tensor rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& d : shape) d = r.u64();
  std::vector<double> data(shape_size(shape));
  for (auto& v : data) v = r.f64();
  return Tensor(std::move(shape), std::move(data));
}

Tensor decode_tensor(std::string_view bytes, const Magic& magic) {
  ByteReader r(bytes);
  auto t = decode_tensor(r, magic);
  if (!r.done()) throw FormatError("trailing bytes after tensor");
  return t;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_image_file(const std::filesystem::path& path, const Tensor& image) {
  write_file_atomic(path, encode_tensor(image, kImageMagic));
}

Tensor read_image_file(const std::filesystem::path& path) {
  return decode_tensor(read_file(path), kImageMagic);
}

std::string hash_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace rma
