#pragma once

// Little-endian primitives shared by the checkpoint and dataset formats.

#include <bit>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "modalfuse/error.hpp"

namespace modalfuse::detail {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) { little_endian(v, 2); }
  void u32(std::uint32_t v) { little_endian(v, 4); }
  void f32(double v) { u32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
  void f32s(std::span<const double> values) {
    for (double v : values) f32(v);
  }
  void raw(std::string_view s) { bytes_.append(s); }

  const std::string& bytes() const noexcept { return bytes_; }

 private:
  void little_endian(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }

  std::string bytes_;
};

class ByteReader {
 public:
  ByteReader(std::string_view bytes, std::string context)
      : bytes_(bytes), context_(std::move(context)) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(little_endian(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(little_endian(4)); }
  double f32() { return static_cast<double>(std::bit_cast<float>(u32())); }
  void f32s(std::span<double> out) {
    std::string_view chunk = take(out.size() * 4);
    for (std::size_t i = 0; i < out.size(); ++i) {
      std::uint32_t v = 0;
      for (int b = 0; b < 4; ++b) {
        v |= static_cast<std::uint32_t>(static_cast<unsigned char>(chunk[i * 4 + b])) << (8 * b);
      }
      out[i] = static_cast<double>(std::bit_cast<float>(v));
    }
  }
  std::string_view take(std::size_t n) {
    if (n > bytes_.size() - pos_) {
      throw Error(ErrorKind::kTruncated, context_ + ": truncated at byte " + std::to_string(pos_) +
                                             " (needed " + std::to_string(n) + " more)");
    }
    std::string_view out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }
  std::size_t position() const noexcept { return pos_; }

 private:
  std::uint64_t little_endian(int n) {
    std::string_view b = take(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b[i])) << (8 * i);
    return v;
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
  std::string context_;
};

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace modalfuse::detail
