#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace activemark {

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;

/// 64-bit FNV-1a, optionally continuing from a previous hash.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t hash = kFnvOffset) noexcept;

/// Little-endian serialisation into a growing byte string.
class ByteWriter {
 public:
  void raw(std::string_view bytes) { out_.append(bytes); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void f64(double v);
  void f64s(std::span<const double> values);

  const std::string& bytes() const noexcept { return out_; }
  std::string take() noexcept { return std::move(out_); }

 private:
  std::string out_;
};

/// Bounds-checked little-endian reader; running past the end throws FormatError.
class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : in_(bytes) {}

  std::string_view raw(std::size_t count);
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  double f64();

  std::size_t remaining() const noexcept { return in_.size() - pos_; }
  std::size_t position() const noexcept { return pos_; }

 private:
  std::string_view in_;
  std::size_t pos_ = 0;
};

/// Whole-file read; IoError when the file is missing or unreadable.
std::string read_file(const std::filesystem::path& path);

/// Writes to a sibling temp file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

}  // namespace activemark
