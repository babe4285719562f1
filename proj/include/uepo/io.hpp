#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "uepo/mlp.hpp"

namespace uepo {

/// Little-endian byte sink used by all binary checkpoints.
class ByteWriter {
 public:
  void u32(std::uint32_t v);
  void f64(double v);
  void f64s(std::span<const double> v);
  void raw(std::string_view bytes);
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string bytes) : buf_(std::move(bytes)) {}
  std::uint32_t u32();
  double f64();
  Vector f64s(std::size_t n);
  std::string raw(std::size_t n);
  bool at_end() const { return pos_ == buf_.size(); }
  /// Throws FormatError unless every byte has been consumed.
  void expect_end() const;

 private:
  void need(std::size_t n) const;
  std::string buf_;
  std::size_t pos_ = 0;
};

inline constexpr std::string_view kCheckpointMagic = "UEPO";
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Core block: magic, version, layer count, layer widths (u32), then the
/// f64 parameters in canonical order.
void write_mlp(ByteWriter& out, const Mlp& m);
Mlp read_mlp(ByteReader& in);

void save_mlp(const std::filesystem::path& path, const Mlp& m);
Mlp load_mlp(const std::filesystem::path& path);

/// Writes to a sibling temp file and renames it over path.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

}  // namespace uepo
