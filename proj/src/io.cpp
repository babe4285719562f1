#include "uepo/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace uepo {

void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void ByteWriter::f64(double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
}

void ByteWriter::f64s(std::span<const double> v) {
  for (double x : v) f64(x);
}

void ByteWriter::raw(std::string_view bytes) { buf_.append(bytes); }

void ByteReader::need(std::size_t n) const {
  if (buf_.size() - pos_ < n) throw FormatError("checkpoint truncated");
}

std::uint32_t ByteReader::u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
  }
  pos_ += 4;
  return v;
}

double ByteReader::f64() {
  need(8);
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) {
    bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
  }
  pos_ += 8;
  return std::bit_cast<double>(bits);
}

Vector ByteReader::f64s(std::size_t n) {
  Vector v(n);
  for (double& x : v) x = f64();
  return v;
}

std::string ByteReader::raw(std::size_t n) {
  need(n);
  std::string s = buf_.substr(pos_, n);
  pos_ += n;
  return s;
}

void ByteReader::expect_end() const {
  if (!at_end()) throw FormatError("trailing bytes after checkpoint payload");
}

void write_mlp(ByteWriter& out, const Mlp& m) {
  out.raw(kCheckpointMagic);
  out.u32(kCheckpointVersion);
  out.u32(static_cast<std::uint32_t>(m.layer_count()));
  for (std::size_t w : m.layer_widths()) out.u32(static_cast<std::uint32_t>(w));
  out.f64s(m.parameters());
}

Mlp read_mlp(ByteReader& in) {
  if (in.raw(kCheckpointMagic.size()) != kCheckpointMagic) throw FormatError("bad checkpoint magic");
  const std::uint32_t version = in.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint32_t layers = in.u32();
  if (layers == 0 || layers > 64) throw FormatError("implausible layer count");
  std::vector<std::size_t> widths;
  for (std::uint32_t i = 0; i <= layers; ++i) widths.push_back(in.u32());
  Mlp m(std::move(widths));
  const Vector params = in.f64s(m.parameter_count());
  std::copy(params.begin(), params.end(), m.parameters().begin());
  return m;
}

void save_mlp(const std::filesystem::path& path, const Mlp& m) {
  ByteWriter w;
  write_mlp(w, m);
  write_file_atomic(path, w.bytes());
}

Mlp load_mlp(const std::filesystem::path& path) {
  ByteReader r(read_file(path));
  Mlp m = read_mlp(r);
  r.expect_end();
  return m;
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot open " + tmp.string() + " for writing");
    f.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!f) throw Error("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MissingArtifactError("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace uepo
