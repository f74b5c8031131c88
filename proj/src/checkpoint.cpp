#include "eclip/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "eclip/error.hpp"

namespace eclip {

void ByteWriter::u16(std::uint16_t v) {
  for (int i = 0; i < 2; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::f64(double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

void ByteWriter::text(std::string_view s) {
  bytes_.insert(bytes_.end(), s.begin(), s.end());
}

void ByteReader::fail(const std::string& what) const {
  throw FormatError(context_ + ": " + what + " at offset " + std::to_string(pos_));
}

void ByteReader::need(std::size_t n) const {
  if (remaining() < n) {
    fail("truncated (need " + std::to_string(n) + " bytes, have " + std::to_string(remaining()) + ")");
  }
}

std::uint8_t ByteReader::u8() {
  need(1);
  return bytes_[pos_++];
}

std::uint16_t ByteReader::u16() {
  need(2);
  std::uint16_t v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
  pos_ += 2;
  return v;
}

std::uint32_t ByteReader::u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
  pos_ += 4;
  return v;
}

double ByteReader::f64() {
  need(8);
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
  pos_ += 8;
  return std::bit_cast<double>(bits);
}

std::span<const std::uint8_t> ByteReader::raw(std::size_t n) {
  need(n);
  auto s = bytes_.subspan(pos_, n);
  pos_ += n;
  return s;
}

std::vector<std::uint8_t> encode_checkpoint(const TensorMap& tensors) {
  ByteWriter w;
  w.text("ECLP");
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    if (name.size() > 0xFFFF) throw ValidationError("checkpoint: tensor name too long");
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.text(name);
    w.u8(static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.dims()) w.u32(static_cast<std::uint32_t>(d));
    for (double v : t.data()) w.f64(v);
  }
  return std::move(w.bytes());
}

TensorMap decode_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "checkpoint");
  auto magic = r.raw(4);
  if (std::memcmp(magic.data(), "ECLP", 4) != 0) r.fail("bad magic");
  const auto version = r.u32();
  if (version != kCheckpointVersion) r.fail("unsupported version " + std::to_string(version));
  const auto count = r.u32();
  TensorMap out;
  std::string prev;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.u16();
    auto name_bytes = r.raw(len);
    std::string name(name_bytes.begin(), name_bytes.end());
    if (i > 0 && !(prev < name)) r.fail("tensor names not strictly ordered ('" + name + "')");
    const auto rank = r.u8();
    if (rank == 0) r.fail("tensor '" + name + "' has rank 0");
    Shape dims;
    std::size_t numel = 1;
    for (std::uint8_t k = 0; k < rank; ++k) {
      const auto d = r.u32();
      if (d == 0) r.fail("tensor '" + name + "' has a zero dimension");
      dims.push_back(d);
      numel *= d;
      if (numel > r.remaining()) r.fail("tensor '" + name + "' larger than file");
    }
    if (r.remaining() / 8 < numel) r.fail("payload of '" + name + "' truncated");
    std::vector<double> data(numel);
    for (auto& v : data) v = r.f64();
    out.emplace(name, Tensor(std::move(dims), std::move(data)));
    prev = std::move(name);
  }
  if (r.remaining() != 0) r.fail("trailing bytes after last tensor");
  return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("short write to " + path.string());
}

void save_checkpoint(const std::filesystem::path& path, const TensorMap& tensors) {
  write_file(path, encode_checkpoint(tensors));
}

TensorMap load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    return decode_checkpoint(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace eclip
