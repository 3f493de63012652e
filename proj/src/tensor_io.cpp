#include "focuskit/tensor_io.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <sstream>

#include "focuskit/error.hpp"
#include "json.hpp"

namespace focuskit {

namespace {

void put_le32(std::string& out, std::uint32_t bits) {
  for (int shift = 0; shift < 32; shift += 8) {
    out.push_back(static_cast<char>((bits >> shift) & 0xFFu));
  }
}

std::uint32_t get_le32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) |
         (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

std::size_t shape_product(std::span<const std::size_t> shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string encode_tensor(std::span<const std::size_t> shape,
                          std::span<const double> data) {
  if (shape_product(shape) != data.size()) {
    throw FormatError("tensor shape product " +
                      std::to_string(shape_product(shape)) +
                      " does not match data length " +
                      std::to_string(data.size()));
  }
  std::string out = "{\"dtype\":\"f32\",\"shape\":[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out += ',';
    out += std::to_string(shape[i]);
  }
  out += "]}\n";
  out.reserve(out.size() + 4 * data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const float value = static_cast<float>(data[i]);
    if (!std::isfinite(value)) {
      throw FormatError("non-finite tensor value at index " +
                        std::to_string(i));
    }
    put_le32(out, std::bit_cast<std::uint32_t>(value));
  }
  return out;
}

Tensor decode_tensor(std::string_view bytes) {
  const std::size_t newline = bytes.find('\n');
  if (newline == std::string_view::npos) {
    throw FormatError("tensor header is not newline-terminated");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(0, newline));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed tensor header: ") + e.what());
  }
  if (!header.is_object() || header.size() != 2 ||
      !header.contains("dtype") || header["dtype"] != "f32" ||
      !header.contains("shape") ||
      !header["shape"].is_array()) {
    throw FormatError("malformed tensor header: " + header.dump());
  }
  Tensor tensor;
  for (const auto& dim : header["shape"]) {
    if (!dim.is_number_unsigned()) {
      throw FormatError("tensor shape entries must be non-negative integers");
    }
    tensor.shape.push_back(dim.get<std::size_t>());
  }
  const std::size_t count = shape_product(tensor.shape);
  const std::string_view payload = bytes.substr(newline + 1);
  if (payload.size() < 4 * count) {
    throw FormatError("truncated tensor payload: expected " +
                      std::to_string(4 * count) + " bytes, found " +
                      std::to_string(payload.size()));
  }
  if (payload.size() > 4 * count) {
    throw FormatError("trailing bytes after tensor payload");
  }
  const auto* raw = reinterpret_cast<const unsigned char*>(payload.data());
  tensor.data.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const float value = std::bit_cast<float>(get_le32(raw + 4 * i));
    if (!std::isfinite(value)) {
      throw FormatError("non-finite tensor value at index " +
                        std::to_string(i));
    }
    tensor.data[i] = value;
  }
  return tensor;
}

void write_tensor(const std::filesystem::path& path,
                  std::span<const std::size_t> shape,
                  std::span<const double> data) {
  write_file(path, encode_tensor(shape, data));
}

Tensor read_tensor(const std::filesystem::path& path) {
  try {
    return decode_tensor(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  if (in.bad()) throw IoError("read failed: " + path.string());
  return std::move(buffer).str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace focuskit
