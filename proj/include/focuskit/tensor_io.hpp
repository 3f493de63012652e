#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace focuskit {

// On-disk tensor: one UTF-8 JSON header line {"dtype":"f32","shape":[...]}
// terminated by '\n', followed by product(shape) little-endian IEEE-754
// binary32 values in row-major order. Same (shape, data) always yields the
// same bytes.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
  std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }
};

std::size_t shape_product(std::span<const std::size_t> shape);

// Serialises to bytes. Throws FormatError on shape/data mismatch or when a
// value is non-finite after conversion to binary32.
std::string encode_tensor(std::span<const std::size_t> shape,
                          std::span<const double> data);
Tensor decode_tensor(std::string_view bytes);

void write_tensor(const std::filesystem::path& path,
                  std::span<const std::size_t> shape,
                  std::span<const double> data);
Tensor read_tensor(const std::filesystem::path& path);

// Whole-file helpers shared by the other writers.
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace focuskit
