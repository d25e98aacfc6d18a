#pragma once

#include <Eigen/Dense>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <stdexcept>
#include <string>
#include <vector>

namespace hflow::io {

static_assert(std::endian::native == std::endian::little, "raw arrays are written in host order");

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 8-bit binary PGM (P5), row by row; [lo, hi] maps linearly onto 0..255.
void write_pgm(const std::filesystem::path& path, const Eigen::ArrayXXd& image, double lo, double hi);

/// Returns the pixel values and fills width/height.
std::vector<std::uint8_t> read_pgm(const std::filesystem::path& path, int& width, int& height);

std::string read_file(const std::filesystem::path& path);
/// Writes through a temporary file and a rename.
void write_file(const std::filesystem::path& path, std::string_view bytes);

template <class T>
void write_raw(const std::filesystem::path& path, const std::vector<T>& values) {
  write_file(path, std::string_view(reinterpret_cast<const char*>(values.data()), values.size() * sizeof(T)));
}

template <class T>
std::vector<T> read_raw(const std::filesystem::path& path) {
  std::string bytes = read_file(path);
  if (bytes.size() % sizeof(T) != 0) throw IoError(path.string() + ": size is not a multiple of the element size");
  std::vector<T> out(bytes.size() / sizeof(T));
  std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace hflow::io
