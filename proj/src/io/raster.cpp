#include "hflow/io/raster.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace hflow::io {

void write_pgm(const std::filesystem::path& path, const Eigen::ArrayXXd& image, double lo, double hi) {
  if (!(hi > lo)) throw std::invalid_argument("pgm range must be increasing");
  std::string out = "P5\n" + std::to_string(image.cols()) + " " + std::to_string(image.rows()) + "\n255\n";
  for (Eigen::Index r = 0; r < image.rows(); ++r)
    for (Eigen::Index c = 0; c < image.cols(); ++c) {
      double v = std::round((image(r, c) - lo) / (hi - lo) * 255.0);
      out.push_back(static_cast<char>(static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0))));
    }
  write_file(path, out);
}

std::vector<std::uint8_t> read_pgm(const std::filesystem::path& path, int& width, int& height) {
  std::string bytes = read_file(path);
  std::istringstream in(bytes);
  std::string magic;
  int maxval = 0;
  in >> magic >> width >> height >> maxval;
  if (magic != "P5" || maxval != 255 || width < 0 || height < 0) throw IoError(path.string() + ": not an 8-bit P5 file");
  in.get();
  auto start = static_cast<std::size_t>(in.tellg());
  if (bytes.size() - start != static_cast<std::size_t>(width) * static_cast<std::size_t>(height))
    throw IoError(path.string() + ": pixel data size mismatch");
  return {bytes.begin() + static_cast<std::ptrdiff_t>(start), bytes.end()};
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

nlohmann::json read_json(const std::filesystem::path& path) {
  auto j = nlohmann::json::parse(read_file(path), nullptr, false);
  if (j.is_discarded()) throw IoError(path.string() + ": invalid JSON");
  return j;
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) { write_file(path, j.dump(2) + "\n"); }

}  // namespace hflow::io
