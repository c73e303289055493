#include "evptam/image_io.hpp"

#include <cmath>
#include <fstream>

namespace evptam {

void write_pgm(const Grid& image, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write image: " + path);
  const int rows = static_cast<int>(image.rows());
  const int cols = static_cast<int>(image.cols());
  out << "P5\n" << cols << " " << rows << "\n255\n";
  std::string buf(static_cast<std::size_t>(rows) * cols, '\0');
  std::size_t k = 0;
  for (int y = 0; y < rows; ++y) {
    for (int x = 0; x < cols; ++x) {
      const float v = std::clamp(image(y, x), 0.0f, 1.0f);
      buf[k++] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f)));
    }
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

Grid read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image: " + path);
  std::string magic;
  in >> magic;
  if (magic != "P5") throw DataError("unsupported image format (want binary P5 PGM): " + path);
  auto next_token = [&]() {
    std::string tok;
    while (in >> tok) {
      if (tok[0] == '#') {
        std::string rest;
        std::getline(in, rest);
        continue;
      }
      return tok;
    }
    throw DataError("truncated PGM header: " + path);
  };
  const int cols = std::stoi(next_token());
  const int rows = std::stoi(next_token());
  const int maxval = std::stoi(next_token());
  if (cols <= 0 || rows <= 0 || maxval <= 0 || maxval > 255) {
    throw DataError("unsupported PGM geometry: " + path);
  }
  in.get();  // single whitespace after maxval
  std::string buf(static_cast<std::size_t>(rows) * cols, '\0');
  in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (in.gcount() != static_cast<std::streamsize>(buf.size())) {
    throw DataError("truncated PGM data: " + path);
  }
  Grid image(rows, cols);
  std::size_t k = 0;
  for (int y = 0; y < rows; ++y) {
    for (int x = 0; x < cols; ++x) {
      image(y, x) = static_cast<unsigned char>(buf[k++]) / static_cast<float>(maxval);
    }
  }
  return image;
}

}  // namespace evptam
