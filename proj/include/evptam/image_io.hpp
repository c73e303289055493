#ifndef EVPTAM_IMAGE_IO_HPP
#define EVPTAM_IMAGE_IO_HPP

#include <string>

#include "evptam/events.hpp"

namespace evptam {

// 8-bit binary PGM (P5). Intensities are clamped to [0, 1] and quantized to
// 255 levels on write.
void write_pgm(const Grid& image, const std::string& path);
Grid read_pgm(const std::string& path);

}  // namespace evptam

#endif  // EVPTAM_IMAGE_IO_HPP
