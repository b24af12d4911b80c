#pragma once

#include <string>
#include <vector>

namespace ftn {

// Binary PPM (P6) / PGM (P5), maxval 255. Values are linearly scaled between
// [0,1] and [0,255] with round-half-up on write; reads divide by 255.
// Planar layout: rgb buffers are C x H x W with C = 3.

void write_ppm(const std::string& path, int height, int width,
               const float* chw);
void write_pgm(const std::string& path, int height, int width, const float* hw);

struct LoadedImage {
  int height = 0, width = 0;
  std::vector<float> data;  // planar, 3*H*W for PPM, H*W for PGM
};

LoadedImage read_ppm(const std::string& path);
LoadedImage read_pgm(const std::string& path);

}  // namespace ftn
