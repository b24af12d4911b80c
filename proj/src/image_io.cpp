#include "ftn/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "ftn/tensor.hpp"

namespace ftn {

namespace {

unsigned char to_byte(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<unsigned char>(std::floor(c * 255.0f + 0.5f));
}

void skip_space_and_comments(std::istream& is) {
  for (;;) {
    int c = is.peek();
    if (c == '#') {
      std::string line;
      std::getline(is, line);
    } else if (std::isspace(c)) {
      is.get();
    } else {
      return;
    }
  }
}

void read_header(std::istream& is, const std::string& path,
                 const char* magic, int& h, int& w) {
  std::string m;
  is >> m;
  if (m != magic)
    throw Error("image '" + path + "': expected " + magic + " header");
  skip_space_and_comments(is);
  int maxval = 0;
  is >> w;
  skip_space_and_comments(is);
  is >> h;
  skip_space_and_comments(is);
  is >> maxval;
  if (!is || w <= 0 || h <= 0 || maxval != 255)
    throw Error("image '" + path + "': bad header");
  is.get();  // single whitespace after maxval
}

}  // namespace

void write_ppm(const std::string& path, int height, int width,
               const float* chw) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  os << "P6\n" << width << " " << height << "\n255\n";
  const int plane = height * width;
  std::vector<unsigned char> row(static_cast<size_t>(width) * 3);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < 3; ++c)
        row[static_cast<size_t>(x) * 3 + c] = to_byte(chw[c * plane + y * width + x]);
    os.write(reinterpret_cast<const char*>(row.data()),
             static_cast<std::streamsize>(row.size()));
  }
  if (!os) throw Error("write to '" + path + "' failed");
}

void write_pgm(const std::string& path, int height, int width,
               const float* hw) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  os << "P5\n" << width << " " << height << "\n255\n";
  std::vector<unsigned char> row(static_cast<size_t>(width));
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x)
      row[static_cast<size_t>(x)] = to_byte(hw[y * width + x]);
    os.write(reinterpret_cast<const char*>(row.data()),
             static_cast<std::streamsize>(row.size()));
  }
  if (!os) throw Error("write to '" + path + "' failed");
}

LoadedImage read_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open image '" + path + "'");
  LoadedImage img;
  read_header(is, path, "P6", img.height, img.width);
  const int plane = img.height * img.width;
  std::vector<unsigned char> raw(static_cast<size_t>(plane) * 3);
  if (!is.read(reinterpret_cast<char*>(raw.data()),
               static_cast<std::streamsize>(raw.size())))
    throw Error("image '" + path + "': truncated pixel data");
  img.data.resize(raw.size());
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c)
        img.data[static_cast<size_t>(c) * plane + y * img.width + x] =
            raw[(static_cast<size_t>(y) * img.width + x) * 3 + c] / 255.0f;
  return img;
}

LoadedImage read_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open image '" + path + "'");
  LoadedImage img;
  read_header(is, path, "P5", img.height, img.width);
  std::vector<unsigned char> raw(static_cast<size_t>(img.height) * img.width);
  if (!is.read(reinterpret_cast<char*>(raw.data()),
               static_cast<std::streamsize>(raw.size())))
    throw Error("image '" + path + "': truncated pixel data");
  img.data.resize(raw.size());
  for (size_t i = 0; i < raw.size(); ++i) img.data[i] = raw[i] / 255.0f;
  return img;
}

}  // namespace ftn
