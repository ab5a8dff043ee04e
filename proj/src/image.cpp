#include "scaleseg/image.hpp"

#include <cstdio>
#include <fstream>

namespace scaleseg {

std::vector<uint8_t> binarize(const MaskImage& m, float threshold) {
  std::vector<uint8_t> out(m.pixels.size());
  for (size_t i = 0; i < m.pixels.size(); ++i) out[i] = m.pixels[i] >= threshold ? 1 : 0;
  return out;
}

namespace {

int read_pnm_int(std::istream& in) {
  // Skips whitespace and '#' comments between header fields.
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (!std::isspace(c)) {
      break;
    }
    c = in.get();
  }
  if (c == EOF) throw IoError("unexpected end of PNM header");
  int value = 0;
  bool any = false;
  while (c != EOF && std::isdigit(c)) {
    value = value * 10 + (c - '0');
    any = true;
    c = in.get();
  }
  if (!any) throw IoError("malformed PNM header");
  return value;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file: " + path);
  return in;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write file: " + path);
  return out;
}

}  // namespace

void write_pgm(const std::string& path, const MaskImage& m, float threshold) {
  auto out = open_out(path);
  out << "P5\n" << m.w << " " << m.h << "\n255\n";
  std::vector<uint8_t> row(m.w);
  for (int y = 0; y < m.h; ++y) {
    for (int x = 0; x < m.w; ++x) row[x] = m.at(y, x) >= threshold ? 255 : 0;
    out.write(reinterpret_cast<const char*>(row.data()), row.size());
  }
  if (!out) throw IoError("short write: " + path);
}

MaskImage read_pgm(const std::string& path) {
  auto in = open_in(path);
  char magic[2];
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || magic[1] != '5') throw IoError("not a P5 PGM: " + path);
  int w = read_pnm_int(in);
  int h = read_pnm_int(in);
  int maxval = read_pnm_int(in);
  if (maxval != 255) throw IoError("unsupported PGM maxval in " + path);
  MaskImage m(h, w);
  std::vector<uint8_t> buf(static_cast<size_t>(h) * w);
  in.read(reinterpret_cast<char*>(buf.data()), buf.size());
  if (!in) throw IoError("short read: " + path);
  for (size_t i = 0; i < buf.size(); ++i) m.pixels[i] = buf[i] / 255.f;
  return m;
}

void write_ppm(const std::string& path, const SceneImage& img) {
  auto out = open_out(path);
  out << "P6\n" << img.w << " " << img.h << "\n255\n";
  std::vector<uint8_t> row(3 * img.w);
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x)
      for (int c = 0; c < 3; ++c) {
        float v = img.at(c, y, x);
        v = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
        row[3 * x + c] = static_cast<uint8_t>(v * 255.f + 0.5f);
      }
    out.write(reinterpret_cast<const char*>(row.data()), row.size());
  }
  if (!out) throw IoError("short write: " + path);
}

SceneImage read_ppm(const std::string& path) {
  auto in = open_in(path);
  char magic[2];
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || magic[1] != '6') throw IoError("not a P6 PPM: " + path);
  int w = read_pnm_int(in);
  int h = read_pnm_int(in);
  int maxval = read_pnm_int(in);
  if (maxval != 255) throw IoError("unsupported PPM maxval in " + path);
  SceneImage img(h, w);
  std::vector<uint8_t> buf(3 * static_cast<size_t>(h) * w);
  in.read(reinterpret_cast<char*>(buf.data()), buf.size());
  if (!in) throw IoError("short read: " + path);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = buf[(static_cast<size_t>(y) * w + x) * 3 + c] / 255.f;
  return img;
}

}  // namespace scaleseg
