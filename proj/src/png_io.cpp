#include <png.h>

#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <vector>

#include "poseflow/dataio.hpp"
#include "poseflow/errors.hpp"

namespace poseflow {

namespace {

struct FileCloser {
  FILE* f = nullptr;
  ~FileCloser() {
    if (f) std::fclose(f);
  }
};

struct PngWriter {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngWriter() {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
  }
};

struct PngReader {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngReader() {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
  }
};

uint8_t quantize8(float v, float lo, float hi) {
  float t = (v - lo) / (hi - lo) * 255.f;
  long q = std::lround(t);
  if (q < 0) q = 0;
  if (q > 255) q = 255;
  return static_cast<uint8_t>(q);
}

uint16_t quantize16(float v01) {
  long q = std::lround(v01 * 65535.f);
  if (q < 0) q = 0;
  if (q > 65535) q = 65535;
  return static_cast<uint16_t>(q);
}

// Writes one complete PNG; rows index into `bytes` with the given stride.
void write_png_file(const std::string& path, int width, int height,
                    int color_type, int bit_depth,
                    const std::vector<uint8_t>& bytes, size_t row_stride) {
  FileCloser file{std::fopen(path.c_str(), "wb")};
  if (!file.f) throw DataError("png: cannot open for writing: " + path);
  PngWriter w;
  w.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr,
                                  nullptr);
  if (!w.png) throw DataError("png: writer allocation failed");
  w.info = png_create_info_struct(w.png);
  if (!w.info) throw DataError("png: info allocation failed");

  std::vector<png_bytep> rows(static_cast<size_t>(height));
  for (int y = 0; y < height; ++y)
    rows[static_cast<size_t>(y)] =
        const_cast<png_bytep>(bytes.data() + static_cast<size_t>(y) * row_stride);

  if (setjmp(png_jmpbuf(w.png)))
    throw DataError("png: write failed: " + path);
  png_init_io(w.png, file.f);
  png_set_IHDR(w.png, w.info, static_cast<png_uint_32>(width),
               static_cast<png_uint_32>(height), bit_depth, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(w.png, w.info);
  png_write_image(w.png, rows.data());
  png_write_end(w.png, nullptr);
}

struct RawPng {
  int width = 0, height = 0;
  int color_type = 0, bit_depth = 0;
  std::vector<uint8_t> bytes;  // rows tightly packed, PNG byte order
  size_t row_stride = 0;
};

RawPng read_png_file(const std::string& path, int want_color_type,
                     int want_bit_depth, const char* what) {
  FileCloser file{std::fopen(path.c_str(), "rb")};
  if (!file.f) throw DataError("png: cannot open: " + path);
  PngReader r;
  r.png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!r.png) throw DataError("png: reader allocation failed");
  r.info = png_create_info_struct(r.png);
  if (!r.info) throw DataError("png: info allocation failed");

  RawPng out;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(r.png)))
    throw DataError("png: corrupt or truncated file: " + path);
  png_init_io(r.png, file.f);
  png_read_info(r.png, r.info);
  out.width = static_cast<int>(png_get_image_width(r.png, r.info));
  out.height = static_cast<int>(png_get_image_height(r.png, r.info));
  out.color_type = png_get_color_type(r.png, r.info);
  out.bit_depth = png_get_bit_depth(r.png, r.info);
  if (out.color_type != want_color_type || out.bit_depth != want_bit_depth)
    throw DataError(std::string("png: ") + what + " must be " +
                    std::to_string(want_bit_depth) + "-bit in the expected "
                    "layout, got color type " + std::to_string(out.color_type) +
                    " depth " + std::to_string(out.bit_depth) + ": " + path);
  out.row_stride = png_get_rowbytes(r.png, r.info);
  out.bytes.resize(out.row_stride * static_cast<size_t>(out.height));
  rows.resize(static_cast<size_t>(out.height));
  for (int y = 0; y < out.height; ++y)
    rows[static_cast<size_t>(y)] =
        out.bytes.data() + static_cast<size_t>(y) * out.row_stride;
  png_read_image(r.png, rows.data());
  png_read_end(r.png, nullptr);
  return out;
}

}  // namespace

void write_image_png(const std::string& path, const Image& img) {
  const int h = img.height(), w = img.width();
  std::vector<uint8_t> bytes(static_cast<size_t>(h) * w * 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        bytes[(static_cast<size_t>(y) * w + x) * 3 + c] =
            quantize8(img.data.at(c, y, x), -1.f, 1.f);
  write_png_file(path, w, h, PNG_COLOR_TYPE_RGB, 8, bytes,
                 static_cast<size_t>(w) * 3);
}

Image read_image_png(const std::string& path) {
  RawPng raw = read_png_file(path, PNG_COLOR_TYPE_RGB, 8, "image");
  Tensor t({3, raw.height, raw.width});
  for (int y = 0; y < raw.height; ++y)
    for (int x = 0; x < raw.width; ++x)
      for (int c = 0; c < 3; ++c)
        t.at(c, y, x) =
            float(raw.bytes[raw.row_stride * static_cast<size_t>(y) +
                            static_cast<size_t>(x) * 3 + c]) /
                255.f * 2.f -
            1.f;
  return Image::make(std::move(t));
}

void write_class_png(const std::string& path, const Tensor& onehot) {
  if (onehot.rank() != 3)
    throw DataError("png: class raster must be rank 3, got " +
                    Tensor::shape_str(onehot.shape()));
  const int nc = onehot.dim(0), h = onehot.dim(1), w = onehot.dim(2);
  if (nc > 256) throw DataError("png: more than 256 classes");
  std::vector<uint8_t> bytes(static_cast<size_t>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      int best = 0;
      float bv = onehot.at(0, y, x);
      for (int c = 1; c < nc; ++c)
        if (onehot.at(c, y, x) > bv) {
          bv = onehot.at(c, y, x);
          best = c;
        }
      bytes[static_cast<size_t>(y) * w + x] = static_cast<uint8_t>(best);
    }
  write_png_file(path, w, h, PNG_COLOR_TYPE_GRAY, 8, bytes,
                 static_cast<size_t>(w));
}

Tensor read_class_png(const std::string& path, int num_classes) {
  if (num_classes < 1 || num_classes > 256)
    throw DataError("png: class count out of range");
  RawPng raw = read_png_file(path, PNG_COLOR_TYPE_GRAY, 8, "class raster");
  Tensor t({num_classes, raw.height, raw.width});
  for (int y = 0; y < raw.height; ++y)
    for (int x = 0; x < raw.width; ++x) {
      const int idx = raw.bytes[raw.row_stride * static_cast<size_t>(y) + x];
      if (idx >= num_classes)
        throw DataError("png: class index " + std::to_string(idx) +
                        " >= " + std::to_string(num_classes) + " in " + path);
      t.at(idx, y, x) = 1.f;
    }
  return t;
}

void write_uv_png(const std::string& path, const Tensor& uv) {
  if (uv.rank() != 3 || uv.dim(0) != 2)
    throw DataError("png: uv raster must be {2,H,W}, got " +
                    Tensor::shape_str(uv.shape()));
  const int h = uv.dim(1), w = uv.dim(2);
  for (int64_t i = 0; i < uv.numel(); ++i)
    if (!(uv[i] >= 0.f && uv[i] <= 1.f))
      throw DataError("png: uv values must lie in [0,1]");
  // 16-bit gray+alpha, PNG byte order (big-endian), u then v per pixel.
  std::vector<uint8_t> bytes(static_cast<size_t>(h) * w * 4);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const uint16_t qu = quantize16(uv.at(0, y, x));
      const uint16_t qv = quantize16(uv.at(1, y, x));
      uint8_t* p = bytes.data() + (static_cast<size_t>(y) * w + x) * 4;
      p[0] = static_cast<uint8_t>(qu >> 8);
      p[1] = static_cast<uint8_t>(qu & 0xff);
      p[2] = static_cast<uint8_t>(qv >> 8);
      p[3] = static_cast<uint8_t>(qv & 0xff);
    }
  write_png_file(path, w, h, PNG_COLOR_TYPE_GRAY_ALPHA, 16, bytes,
                 static_cast<size_t>(w) * 4);
}

Tensor read_uv_png(const std::string& path) {
  RawPng raw = read_png_file(path, PNG_COLOR_TYPE_GRAY_ALPHA, 16, "uv raster");
  Tensor t({2, raw.height, raw.width});
  for (int y = 0; y < raw.height; ++y)
    for (int x = 0; x < raw.width; ++x) {
      const uint8_t* p = raw.bytes.data() +
                         raw.row_stride * static_cast<size_t>(y) +
                         static_cast<size_t>(x) * 4;
      t.at(0, y, x) = float((p[0] << 8) | p[1]) / 65535.f;
      t.at(1, y, x) = float((p[2] << 8) | p[3]) / 65535.f;
    }
  return t;
}

void write_gray_png(const std::string& path, const Tensor& map01) {
  int h = 0, w = 0;
  if (map01.rank() == 2) {
    h = map01.dim(0);
    w = map01.dim(1);
  } else if (map01.rank() == 3 && map01.dim(0) == 1) {
    h = map01.dim(1);
    w = map01.dim(2);
  } else {
    throw DataError("png: gray map must be {H,W} or {1,H,W}, got " +
                    Tensor::shape_str(map01.shape()));
  }
  std::vector<uint8_t> bytes(static_cast<size_t>(h) * w);
  for (int64_t i = 0; i < map01.numel(); ++i)
    bytes[static_cast<size_t>(i)] = quantize8(map01[i], 0.f, 1.f);
  write_png_file(path, w, h, PNG_COLOR_TYPE_GRAY, 8, bytes,
                 static_cast<size_t>(w));
}

void save_sample_dir(const std::string& dir, const Image& img,
                     const PoseMap& pose, const GarmentParsing& garment) {
  std::filesystem::create_directories(dir);
  write_image_png(dir + "/image.png", img);
  write_class_png(dir + "/pose_parts.png", pose.parts);
  write_uv_png(dir + "/pose_uv.png", pose.uv);
  write_class_png(dir + "/garment.png", garment.classes);
}

SampleFiles load_sample_dir(const std::string& dir, int num_parts,
                            int num_classes) {
  SampleFiles s{read_image_png(dir + "/image.png"),
                PoseMap::make(read_class_png(dir + "/pose_parts.png", num_parts),
                              read_uv_png(dir + "/pose_uv.png")),
                GarmentParsing::make(
                    read_class_png(dir + "/garment.png", num_classes))};
  if (s.pose.parts.dim(1) != s.image.height() ||
      s.pose.parts.dim(2) != s.image.width() ||
      s.garment.classes.dim(1) != s.image.height() ||
      s.garment.classes.dim(2) != s.image.width())
    throw DataError("sample: raster dims disagree in " + dir);
  return s;
}

SamplePair load_sample_pair(const std::string& source_dir,
                            const std::string& target_dir, int num_parts,
                            int num_classes,
                            const std::set<int>& residue_background_classes,
                            FillStrategy fill) {
  SampleFiles src = load_sample_dir(source_dir, num_parts, num_classes);
  SampleFiles tgt = load_sample_dir(target_dir, num_parts, num_classes);
  SamplePair p{std::move(src.image),    std::move(src.pose),
               std::move(src.garment),  std::move(tgt.image),
               std::move(tgt.pose),     std::move(tgt.garment),
               Residues{}};
  p.target_residues = make_residues(p.target_image, p.target_garment,
                                    residue_background_classes, fill);
  ValidationReport rep = validate_pair(p);
  if (!rep.ok)
    throw DataError("pair " + source_dir + " / " + target_dir + ": " +
                    rep.violation);
  return p;
}

}  // namespace poseflow
