#pragma once

// RGB float images and lossless PNG input/output.

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "scalespace/core.hpp"

namespace scalespace {

/// Interleaved RGB image, row-major, values nominally in [0, 1].
struct Image {
  int width = 0;
  int height = 0;
  std::vector<float> data;

  Image() = default;
  Image(int w, int h, float fill = 0.0f)
      : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, fill) {}

  std::size_t index(int x, int y, int c = 0) const { return (static_cast<std::size_t>(y) * width + x) * 3 + c; }
  float& at(int x, int y, int c) { return data[index(x, y, c)]; }
  float at(int x, int y, int c) const { return data[index(x, y, c)]; }
  std::span<float> row(int y) {
    return {data.data() + static_cast<std::size_t>(y) * width * 3, static_cast<std::size_t>(width) * 3};
  }
  std::span<const float> row(int y) const {
    return {data.data() + static_cast<std::size_t>(y) * width * 3, static_cast<std::size_t>(width) * 3};
  }
  bool empty() const { return data.empty(); }

  Image crop(int x0, int y0, int w, int h) const {
    Image out(w, h);
    for (int y = 0; y < h; ++y)
      std::copy_n(data.begin() + index(x0, y0 + y), static_cast<std::size_t>(w) * 3, out.data.begin() + out.index(0, y));
    return out;
  }

  void paste(const Image& src, int x0, int y0) {
    for (int y = 0; y < src.height; ++y)
      std::copy_n(src.data.begin() + src.index(0, y), static_cast<std::size_t>(src.width) * 3,
                  data.begin() + index(x0, y0 + y));
  }

  void clamp01() {
    for (float& v : data) v = std::clamp(v, 0.0f, 1.0f);
  }
};

/// Mean absolute difference over all pixels and channels.
inline double mean_abs_diff(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height) throw DomainError("image size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) acc += std::abs(a.data[i] - b.data[i]);
  return a.data.empty() ? 0.0 : acc / static_cast<double>(a.data.size());
}

inline double max_abs_diff(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height) throw DomainError("image size mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i)
    m = std::max(m, static_cast<double>(std::abs(a.data[i] - b.data[i])));
  return m;
}

inline constexpr double kPsnrCap = 99.0;

/// PSNR for signals in [0, 1]; identical inputs return kPsnrCap.
inline double psnr(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height) throw DomainError("image size mismatch");
  double mse = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    mse += d * d;
  }
  mse /= static_cast<double>(std::max<std::size_t>(1, a.data.size()));
  if (mse <= 1e-10 * 1e-10) return kPsnrCap;
  return std::min(kPsnrCap, -10.0 * std::log10(mse));
}

namespace detail {

struct PngWriteState {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngWriteState() { png_destroy_write_struct(&png, &info); }
};

inline void png_error_fn(png_structp, png_const_charp msg) { throw DataError(std::string("png: ") + msg); }
inline void png_warning_fn(png_structp, png_const_charp) {}

inline void encode_row(std::span<const float> rgb, int bit_depth, std::vector<unsigned char>& out) {
  if (bit_depth == 8) {
    out.resize(rgb.size());
    for (std::size_t i = 0; i < rgb.size(); ++i)
      out[i] = static_cast<unsigned char>(std::lround(std::clamp(rgb[i], 0.0f, 1.0f) * 255.0f));
  } else {
    out.resize(rgb.size() * 2);
    for (std::size_t i = 0; i < rgb.size(); ++i) {
      const auto v = static_cast<std::uint16_t>(std::lround(std::clamp(rgb[i], 0.0f, 1.0f) * 65535.0f));
      out[2 * i] = static_cast<unsigned char>(v >> 8);
      out[2 * i + 1] = static_cast<unsigned char>(v & 0xff);
    }
  }
}

}  // namespace detail

/// Streams an RGB PNG row by row so that very large slices never have to be
/// resident in memory.
class PngRowWriter {
 public:
  PngRowWriter(const std::filesystem::path& path, int width, int height, int bit_depth = 8)
      : width_(width), height_(height), bit_depth_(bit_depth) {
    if (bit_depth != 8 && bit_depth != 16) throw DomainError("png bit depth must be 8 or 16");
    file_ = std::fopen(path.c_str(), "wb");
    if (!file_) throw DataError("cannot open " + path.string() + " for writing");
    state_ = std::make_unique<detail::PngWriteState>();
    state_->png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, detail::png_error_fn,
                                          detail::png_warning_fn);
    state_->info = png_create_info_struct(state_->png);
    png_init_io(state_->png, file_);
    png_set_IHDR(state_->png, state_->info, width, height, bit_depth, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(state_->png, state_->info);
  }

  PngRowWriter(const PngRowWriter&) = delete;
  PngRowWriter& operator=(const PngRowWriter&) = delete;

  ~PngRowWriter() {
    if (state_ && rows_written_ == height_) png_write_end(state_->png, nullptr);
    state_.reset();
    if (file_) std::fclose(file_);
  }

  void write_row(std::span<const float> rgb) {
    if (static_cast<int>(rgb.size()) != width_ * 3) throw DomainError("png row width mismatch");
    detail::encode_row(rgb, bit_depth_, buffer_);
    png_write_row(state_->png, buffer_.data());
    ++rows_written_;
  }

 private:
  int width_;
  int height_;
  int bit_depth_;
  int rows_written_ = 0;
  std::FILE* file_ = nullptr;
  std::unique_ptr<detail::PngWriteState> state_;
  std::vector<unsigned char> buffer_;
};

inline void write_png(const std::filesystem::path& path, const Image& img, int bit_depth = 8) {
  PngRowWriter writer(path, img.width, img.height, bit_depth);
  for (int y = 0; y < img.height; ++y) writer.write_row(img.row(y));
}

/// Encodes to an in-memory PNG byte string.
inline std::string encode_png(const Image& img, int bit_depth = 8) {
  detail::PngWriteState st;
  st.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, detail::png_error_fn,
                                   detail::png_warning_fn);
  st.info = png_create_info_struct(st.png);
  std::string out;
  png_set_write_fn(
      st.png, &out,
      [](png_structp p, png_bytep bytes, png_size_t n) {
        static_cast<std::string*>(png_get_io_ptr(p))->append(reinterpret_cast<const char*>(bytes), n);
      },
      [](png_structp) {});
  png_set_IHDR(st.png, st.info, img.width, img.height, bit_depth, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(st.png, st.info);
  std::vector<unsigned char> row;
  for (int y = 0; y < img.height; ++y) {
    detail::encode_row(img.row(y), bit_depth, row);
    png_write_row(st.png, row.data());
  }
  png_write_end(st.png, nullptr);
  return out;
}

namespace detail {

inline Image read_png_from(png_structp png, png_infop info) {
  png_read_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  const int out_depth = png_get_bit_depth(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  std::vector<unsigned char> buf(rowbytes * h);
  std::vector<png_bytep> rows(h);
  for (int y = 0; y < h; ++y) rows[y] = buf.data() + rowbytes * y;
  png_read_image(png, rows.data());
  Image img(w, h);
  for (int y = 0; y < h; ++y) {
    const unsigned char* r = rows[y];
    for (int i = 0; i < w * 3; ++i) {
      img.data[static_cast<std::size_t>(y) * w * 3 + i] =
          out_depth == 16 ? static_cast<float>((r[2 * i] << 8 | r[2 * i + 1]) / 65535.0)
                          : static_cast<float>(r[i] / 255.0);
    }
  }
  return img;
}

struct PngReadState {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngReadState() { png_destroy_read_struct(&png, &info, nullptr); }
};

}  // namespace detail

inline Image read_png(const std::filesystem::path& path) {
  std::unique_ptr<std::FILE, int (*)(std::FILE*)> file(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!file) throw DataError("cannot read image " + path.string());
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw DataError("not a PNG file: " + path.string());
  detail::PngReadState st;
  st.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, detail::png_error_fn, detail::png_warning_fn);
  st.info = png_create_info_struct(st.png);
  png_init_io(st.png, file.get());
  png_set_sig_bytes(st.png, 8);
  return detail::read_png_from(st.png, st.info);
}

inline Image decode_png(const std::string& bytes) {
  if (bytes.size() < 8 || png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8) != 0)
    throw DataError("not a PNG stream");
  struct Cursor {
    const std::string* s;
    std::size_t pos;
  } cursor{&bytes, 0};
  detail::PngReadState st;
  st.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, detail::png_error_fn, detail::png_warning_fn);
  st.info = png_create_info_struct(st.png);
  png_set_read_fn(st.png, &cursor, [](png_structp p, png_bytep out, png_size_t n) {
    auto* c = static_cast<Cursor*>(png_get_io_ptr(p));
    if (c->pos + n > c->s->size()) png_error(p, "truncated stream");
    std::copy_n(c->s->data() + c->pos, n, out);
    c->pos += n;
  });
  return detail::read_png_from(st.png, st.info);
}

}  // namespace scalespace
