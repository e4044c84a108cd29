#include "sdgan/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "sdgan/tensor_file.hpp"

namespace sdgan {

std::size_t RegionMask::area() const {
  return static_cast<std::size_t>(std::count_if(bits.begin(), bits.end(), [](unsigned char b) { return b != 0; }));
}

void check_image(const ImageTensor& image, int resolution) {
  require(image.rank() == 3 && image.dim(0) == 3, ErrorKind::ShapeMismatch,
          "image must be (3,H,W), got " + shape_string(image.shape()));
  require(image.dim(1) == resolution && image.dim(2) == resolution, ErrorKind::ResolutionMismatch,
          "image is " + std::to_string(image.dim(1)) + "x" + std::to_string(image.dim(2)) + ", expected " +
              std::to_string(resolution));
}

ImageTensor clamp_image(ImageTensor image) {
  image.data() = image.data().cwiseMax(0.0f).cwiseMin(1.0f);
  return image;
}

namespace {

unsigned char to_byte(float v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

void append_bytes(png_structp png, png_bytep data, png_size_t len) {
  auto* out = static_cast<std::string*>(png_get_io_ptr(png));
  out->append(reinterpret_cast<const char*>(data), len);
}

void flush_noop(png_structp) {}

std::string encode_rows(int width, int height, int color_type, int channels, const std::vector<unsigned char>& pixels) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) fail(ErrorKind::IoError, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  std::string out;
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorKind::IoError, "PNG encoding failed");
  }
  png_set_write_fn(png, &out, append_bytes, flush_noop);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y) {
    auto* row = const_cast<png_bytep>(pixels.data() + static_cast<std::size_t>(y) * width * channels);
    png_write_row(png, row);
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

struct ReadCursor {
  const std::string* bytes;
  std::size_t offset;
};

void read_bytes(png_structp png, png_bytep data, png_size_t len) {
  auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(png));
  if (cur->offset + len > cur->bytes->size()) png_error(png, "truncated PNG");
  std::memcpy(data, cur->bytes->data() + cur->offset, len);
  cur->offset += len;
}

}  // namespace

std::string encode_png(const ImageTensor& image) {
  require(image.rank() == 3 && image.dim(0) == 3, ErrorKind::ShapeMismatch, "encode_png expects (3,H,W)");
  const int h = image.dim(1), w = image.dim(2);
  std::vector<unsigned char> px(static_cast<std::size_t>(h) * w * 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) px[(static_cast<std::size_t>(y) * w + x) * 3 + c] = to_byte(image.at(c, y, x));
  return encode_rows(w, h, PNG_COLOR_TYPE_RGB, 3, px);
}

std::string encode_png(const RegionMask& mask) {
  std::vector<unsigned char> px(mask.bits.size());
  std::transform(mask.bits.begin(), mask.bits.end(), px.begin(), [](unsigned char b) { return b ? 255 : 0; });
  return encode_rows(mask.width, mask.height, PNG_COLOR_TYPE_GRAY, 1, px);
}

void save_png(const std::filesystem::path& path, const ImageTensor& image) { write_file(path, encode_png(image)); }

void save_png(const std::filesystem::path& path, const RegionMask& mask) { write_file(path, encode_png(mask)); }

ImageTensor decode_png(const std::string& bytes, const std::string& origin) {
  if (bytes.size() < 8 || png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8) != 0)
    fail(ErrorKind::UnreadableImage, origin + ": not a PNG file");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) fail(ErrorKind::UnreadableImage, origin + ": libpng init failed");
  ReadCursor cur{&bytes, 0};
  ImageTensor image;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorKind::UnreadableImage, origin + ": corrupt PNG");
  }
  png_set_read_fn(png, &cur, read_bytes);
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  std::vector<unsigned char> px(static_cast<std::size_t>(w) * h * 3);
  std::vector<png_bytep> rows(static_cast<std::size_t>(h));
  for (int y = 0; y < h; ++y) rows[static_cast<std::size_t>(y)] = px.data() + static_cast<std::size_t>(y) * w * 3;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);

  image = make_image(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        image.at(c, y, x) = static_cast<float>(px[(static_cast<std::size_t>(y) * w + x) * 3 + c]) / 255.0f;
  return image;
}

ImageTensor load_png(const std::filesystem::path& path) { return decode_png(read_file(path), path.string()); }

RegionMask load_mask_png(const std::filesystem::path& path) {
  const ImageTensor img = load_png(path);
  RegionMask m(img.dim(1), img.dim(2));
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) m.at(y, x) = img.at(0, y, x) > 0.5f ? 1 : 0;
  return m;
}

ImageTensor hstack(const std::vector<ImageTensor>& frames) {
  require(!frames.empty(), ErrorKind::InvalidArgument, "hstack of no frames");
  const int h = frames.front().dim(1), w = frames.front().dim(2);
  ImageTensor out = make_image(h, w * static_cast<int>(frames.size()));
  for (std::size_t i = 0; i < frames.size(); ++i)
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out.at(c, y, static_cast<int>(i) * w + x) = frames[i].at(c, y, x);
  return out;
}

}  // namespace sdgan
