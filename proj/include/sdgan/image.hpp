#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "sdgan/tensor.hpp"

namespace sdgan {

// Images are (3, H, W) float tensors with values in [0, 1].
using ImageTensor = Tensor<float>;

// Binary region mask, row-major H*W, values 0/1.
struct RegionMask {
  int height = 0;
  int width = 0;
  std::vector<unsigned char> bits;

  RegionMask() = default;
  RegionMask(int h, int w) : height(h), width(w), bits(static_cast<std::size_t>(h) * w, 0) {}

  unsigned char& at(int y, int x) { return bits[static_cast<std::size_t>(y) * width + x]; }
  unsigned char at(int y, int x) const { return bits[static_cast<std::size_t>(y) * width + x]; }
  std::size_t area() const;
  double area_fraction() const { return bits.empty() ? 0.0 : static_cast<double>(area()) / bits.size(); }
  bool operator==(const RegionMask&) const = default;
};

inline ImageTensor make_image(int height, int width) { return ImageTensor({3, height, width}); }

void check_image(const ImageTensor& image, int resolution);
ImageTensor clamp_image(ImageTensor image);

std::string encode_png(const ImageTensor& image);
std::string encode_png(const RegionMask& mask);
void save_png(const std::filesystem::path& path, const ImageTensor& image);
void save_png(const std::filesystem::path& path, const RegionMask& mask);
ImageTensor decode_png(const std::string& bytes, const std::string& origin = "<memory>");
ImageTensor load_png(const std::filesystem::path& path);
RegionMask load_mask_png(const std::filesystem::path& path);

// Frames laid side by side into one strip.
ImageTensor hstack(const std::vector<ImageTensor>& frames);

}  // namespace sdgan
