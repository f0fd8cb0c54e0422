#pragma once

#include <string>

#include "phymoe/tensor.hpp"

namespace phymoe {

/// H x W x C image with every element finite and inside [0, 1].
/// Channels is 1 (gray) or 3 (RGB).
class ImageTensor {
 public:
  ImageTensor() = default;
  ImageTensor(int height, int width, int channels);  // zero image

  // Validates range and shape; throws on violation.
  static ImageTensor from_tensor(Tensor t);
  // Clamps out-of-range values instead of rejecting them.
  static ImageTensor from_tensor_clamped(Tensor t);

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }

  const Tensor& tensor() const { return data_; }
  double at(int y, int x, int c) const { return data_.at3(y, x, c); }
  double& at(int y, int x, int c) { return data_.at3(y, x, c); }
  int64_t size() const { return data_.size(); }

  bool same_shape(const ImageTensor& o) const {
    return height_ == o.height_ && width_ == o.width_ && channels_ == o.channels_;
  }

 private:
  int height_ = 0, width_ = 0, channels_ = 0;
  Tensor data_;
};

// PNG raster I/O (8- and 16-bit, gray and RGB; nothing else).
ImageTensor load_image(const std::string& path);
void save_image(const ImageTensor& img, const std::string& path,
                int bit_depth = 8);

}  // namespace phymoe
