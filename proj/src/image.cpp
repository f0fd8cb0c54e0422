#include "phymoe/image.hpp"

#include <cmath>
#include <stdexcept>

namespace phymoe {

ImageTensor::ImageTensor(int height, int width, int channels)
    : height_(height), width_(width), channels_(channels) {
  if (height <= 0 || width <= 0 || (channels != 1 && channels != 3))
    throw std::invalid_argument("bad image extents");
  data_ = Tensor::zeros({height, width, channels});
}

ImageTensor ImageTensor::from_tensor(Tensor t) {
  if (t.rank() != 3) throw std::invalid_argument("image tensor must be rank 3");
  const int c = t.dim(2);
  if (c != 1 && c != 3) throw std::invalid_argument("channels must be 1 or 3");
  for (int64_t i = 0; i < t.size(); ++i) {
    const double v = t[i];
    if (!std::isfinite(v) || v < 0.0 || v > 1.0)
      throw std::invalid_argument("image element outside [0,1]");
  }
  ImageTensor img;
  img.height_ = t.dim(0);
  img.width_ = t.dim(1);
  img.channels_ = c;
  img.data_ = std::move(t);
  return img;
}

ImageTensor ImageTensor::from_tensor_clamped(Tensor t) {
  if (t.rank() != 3) throw std::invalid_argument("image tensor must be rank 3");
  const int c = t.dim(2);
  if (c != 1 && c != 3) throw std::invalid_argument("channels must be 1 or 3");
  for (int64_t i = 0; i < t.size(); ++i) {
    double v = t[i];
    if (!std::isfinite(v)) throw std::invalid_argument("non-finite image element");
    t[i] = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
  }
  ImageTensor img;
  img.height_ = t.dim(0);
  img.width_ = t.dim(1);
  img.channels_ = c;
  img.data_ = std::move(t);
  return img;
}

}  // namespace phymoe
