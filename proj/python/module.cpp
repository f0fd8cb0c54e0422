// Python bindings for the main operations: synthesis, metrics, routing
// math and the loss fixtures. Images cross the boundary as float64 numpy
// arrays of shape (H, W, C) in [0, 1].

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "phymoe/degrade.hpp"
#include "phymoe/experts.hpp"
#include "phymoe/losses.hpp"
#include "phymoe/metrics.hpp"
#include "phymoe/model.hpp"
#include "phymoe/router.hpp"
#include "phymoe/train.hpp"

namespace py = pybind11;
using namespace phymoe;

namespace {

ImageTensor image_from_array(const py::array_t<double>& arr) {
  const auto buf = arr.request();
  if (buf.ndim != 3) throw std::invalid_argument("expected an (H, W, C) array");
  const int h = static_cast<int>(buf.shape[0]);
  const int w = static_cast<int>(buf.shape[1]);
  const int c = static_cast<int>(buf.shape[2]);
  Tensor t({h, w, c});
  const auto view = arr.unchecked<3>();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch) t.at3(y, x, ch) = view(y, x, ch);
  return ImageTensor::from_tensor_clamped(std::move(t));
}

py::array_t<double> image_to_array(const ImageTensor& img) {
  py::array_t<double> arr({img.height(), img.width(), img.channels()});
  auto view = arr.mutable_unchecked<3>();
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < img.channels(); ++c) view(y, x, c) = img.at(y, x, c);
  return arr;
}

py::array_t<double> tensor2_to_array(const Tensor& t) {
  py::array_t<double> arr({t.dim(0), t.dim(1)});
  auto view = arr.mutable_unchecked<2>();
  for (int i = 0; i < t.dim(0); ++i)
    for (int j = 0; j < t.dim(1); ++j) view(i, j) = t.at2(i, j);
  return arr;
}

}  // namespace

PYBIND11_MODULE(_phymoe, m) {
  m.doc() = "physics-guided mixture-of-experts restoration toolkit";

  m.def("load_image",
        [](const std::string& path) { return image_to_array(load_image(path)); },
        py::arg("path"));
  m.def("save_image",
        [](const py::array_t<double>& img, const std::string& path, int bit_depth) {
          save_image(image_from_array(img), path, bit_depth);
        },
        py::arg("image"), py::arg("path"), py::arg("bit_depth") = 8);

  m.def("psnr",
        [](const py::array_t<double>& a, const py::array_t<double>& b) {
          return psnr(image_from_array(a), image_from_array(b));
        },
        py::arg("a"), py::arg("b"));
  m.def("ssim",
        [](const py::array_t<double>& a, const py::array_t<double>& b) {
          return ssim(image_from_array(a), image_from_array(b));
        },
        py::arg("a"), py::arg("b"));

  m.def("apply_haze",
        [](const py::array_t<double>& img, double t, std::array<double, 3> A) {
          return image_to_array(apply_haze(image_from_array(img), t, A));
        },
        py::arg("image"), py::arg("t"), py::arg("A"));
  m.def("apply_noise",
        [](const py::array_t<double>& img, double sigma, uint64_t seed) {
          return image_to_array(apply_noise(image_from_array(img), sigma, seed));
        },
        py::arg("image"), py::arg("sigma"), py::arg("seed"));
  m.def("apply_lowlight",
        [](const py::array_t<double>& img, double gamma) {
          return image_to_array(apply_lowlight(image_from_array(img), gamma));
        },
        py::arg("image"), py::arg("gamma"));
  m.def("apply_blur",
        [](const py::array_t<double>& img, double sigma_x, double sigma_y, double theta,
           int kernel_size) {
          BlurSpec spec;
          spec.sigma_x = sigma_x;
          spec.sigma_y = sigma_y;
          spec.theta = theta;
          spec.kernel_size = kernel_size;
          return image_to_array(apply_blur(image_from_array(img), spec));
        },
        py::arg("image"), py::arg("sigma_x"), py::arg("sigma_y"), py::arg("theta"),
        py::arg("kernel_size") = 11);
  m.def("make_blur_kernel",
        [](double sigma_x, double sigma_y, double theta, int kernel_size) {
          BlurSpec spec;
          spec.sigma_x = sigma_x;
          spec.sigma_y = sigma_y;
          spec.theta = theta;
          spec.kernel_size = kernel_size;
          return tensor2_to_array(make_blur_kernel(spec));
        },
        py::arg("sigma_x"), py::arg("sigma_y"), py::arg("theta"),
        py::arg("kernel_size") = 11);

  m.def("dehaze_oracle",
        [](const py::array_t<double>& img, double t, std::array<double, 3> A) {
          return image_to_array(dehaze_oracle(image_from_array(img), t, A));
        },
        py::arg("image"), py::arg("t"), py::arg("A"));
  m.def("lowlight_oracle",
        [](const py::array_t<double>& img, double L, double gamma) {
          return image_to_array(lowlight_oracle(image_from_array(img), L, gamma));
        },
        py::arg("image"), py::arg("L"), py::arg("gamma"));

  m.def("route",
        [](std::vector<double> logits, double tau, int k) {
          Tensor t({static_cast<int>(logits.size())});
          for (size_t i = 0; i < logits.size(); ++i) t[static_cast<int64_t>(i)] = logits[i];
          const auto d = phymoe::route(make_const(t), tau, k);
          std::vector<double> full(d.full_weights.val().data(),
                                   d.full_weights.val().data() + d.full_weights.size());
          std::vector<double> top;
          for (const auto& w : d.top_weights) top.push_back(w.val()[0]);
          return py::make_tuple(full, d.top_indices, top);
        },
        py::arg("logits"), py::arg("tau") = 1.0, py::arg("k") = 1,
        "returns (full_weights, top_indices, top_weights)");

  m.def("balance_loss", [](std::vector<double> w) {
    Tensor t({static_cast<int>(w.size())});
    for (size_t i = 0; i < w.size(); ++i) t[static_cast<int64_t>(i)] = w[i];
    return balance_loss(make_const(t)).val()[0];
  });

  m.def("direction_logits", &direction_logits, py::arg("a"), py::arg("theta"));

  m.def("count_params", [](int embed_dim, int resolution) {
    ModelConfig cfg = ModelConfig::desk();
    cfg.embed_dim = embed_dim;
    const CostReport r = count_params(cfg, resolution);
    return py::make_tuple(r.param_count, r.macs_per_forward);
  }, py::arg("embed_dim") = 8, py::arg("resolution") = 32);

  m.def("restore",
        [](const std::string& checkpoint, const py::array_t<double>& img, int k, double tau) {
          LoadedCheckpoint ckpt = load_checkpoint(checkpoint);
          ForwardOut out = ckpt.model->forward(ops::image_var(image_from_array(img)),
                                               k, tau);
          return image_to_array(ops::to_image_clamped(out.xhat));
        },
        py::arg("checkpoint"), py::arg("image"), py::arg("k") = 1, py::arg("tau") = 1.0);
}
