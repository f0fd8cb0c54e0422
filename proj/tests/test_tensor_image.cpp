#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "phymoe/image.hpp"
#include "phymoe/rng.hpp"

using namespace phymoe;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  const fs::path p = fs::temp_directory_path() / "phymoe_img_tests";
  fs::create_directories(p);
  return p;
}

ImageTensor random_image(int h, int w, int c, uint64_t seed) {
  Rng rng(seed);
  Tensor t({h, w, c});
  for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform();
  return ImageTensor::from_tensor(std::move(t));
}

}  // namespace

TEST_CASE("tensor basics") {
  Tensor t = Tensor::zeros({2, 3, 4});
  CHECK(t.size() == 24);
  CHECK(t.rank() == 3);
  t.at3(1, 2, 3) = 7.0;
  CHECK(t[23] == 7.0);
  CHECK(t.sum() == doctest::Approx(7.0));
  CHECK_THROWS(Tensor::zeros({0, 3}));
  CHECK_THROWS(Tensor::from({2, 2}, {1.0, 2.0, 3.0}));
}

TEST_CASE("image tensor validates range and shape") {
  Tensor good = Tensor::full({4, 4, 3}, 0.5);
  CHECK_NOTHROW(ImageTensor::from_tensor(good));

  Tensor bad = good;
  bad[0] = 1.5;
  CHECK_THROWS(ImageTensor::from_tensor(bad));
  ImageTensor clamped = ImageTensor::from_tensor_clamped(bad);
  CHECK(clamped.at(0, 0, 0) == 1.0);

  CHECK_THROWS(ImageTensor::from_tensor(Tensor::zeros({4, 4, 2})));
}

TEST_CASE("8-bit png scaling endpoints") {
  // 255 -> 1.0 and 0 -> 0.0 after load
  const fs::path path = temp_dir() / "endpoints.png";
  ImageTensor img(2, 2, 1);
  img.at(0, 0, 0) = 1.0;
  img.at(1, 1, 0) = 0.0;
  save_image(img, path.string(), 8);
  const ImageTensor back = load_image(path.string());
  CHECK(back.at(0, 0, 0) == doctest::Approx(1.0));
  CHECK(back.at(1, 1, 0) == doctest::Approx(0.0));
}

TEST_CASE("16-bit sample scales by 1/65535") {
  // 32768/65535 computed directly as the expected element
  const fs::path path = temp_dir() / "depth16.png";
  ImageTensor img(2, 2, 1);
  img.at(0, 0, 0) = 32768.0 / 65535.0;
  save_image(img, path.string(), 16);
  const ImageTensor back = load_image(path.string());
  const double expected = 32768.0 / 65535.0;
  CHECK(back.at(0, 0, 0) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(back.at(0, 0, 0) == doctest::Approx(0.50001).epsilon(1e-4));
}

TEST_CASE("constant 0.5 image round-trips within one 8-bit step") {
  const fs::path path = temp_dir() / "half.png";
  ImageTensor img(8, 8, 3);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x)
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = 0.5;
  save_image(img, path.string(), 8);
  const ImageTensor back = load_image(path.string());
  for (int64_t i = 0; i < back.size(); ++i)
    CHECK(std::fabs(back.tensor()[i] - 0.5) <= 1.0 / 255.0);
}

TEST_CASE("zero image round-trips exactly") {
  const fs::path path = temp_dir() / "zero.png";
  ImageTensor img(5, 7, 3);
  save_image(img, path.string(), 8);
  const ImageTensor back = load_image(path.string());
  for (int64_t i = 0; i < back.size(); ++i) CHECK(back.tensor()[i] == 0.0);
}

TEST_CASE("random image round-trips within quantization, both depths") {
  for (int depth : {8, 16}) {
    const fs::path path = temp_dir() / ("rand" + std::to_string(depth) + ".png");
    const ImageTensor img = random_image(16, 12, 3, 99);
    save_image(img, path.string(), depth);
    const ImageTensor back = load_image(path.string());
    const double step = depth == 8 ? 1.0 / 255.0 : 1.0 / 65535.0;
    double worst = 0;
    for (int64_t i = 0; i < back.size(); ++i)
      worst = std::max(worst, std::fabs(back.tensor()[i] - img.tensor()[i]));
    CHECK(worst <= step);
  }
}

TEST_CASE("grayscale byte-identical rewrite is deterministic") {
  const fs::path a = temp_dir() / "det_a.png";
  const fs::path b = temp_dir() / "det_b.png";
  const ImageTensor img = random_image(9, 9, 1, 123);
  save_image(img, a.string());
  save_image(img, b.string());
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  const std::string da((std::istreambuf_iterator<char>(fa)), {});
  const std::string db((std::istreambuf_iterator<char>(fb)), {});
  CHECK(da == db);
  CHECK(!da.empty());
}

TEST_CASE("load errors") {
  CHECK_THROWS(load_image("/nonexistent/nowhere.png"));
  const fs::path bogus = temp_dir() / "bogus.png";
  std::ofstream(bogus) << "not a png";
  CHECK_THROWS(load_image(bogus.string()));
}
