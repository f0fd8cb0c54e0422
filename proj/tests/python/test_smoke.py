import math

import numpy as np
import pytest

phymoe = pytest.importorskip("phymoe")


def random_image(h, w, c, seed):
    rng = np.random.default_rng(seed)
    return rng.uniform(0.05, 0.95, size=(h, w, c))


def test_metrics_roundtrip():
    img = random_image(16, 16, 3, 0)
    assert phymoe.psnr(img, img) == 100.0
    assert phymoe.ssim(img, img) == pytest.approx(1.0)
    other = np.clip(img + 0.1, 0.0, 1.0)
    assert phymoe.psnr(img, other) < 100.0


def test_haze_inversion():
    img = random_image(32, 32, 3, 1)
    hazy = phymoe.apply_haze(img, 0.7, [0.9, 0.9, 0.9])
    rec = phymoe.dehaze_oracle(hazy, 0.7, [0.9, 0.9, 0.9])
    assert phymoe.psnr(rec, img) >= 60.0


def test_lowlight_inversion():
    img = random_image(32, 32, 3, 2)
    dark = phymoe.apply_lowlight(img, 2.2)
    rec = phymoe.lowlight_oracle(dark, 1.0, 2.2)
    assert phymoe.psnr(rec, img) >= 60.0


def test_noise_determinism():
    img = random_image(16, 16, 3, 3)
    a = phymoe.apply_noise(img, 0.1, 42)
    b = phymoe.apply_noise(img, 0.1, 42)
    np.testing.assert_array_equal(a, b)


def test_blur_kernel_normalized():
    k = phymoe.make_blur_kernel(2.0, 0.5, 0.25, 11)
    assert k.shape == (11, 11)
    assert k.sum() == pytest.approx(1.0, abs=1e-12)
    assert (k >= 0).all()


def test_route_topk():
    full, idx, top = phymoe.route([2.0, 1.0, 0.0, 0.0], 1.0, 2)
    assert idx == [0, 1]
    assert top[0] == pytest.approx(1 / (1 + math.exp(-1)), abs=1e-9)
    assert sum(top) == pytest.approx(1.0)
    assert sum(full) == pytest.approx(1.0)


def test_balance_loss_fixture():
    assert phymoe.balance_loss([1.0, 0.0, 0.0, 0.0]) == pytest.approx(3.0, abs=1e-6)
    assert phymoe.balance_loss([0.25, 0.25, 0.25, 0.25]) == pytest.approx(0.0, abs=1e-9)


def test_direction_logits():
    l0 = phymoe.direction_logits(0.0, 0.3)
    assert l0 == pytest.approx([1.0, 0.0, 0.0])
    l1 = phymoe.direction_logits(1.0, 0.0)
    assert l1 == pytest.approx([0.0, 2.0, 1.0])


def test_png_roundtrip(tmp_path):
    img = random_image(12, 12, 3, 4)
    path = str(tmp_path / "img.png")
    phymoe.save_image(img, path, 16)
    back = phymoe.load_image(path)
    assert np.abs(back - img).max() <= 1.0 / 65535.0


def test_count_params_positive():
    params, macs = phymoe.count_params(8, 16)
    assert params > 0
    assert macs > 0
