"""Physics-guided mixture-of-experts restoration toolkit (python surface).

The compiled extension carries the implementation; this package re-exports
it. During development the extension can live in the CMake build tree,
pointed at by PHYMOE_EXT_DIR.
"""

import os
import sys

_ext_dir = os.environ.get("PHYMOE_EXT_DIR")
if _ext_dir and _ext_dir not in sys.path:
    sys.path.insert(0, _ext_dir)

from _phymoe import (  # noqa: E402,F401
    apply_blur,
    apply_haze,
    apply_lowlight,
    apply_noise,
    balance_loss,
    count_params,
    dehaze_oracle,
    direction_logits,
    load_image,
    lowlight_oracle,
    make_blur_kernel,
    psnr,
    restore,
    route,
    save_image,
    ssim,
)

__all__ = [
    "apply_blur",
    "apply_haze",
    "apply_lowlight",
    "apply_noise",
    "balance_loss",
    "count_params",
    "dehaze_oracle",
    "direction_logits",
    "load_image",
    "lowlight_oracle",
    "make_blur_kernel",
    "psnr",
    "restore",
    "route",
    "save_image",
    "ssim",
]
