# SPDX-License-Identifier: Apache-2.0
# Interior bicubic values from Pillow (Keys a=-0.5, pixel-center) for a 5x5 image upsampled x3.
import numpy as np
from PIL import Image

src = np.array([[0.10, 0.20, 0.30, 0.35, 0.40],
                [0.15, 0.25, 0.40, 0.45, 0.50],
                [0.20, 0.35, 0.55, 0.60, 0.55],
                [0.25, 0.40, 0.60, 0.70, 0.65],
                [0.30, 0.45, 0.65, 0.75, 0.80]], dtype=np.float32)
up = np.asarray(Image.fromarray(src, mode="F").resize((15, 15), Image.BICUBIC), dtype=np.float64)
for y in range(4, 10):
    print("{" + ", ".join(f"{up[y, x]:.7f}" for x in range(4, 10)) + "},")
