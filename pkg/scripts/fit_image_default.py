"""Regenerate src/specmetric/data/image_default.json.

Fits the divisive-normalisation filters to natural greyscale images (the
scikit-image sample set, intensities in [0, 1]) with the same centre-pixel
predictor used for spectrograms. Requires scikit-image, which is not a
runtime dependency of the package.

    python scripts/fit_image_default.py [--epochs 20]
"""

import argparse
import logging
from pathlib import Path

import numpy as np
from skimage import color, data

from specmetric.fitting import AdamConfig, fit_statistical
from specmetric.nlp_core import NlpParams, save_params

IMAGES = ["camera", "moon", "brick", "grass", "gravel", "coins", "text", "page", "astronaut", "coffee", "chelsea", "rocket"]
OUT = Path(__file__).resolve().parents[1] / "src" / "specmetric" / "data" / "image_default.json"


def load_images():
    for name in IMAGES:
        img = getattr(data, name)()
        if img.ndim == 3:
            img = color.rgb2gray(img[..., :3])
        else:
            img = img / 255.0
        yield np.asarray(img, dtype=np.float64)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--epochs", type=int, default=20)
    parser.add_argument("--stages", type=int, default=6)
    parser.add_argument("--out", type=Path, default=OUT)
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    start = np.full((5, 5), 1.0 / 24)
    base = NlpParams(dn_filters=[start] * args.stages, dn_constants=[1.0] * args.stages)
    trace = fit_statistical(list(load_images()), base, AdamConfig.statistical(epochs=args.epochs))
    params = trace.params.with_stages(trace.params.dn_filters, trace.params.dn_constants, "image_default")
    save_params(args.out, params)
    for k, (f, s) in enumerate(zip(params.dn_filters, params.dn_constants), 1):
        print(f"stage {k}: sigma={s:.4g}\n{np.array2string(f, precision=3)}")


if __name__ == "__main__":
    main()
