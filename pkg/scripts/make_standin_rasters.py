"""Generate the log10-permeability stand-in rasters shipped in scenarios/data.

The fields are smoothed Gaussian noise, rescaled to a target mean and
standard deviation of log10(K / md) and clipped. They imitate the contrast of
a horizontal layer of the SPE10 model without reproducing any actual layer.

    python3 scripts/make_standin_rasters.py
"""

from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

OUT = Path(__file__).resolve().parent.parent / "scenarios" / "data"


def standin(n: int, seed: int, mean: float, std: float, corr: tuple, lo: float, hi: float) -> np.ndarray:
    rng = np.random.default_rng(seed)
    f = gaussian_filter(rng.standard_normal((n, n)), sigma=corr, mode="wrap")
    f = (f - f.mean()) / f.std()
    return np.clip(mean + std * f, lo, hi)


def save(path: Path, field: np.ndarray) -> None:
    np.savetxt(path, field, fmt="%.6f", header="")
    print(f"{path.name}: {field.shape}, log10 K in [{field.min():.2f}, {field.max():.2f}], "
          f"mean {field.mean():.2f}, std {field.std():.2f}")


if __name__ == "__main__":
    OUT.mkdir(parents=True, exist_ok=True)
    save(OUT / "spe10_standin_60x60.txt", standin(60, 10, mean=1.0, std=1.2, corr=(1.5, 4.0), lo=-2.5, hi=3.5))
    save(OUT / "countercurrent_logk_50x50.txt", standin(50, 4, mean=2.0, std=0.6, corr=(3.0, 3.0), lo=0.0, hi=3.0))
