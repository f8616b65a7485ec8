"""Compute reference values with the loop oracles in tests/oracles.py and freeze them.

Only numpy and the oracles are used, never the package, so the frozen file is
an independent record.  Rerun after changing an oracle:

    python3 scripts/freeze_oracles.py
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "tests"))

import oracles  # noqa: E402

OUT = ROOT / "tests" / "data" / "oracle_values.json"


def ssim_pair(seed=3, n=16, noise=0.05):
    rng = np.random.default_rng(seed)
    a = rng.random((n, n, n))
    b = np.clip(a + noise * rng.standard_normal(a.shape), 0.0, 1.0)
    return a, b


def compute() -> dict:
    values = {}

    rng = np.random.default_rng(11)
    vol = rng.random((8, 8, 8))
    warped = np.zeros_like(vol)
    for idx in np.ndindex(vol.shape):
        warped[idx] = oracles.trilinear(vol, np.array(idx) + [0.5, 0.0, 0.0])
    values["warp_half_shift"] = {"seed": 11, "shift": [0.5, 0, 0], "values": warped.ravel().tolist()}

    rng = np.random.default_rng(5)
    a, b = rng.random((8, 8, 8)), rng.random((8, 8, 8))
    values["rmse_8"] = {"seed": 5, "value": oracles.rmse(a, b)}

    a, b = ssim_pair()
    values["ssim_16"] = {"seed": 3, "noise": 0.05, "value": oracles.ssim(a, b)}
    values["ml_ssim_16_M2"] = {"seed": 3, "noise": 0.05, "value": oracles.ml_ssim(a, b, 2)}

    impulse = np.zeros((8, 8, 8))
    impulse[4, 4, 4] = 1.0
    values["gaussian_impulse_8"] = {"sigma": 1.0,
                                    "values": oracles.gaussian_level(impulse, 1.0).ravel().tolist()}

    rng = np.random.default_rng(9)
    vol = rng.random((8, 8, 8))
    values["block_mean_8"] = {"seed": 9, "values": oracles.block_mean(vol).ravel().tolist()}

    v = np.array([0.0, 0.0, 1.0, 1.0])
    grid = np.linspace(-0.2, 1.2, 29)
    best, arg = oracles.tv_grid_search(v, 0.2, grid)
    values["tv_step_4"] = {"v": v.tolist(), "theta": 0.2, "grid": [-0.2, 1.2, 29],
                           "objective": best, "argmin": arg.tolist()}

    values["strain_step_peak"] = {"jump": 2.0, "value": oracles.strain_step_peak(2.0)}
    return values


def main():
    values = compute()
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps(values, indent=1, sort_keys=True) + "\n")
    print(f"wrote {OUT}")


if __name__ == "__main__":
    main()
