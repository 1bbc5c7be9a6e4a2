"""Pure-numpy batch scoring backend.

Loops over regions one at a time so results are independent of how a batch
is chunked across threads; the compiled backend follows the same per-region
order. All feature inputs must already be unit-normalized.
"""

from __future__ import annotations

import numpy as np

name = "python"


def _softmax_inplace(values: np.ndarray, temperature: float) -> np.ndarray:
    z = temperature * values
    z -= z.max()
    np.exp(z, out=z)
    z /= z.sum()
    return z


def batch_scores(
    regions: np.ndarray,
    class_texts: np.ndarray,
    sub_texts: np.ndarray,
    sub_offsets: np.ndarray,
    sup_texts: np.ndarray,
    sup_offsets: np.ndarray,
    class_temp: float,
    hier_temp: float,
) -> dict[str, np.ndarray]:
    n_regions = regions.shape[0]
    n_classes = class_texts.shape[0]
    out = {
        key: np.empty((n_regions, n_classes))
        for key in ("p", "z_sub", "z_sup", "r_sub", "r_sup", "r")
    }
    for i in range(n_regions):
        v = regions[i]
        p = _softmax_inplace(class_texts @ v, class_temp)
        q_sub = _softmax_inplace(sub_texts @ v, hier_temp)
        q_sup = _softmax_inplace(sup_texts @ v, hier_temp)
        z_sub = np.maximum.reduceat(q_sub, sub_offsets[:-1])
        z_sup = np.maximum.reduceat(q_sup, sup_offsets[:-1])
        r_sub = p * z_sub
        r_sub /= r_sub.sum()
        r_sup = p * z_sup
        r_sup /= r_sup.sum()
        out["p"][i] = p
        out["z_sub"][i] = z_sub
        out["z_sup"][i] = z_sup
        out["r_sub"][i] = r_sub
        out["r_sup"][i] = r_sup
        out["r"][i] = 0.5 * (r_sub + r_sup)
    return out
