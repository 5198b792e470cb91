"""Guide-weighted densification of sparse depth maps.

Fills invalid pixels by minimizing the quadratic energy

    sum_r ( d(r) - sum_{s in N(r)} w_rs d(s) )^2

over the unknown pixels, with equality constraints at the valid ones.
N(r) is the 4-neighborhood; the affinity puts higher weight on
neighbors with similar guide intensity:

    w_rs ~ exp(-(I_r - I_s)^2 / (2 sigma_r^2)),   rows normalized,

with sigma_r the local (3x3) intensity standard deviation, clamped to
at least 0.01.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

SIGMA_FLOOR = 0.01


def _local_std(intensity: np.ndarray) -> np.ndarray:
    padded = np.pad(intensity, 1, mode="edge")
    stack = np.stack([padded[dy:dy + intensity.shape[0], dx:dx + intensity.shape[1]]
                      for dy in range(3) for dx in range(3)])
    return stack.std(axis=0)


def densify_depth(sparse: np.ndarray, valid: np.ndarray, guide: np.ndarray) -> np.ndarray:
    """Solve for a dense depth map that matches `sparse` at valid pixels."""
    depth = np.asarray(sparse, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    if depth.shape != valid.shape:
        raise ValueError("depth and valid mask shapes disagree")
    if not valid.any():
        raise ValueError("densification needs at least one valid pixel")
    if valid.all():
        return depth.copy()

    guide = np.asarray(guide, dtype=np.float64)
    intensity = guide.mean(axis=2) if guide.ndim == 3 else guide
    if intensity.shape != depth.shape:
        raise ValueError("guide image shape disagrees with depth")

    h, w = depth.shape
    n = h * w
    idx = np.arange(n).reshape(h, w)
    sigma = np.maximum(_local_std(intensity), SIGMA_FLOOR)

    # assemble affinities toward the 4-neighbors, then row-normalize
    rows, cols, vals = [], [], []
    for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        ys, ye = max(0, dy), h + min(0, dy)
        xs, xe = max(0, dx), w + min(0, dx)
        r = idx[ys:ye, xs:xe].ravel()
        s = idx[ys - dy:ye - dy, xs - dx:xe - dx].ravel()
        diff = intensity.ravel()[r] - intensity.ravel()[s]
        aff = np.exp(-diff ** 2 / (2.0 * sigma.ravel()[r] ** 2))
        rows.append(r)
        cols.append(s)
        vals.append(aff)
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    row_sums = np.bincount(rows, weights=vals, minlength=n)
    vals = vals / row_sums[rows]

    W = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    M = sp.eye(n, format="csr") - W
    A = (M.T @ M).tocsr()

    known = valid.ravel()
    unknown = ~known
    x = depth.ravel().copy()
    A_uu = A[unknown][:, unknown].tocsc()
    b = -A[unknown][:, known] @ x[known]
    u = spla.spsolve(A_uu, b)
    x[unknown] = u
    return x.reshape(h, w)
