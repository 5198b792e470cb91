"""Depth evaluation metrics and label confusion analysis.

All six metrics pool pixel-level residuals over the total valid pixel
count Q across the evaluated images. The two scale-invariant errors
subtract a per-image mean offset (computed over that image's valid
set) before pooling: SI in linear depth, SILog in natural-log depth.
irmse is the root of the MEAN SQUARED inverse-depth error.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from depthbins.quantize import QuantizationSpec, depth_to_label

CSV_COLUMNS = ("absRel", "sqRel", "imae", "irmse", "SI", "SILog", "Q")


@dataclass
class MetricReport:
    absRel: float
    sqRel: float
    imae: float
    irmse: float
    SI: float
    SILog: float
    Q: int

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in CSV_COLUMNS}

    def to_json(self) -> str:
        return json.dumps(self.as_dict())

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        obj = json.loads(text)
        return cls(**{k: (int(v) if k == "Q" else float(v)) for k, v in obj.items()})

    def csv_row(self) -> str:
        vals = [repr(float(getattr(self, k))) for k in CSV_COLUMNS[:-1]]
        return ",".join(vals + [str(self.Q)])

    @staticmethod
    def csv_header() -> str:
        return ",".join(CSV_COLUMNS)


def write_metric_csv(path, reports: dict) -> None:
    """Write named metric reports as CSV, one row per evaluation."""
    lines = ["name," + MetricReport.csv_header()]
    for name, rep in reports.items():
        lines.append(f"{name},{rep.csv_row()}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def _as_image_list(x):
    if isinstance(x, np.ndarray) and x.ndim == 2:
        return [x]
    return list(x)


def _gather(preds, gts, masks):
    preds = _as_image_list(preds)
    gts = _as_image_list(gts)
    if masks is None:
        masks = [np.ones_like(g, dtype=bool) for g in gts]
    else:
        masks = _as_image_list(masks)
    if not (len(preds) == len(gts) == len(masks)):
        raise ValueError("preds, gts and masks must have the same length")
    per_image = []
    for k, (p, g, m) in enumerate(zip(preds, gts, masks)):
        p, g, m = np.asarray(p, np.float64), np.asarray(g, np.float64), np.asarray(m, bool)
        if not (p.shape == g.shape == m.shape):
            raise ValueError(f"image {k}: pred/gt/mask shapes differ")
        pv, gv = p[m], g[m]
        if pv.size == 0:
            continue
        if np.any(gv <= 0):
            raise ValueError(f"image {k}: non-positive ground-truth depth at a valid pixel")
        if np.any(pv <= 0):
            raise ValueError(f"image {k}: non-positive predicted depth at a valid pixel")
        per_image.append((pv, gv))
    return per_image


def compute_metrics(preds, gts, masks=None) -> MetricReport:
    """Pool the six error metrics over all valid pixels of an image list."""
    per_image = _gather(preds, gts, masks)
    Q = sum(g.size for _, g in per_image)
    if Q == 0:
        raise ValueError("no valid pixels to evaluate")

    abs_rel = sq_rel = imae_sum = irmse_sum = si_sum = silog_sum = 0.0
    for pred, gt in per_image:
        diff = gt - pred
        abs_rel += np.sum(np.abs(diff) / gt)
        sq_rel += np.sum(diff ** 2 / gt ** 2)
        inv_diff = 1.0 / gt - 1.0 / pred
        imae_sum += np.sum(np.abs(inv_diff))
        irmse_sum += np.sum(inv_diff ** 2)
        # per-image offsets cancel any constant shift (SI) or scale (SILog)
        offset = np.mean(pred - gt)
        si_sum += np.sum((diff + offset) ** 2)
        log_diff = np.log(gt) - np.log(pred)
        log_offset = np.mean(-log_diff)
        silog_sum += np.sum((log_diff + log_offset) ** 2)

    return MetricReport(
        absRel=abs_rel / Q,
        sqRel=sq_rel / Q,
        imae=imae_sum / Q,
        irmse=float(np.sqrt(irmse_sum / Q)),
        SI=si_sum / Q,
        SILog=silog_sum / Q,
        Q=Q,
    )


@dataclass
class ConfusionMatrix:
    """Counts[i, j] = valid pixels with true label i and predicted label j.

    normalized is row-stochastic over occupied rows; all-zero rows stay
    zero. label_lo/label_hi record which label window the matrix covers;
    windowed views are re-normalized within the window (noted by the
    renormalized_within_window flag).
    """

    counts: np.ndarray
    label_lo: int = 0
    label_hi: int = field(default=-1)
    renormalized_within_window: bool = False

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 2 or self.counts.shape[0] != self.counts.shape[1]:
            raise ValueError("confusion counts must be a square matrix")
        if self.label_hi < 0:
            self.label_hi = self.label_lo + self.counts.shape[0] - 1

    @property
    def normalized(self) -> np.ndarray:
        row_sums = self.counts.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore"):
            out = np.where(row_sums > 0, self.counts / np.maximum(row_sums, 1), 0.0)
        return out

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def diagonal_window_mass(self, halfwidth: int = 5) -> float:
        """Fraction of pixels whose predicted label is within +-halfwidth of the truth."""
        if self.total == 0:
            return 0.0
        i, j = np.indices(self.counts.shape)
        near = np.abs(i - j) <= halfwidth
        return float(self.counts[near].sum() / self.total)

    def write_csv(self, path) -> None:
        """Write the integer count grid; counts round-trip losslessly."""
        n = self.counts.shape[0]
        labels = [str(self.label_lo + k) for k in range(n)]
        with open(path, "w") as f:
            f.write(f"# label window [{self.label_lo}, {self.label_hi}]"
                    f", renormalized_within_window={self.renormalized_within_window}\n")
            f.write("label," + ",".join(labels) + "\n")
            for k in range(n):
                f.write(labels[k] + "," + ",".join(str(v) for v in self.counts[k]) + "\n")

    @classmethod
    def read_csv(cls, path) -> "ConfusionMatrix":
        with open(path) as f:
            header = f.readline().strip()
            lo = int(header.split("[")[1].split(",")[0])
            renorm = header.endswith("True")
            f.readline()
            rows = [[int(v) for v in line.strip().split(",")[1:]] for line in f if line.strip()]
        return cls(counts=np.array(rows, dtype=np.int64), label_lo=lo,
                   renormalized_within_window=renorm)


def confusion_matrix(preds, gts, masks, spec: QuantizationSpec) -> ConfusionMatrix:
    """Tally true-vs-predicted labels over valid pixels.

    Both sides are quantized with the same log-space binning, so
    classification and regression outputs are compared identically.
    """
    per_image = _gather(preds, gts, masks)
    if sum(g.size for _, g in per_image) == 0:
        raise ValueError("no valid pixels to evaluate")
    n = spec.num_classes
    counts = np.zeros(n * n, dtype=np.int64)
    for pred, gt in per_image:
        ti = depth_to_label(gt, spec)
        pj = depth_to_label(pred, spec)
        counts += np.bincount(ti * n + pj, minlength=n * n)
    return ConfusionMatrix(counts=counts.reshape(n, n))


def submatrix_view(cm: ConfusionMatrix, lo: int, hi: int) -> ConfusionMatrix:
    """Restrict a confusion matrix to the label window [lo, hi].

    Rows of the view are re-normalized within the window, not against
    the full original row sums; the flag on the returned matrix records
    that.
    """
    n = cm.counts.shape[0]
    if not (0 <= lo <= hi <= cm.label_lo + n - 1):
        raise ValueError(f"bad label window [{lo}, {hi}] for {n} labels")
    a, b = lo - cm.label_lo, hi - cm.label_lo + 1
    return ConfusionMatrix(
        counts=cm.counts[a:b, a:b].copy(),
        label_lo=lo,
        label_hi=hi,
        renormalized_within_window=True,
    )
