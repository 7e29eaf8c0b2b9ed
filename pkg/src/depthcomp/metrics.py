"""Depth-completion error metrics (RMSE/MAE in mm, iRMSE/iMAE in 1/km) and a nearest-fill baseline."""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .errors import DegenerateError, DimensionError, DomainError
from .geometry import DepthImage

CSV_HEADER = "rmse,mae,irmse,imae,valid_pixels"


@dataclass(frozen=True)
class MetricsReport:
    rmse: float
    mae: float
    irmse: float
    imae: float
    valid_pixel_count: int

    def to_text(self) -> str:
        return "".join(f"{f.name}={getattr(self, f.name)!r}\n" for f in fields(self))

    def csv_row(self) -> str:
        return f"{self.rmse!r},{self.mae!r},{self.irmse!r},{self.imae!r},{self.valid_pixel_count}"

    @classmethod
    def from_text(cls, text: str) -> "MetricsReport":
        kv = dict(line.split("=", 1) for line in text.splitlines() if line.strip())
        return cls(
            float(kv["rmse"]), float(kv["mae"]), float(kv["irmse"]), float(kv["imae"]),
            int(kv["valid_pixel_count"]),
        )


def evaluate(pred: DepthImage, gt: DepthImage) -> MetricsReport:
    """Errors over pixels with valid ground truth; inputs in meters."""
    if pred.values.shape != gt.values.shape:
        raise DimensionError(f"prediction {pred.values.shape} and ground truth {gt.values.shape} differ")
    mask = gt.values > 0
    n = int(mask.sum())
    if n == 0:
        raise DegenerateError("ground truth has no valid pixels")
    p, g = pred.values[mask], gt.values[mask]
    bad = np.flatnonzero(p <= 0)
    if bad.size:
        v, u = np.argwhere(mask)[bad[0]]
        raise DomainError(f"prediction is {p[bad[0]]} at pixel (u={u}, v={v}); inverse metrics need depth > 0")
    err = p - g
    inv = 1.0 / p - 1.0 / g
    return MetricsReport(
        rmse=1000.0 * float(np.sqrt(np.mean(err * err))),
        mae=1000.0 * float(np.mean(np.abs(err))),
        irmse=1000.0 * float(np.sqrt(np.mean(inv * inv))),
        imae=1000.0 * float(np.mean(np.abs(inv))),
        valid_pixel_count=n,
    )


def mean_report(reports: list[MetricsReport]) -> MetricsReport:
    """Per-image metrics averaged over a set of images; pixel counts add up."""
    if not reports:
        raise DegenerateError("no reports to average")
    return MetricsReport(
        float(np.mean([r.rmse for r in reports])),
        float(np.mean([r.mae for r in reports])),
        float(np.mean([r.irmse for r in reports])),
        float(np.mean([r.imae for r in reports])),
        int(sum(r.valid_pixel_count for r in reports)),
    )


def nn_fill_baseline(sparse: DepthImage, block: int = 4096) -> DepthImage:
    """Fill each missing pixel with its nearest valid pixel (lowest flat index on ties)."""
    vals = sparse.values
    h, w = vals.shape
    valid = np.flatnonzero(vals)
    if valid.size == 0:
        raise DegenerateError("cannot fill an image with no valid pixels")
    vy, vx = np.divmod(valid, w)
    out = vals.reshape(-1).copy()
    missing = np.flatnonzero(vals == 0)
    rows = max(1, block * 64 // valid.size)
    for start in range(0, missing.size, rows):
        m = missing[start : start + rows]
        my, mx = np.divmod(m, w)
        d2 = (my[:, None] - vy[None]) ** 2 + (mx[:, None] - vx[None]) ** 2
        out[m] = vals.reshape(-1)[valid[np.argmin(d2, axis=1)]]
    return DepthImage(out.reshape(h, w))
