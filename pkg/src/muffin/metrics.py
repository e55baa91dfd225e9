"""Ground-truth quality metrics and the per-iteration metrics table."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .cube import ImageCube
from .operators import PsfSet

CSV_HEADER = ("iter", "phase", "mu_s", "mu_lambda", "wmse_db", "wmse_hat_db", "snr_db", "cost", "seconds")


def _arr(c):
    return c.data if isinstance(c, ImageCube) else np.asarray(c, dtype=np.float64)


def true_wmse(x, x_star, psfs: PsfSet) -> float:
    """``(1/LN) sum_l ||H_l (x_l - x*_l)||^2``."""
    x, x_star = _arr(x), _arr(x_star)
    if x.shape != x_star.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {x_star.shape}")
    if len(psfs) != x.shape[0]:
        raise ValueError(f"{len(psfs)} PSFs for {x.shape[0]} bands")
    total = 0.0
    for l in range(x.shape[0]):
        r = psfs[l].apply(x[l] - x_star[l])
        total += float(np.sum(r * r))
    return total / x.size


def snr_db(x, x_star) -> float:
    """``10 log10(||X*||^2 / ||X - X*||^2)``; ``inf`` for an exact match."""
    x, x_star = _arr(x), _arr(x_star)
    if x.shape != x_star.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {x_star.shape}")
    err = float(np.sum((x - x_star) ** 2))
    if err == 0:
        return math.inf
    return 10 * math.log10(float(np.sum(x_star**2)) / err)


def to_db(value) -> float | None:
    if value is None or not value > 0:
        return None
    return 10 * math.log10(value)


@dataclass
class MetricsRow:
    iteration: int
    phase: int
    mu_s: float
    mu_lambda: float
    wmse: float | None = None
    wmse_hat: float | None = None
    snr: float | None = None
    cost: float | None = None
    seconds: float = 0.0

    @property
    def wmse_db(self):
        return to_db(self.wmse)

    @property
    def wmse_hat_db(self):
        return to_db(self.wmse_hat)

    def as_csv(self):
        def fmt(v):
            return "" if v is None else repr(float(v))
        return [str(self.iteration), str(self.phase), fmt(self.mu_s), fmt(self.mu_lambda),
                fmt(self.wmse_db), fmt(self.wmse_hat_db), fmt(self.snr), fmt(self.cost), fmt(self.seconds)]


def write_metrics_csv(rows, path, timing: bool = True) -> None:
    """Write rows; iterations must be strictly increasing.

    With ``timing=False`` the seconds column is written as ``0.0`` so runs
    can be compared byte for byte.
    """
    last = -1
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for r in rows:
            if r.iteration <= last:
                raise ValueError(f"metrics rows not increasing at iteration {r.iteration}")
            last = r.iteration
            line = r.as_csv()
            if not timing:
                line[-1] = "0.0"
            w.writerow(line)


def read_metrics_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def plot_traces(rows, outdir, phase_bounds=()):
    """Static WMSE/estimated-WMSE and SNR plots from metrics rows."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    its = [r.iteration for r in rows]

    def series(attr):
        return [np.nan if getattr(r, attr) is None else getattr(r, attr) for r in rows]

    paths = []
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(its, series("wmse_db"), label="WMSE")
    ax.plot(its, series("wmse_hat_db"), "--", label="PSURE estimate")
    for b in phase_bounds:
        ax.axvline(b, color="0.6", ls="--", lw=0.8)
    ax.set_xlabel("iteration")
    ax.set_ylabel("dB")
    ax.legend()
    fig.tight_layout()
    p = f"{outdir}/wmse.png"
    fig.savefig(p, dpi=100)
    plt.close(fig)
    paths.append(p)

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(its, series("snr"), label="SNR")
    for b in phase_bounds:
        ax.axvline(b, color="0.6", ls="--", lw=0.8)
    ax.set_xlabel("iteration")
    ax.set_ylabel("SNR (dB)")
    fig.tight_layout()
    p = f"{outdir}/snr.png"
    fig.savefig(p, dpi=100)
    plt.close(fig)
    paths.append(p)
    return paths
