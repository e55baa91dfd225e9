"""MUFFIN primal-dual iteration (Condat-Vu splitting).

One iterate is a master/worker cycle:

1. master: ``t^n = mu_lambda * W_lambda^T v^n`` for every pixel;
2. worker ``l`` (independent across bands)::

       x_l  <- xt_l
       g_l   = H_l^T (H_l x_l - y_l)
       s_l   = mu_s * W_s^T u_l
       m_l   = x_l - tau * (g_l + s_l + t_l)
       xt_l  = max(m_l, 0)
       p_l   = u_l + sigma * mu_s * W_s (2 xt_l - x_l)
       u_l   = sat(p_l)

3. master: ``vt^n = v^n + sigma * mu_lambda * W_lambda (2 xt^n - x^n)``,
   ``v^n = sat(vt^n)``.

States are immutable; every iterate returns fresh arrays, so a state can be
kept as a snapshot and replayed.
"""
from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .cube import ImageCube, as_cube
from .operators import BandOperator, PsfSet
from .transforms import SpatialAnalysis, SpectralAnalysis

log = logging.getLogger(__name__)

PAPER_TAU = 1e-3
PAPER_SIGMA = 10.0


class CertificateWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SolverParams:
    """Regularization weights and primal/dual steps.

    ``step_mode="raw"`` uses ``tau`` as given. ``step_mode="auto"`` replaces it
    in :meth:`resolve` by ``0.9 / (beta/2 + sigma * (mu_s^2 B + mu_lambda^2))``.
    """

    mu_s: float = 0.0
    mu_lambda: float = 0.0
    tau: float = PAPER_TAU
    sigma: float = PAPER_SIGMA
    step_mode: str = "raw"

    def __post_init__(self):
        if self.mu_s < 0 or self.mu_lambda < 0:
            raise ValueError(f"regularization weights must be >= 0, got {self.mu_s}, {self.mu_lambda}")
        if not self.tau > 0 or not self.sigma > 0:
            raise ValueError(f"steps must be > 0, got tau={self.tau}, sigma={self.sigma}")
        if self.step_mode not in ("raw", "auto"):
            raise ValueError(f"step_mode must be 'raw' or 'auto', got {self.step_mode!r}")

    def with_mu(self, mu_s=None, mu_lambda=None) -> "SolverParams":
        return replace(
            self,
            mu_s=self.mu_s if mu_s is None else float(mu_s),
            mu_lambda=self.mu_lambda if mu_lambda is None else float(mu_lambda),
        )

    def certificate(self, beta: float, nbases: int, mu_s=None, mu_lambda=None) -> float:
        """Left side of ``tau * (beta/2 + sigma * ||L||^2) <= 1``."""
        ms = self.mu_s if mu_s is None else mu_s
        ml = self.mu_lambda if mu_lambda is None else mu_lambda
        return self.tau * (beta / 2 + self.sigma * (ms**2 * nbases + ml**2))

    def resolve(self, beta: float, nbases: int, mu_s_max=None, mu_lambda_max=None) -> "SolverParams":
        """Fix ``tau`` for a run.

        The certificate is evaluated at ``mu_s_max``/``mu_lambda_max`` when
        given (upper ends of tuning intervals), otherwise at the current
        weights. Raw mode only warns when the certificate fails.
        """
        ms = self.mu_s if mu_s_max is None else mu_s_max
        ml = self.mu_lambda if mu_lambda_max is None else mu_lambda_max
        if self.step_mode == "auto":
            tau = 0.9 / (beta / 2 + self.sigma * (ms**2 * nbases + ml**2))
            return replace(self, tau=tau, step_mode="raw")
        c = self.certificate(beta, nbases, ms, ml)
        if c > 1:
            warnings.warn(
                f"step sizes violate the convergence certificate: tau*(beta/2+sigma*|L|^2) = {c:.3g} > 1",
                CertificateWarning,
                stacklevel=2,
            )
        return self


class Problem:
    """Dirty cube, PSFs and the two analysis operators."""

    def __init__(self, dirty, psfs, spatial: SpatialAnalysis | None = None,
                 spectral: SpectralAnalysis | None = None):
        dirty = as_cube(dirty)
        if not isinstance(psfs, PsfSet):
            psfs = PsfSet(psfs)
        if len(psfs) != dirty.bands:
            raise ValueError(f"{len(psfs)} PSF planes for {dirty.bands} bands")
        if psfs.shape != (dirty.height, dirty.width):
            raise ValueError(f"PSF grid {psfs.shape} does not match dirty grid {(dirty.height, dirty.width)}")
        self.dirty = dirty
        self.y = dirty.data
        self.psfs = psfs
        self.spatial = spatial or SpatialAnalysis(psfs.shape)
        if self.spatial.shape != psfs.shape:
            raise ValueError("spatial transform grid does not match the data grid")
        self.spectral = spectral or SpectralAnalysis(dirty.bands)
        if self.spectral.bands != dirty.bands:
            raise ValueError("spectral transform length does not match band count")

    @property
    def bands(self) -> int:
        return self.dirty.bands

    @property
    def shape(self):
        return self.psfs.shape

    @property
    def npix(self) -> int:
        return self.dirty.npix

    @property
    def beta(self) -> float:
        return self.psfs.beta


@dataclass(frozen=True, eq=False)
class SolverState:
    """Primal and dual variables after ``iteration`` iterates.

    ``x`` is the primal value the last iterate started from, ``x_tilde`` the
    projected (feasible) estimate. ``m``, ``p`` and ``v_tilde`` are the
    pre-projection / pre-saturation values of the last iterate; the Jacobian
    shadow needs them for its masks.
    """

    x: np.ndarray
    x_tilde: np.ndarray
    u: np.ndarray
    v: np.ndarray
    t: np.ndarray
    iteration: int = 0
    m: np.ndarray | None = field(default=None, repr=False)
    p: np.ndarray | None = field(default=None, repr=False)
    v_tilde: np.ndarray | None = field(default=None, repr=False)

    def estimate(self, wavelengths=()) -> ImageCube:
        return ImageCube(self.x_tilde, wavelengths)


def init_state(problem: Problem) -> SolverState:
    """Cold start: every variable zero."""
    L = problem.bands
    h, w = problem.shape
    img = np.zeros((L, h, w))
    return SolverState(
        x=img, x_tilde=img.copy(), u=np.zeros((L,) + problem.spatial.coeff_shape),
        v=img.copy(), t=img.copy(), iteration=0,
    )


def sat(c):
    """Clamp to ``[-1, 1]``: projection onto the dual ball of the l1 norm."""
    return np.clip(c, -1.0, 1.0)


def project_positive(img):
    return np.maximum(img, 0.0)


class BandStep(NamedTuple):
    x: np.ndarray
    x_tilde: np.ndarray
    u: np.ndarray
    m: np.ndarray
    p: np.ndarray


def band_update(x_tilde, u, t, y, op: BandOperator, ws: SpatialAnalysis, params: SolverParams) -> BandStep:
    """Worker update for one band."""
    x = x_tilde
    grad = op.gradient(x, y)
    s = params.mu_s * ws.adjoint(u)
    m = x - params.tau * (grad + s + t)
    xt = project_positive(m)
    p = u + params.sigma * params.mu_s * ws.analyze(2 * xt - x)
    return BandStep(x, xt, sat(p), m, p)


def spectral_feedback(v, wl: SpectralAnalysis, mu_lambda: float):
    """``t^n = mu_lambda * W_lambda^T v^n`` for all pixels at once."""
    return mu_lambda * wl.adjoint(v)


def master_update(x, x_tilde, v, wl: SpectralAnalysis, params: SolverParams):
    """Spectral dual step; returns ``(v, v_tilde)``."""
    if x.shape != x_tilde.shape or x.shape != v.shape:
        raise ValueError("master update needs x, x_tilde and v for every band")
    vt = v + params.sigma * params.mu_lambda * wl.analyze(2 * x_tilde - x)
    return sat(vt), vt


class BandPool:
    """Runs per-band work on ``workers`` threads and returns results in band order."""

    def __init__(self, workers: int = 1):
        if workers < 1:
            raise ValueError("workers must be >= 1")
        self.workers = workers
        self._ex = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None

    def map(self, fn, n: int):
        if self._ex is None:
            return [fn(i) for i in range(n)]
        return list(self._ex.map(fn, range(n)))

    def close(self):
        if self._ex is not None:
            self._ex.shutdown()
            self._ex = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


_SERIAL = BandPool(1)


def muffin_iterate(state: SolverState, problem: Problem, params: SolverParams,
                   pool: BandPool | None = None) -> SolverState:
    """One full master + bands + master cycle."""
    pool = pool or _SERIAL
    t = spectral_feedback(state.v, problem.spectral, params.mu_lambda)
    ws = problem.spatial

    def work(l):
        return band_update(state.x_tilde[l], state.u[l], t[l], problem.y[l], problem.psfs[l], ws, params)

    steps = pool.map(work, problem.bands)
    x = np.stack([s.x for s in steps])
    xt = np.stack([s.x_tilde for s in steps])
    v, vt = master_update(x, xt, state.v, problem.spectral, params)
    return SolverState(
        x=x, x_tilde=xt, u=np.stack([s.u for s in steps]), v=v, t=t,
        iteration=state.iteration + 1,
        m=np.stack([s.m for s in steps]), p=np.stack([s.p for s in steps]), v_tilde=vt,
    )


def cost(x_tilde, problem: Problem, params: SolverParams) -> float:
    """Objective value at a feasible estimate; ``inf`` if it has negative entries."""
    x_tilde = x_tilde.data if isinstance(x_tilde, ImageCube) else np.asarray(x_tilde)
    if np.any(x_tilde < 0):
        return np.inf
    total = 0.0
    for l in range(problem.bands):
        r = problem.y[l] - problem.psfs[l].apply(x_tilde[l])
        total += 0.5 * float(np.sum(r * r))
        if params.mu_s:
            total += params.mu_s * float(np.abs(problem.spatial.analyze(x_tilde[l])).sum())
    if params.mu_lambda:
        total += params.mu_lambda * float(np.abs(problem.spectral.analyze(x_tilde)).sum())
    return total


def run(problem: Problem, params: SolverParams, iterations: int, state: SolverState | None = None,
        pool: BandPool | None = None, callback=None) -> SolverState:
    """Iterate ``iterations`` times from ``state`` (cold start by default)."""
    state = state or init_state(problem)
    for _ in range(iterations):
        state = muffin_iterate(state, problem, params, pool)
        if callback is not None:
            callback(state)
    return state
