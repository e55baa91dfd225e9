"""Predicted-SURE risk estimate for MUFFIN.

The shadow iteration propagates ``J e``, the derivative of every solver
variable with respect to the dirty cube along a fixed probe ``e``. It is the
exact (weak) directional derivative of :func:`muffin.solver.muffin_iterate`::

    Jx_l  <- Jxt_l
    Jg_l   = H_l^T (H_l Jx_l - e_l)
    Js_l   = mu_s * W_s^T Ju_l
    Jm_l   = Jx_l - tau * (Jg_l + Js_l + Jt_l)
    Jxt_l  = U(m_l) * Jm_l
    Jp_l   = Ju_l + sigma * mu_s * W_s (2 Jxt_l - Jx_l)
    Ju_l   = Pi(p_l) * Jp_l

and on the master ``Jvt = Jv + sigma*mu_lambda*W_lambda(2 Jxt - Jx)``,
``Jv = Pi(vt) * Jvt``, ``Jt = mu_lambda * W_lambda^T Jv``. The masks always
come from the solver's own ``m``, ``p`` and ``vt``.

Per band the risk is::

    PSURE_l = ||y_l - H_l xt_l||^2 + 2 s2_l <e_l, H_l Jxt_l> - N s2_l

whose expectation equals ``E ||H_l (xt_l - x*_l)||^2``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .cube import NoiseModel
from .operators import BandOperator
from .solver import (
    BandPool, Problem, SolverParams, SolverState, _SERIAL, band_update, master_update,
    spectral_feedback,
)
from .transforms import SpatialAnalysis, SpectralAnalysis


class PsureError(FloatingPointError):
    pass


@dataclass(frozen=True, eq=False)
class ProbeVector:
    """Zero-mean, unit-variance probe, drawn once per run."""

    values: np.ndarray
    seed: int | None = None

    @classmethod
    def rademacher(cls, shape, seed: int) -> "ProbeVector":
        rng = np.random.default_rng(seed)
        vals = rng.integers(0, 2, size=shape).astype(np.float64) * 2.0 - 1.0
        vals.flags.writeable = False
        return cls(vals, seed)

    @classmethod
    def gaussian(cls, shape, seed: int) -> "ProbeVector":
        vals = np.random.default_rng(seed).standard_normal(shape)
        vals.flags.writeable = False
        return cls(vals, seed)

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True, eq=False)
class ShadowState:
    jx: np.ndarray
    jx_tilde: np.ndarray
    ju: np.ndarray
    jv: np.ndarray
    jt: np.ndarray
    probe: ProbeVector
    iteration: int = 0


def init_shadow(state: SolverState, probe: ProbeVector) -> ShadowState:
    """Zero shadow matching a cold-started solver (its variables do not depend on y)."""
    if probe.shape != state.x.shape:
        raise ValueError(f"probe shape {probe.shape} does not match cube shape {state.x.shape}")
    z = np.zeros_like(state.x)
    return ShadowState(
        jx=z, jx_tilde=z.copy(), ju=np.zeros_like(state.u), jv=z.copy(), jt=z.copy(),
        probe=probe, iteration=state.iteration,
    )


@dataclass(frozen=True)
class RiskReport:
    per_band: tuple
    total: float
    wmse_hat: float
    iteration: int


def indicator_U(m):
    """Weak derivative of ``max(., 0)``: 1 where ``m > 0``, else 0 (so ``U(0) = 0``)."""
    return (np.asarray(m) > 0).astype(np.float64)


def indicator_Pi(p):
    """Weak derivative of ``sat``: 1 on the closed interval ``[-1, 1]``, else 0."""
    return (np.abs(np.asarray(p)) <= 1).astype(np.float64)


class ShadowBand(NamedTuple):
    jx: np.ndarray
    jx_tilde: np.ndarray
    ju: np.ndarray


def shadow_band_update(jx_tilde, ju, jt, e, m, p, op: BandOperator, ws: SpatialAnalysis,
                       params: SolverParams) -> ShadowBand:
    """Directional derivative of :func:`muffin.solver.band_update` along ``e``.

    ``m`` and ``p`` are the solver's values from the same iterate.
    """
    if m.shape != jx_tilde.shape or p.shape != ju.shape:
        raise ValueError("solver intermediates do not match shadow shapes")
    jx = jx_tilde
    jg = op.adjoint(op.apply(jx) - e)
    js = params.mu_s * ws.adjoint(ju)
    jm = jx - params.tau * (jg + js + jt)
    jxt = indicator_U(m) * jm
    jp = ju + params.sigma * params.mu_s * ws.analyze(2 * jxt - jx)
    return ShadowBand(jx, jxt, indicator_Pi(p) * jp)


def shadow_master_update(jx, jx_tilde, jv, v_tilde, wl: SpectralAnalysis, params: SolverParams):
    """Derivative of the spectral dual step; returns the new ``Jv``."""
    jvt = jv + params.sigma * params.mu_lambda * wl.analyze(2 * jx_tilde - jx)
    return indicator_Pi(v_tilde) * jvt


def tracked_iterate(state: SolverState, shadow: ShadowState, problem: Problem, params: SolverParams,
                    pool: BandPool | None = None):
    """One solver iterate together with its shadow; returns ``(state, shadow)``."""
    if state.iteration != shadow.iteration:
        raise ValueError(f"solver at iteration {state.iteration}, shadow at {shadow.iteration}")
    pool = pool or _SERIAL
    wl = problem.spectral
    ws = problem.spatial
    e = shadow.probe.values
    t = spectral_feedback(state.v, wl, params.mu_lambda)
    jt = spectral_feedback(shadow.jv, wl, params.mu_lambda)

    def work(l):
        op = problem.psfs[l]
        step = band_update(state.x_tilde[l], state.u[l], t[l], problem.y[l], op, ws, params)
        sh = shadow_band_update(shadow.jx_tilde[l], shadow.ju[l], jt[l], e[l], step.m, step.p, op, ws, params)
        return step, sh

    out = pool.map(work, problem.bands)
    x = np.stack([s.x for s, _ in out])
    xt = np.stack([s.x_tilde for s, _ in out])
    v, vt = master_update(x, xt, state.v, wl, params)
    new_state = SolverState(
        x=x, x_tilde=xt, u=np.stack([s.u for s, _ in out]), v=v, t=t,
        iteration=state.iteration + 1,
        m=np.stack([s.m for s, _ in out]), p=np.stack([s.p for s, _ in out]), v_tilde=vt,
    )
    jx = np.stack([j.jx for _, j in out])
    jxt = np.stack([j.jx_tilde for _, j in out])
    jv = shadow_master_update(jx, jxt, shadow.jv, vt, wl, params)
    new_shadow = ShadowState(
        jx=jx, jx_tilde=jxt, ju=np.stack([j.ju for _, j in out]), jv=jv, jt=jt,
        probe=shadow.probe, iteration=shadow.iteration + 1,
    )
    return new_state, new_shadow


def hutchinson_trace(matvec, e) -> float:
    """Single-probe trace estimate ``e^T A e``."""
    e = np.asarray(e.values if isinstance(e, ProbeVector) else e, dtype=np.float64)
    ae = np.asarray(matvec(e), dtype=np.float64)
    if ae.shape != e.shape:
        raise ValueError(f"matvec returned shape {ae.shape} for probe of shape {e.shape}")
    return float(np.vdot(e, ae))


def psure_band(y, x_tilde, jx_tilde, e, op: BandOperator, variance: float) -> float:
    r = y - op.apply(x_tilde)
    tr = hutchinson_trace(lambda _: op.apply(jx_tilde), e)
    return float(np.sum(r * r)) + 2.0 * variance * tr - y.size * variance


def psure_evaluate(state: SolverState, shadow: ShadowState, problem: Problem, noise: NoiseModel) -> RiskReport:
    if state.iteration != shadow.iteration:
        raise ValueError(f"solver at iteration {state.iteration}, shadow at {shadow.iteration}")
    if len(noise) != problem.bands:
        raise ValueError(f"{len(noise)} noise variances for {problem.bands} bands")
    e = shadow.probe.values
    per_band = []
    total = 0.0
    for l in range(problem.bands):
        val = psure_band(problem.y[l], state.x_tilde[l], shadow.jx_tilde[l], e[l], problem.psfs[l],
                         noise.variances[l])
        if not np.isfinite(val):
            raise PsureError(f"non-finite PSURE in band {l}")
        per_band.append(val)
        total += val
    return RiskReport(tuple(per_band), total, total / (problem.bands * problem.npix), state.iteration)
