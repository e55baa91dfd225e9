"""Self-tuning of the two regularization weights.

Each tuning iterate runs a golden-section search over one weight. Every
candidate weight gets a trial iterate from the same snapshot, scored by
PSURE. The best trial is committed and the others are dropped. Phase 1 tunes
``mu_s`` with ``mu_lambda = 0``, phase 2 tunes ``mu_lambda`` with ``mu_s``
frozen, and phase 3 iterates with both frozen.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .cube import ImageCube, NoiseModel
from .metrics import MetricsRow, snr_db, true_wmse
from .psure import ProbeVector, PsureError, RiskReport, init_shadow, psure_evaluate, tracked_iterate
from .solver import BandPool, Problem, SolverParams, SolverState, cost, init_state, muffin_iterate

log = logging.getLogger(__name__)

INVPHI = (math.sqrt(5) - 1) / 2
PARAM_NAMES = ("mu_s", "mu_lambda")


@dataclass(frozen=True)
class SearchInterval:
    """Closed search interval; ``tol`` defaults to 1% of its width.

    ``lo == hi`` is accepted and pins the parameter.
    """

    lo: float
    hi: float
    tol: float | None = None

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)) or self.lo > self.hi:
            raise ValueError(f"invalid interval [{self.lo}, {self.hi}]")
        tol = 1e-2 * (self.hi - self.lo) if self.tol is None else self.tol
        if self.hi > self.lo and not tol > 0:
            raise ValueError("tolerance must be > 0")
        object.__setattr__(self, "tol", float(tol))

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def max_evals(self) -> int:
        if self.width <= self.tol:
            return 1
        return 2 + math.ceil(math.log(self.width / self.tol) / math.log(1 / INVPHI))


PAPER_INTERVALS = (SearchInterval(0.0, 2.0), SearchInterval(0.0, 3.0))


@dataclass
class GoldenResult:
    argmin: float
    fmin: float
    evals: int
    bracket: tuple
    history: list = field(default_factory=list)


def golden_section(f, interval: SearchInterval, allow_inf: bool = False) -> GoldenResult:
    """Minimize ``f`` over ``interval``; returns the midpoint of the final bracket.

    Raises ``ValueError`` on NaN, and on infinite values unless ``allow_inf``.
    """
    history = []

    def F(x):
        v = float(f(x))
        if math.isnan(v) or (math.isinf(v) and not allow_inf):
            raise ValueError(f"objective is not finite at parameter {x!r}: {v}")
        history.append((x, v))
        return v

    a, b, tol = interval.lo, interval.hi, interval.tol
    if b - a <= tol:
        x = 0.5 * (a + b)
        return GoldenResult(x, F(x), 1, (a, b), history)
    c = b - INVPHI * (b - a)
    d = a + INVPHI * (b - a)
    fc, fd = F(c), F(d)
    while True:
        if fc <= fd:
            b, d, fd = d, c, fc
            if b - a <= tol:
                break
            c = b - INVPHI * (b - a)
            fc = F(c)
        else:
            a, c, fc = c, d, fd
            if b - a <= tol:
                break
            d = a + INVPHI * (b - a)
            fd = F(d)
    x = 0.5 * (a + b)
    return GoldenResult(x, F(x), len(history), (a, b), history)


@dataclass(frozen=True)
class PhaseRule:
    """Iteration budget, optionally cut short once PSURE stalls.

    With ``rel_tol`` set, the phase stops once ``|dPSURE| / |PSURE|`` stayed
    below ``rel_tol`` for ``window`` consecutive iterates.
    """

    budget: int
    rel_tol: float | None = None
    window: int = 10

    def __post_init__(self):
        if self.budget < 1:
            raise ValueError(f"phase budget must be >= 1, got {self.budget}")

    def done(self, psure_trace) -> bool:
        if self.rel_tol is None or len(psure_trace) <= self.window:
            return False
        tail = np.asarray(psure_trace[-self.window - 1:])
        rel = np.abs(np.diff(tail)) / np.maximum(np.abs(tail[1:]), np.finfo(float).tiny)
        return bool(np.all(rel < self.rel_tol))


@dataclass(frozen=True)
class TuneSchedule:
    phase1: PhaseRule = PhaseRule(100)
    phase2: PhaseRule = PhaseRule(100)
    phase3: PhaseRule = PhaseRule(500)
    lookahead: int = 1

    @classmethod
    def budgets(cls, n1: int, n2: int, n3: int, rel_tol=None, lookahead: int = 1) -> "TuneSchedule":
        return cls(PhaseRule(n1, rel_tol), PhaseRule(n2, rel_tol), PhaseRule(n3, rel_tol), lookahead)

    def __post_init__(self):
        if self.lookahead < 1:
            raise ValueError("lookahead must be >= 1")


@dataclass
class Trial:
    iteration: int
    phase: int
    param: str
    mu: float
    psure: float
    committed: bool = False


def _flat(scores, rtol=1e-12) -> bool:
    finite = [s for s in scores if math.isfinite(s)]
    if len(finite) != len(scores):
        return False
    lo, hi = min(finite), max(finite)
    return hi - lo <= rtol * max(abs(lo), abs(hi), np.finfo(float).tiny)


@dataclass
class GreedyResult:
    state: SolverState
    shadow: object
    mu: float
    report: RiskReport | None
    trials: list


def greedy_step(state, shadow, problem: Problem, noise: NoiseModel, params: SolverParams, which: str,
                interval: SearchInterval, pool: BandPool | None = None, lookahead: int = 1,
                phase: int = 0) -> GreedyResult:
    """Pick ``which`` (``"mu_s"`` or ``"mu_lambda"``) for the next iterate by PSURE.

    Trials all start from ``(state, shadow)``, which are never modified. The
    interval end points are scored alongside the golden-section candidates,
    and the lowest-scoring trial wins.
    """
    if which not in PARAM_NAMES:
        raise ValueError(f"unknown parameter {which!r}")
    cache = {}

    def trial(mu):
        if mu in cache:
            return cache[mu][3]
        p = params.with_mu(**{which: mu})
        st, sh = tracked_iterate(state, shadow, problem, p, pool)
        st2, sh2 = st, sh
        for _ in range(lookahead - 1):
            st2, sh2 = tracked_iterate(st2, sh2, problem, p, pool)
        try:
            rep = psure_evaluate(st2, sh2, problem, noise)
            score = rep.total
        except PsureError:
            rep, score = None, math.inf
        cache[mu] = (st, sh, rep, score)
        return score

    g = golden_section(trial, interval, allow_inf=True)
    trial(interval.lo)
    trial(interval.hi)
    scores = [cache[mu][3] for mu in cache]
    if _flat(scores):
        # the weight cannot influence this iterate (e.g. zero dual variables)
        best = 0.5 * (interval.lo + interval.hi)
        trial(best)
    else:
        best = min(cache, key=lambda mu: (cache[mu][3], mu != g.argmin))
    st, sh, rep, score = cache[best]
    if lookahead > 1:
        try:
            rep = psure_evaluate(st, sh, problem, noise)
        except PsureError:
            rep = None
    trials = [Trial(state.iteration + 1, phase, which, mu, cache[mu][3], mu == best) for mu in cache]
    return GreedyResult(st, sh, best, rep, trials)


@dataclass
class TuneResult:
    estimate: ImageCube
    mu_s: float
    mu_lambda: float
    reports: list
    rows: list
    trials: list
    phase_ends: tuple
    params: SolverParams
    state: SolverState = None
    shadow: object = None


def resolve_for_intervals(params: SolverParams, problem: Problem, intervals) -> SolverParams:
    return params.resolve(problem.beta, problem.spatial.nbases,
                          mu_s_max=max(intervals[0].hi, params.mu_s),
                          mu_lambda_max=max(intervals[1].hi, params.mu_lambda))


def self_tuned_run(problem: Problem, noise: NoiseModel, schedule: TuneSchedule = TuneSchedule(),
                   intervals=PAPER_INTERVALS, params: SolverParams = SolverParams(),
                   probe_seed: int = 0, truth=None, pool: BandPool | None = None,
                   callback=None) -> TuneResult:
    """Three-phase greedy self-tuning.

    ``params`` supplies ``tau``/``sigma``/``step_mode``; its weights only seed
    phase 1 and are otherwise overwritten. With ``truth`` given, the rows
    also carry the true WMSE and SNR.
    """
    params = resolve_for_intervals(params, problem, intervals).with_mu(mu_lambda=0.0)
    state = init_state(problem)
    shadow = init_shadow(state, ProbeVector.rademacher(state.x.shape, probe_seed))
    reports, rows, trials, psure_trace = [], [], [], []
    t0 = time.perf_counter()
    truth_data = None if truth is None else (truth.data if isinstance(truth, ImageCube) else np.asarray(truth))
    phase_ends = []

    def record(phase, p, rep):
        reports.append(rep)
        psure_trace.append(rep.total if rep is not None else math.nan)
        row = MetricsRow(state.iteration, phase, p.mu_s, p.mu_lambda,
                         wmse_hat=None if rep is None else rep.wmse_hat,
                         cost=cost(state.x_tilde, problem, p), seconds=time.perf_counter() - t0)
        if truth_data is not None:
            row.wmse = true_wmse(state.x_tilde, truth_data, problem.psfs)
            row.snr = snr_db(state.x_tilde, truth_data)
        rows.append(row)
        if callback is not None:
            callback(row)

    for phase, rule, which, interval in ((1, schedule.phase1, "mu_s", intervals[0]),
                                         (2, schedule.phase2, "mu_lambda", intervals[1])):
        psure_trace.clear()
        for _ in range(rule.budget):
            res = greedy_step(state, shadow, problem, noise, params, which, interval, pool,
                              schedule.lookahead, phase)
            state, shadow = res.state, res.shadow
            params = params.with_mu(**{which: res.mu})
            trials.extend(res.trials)
            record(phase, params, res.report)
            if rule.done(psure_trace):
                break
        phase_ends.append(state.iteration)
        log.info("phase %d done at iteration %d: mu_s=%.4g mu_lambda=%.4g",
                 phase, state.iteration, params.mu_s, params.mu_lambda)

    psure_trace.clear()
    for _ in range(schedule.phase3.budget):
        state, shadow = tracked_iterate(state, shadow, problem, params, pool)
        try:
            rep = psure_evaluate(state, shadow, problem, noise)
        except PsureError:
            rep = None
        record(3, params, rep)
        if schedule.phase3.done(psure_trace):
            break
    phase_ends.append(state.iteration)

    return TuneResult(
        estimate=ImageCube(state.x_tilde, problem.dirty.wavelengths), mu_s=params.mu_s,
        mu_lambda=params.mu_lambda, reports=reports, rows=rows, trials=trials,
        phase_ends=tuple(phase_ends), params=params, state=state, shadow=shadow,
    )


def two_stage_run(problem: Problem, params: SolverParams, mu_s: float, mu_lambda: float, n1: int,
                  n_total: int, state: SolverState | None = None, pool: BandPool | None = None) -> SolverState:
    """Fixed-weight run: ``n1`` iterates at ``(mu_s, 0)``, then up to ``n_total`` at ``(mu_s, mu_lambda)``.

    A ``state`` already past ``n1`` iterates skips the first stage.
    """
    state = state or init_state(problem)
    p1 = params.with_mu(mu_s, 0.0)
    while state.iteration < n1:
        state = muffin_iterate(state, problem, p1, pool)
    p2 = params.with_mu(mu_s, mu_lambda)
    while state.iteration < n_total:
        state = muffin_iterate(state, problem, p2, pool)
    return state


@dataclass
class GridResult:
    mu_s: np.ndarray
    mu_lambda: np.ndarray
    wmse: np.ndarray
    snr: np.ndarray

    @property
    def best(self):
        i, j = np.unravel_index(np.argmin(self.wmse), self.wmse.shape)
        return float(self.mu_s[i]), float(self.mu_lambda[j]), float(self.wmse[i, j]), float(self.snr[i, j])


def grid_oracle(problem: Problem, truth, params: SolverParams, n1: int, n_total: int,
                intervals=PAPER_INTERVALS, points: int = 15, pool: BandPool | None = None) -> GridResult:
    """Exhaustive ``points x points`` grid of two-stage runs scored by true WMSE."""
    params = resolve_for_intervals(params, problem, intervals)
    ms = np.linspace(intervals[0].lo, intervals[0].hi, points)
    ml = np.linspace(intervals[1].lo, intervals[1].hi, points)
    wmse = np.empty((points, points))
    snr = np.empty((points, points))
    for i, a in enumerate(ms):
        first = two_stage_run(problem, params, a, 0.0, n1, n1, pool=pool)
        for j, b in enumerate(ml):
            st = two_stage_run(problem, params, a, b, n1, n_total, state=first, pool=pool)
            wmse[i, j] = true_wmse(st.x_tilde, truth, problem.psfs)
            snr[i, j] = snr_db(st.x_tilde, truth)
    return GridResult(ms, ml, wmse, snr)


@dataclass
class OracleResult:
    mu_s: float
    mu_lambda: float
    search_s: GoldenResult
    search_lambda: GoldenResult
    state: SolverState


def golden_oracle(problem: Problem, truth, params: SolverParams, n1: int, n_total: int,
                  intervals=PAPER_INTERVALS, pool: BandPool | None = None) -> OracleResult:
    """Ground-truth tuning by golden section on true WMSE.

    ``mu_s`` minimizes the WMSE after ``n1`` iterates with ``mu_lambda = 0``;
    then ``mu_lambda`` minimizes the WMSE after ``n_total`` iterates, the
    first ``n1`` of them run at the chosen ``mu_s`` with ``mu_lambda = 0``.
    """
    params = resolve_for_intervals(params, problem, intervals)
    firsts = {}

    def stage1(mu):
        st = two_stage_run(problem, params, mu, 0.0, n1, n1, pool=pool)
        firsts[mu] = st
        return true_wmse(st.x_tilde, truth, problem.psfs)

    gs = golden_section(stage1, intervals[0])
    mu_s = gs.argmin
    first = firsts.get(mu_s) or two_stage_run(problem, params, mu_s, 0.0, n1, n1, pool=pool)
    finals = {}

    def stage2(mu):
        st = two_stage_run(problem, params, mu_s, mu, n1, n_total, state=first, pool=pool)
        finals[mu] = st
        return true_wmse(st.x_tilde, truth, problem.psfs)

    gl = golden_section(stage2, intervals[1])
    final = finals.get(gl.argmin) or two_stage_run(problem, params, mu_s, gl.argmin, n1, n_total,
                                                   state=first, pool=pool)
    return OracleResult(mu_s, gl.argmin, gs, gl, final)
