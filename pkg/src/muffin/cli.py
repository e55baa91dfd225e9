"""Command-line entry point: ``muffin simulate|reconstruct|gridsearch``.

Every field of :class:`ExperimentConfig` can come from a JSON file
(``--config``) and be overridden by its own flag. Exit codes: 0 success,
2 bad configuration, 3 file I/O failure, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import platform
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .cube import CubeError, ImageCube, NoiseModel, cube_read, cube_write
from .metrics import MetricsRow, plot_traces, snr_db, true_wmse, write_metrics_csv
from .psure import ProbeVector, PsureError, init_shadow, psure_evaluate, tracked_iterate
from .simulate import simulate
from .solver import BandPool, Problem, SolverParams, cost, init_state, muffin_iterate
from .tuner import SearchInterval, TuneSchedule, golden_oracle, grid_oracle, resolve_for_intervals, self_tuned_run

log = logging.getLogger("muffin")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4

PAPER_SCALE = {"shape": [256, 256], "bands": 100}


class ConfigError(ValueError):
    pass


class NumericalError(RuntimeError):
    pass


@dataclass
class ExperimentConfig:
    # paths
    dirty: str | None = None
    psf: str | None = None
    truth: str | None = None
    manifest: str | None = None
    output: str = "out"
    # simulation
    shape: list = field(default_factory=lambda: [32, 32])
    bands: int = 4
    fill: float = 0.15
    snr_db: float = 10.0
    peak: float = 1.0
    # solver
    mu_s: float = 0.0
    mu_lambda: float = 0.0
    tau: float = 1e-3
    sigma: float = 10.0
    step_mode: str = "raw"
    iterations: int = 700
    # tuning
    self_tune: bool = False
    psure: bool = False
    phase1: int = 100
    phase2: int = 100
    phase3: int = 500
    rel_tol: float | None = None
    lookahead: int = 1
    mu_s_interval: list = field(default_factory=lambda: [0.0, 2.0])
    mu_lambda_interval: list = field(default_factory=lambda: [0.0, 3.0])
    grid_points: int = 0
    # noise, seeds, execution
    variances: list | None = None
    seed: int = 0
    probe_seed: int | None = None
    workers: int | None = None
    timing: bool = True

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - names)
        if unknown:
            raise ConfigError(f"unknown config field(s): {', '.join(unknown)}")
        return cls(**raw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self, command: str) -> None:
        def bad(name, why):
            raise ConfigError(f"{name}: {why}")

        if len(self.shape) != 2 or any(int(s) < 2 or int(s) & (int(s) - 1) for s in self.shape):
            bad("shape", f"need two powers of two >= 2, got {self.shape}")
        if self.bands < 1:
            bad("bands", "must be >= 1")
        if not 0 < self.fill <= 1:
            bad("fill", "must lie in (0, 1]")
        if self.workers is not None and self.workers < 1:
            bad("workers", "must be >= 1")
        for name in ("mu_s", "mu_lambda"):
            if getattr(self, name) < 0:
                bad(name, "must be >= 0")
        for name in ("tau", "sigma"):
            if not getattr(self, name) > 0:
                bad(name, "must be > 0")
        if self.step_mode not in ("raw", "auto"):
            bad("step_mode", "must be 'raw' or 'auto'")
        for name in ("iterations", "phase1", "phase2", "phase3", "lookahead"):
            if getattr(self, name) < 1:
                bad(name, "must be >= 1")
        for name in ("mu_s_interval", "mu_lambda_interval"):
            iv = getattr(self, name)
            if len(iv) != 2 or not 0 <= iv[0] <= iv[1]:
                bad(name, f"need [lo, hi] with 0 <= lo <= hi, got {iv}")
        if self.grid_points < 0:
            bad("grid_points", "must be >= 0")
        if self.variances is not None and any(not v > 0 for v in self.variances):
            bad("variances", "must all be > 0")
        if command in ("reconstruct", "gridsearch"):
            for name in ("dirty", "psf"):
                path = getattr(self, name)
                if path is None:
                    bad(name, "input path required")
                if not os.path.isfile(path):
                    bad(name, f"file not found: {path}")
        if command == "gridsearch" and self.truth is None:
            bad("truth", "gridsearch needs the true sky cube")
        if self.truth is not None and command != "simulate" and not os.path.isfile(self.truth):
            bad("truth", f"file not found: {self.truth}")
        if self.manifest is not None and not os.path.isfile(self.manifest):
            bad("manifest", f"file not found: {self.manifest}")

    def intervals(self):
        return (SearchInterval(*map(float, self.mu_s_interval)),
                SearchInterval(*map(float, self.mu_lambda_interval)))

    def params(self) -> SolverParams:
        return SolverParams(self.mu_s, self.mu_lambda, self.tau, self.sigma, self.step_mode)


FLAG_TYPES = {
    "dirty": str, "psf": str, "truth": str, "manifest": str, "output": str,
    "bands": int, "fill": float, "snr_db": float, "peak": float,
    "mu_s": float, "mu_lambda": float, "tau": float, "sigma": float, "step_mode": str, "iterations": int,
    "phase1": int, "phase2": int, "phase3": int, "rel_tol": float, "lookahead": int, "grid_points": int,
    "seed": int, "probe_seed": int, "workers": int,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="muffin", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("simulate", "reconstruct", "gridsearch"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON file with ExperimentConfig fields")
        for key, typ in FLAG_TYPES.items():
            p.add_argument("--" + key.replace("_", "-"), dest=key, type=typ, default=None)
        p.add_argument("--shape", type=int, nargs=2, default=None, metavar=("H", "W"))
        p.add_argument("--mu-s-interval", dest="mu_s_interval", type=float, nargs=2, default=None)
        p.add_argument("--mu-lambda-interval", dest="mu_lambda_interval", type=float, nargs=2, default=None)
        p.add_argument("--variances", type=float, nargs="+", default=None)
        p.add_argument("--noise-variance", type=float, default=None, help="one variance for every band")
        p.add_argument("--self-tune", dest="self_tune", action="store_const", const=True, default=None)
        p.add_argument("--psure", dest="psure", action="store_const", const=True, default=None)
        p.add_argument("--no-timing", dest="timing", action="store_const", const=False, default=None)
        p.add_argument("--paper-scale", action="store_true", help="256x256 pixels, 100 bands")
    return ap


def load_config(args) -> ExperimentConfig:
    raw = {}
    if args.config:
        try:
            with open(args.config) as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"config: cannot read {args.config}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: invalid JSON in {args.config}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config: top level must be a JSON object")
    if args.paper_scale:
        raw.update(PAPER_SCALE)
    names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    for key in names:
        val = getattr(args, key, None)
        if val is not None:
            raw[key] = list(val) if isinstance(val, (list, tuple)) else val
    if args.noise_variance is not None:
        raw["variances"] = [args.noise_variance]
    try:
        cfg = ExperimentConfig.from_dict(raw)
    except TypeError as exc:
        raise ConfigError(f"config: {exc}") from exc
    try:
        cfg.validate(args.command)
    except TypeError as exc:
        raise ConfigError(f"config: wrong value type ({exc})") from exc
    return cfg


def _versions() -> dict:
    import pywt
    import scipy

    return {"muffin": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "pywavelets": pywt.__version__}


def _write_manifest(cfg: ExperimentConfig, command: str, extra: dict | None = None) -> str:
    doc = {"command": command, "config": cfg.to_dict(), "versions": _versions()}
    if extra:
        doc.update(extra)
    path = os.path.join(cfg.output, "manifest.json")
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _prepare_output(cfg: ExperimentConfig) -> None:
    try:
        os.makedirs(cfg.output, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"output: cannot create {cfg.output}: {exc}") from exc
    if not os.access(cfg.output, os.W_OK):
        raise ConfigError(f"output: directory not writable: {cfg.output}")


def cmd_simulate(cfg: ExperimentConfig) -> dict:
    _prepare_output(cfg)
    ds = simulate(tuple(cfg.shape), cfg.bands, fill=cfg.fill, snr_db=cfg.snr_db, seed=cfg.seed, peak=cfg.peak)
    files = {}
    for name, cube in (("sky", ds.sky), ("psf", ds.psf), ("clean", ds.clean), ("dirty", ds.dirty)):
        path = os.path.join(cfg.output, f"{name}.cube")
        cube_write(cube, path)
        files[name] = path
    files["manifest"] = _write_manifest(cfg, "simulate", {"dataset": ds.manifest})
    return files


def _noise_model(cfg: ExperimentConfig, bands: int) -> NoiseModel | None:
    variances = cfg.variances
    if variances is None:
        path = cfg.manifest or os.path.join(os.path.dirname(os.path.abspath(cfg.dirty)), "manifest.json")
        if os.path.isfile(path):
            with open(path) as fh:
                doc = json.load(fh)
            variances = doc.get("dataset", {}).get("variances")
    if variances is None:
        return None
    if len(variances) == 1:
        variances = list(variances) * bands
    if len(variances) != bands:
        raise ConfigError(f"variances: {len(variances)} values for {bands} bands")
    return NoiseModel(tuple(float(v) for v in variances))


def _load_problem(cfg: ExperimentConfig):
    dirty = cube_read(cfg.dirty)
    psf = cube_read(cfg.psf)
    truth = cube_read(cfg.truth) if cfg.truth else None
    if truth is not None and truth.data.shape != dirty.data.shape:
        raise ConfigError(f"truth: shape {truth.data.shape} differs from dirty {dirty.data.shape}")
    try:
        problem = Problem(dirty, psf)
    except ValueError as exc:
        raise ConfigError(f"psf: {exc}") from exc
    return problem, truth


def _workers(cfg: ExperimentConfig, bands: int) -> int:
    return cfg.workers or max(1, min(bands, os.cpu_count() or 1))


def _check_finite(arr, iteration):
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"non-finite estimate at iteration {iteration}")


def fixed_trace(problem: Problem, stages, truth=None, noise=None, probe_seed: int = 0, pool=None,
                phase_of=lambda i: 0):
    """Run ``stages`` (a list of ``(params, iterations)``) and record one metrics row per iterate.

    With ``noise`` given the PSURE shadow is carried along and the rows get
    the estimated WMSE.
    """
    state = init_state(problem)
    shadow = init_shadow(state, ProbeVector.rademacher(state.x.shape, probe_seed)) if noise else None
    truth_data = None if truth is None else truth.data
    rows = []
    t0 = time.perf_counter()
    for params, count in stages:
        for _ in range(count):
            if shadow is not None:
                state, shadow = tracked_iterate(state, shadow, problem, params, pool)
            else:
                state = muffin_iterate(state, problem, params, pool)
            _check_finite(state.x_tilde, state.iteration)
            row = MetricsRow(state.iteration, phase_of(state.iteration), params.mu_s, params.mu_lambda,
                             cost=cost(state.x_tilde, problem, params))
            if shadow is not None:
                try:
                    row.wmse_hat = psure_evaluate(state, shadow, problem, noise).wmse_hat
                except PsureError as exc:
                    raise NumericalError(f"{exc} at iteration {state.iteration}") from exc
            if truth_data is not None:
                row.wmse = true_wmse(state.x_tilde, truth_data, problem.psfs)
                row.snr = snr_db(state.x_tilde, truth_data)
            row.seconds = time.perf_counter() - t0
            rows.append(row)
    return state, rows


def write_tuning_csv(trials, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("iter", "phase", "param", "mu", "psure", "committed"))
        for t in trials:
            w.writerow((t.iteration, t.phase, t.param, repr(float(t.mu)), repr(float(t.psure)), int(t.committed)))


def _finish(cfg, rows, estimate, files, phase_bounds=()):
    path = os.path.join(cfg.output, "metrics.csv")
    write_metrics_csv(rows, path, timing=cfg.timing)
    files["metrics"] = path
    est_path = os.path.join(cfg.output, "estimate.cube")
    cube_write(estimate, est_path)
    files["estimate"] = est_path
    wmse_png, snr_png = plot_traces(rows, cfg.output, phase_bounds)
    files["wmse_plot"], files["snr_plot"] = wmse_png, snr_png
    return files


def cmd_reconstruct(cfg: ExperimentConfig) -> dict:
    _prepare_output(cfg)
    problem, truth = _load_problem(cfg)
    noise = _noise_model(cfg, problem.bands)
    if (cfg.self_tune or cfg.psure) and noise is None:
        raise ConfigError("variances: noise variances are required for PSURE (flag, config or manifest)")
    probe_seed = cfg.seed if cfg.probe_seed is None else cfg.probe_seed
    files = {}
    with BandPool(_workers(cfg, problem.bands)) as pool:
        if cfg.self_tune:
            schedule = TuneSchedule.budgets(cfg.phase1, cfg.phase2, cfg.phase3, cfg.rel_tol, cfg.lookahead)
            try:
                res = self_tuned_run(problem, noise, schedule, cfg.intervals(), cfg.params(),
                                     probe_seed=probe_seed, truth=truth, pool=pool)
            except PsureError as exc:
                raise NumericalError(str(exc)) from exc
            _check_finite(res.estimate.data, res.phase_ends[-1])
            tuning = os.path.join(cfg.output, "tuning.csv")
            write_tuning_csv(res.trials, tuning)
            files["tuning"] = tuning
            _finish(cfg, res.rows, ImageCube(res.estimate.data, problem.dirty.wavelengths), files,
                    res.phase_ends[:-1])
            extra = {"result": {"mu_s": res.mu_s, "mu_lambda": res.mu_lambda, "phase_ends": list(res.phase_ends),
                                "tau": res.params.tau}}
        else:
            params = cfg.params().resolve(problem.beta, problem.spatial.nbases)
            state, rows = fixed_trace(problem, [(params, cfg.iterations)], truth,
                                      noise if cfg.psure else None, probe_seed, pool)
            _finish(cfg, rows, state.estimate(problem.dirty.wavelengths), files)
            extra = {"result": {"mu_s": params.mu_s, "mu_lambda": params.mu_lambda, "tau": params.tau}}
    files["manifest"] = _write_manifest(cfg, "reconstruct", extra)
    return files


def cmd_gridsearch(cfg: ExperimentConfig) -> dict:
    _prepare_output(cfg)
    problem, truth = _load_problem(cfg)
    n1 = cfg.phase1
    n_total = cfg.phase1 + cfg.phase2 + cfg.phase3
    intervals = cfg.intervals()
    files = {}
    with BandPool(_workers(cfg, problem.bands)) as pool:
        oracle = golden_oracle(problem, truth.data, cfg.params(), n1, n_total, intervals, pool)
        params = resolve_for_intervals(cfg.params(), problem, intervals)
        _, rows = fixed_trace(problem, [(params.with_mu(oracle.mu_s, 0.0), n1),
                                        (params.with_mu(oracle.mu_s, oracle.mu_lambda), n_total - n1)],
                              truth, pool=pool, phase_of=lambda i: 1 if i <= n1 else 2)
        result = {
            "mu_s": oracle.mu_s, "mu_lambda": oracle.mu_lambda, "tau": params.tau,
            "bracket_mu_s": list(oracle.search_s.bracket), "bracket_mu_lambda": list(oracle.search_lambda.bracket),
            "evaluations_mu_s": [list(h) for h in oracle.search_s.history],
            "evaluations_mu_lambda": [list(h) for h in oracle.search_lambda.history],
            "reference_values": {"mu_s": 0.43, "mu_lambda": 2.20},
        }
        if cfg.grid_points:
            grid = grid_oracle(problem, truth.data, cfg.params(), n1, n_total, intervals, cfg.grid_points, pool)
            path = os.path.join(cfg.output, "grid.csv")
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(("mu_s", "mu_lambda", "wmse", "snr_db"))
                for i, a in enumerate(grid.mu_s):
                    for j, b in enumerate(grid.mu_lambda):
                        w.writerow((repr(float(a)), repr(float(b)), repr(float(grid.wmse[i, j])),
                                    repr(float(grid.snr[i, j]))))
            files["grid"] = path
            result["grid_best"] = dict(zip(("mu_s", "mu_lambda", "wmse", "snr_db"), grid.best))
    _finish(cfg, rows, oracle.state.estimate(problem.dirty.wavelengths), files, (n1,))
    path = os.path.join(cfg.output, "oracle.json")
    with open(path, "w") as fh:
        json.dump(result, fh, indent=2)
        fh.write("\n")
    files["oracle"] = path
    files["manifest"] = _write_manifest(cfg, "gridsearch", {"result": result})
    return files


COMMANDS = {"simulate": cmd_simulate, "reconstruct": cmd_reconstruct, "gridsearch": cmd_gridsearch}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    logging.captureWarnings(True)
    try:
        cfg = load_config(args)
        files = COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"muffin: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CubeError as exc:
        print(f"muffin: bad cube file ({exc.code}): {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"muffin: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericalError, FloatingPointError) as exc:
        print(f"muffin: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    for name, path in files.items():
        print(f"{name}: {path}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
