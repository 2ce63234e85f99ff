"""Experiment orchestration: config schema, presets, task runners and exports."""
from __future__ import annotations

import csv
import io
import json
import logging
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .model import (LeclParams, QdmConfig, QdmModel, apply_lecl, build_model, evaluate_circuit,
                    generate_trajectory, model_to_dict, sub_rng)
from .qrc import QrcConfig, run_qrc
from .quantum import NoiseSpec
from .signals import Component, RayleighSpec, SignalSpec, generate_signal, normalize, rayleigh_trajectory
from .theory import run_theory_suite
from .training import (TrainConfig, fit_lecl, mse_loss, nmse, rollout_loss, spectral_init, train)

__all__ = [
    "TASKS", "ExperimentConfig", "ConfigError", "load_config", "list_presets", "load_preset",
    "run_experiment", "run_qrc_sweep", "run_grid_calibration", "CalibrationResult",
    "export_report", "atomic_write_text",
]

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
TASKS = ("cosine", "composite-periodic", "composite-aperiodic", "rayleigh", "qrc-compare",
         "noise-longterm", "lecl-calibrate", "theory-check")


class ConfigError(ValueError):
    """Raised for unreadable or schema-invalid experiment configs."""


# ---------------------------------------------------------------------------
# Schema


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelSection(_Section):
    n_memory: int = Field(1, ge=1)
    n_data: int = Field(1, ge=1)
    ansatz: Literal["HEA", "TIEA", "closed-form", "identity"] = "HEA"
    depth: int = Field(1, ge=1)
    channels: int = Field(1, ge=1)
    tau: float = 1.0
    use_lecl: bool = False
    channel_weights: bool = False
    theta_scale: float = Field(0.05, ge=0)
    m0_scale: float = Field(0.5, ge=0, le=1)
    init: Literal["auto", "spectral", "random"] = "auto"

    def qdm_config(self, seed: int) -> QdmConfig:
        d = self.model_dump(exclude={"init"})
        return QdmConfig(seed=seed, **d)


class TrainSection(_Section):
    L: int = Field(100, ge=1)
    T: int = Field(100, ge=0)
    epochs: int = Field(2000, ge=0)
    learning_rate: float = Field(0.01, gt=0)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    gradient_method: Literal["parameter-shift", "finite-difference"] = "parameter-shift"
    fd_step: float = Field(1e-5, ge=1e-7, le=1e-3)
    freeze_theta: bool = False
    keep_best: bool = True
    curriculum: Optional[List[int]] = None  # growing training windows ending at L

    def train_config(self, seed: int, noise: Optional[NoiseSpec], epochs: Optional[int] = None) -> TrainConfig:
        return TrainConfig(epochs=self.epochs if epochs is None else epochs, learning_rate=self.learning_rate,
                           beta1=self.beta1, beta2=self.beta2, eps=self.eps, seed=seed,
                           gradient_method=self.gradient_method, fd_step=self.fd_step,
                           freeze_theta=self.freeze_theta, keep_best=self.keep_best, noise=noise)


class ComponentSection(_Section):
    amplitude: float
    omega: float
    phase: float = 0.0
    kind: Literal["cos", "sin"] = "cos"


class SignalSection(_Section):
    kind: Literal["sum", "rayleigh"] = "sum"
    components: List[ComponentSection] = Field(default_factory=list)
    delta: float = 1.0
    # Rayleigh
    epsilon: float = np.pi
    damping: float = 3.0
    omega: float = np.pi
    x0: float = 0.0
    v0: float = 0.01
    dt: float = Field(1e-3, gt=0)
    sample_every: int = Field(40, ge=1)
    normalize_bound: float = Field(0.9, gt=0, le=1)


class NoiseSection(_Section):
    depolarizing_p: float = Field(0.0, ge=0, le=1)
    amp_damp_gamma: float = Field(0.0, ge=0, le=1)
    readout_epsilon: float = Field(0.0, ge=0, le=0.5)
    placement: Literal["per-gate", "per-layer", "per-step"] = "per-layer"
    depolarizing_scope: Literal["global", "per-qubit"] = "global"
    shot_sigma: float = Field(0.0, ge=0)

    def spec(self) -> NoiseSpec:
        M = None
        if self.readout_epsilon > 0:
            e = self.readout_epsilon
            M = np.array([[1 - e, e], [e, 1 - e]])
        return NoiseSpec(self.depolarizing_p, self.amp_damp_gamma, M, self.placement,
                         self.depolarizing_scope, self.shot_sigma)


class QrcSection(_Section):
    n_qubits: int = Field(3, ge=1, le=6)
    taus: List[float] = Field(default_factory=lambda: [2.6, 2.8, 3.0])
    V: int = Field(5, ge=1)
    washout: int = Field(10, ge=0)
    ridge: float = Field(1e-8, ge=0)
    seeds: List[int] = Field(default_factory=lambda: [0, 1, 2, 3, 4])


class CalibrationSection(_Section):
    resolution: int = Field(21, ge=5)
    rollout_steps: int = Field(25, ge=1)
    omega: float = 0.04 * np.pi
    amplitude: float = 0.5


class ExperimentConfig(_Section):
    schema_version: int = SCHEMA_VERSION
    task: Literal[TASKS]  # type: ignore[valid-type]
    seed: int = 0
    model: ModelSection = Field(default_factory=ModelSection)
    train: TrainSection = Field(default_factory=TrainSection)
    signal: SignalSection = Field(default_factory=SignalSection)
    noise: Optional[NoiseSection] = None
    qrc: Optional[QrcSection] = None
    calibration: Optional[CalibrationSection] = None
    output: str = "runs"

    @model_validator(mode="after")
    def _check(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {self.schema_version}")
        if self.task in ("cosine", "composite-periodic", "composite-aperiodic", "noise-longterm", "qrc-compare"):
            if self.signal.kind != "sum" or not self.signal.components:
                raise ValueError(f"task {self.task} needs a 'sum' signal with components")
        if self.task == "rayleigh" and self.signal.kind != "rayleigh":
            raise ValueError("task rayleigh needs signal.kind = 'rayleigh'")
        if self.task == "qrc-compare" and self.qrc is None:
            raise ValueError("task qrc-compare needs a qrc section")
        if self.train.curriculum:
            c = self.train.curriculum
            if any(b <= a for a, b in zip(c, c[1:])) or c[-1] > self.train.L or c[0] < 1:
                raise ValueError("train.curriculum must increase strictly within [1, L]")
        return self


def _format_validation(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"  {loc}: {e['msg']}")
    return "invalid experiment config:\n" + "\n".join(lines)


def list_presets() -> list:
    return sorted(p.name[:-5] for p in resources.files("qdm.presets").iterdir() if p.name.endswith(".json"))


def load_preset(name: str) -> dict:
    path = resources.files("qdm.presets") / f"{name}.json"
    if not path.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(list_presets())}")
    return json.loads(path.read_text())


def load_config(source: Union[str, Path, dict], overrides: Optional[dict] = None) -> ExperimentConfig:
    """Parse a config file, preset name or dict; ``overrides`` replace top-level keys."""
    if isinstance(source, dict):
        raw = dict(source)
    else:
        path = Path(source)
        if path.is_file():
            try:
                raw = json.loads(path.read_text())
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
        elif str(source) in list_presets():
            raw = load_preset(str(source))
        else:
            raise ConfigError(f"no config file or preset named {str(source)!r}")
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(_format_validation(exc)) from None


# ---------------------------------------------------------------------------
# File output


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def atomic_write_text(path: Union[str, Path], text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _write_csv(path, header: list, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    atomic_write_text(path, buf.getvalue())


# ---------------------------------------------------------------------------
# Tasks


def build_series(cfg: ExperimentConfig):
    """Ground truth on ``t = 0..L+T`` (model scale) plus the raw series and scaling record."""
    n = cfg.train.L + cfg.train.T
    s = cfg.signal
    if s.kind == "rayleigh":
        spec = RayleighSpec(s.epsilon, s.damping, s.omega, s.x0, s.v0, s.dt, s.sample_every, n)
        raw = rayleigh_trajectory(spec)
        y, rec = normalize(raw, s.normalize_bound, only_if_needed=False)
        return y, raw, rec
    spec = SignalSpec(tuple(Component(**c.model_dump()) for c in s.components), s.delta)
    raw = generate_signal(spec, np.arange(n + 1))[:, None]
    y, rec = normalize(raw, 1.0, only_if_needed=True)
    return y, raw, rec


def _initial_model(cfg: ExperimentConfig, train_series: np.ndarray) -> QdmModel:
    qc = cfg.model.qdm_config(cfg.seed)
    model = build_model(qc)
    eligible = qc.n_qubits == 2 and qc.ansatz in ("HEA", "closed-form")
    if cfg.model.init == "spectral" or (cfg.model.init == "auto" and eligible):
        model = spectral_init(model, train_series[:, 0])
    return model


def train_qdm(cfg: ExperimentConfig, y: np.ndarray, noise: Optional[NoiseSpec]):
    L = cfg.train.L
    model = _initial_model(cfg, y[:L + 1])
    windows = list(cfg.train.curriculum or [])
    if not windows or windows[-1] != L:
        windows.append(L)
    history = []
    per_stage = cfg.train.epochs if len(windows) == 1 else max(1, cfg.train.epochs // len(windows))
    for w in windows:
        model, h = train(model, y[:w + 1], cfg.train.train_config(cfg.seed, noise, per_stage))
        history.extend(h)
    return model, history


def _series_rows(y: np.ndarray, pred: np.ndarray):
    for t in range(y.shape[0]):
        row = [t]
        for j in range(y.shape[1]):
            row += [float(y[t, j]), float(pred[t, j]), float(abs(y[t, j] - pred[t, j]))]
        yield row


def _series_header(n: int) -> list:
    head = ["t", "target", "prediction", "abs_error"]
    for j in range(1, n):
        head += [f"target_{j}", f"prediction_{j}", f"abs_error_{j}"]
    return head


def _forecast_task(cfg: ExperimentConfig, out: Path) -> dict:
    t0 = time.perf_counter()
    noise = cfg.noise.spec() if cfg.noise else None
    y, raw, rec = build_series(cfg)
    L, T = cfg.train.L, cfg.train.T
    model, history = train_qdm(cfg, y, noise)
    rng = sub_rng(cfg.seed, "rollout-shots") if noise is not None and noise.shot_sigma > 0 else None
    traj = generate_trajectory(model, L + T, noise=noise, rng=rng)
    pred = traj.output
    metrics = {
        "task": cfg.task,
        "seed": cfg.seed,
        "mse_train": mse_loss(pred[1:L + 1], y[1:L + 1]),
        "mse_pred": mse_loss(pred[L + 1:], y[L + 1:]) if T else None,
        "nmse": nmse(pred[L + 1:], y[L + 1:]) if T else None,
        "final_loss": history[-1] if history else rollout_loss(model, y[1:L + 1], noise),
        "epochs": len(history),
        "L": L,
        "T": T,
        "max_abs_prediction": float(np.max(np.abs(pred))),
        "normalization": rec.to_dict(),
    }
    metrics["runtime_s"] = time.perf_counter() - t0
    _write_csv(out / "series.csv", _series_header(y.shape[1]), _series_rows(y, pred))
    _write_csv(out / "signal.csv", ["t", "value"] + [f"value{j + 1}" for j in range(1, raw.shape[1])],
               ([t] + list(raw[t]) for t in range(raw.shape[0])))
    _write_csv(out / "loss_history.csv", ["epoch", "loss"], enumerate(history))
    _write_json(out / "model.json", model_to_dict(model))
    _write_json(out / "metrics.json", metrics)
    return metrics


def _qrc_cell(args):
    seed, tau, q, train_series, target = args
    cfg = QrcConfig(q["n_qubits"], tau, q["V"], q["washout"], q["ridge"], seed)
    r = run_qrc(cfg, train_series, len(target), target)
    return seed, tau, q["V"], q["washout"], r.nmse_train, r.nmse_pred


def run_qrc_sweep(cfg: ExperimentConfig, out: Optional[Path] = None, threads: int = 1) -> list:
    """QRC NMSE for every (seed, tau) cell; rows sorted by (seed, tau)."""
    q = cfg.qrc or QrcSection()
    y, _, _ = build_series(cfg)
    L = cfg.train.L
    series = y[:L + 1, 0]
    target = y[L + 1:, 0]
    cells = [(s, tau, q.model_dump(), series, target) for s in q.seeds for tau in q.taus]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(_qrc_cell, cells))
    else:
        rows = [_qrc_cell(c) for c in cells]
    rows.sort(key=lambda r: (r[0], r[1]))
    if out is not None:
        _write_csv(out / "qrc_sweep.csv", ["seed", "tau", "V", "washout", "nmse_train", "nmse_pred"], rows)
    return rows


def _qrc_compare_task(cfg: ExperimentConfig, out: Path, threads: int = 1) -> dict:
    t0 = time.perf_counter()
    metrics = _forecast_task(cfg, out)
    rows = run_qrc_sweep(cfg, out, threads)
    medians = {}
    for tau in cfg.qrc.taus:
        medians[repr(float(tau))] = float(np.median([r[5] for r in rows if r[1] == tau]))
    overall = float(np.median([r[5] for r in rows]))
    med = np.array(list(medians.values()))
    metrics.update({
        "qrc_median_nmse_by_tau": medians,
        "qrc_median_nmse": overall,
        "qrc_tau_spread": float(med.max() / med.min()) if med.min() > 0 else float("inf"),
        "qrc_over_qdm": overall / metrics["nmse"] if metrics["nmse"] else float("inf"),
        "runtime_s": time.perf_counter() - t0,
    })
    _write_json(out / "metrics.json", metrics)
    return metrics


@dataclass
class CalibrationResult:
    grid: np.ndarray  # (N, n) inputs
    ideal: np.ndarray
    noisy: np.ndarray  # includes shot noise when requested
    corrected: np.ndarray
    lecl: LeclParams
    noisy_exact: np.ndarray  # noisy channel without shot noise

    @property
    def map_residual(self) -> np.ndarray:
        """How well the fitted LECL inverts the shot-free noisy map."""
        return np.abs(apply_lecl(self.lecl, self.noisy_exact) - self.ideal)

    @property
    def error_before(self) -> np.ndarray:
        return np.abs(self.noisy - self.ideal)

    @property
    def error_after(self) -> np.ndarray:
        return np.abs(self.corrected - self.ideal)

    @property
    def max_before(self) -> float:
        return float(self.error_before.max())

    @property
    def max_after(self) -> float:
        return float(self.error_after.max())


def run_grid_calibration(model: QdmModel, resolution: int, noise: Optional[NoiseSpec],
                         channel: int = 0, rng: Optional[np.random.Generator] = None,
                         method: str = "lstsq") -> CalibrationResult:
    """Fit a LECL from noisy vs ideal one-step outputs on a uniform input grid.

    Inputs span ``[-1, 1]`` on every qubit. Shot noise (``noise.shot_sigma``)
    is added to the noisy outputs when ``rng`` is given.
    """
    if resolution < 5:
        raise ValueError("grid resolution must be >= 5 per axis")
    n = model.n_qubits
    axes = np.linspace(-1.0, 1.0, resolution)
    grid = np.stack(np.meshgrid(*([axes] * n), indexing="ij"), axis=-1).reshape(-1, n)
    ideal = evaluate_circuit(model, channel, grid)
    exact = evaluate_circuit(model, channel, grid, noise=noise) if noise is not None else ideal.copy()
    noisy = exact
    if noise is not None and noise.shot_sigma > 0:
        rng = rng if rng is not None else np.random.default_rng(0)
        noisy = exact + rng.normal(0.0, noise.shot_sigma, exact.shape)
    lecl = fit_lecl(noisy, ideal, method)
    corrected = apply_lecl(lecl, noisy)
    return CalibrationResult(grid, ideal, noisy, corrected, lecl, exact)


def _calibrate_task(cfg: ExperimentConfig, out: Path) -> dict:
    t0 = time.perf_counter()
    cal = cfg.calibration or CalibrationSection()
    noise = cfg.noise.spec() if cfg.noise else None
    qc = cfg.model.qdm_config(cfg.seed)
    model = build_model(qc)
    if qc.n_qubits == 2 and qc.ansatz in ("HEA", "closed-form"):
        # a rotation at the calibration frequency, as used for the rollout check
        model.theta[:] = [cal.omega, -cal.omega]
    res = run_grid_calibration(model, cal.resolution, noise, rng=sub_rng(cfg.seed, "calibration-shots"))
    # rollout: ideal vs noisy-with-LECL from the signal's initial point
    ideal_model = model.copy()
    ideal_model.m0[:] = 0.0
    ideal_model.x0[:] = cal.amplitude
    fixed = ideal_model.copy()
    fixed.lecl = [res.lecl] * qc.channels
    ideal = generate_trajectory(ideal_model, cal.rollout_steps).output
    noisy = generate_trajectory(fixed, cal.rollout_steps, noise=noise).output
    raw = generate_trajectory(ideal_model, cal.rollout_steps, noise=noise).output
    shots = None
    if noise is not None and noise.shot_sigma > 0:
        shots = generate_trajectory(fixed, cal.rollout_steps, noise=noise,
                                    rng=sub_rng(cfg.seed, "rollout-shots")).output
    n = model.n_qubits
    rows = []
    for g, e0, e1 in zip(res.grid, res.error_before, res.error_after):
        rows.append(list(g) + list(e0) + list(e1))
    head = [f"in_{i}" for i in range(n)] + [f"err_before_{i}" for i in range(n)] + [f"err_after_{i}" for i in range(n)]
    _write_csv(out / "calibration_grid.csv", head, rows)
    _write_csv(out / "series.csv", _series_header(1), _series_rows(ideal, noisy))
    metrics = {
        "task": cfg.task,
        "seed": cfg.seed,
        "resolution": cal.resolution,
        "max_error_before": res.max_before,
        "max_error_after": res.max_after,
        "rms_error_after": float(np.sqrt(np.mean(res.error_after**2))),
        "map_residual_max": float(res.map_residual.max()),
        "rollout_max_dev_with_lecl": float(np.max(np.abs(noisy - ideal))),
        "rollout_max_dev_with_lecl_shots": float(np.max(np.abs(shots - ideal))) if shots is not None else None,
        "rollout_max_dev_without_lecl": float(np.max(np.abs(raw - ideal))),
        "lecl": {"A": res.lecl.A, "b": res.lecl.b},
        "runtime_s": time.perf_counter() - t0,
    }
    _write_json(out / "metrics.json", metrics)
    _write_json(out / "model.json", model_to_dict(fixed))
    return metrics


def _theory_task(cfg: ExperimentConfig, out: Path) -> dict:
    t0 = time.perf_counter()
    results = run_theory_suite(seed=cfg.seed)
    report = [r.to_dict() for r in results]
    _write_json(out / "theory_report.json", report)
    metrics = {"task": cfg.task, "seed": cfg.seed, "checks": len(report),
               "passed": sum(r["pass"] for r in report), "runtime_s": time.perf_counter() - t0}
    _write_json(out / "metrics.json", metrics)
    return metrics


def run_experiment(config: Union[str, Path, dict, ExperimentConfig], out: Optional[Union[str, Path]] = None,
                   seed: Optional[int] = None, threads: int = 1) -> dict:
    """Validate ``config`` then run its task, writing artifacts under ``out``.

    Validation happens before anything touches the output directory, so a bad
    config leaves no files behind.
    """
    cfg = config if isinstance(config, ExperimentConfig) else load_config(config)
    if seed is not None:
        cfg = cfg.model_copy(update={"seed": seed})
    out_dir = Path(out if out is not None else cfg.output)
    logger.info("running %s (seed %d) into %s", cfg.task, cfg.seed, out_dir)
    if cfg.task == "theory-check":
        return _theory_task(cfg, out_dir)
    if cfg.task == "lecl-calibrate":
        return _calibrate_task(cfg, out_dir)
    if cfg.task == "qrc-compare":
        return _qrc_compare_task(cfg, out_dir, threads)
    return _forecast_task(cfg, out_dir)


# ---------------------------------------------------------------------------
# Reports


def export_report(run_dirs, out: Optional[Union[str, Path]] = None) -> dict:
    """Aggregate ``metrics.json`` across runs into mean/min/max plus a text table."""
    run_dirs = [Path(d) for d in run_dirs]
    missing = [str(d / "metrics.json") for d in run_dirs if not (d / "metrics.json").is_file()]
    if missing:
        raise FileNotFoundError("missing artifacts: " + ", ".join(missing))
    metrics = [json.loads((d / "metrics.json").read_text()) for d in run_dirs]
    tasks = sorted({m.get("task") for m in metrics})
    if len(tasks) != 1:
        raise ValueError(f"refusing to aggregate runs of different tasks: {', '.join(map(str, tasks))}")
    keys = [k for k in ("mse_train", "mse_pred", "nmse", "runtime_s", "max_error_after", "passed")
            if all(isinstance(m.get(k), (int, float)) for m in metrics)]
    summary = {"task": tasks[0], "runs": len(metrics), "seeds": [m.get("seed") for m in metrics],
               "metrics": {k: {"mean": float(np.mean([m[k] for m in metrics])),
                               "min": float(np.min([m[k] for m in metrics])),
                               "max": float(np.max([m[k] for m in metrics]))} for k in keys}}
    lines = [f"task: {tasks[0]}  runs: {len(metrics)}", f"{'run':<24}{'seed':>6}" + "".join(f"{k:>14}" for k in keys)]
    for d, m in zip(run_dirs, metrics):
        lines.append(f"{d.name[:23]:<24}{m.get('seed', ''):>6}" + "".join(f"{m[k]:>14.4g}" for k in keys))
    for stat in ("mean", "min", "max"):
        lines.append(f"{stat:<24}{'':>6}" + "".join(f"{summary['metrics'][k][stat]:>14.4g}" for k in keys))
    table = "\n".join(lines) + "\n"
    if out is not None:
        out = Path(out)
        _write_json(out / "summary.json", summary)
        atomic_write_text(out / "summary.txt", table)
    summary["table"] = table
    return summary
