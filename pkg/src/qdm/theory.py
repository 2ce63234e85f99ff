"""Dynamics of the closed-form (1,1) map: linearization, error bounds, universality.

Everything here works on the closed-form map ``closed_form_step`` so that
the checks are exact numerical statements rather than simulator runs.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from .model import closed_form_step

__all__ = [
    "LinearFit", "fit_linear_map", "linear_map_spectrum", "Spectrum", "spiral_check",
    "closed_form_rollout", "CheckResult", "check_lemma_bounds", "check_theorem1_growth",
    "TrigPolySpec", "TrigQdm", "trig_coefficients", "construct_trig_qdm", "run_theory_suite",
]


# ---------------------------------------------------------------------------
# Linearization


@dataclass(frozen=True)
class LinearFit:
    """``R = b [[cos a, g sin a], [-g sin a, cos a]]`` with ``g = gamma``.

    Only ``p = b cos a`` and ``q = b g sin a`` enter ``R``, so the triple
    itself is not identifiable from data; ``beta``, ``alpha`` and the
    eigenvalues are.
    """

    a: float
    b: float
    gamma: float
    residual: float = float("nan")

    @property
    def matrix(self) -> np.ndarray:
        c, s = np.cos(self.a), self.gamma * np.sin(self.a)
        return self.b * np.array([[c, s], [-s, c]])

    @property
    def beta(self) -> float:
        return float(self.b * np.sqrt(np.cos(self.a) ** 2 + self.gamma**2 * np.sin(self.a) ** 2))

    @property
    def alpha(self) -> float:
        # from R = beta * [[cos alpha, sin alpha], [-sin alpha, cos alpha]]
        return float(np.arctan2(self.b * self.gamma * np.sin(self.a), self.b * np.cos(self.a)))

    @property
    def rotation(self) -> np.ndarray:
        c, s = np.cos(self.alpha), np.sin(self.alpha)
        return np.array([[c, s], [-s, c]])

    @property
    def eigenvalues(self) -> tuple:
        lam = self.b * (np.cos(self.a) + 1j * self.gamma * np.sin(self.a))
        return complex(lam), complex(np.conj(lam))


def _as_pairs(trajectory) -> np.ndarray:
    z = np.asarray(trajectory, dtype=float)
    if z.ndim != 2 or z.shape[1] != 2:
        raise ValueError("trajectory must be an array of (m, x) pairs")
    return z


def _rollout_linear(R: np.ndarray, z0: np.ndarray, steps: int) -> np.ndarray:
    out = np.empty((steps + 1, 2))
    out[0] = z0
    for t in range(steps):
        out[t + 1] = R @ out[t]
    return out


def fit_linear_map(trajectory, initial_guess: Optional[Sequence[float]] = None,
                   objective: str = "one-step", theta: Optional[float] = None) -> LinearFit:
    """Least-squares fit of ``(a, b, gamma)`` by BFGS.

    ``objective="one-step"`` compares ``R z_t`` with ``z_{t+1}``; ``"rollout"``
    compares ``R^t z_0`` with ``z_t``. The default start is ``(theta, 1, 1)``
    where ``theta`` is the per-step angle of the data if not given.
    """
    z = _as_pairs(trajectory)
    if z.shape[0] < 50:
        raise ValueError("need a trajectory of at least 50 points")
    if np.max(np.linalg.norm(z, axis=1)) < 1e-12:
        raise ValueError("trajectory sits at the fixed point (0, 0); the fit is ill-posed")
    if initial_guess is None:
        if theta is None:
            ang = np.unwrap(np.arctan2(z[:, 0], z[:, 1]))
            theta = float((ang[-1] - ang[0]) / (z.shape[0] - 1))
        initial_guess = (theta, 1.0, 1.0)

    def matrix(p):
        a, b, g = p
        c, s = np.cos(a), g * np.sin(a)
        return b * np.array([[c, s], [-s, c]])

    if objective == "one-step":
        def loss(p):
            return float(np.sum((z[1:] - z[:-1] @ matrix(p).T) ** 2))
    elif objective == "rollout":
        def loss(p):
            return float(np.sum((z - _rollout_linear(matrix(p), z[0], z.shape[0] - 1)) ** 2))
    else:
        raise ValueError(f"unknown objective {objective!r}")

    res = minimize(loss, np.asarray(initial_guess, dtype=float), method="BFGS",
                   options={"gtol": 1e-12, "maxiter": 10_000})
    a, b, g = res.x
    return LinearFit(float(a), float(b), float(g), float(res.fun))


@dataclass(frozen=True)
class Spectrum:
    lam_plus: complex
    lam_minus: complex
    modulus: float
    classification: str
    mu_center: float


def linear_map_spectrum(fit: LinearFit, mu: float = 1.0, atol: float = 1e-12) -> Spectrum:
    """Eigenvalues of ``mu R`` and the fixed-point type at the origin."""
    lp, lm = (mu * lam for lam in fit.eigenvalues)
    r = abs(lp)
    if abs(r - 1.0) <= atol:
        kind = "center"
    elif r < 1.0:
        kind = "stable focus"
    else:
        kind = "unstable focus"
    return Spectrum(lp, lm, float(r), kind, 1.0 / fit.beta)


@dataclass
class SpiralReport:
    linear_deviation: float  # max relative deviation of |z_t| from beta^t |z_0|
    qdm_ratio_deviation: float = float("nan")  # max |(|z_{t+1}| / |z_t|) - beta| on a QDM rollout
    qdm_mean_ratio_deviation: float = float("nan")  # same for the geometric-mean ratio


def spiral_check(fit: LinearFit, point, steps: int, qdm_trajectory=None) -> SpiralReport:
    z0 = np.asarray(point, dtype=float)
    lin = _rollout_linear(fit.matrix, z0, steps)
    expected = fit.beta ** np.arange(steps + 1) * np.linalg.norm(z0)
    dev = float(np.max(np.abs(np.linalg.norm(lin, axis=1) - expected) / expected))
    rep = SpiralReport(dev)
    if qdm_trajectory is not None:
        norms = np.linalg.norm(_as_pairs(qdm_trajectory), axis=1)
        ratios = norms[1:] / norms[:-1]
        rep.qdm_ratio_deviation = float(np.max(np.abs(ratios - fit.beta)))
        rep.qdm_mean_ratio_deviation = float(abs(np.exp(np.mean(np.log(ratios))) - fit.beta))
    return rep


# ---------------------------------------------------------------------------
# Error bounds for single-mode approximation


def closed_form_rollout(theta1: float, theta2: float, m0, x0, steps: int, mu: float = 1.0) -> np.ndarray:
    """``(steps + 1, 2, ...)`` rollout of the closed-form map, optionally scaled by ``mu``."""
    m, x = np.asarray(m0, dtype=float), np.asarray(x0, dtype=float)
    out = np.empty((steps + 1, 2) + np.broadcast(m, x).shape)
    out[0, 0], out[0, 1] = m, x
    for t in range(steps):
        m, x = closed_form_step(theta1, theta2, m, x)
        m, x = mu * np.asarray(m), mu * np.asarray(x)
        out[t + 1, 0], out[t + 1, 1] = m, x
    return out


@dataclass
class CheckResult:
    name: str
    bound: float
    observed: float
    passed: bool
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        self.bound, self.observed, self.passed = float(self.bound), float(self.observed), bool(self.passed)
        self.details = {k: (v.item() if isinstance(v, np.generic) else v) for k, v in self.details.items()}

    def to_dict(self) -> dict:
        return {"name": self.name, "bound": float(self.bound), "observed": float(self.observed), "pass": bool(self.passed),
                **({"details": self.details} if self.details else {})}


def _exact_points(A: float, delta: float, t) -> tuple:
    ph = np.pi * delta * np.asarray(t, dtype=float)
    return A * np.sin(ph), A * np.cos(ph)


def lemma_preconditions(A: float, delta: float) -> bool:
    return abs(A) < 0.5 and abs(np.pi * delta) < 0.25


def check_lemma_bounds(A: float, delta: float, t_grid=None, perturbations=None, slack: float = 1e-15) -> list:
    """Brute-force one-step errors of the closed-form map against the exact mode.

    Returns three results: the stated Lemma 1 bound, the tighter intermediate
    bound ``A (1 - sqrt(1 - A^2)) |sin(pi delta)|``, and the Lemma 2 bound for
    the largest perturbation (all perturbations are checked).
    """
    t = np.arange(1001) if t_grid is None else np.asarray(t_grid)
    dels = np.linspace(-0.1, 0.1, 9) if perturbations is None else np.asarray(perturbations, dtype=float)
    ok_pre = lemma_preconditions(A, delta)
    th = np.pi * delta
    m, x = _exact_points(A, delta, t)
    m1, x1 = _exact_points(A, delta, t + 1)
    mh, xh = closed_form_step(-th, th, m, x)
    err1 = float(np.max(np.maximum(np.abs(mh - m1), np.abs(xh - x1))))
    stated = abs(th) / 4
    tight = abs(A) * (1 - np.sqrt(1 - A * A)) * abs(np.sin(th))
    out = [
        CheckResult("lemma1_stated", stated, err1, err1 <= stated + slack, {"A": A, "delta": delta, "preconditions": ok_pre}),
        CheckResult("lemma1_tight", float(tight), err1, err1 <= tight + slack, {"A": A, "delta": delta, "preconditions": ok_pre}),
    ]
    dm, dx = np.meshgrid(dels, dels, indexing="ij")
    worst_margin, worst = -np.inf, (0.0, 0.0)
    for a_, b_ in zip(dm.ravel(), dx.ravel()):
        mp = np.clip(m + a_, -1, 1)
        xp = np.clip(x + b_, -1, 1)
        mh, xh = closed_form_step(-th, th, mp, xp)
        err = np.maximum(np.abs(mh - m1), np.abs(xh - x1))
        margin = float(np.max(err - (max(abs(a_), abs(b_)) + stated)))
        if margin > worst_margin:
            worst_margin, worst = margin, (float(np.max(err)), max(abs(a_), abs(b_)) + stated)
    out.append(CheckResult("lemma2", worst[1], worst[0], worst_margin <= slack,
                           {"A": A, "delta": delta, "max_perturbation": float(np.max(np.abs(dels))),
                            "preconditions": ok_pre}))
    return out


def check_theorem1_growth(A: float, delta: float, n_steps: int, phase: float = 0.0, delta0: float = 0.0):
    """Roll the map at ``theta = pi delta`` and compare with ``A cos(pi delta t + phase)``.

    Returns ``(errors, envelope, CheckResult)`` with envelope ``delta0 + t |pi delta| / 4``.
    """
    th = np.pi * delta
    t = np.arange(n_steps + 1)
    traj = closed_form_rollout(-th, th, A * np.sin(phase), A * np.cos(phase), n_steps)
    m_ex, x_ex = A * np.sin(th * t + phase), A * np.cos(th * t + phase)
    err = np.maximum(np.abs(traj[:, 0] - m_ex), np.abs(traj[:, 1] - x_ex))
    env = delta0 + t * abs(th) / 4
    margin = float(np.max(err - env))
    res = CheckResult("theorem1_growth", float(env[-1]), float(np.max(err)), margin <= 1e-15,
                      {"A": A, "delta": delta, "steps": n_steps, "worst_margin": margin})
    return err, env, res


# ---------------------------------------------------------------------------
# Trigonometric-polynomial construction


@dataclass
class TrigPolySpec:
    """``alpha0 + sum_j alpha_j cos(w_j t) + beta_j sin(w_j t)`` with ``w_j = 2 pi j / period``."""

    alpha0: float
    alpha: np.ndarray
    beta: np.ndarray
    period: int
    a: float = 0.0
    b: float = 1.0

    @property
    def J(self) -> int:
        return int(self.alpha.size)

    @property
    def omegas(self) -> np.ndarray:
        return 2 * np.pi * np.arange(1, self.J + 1) / self.period

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)[..., None]
        w = self.omegas
        return self.alpha0 + np.sum(self.alpha * np.cos(w * t) + self.beta * np.sin(w * t), axis=-1)


def trig_coefficients(samples, J: int) -> TrigPolySpec:
    """Fourier coefficients of one period of samples (trapezoid rule on the periodic grid)."""
    s = np.asarray(samples, dtype=float)
    P = s.size
    if J < 0 or 2 * J >= P:
        raise ValueError(f"need 0 <= J < period / 2, got J={J}, period={P}")
    c = np.fft.rfft(s) / P
    return TrigPolySpec(float(c[0].real), 2 * c[1:J + 1].real.copy(), -2 * c[1:J + 1].imag.copy(), P)


@dataclass
class TrigQdm:
    spec: TrigPolySpec
    theta: np.ndarray  # (K, 2)
    m0: np.ndarray
    x0: np.ndarray
    mode: np.ndarray  # mode index per channel, 0 for the constant term
    steps: int  # samples t = 0..steps cover [a, b]
    quadrature_error: float
    rollout_error: float  # sup |sigma_J - QDM|
    total_error: float  # sup |g - QDM|
    envelope: float  # summed single-mode growth bounds at the last step

    @property
    def channels(self) -> int:
        return int(self.theta.shape[0])

    def rollout(self, steps: Optional[int] = None) -> np.ndarray:
        steps = self.steps if steps is None else steps
        traj = closed_form_rollout(self.theta[:, 0], self.theta[:, 1], self.m0, self.x0, steps)
        return traj[:, 1].sum(axis=1)

    def check(self, slack: float = 1e-12) -> CheckResult:
        bound = self.quadrature_error + self.envelope
        return CheckResult("theorem3_construction", bound, self.total_error, self.total_error <= bound + slack,
                           {"J": self.spec.J, "channels": self.channels, "quadrature_error": self.quadrature_error,
                            "rollout_error": self.rollout_error})


def _split(amplitude: float) -> int:
    # strict |A| < 1/2 per channel
    return int(np.floor(2 * abs(amplitude))) + 1


def construct_trig_qdm(g: Callable, J: int, a: float = 0.0, b: float = 1.0, steps: Optional[int] = None,
                       extension: float = 0.25) -> TrigQdm:
    """Approximate ``g`` on ``[a, b]`` by a multi-channel closed-form QDM.

    ``[a, b]`` is sampled on ``steps + 1`` integer steps and extended by a
    linear bridge back to ``g(a)`` so the periodic extension is continuous.
    Each Fourier mode becomes one rotating channel (split when its amplitude
    reaches 1/2) and the constant becomes a channel with zero angles.
    ``steps`` defaults to the smallest grid keeping every mode below the
    single-mode frequency limit ``|w| < 1/4``.
    """
    if J < 0:
        raise ValueError("J must be non-negative")
    if not b > a:
        raise ValueError("need b > a")
    if steps is None:
        steps = max(int(np.ceil((8 * np.pi * J + 1) / (1 + extension))), 2 * J + 1, 1)
    n_ext = max(1, int(np.ceil(extension * steps)))
    tau = np.linspace(a, b, steps + 1)
    gs = np.asarray(g(tau), dtype=float) * np.ones(steps + 1)
    bridge = gs[-1] + (gs[0] - gs[-1]) * np.arange(1, n_ext + 1) / (n_ext + 1)
    spec = trig_coefficients(np.concatenate([gs, bridge]), J)
    spec.a, spec.b = a, b

    theta, m0, x0, mode = [], [], [], []
    if abs(spec.alpha0) > 0:
        k = int(np.floor(abs(spec.alpha0))) + 1
        for _ in range(k):
            theta.append((0.0, 0.0)); m0.append(0.0); x0.append(spec.alpha0 / k); mode.append(0)
    for j, (al, be, w) in enumerate(zip(spec.alpha, spec.beta, spec.omegas), start=1):
        r = float(np.hypot(al, be))
        if r == 0.0:
            continue
        phi = float(np.arctan2(be, al))  # al cos + be sin = r cos(w t - phi)
        k = _split(r)
        for _ in range(k):
            theta.append((-w, w)); m0.append(-r / k * np.sin(phi)); x0.append(r / k * np.cos(phi)); mode.append(j)
    if not theta:
        theta, m0, x0, mode = [(0.0, 0.0)], [0.0], [0.0], [0]
    qdm = TrigQdm(spec, np.array(theta, dtype=float), np.array(m0), np.array(x0), np.array(mode), steps,
                  0.0, 0.0, 0.0, 0.0)
    t = np.arange(steps + 1)
    sigma = spec(t)
    out = qdm.rollout()
    qdm.quadrature_error = float(np.max(np.abs(gs - sigma)))
    qdm.rollout_error = float(np.max(np.abs(sigma - out)))
    qdm.total_error = float(np.max(np.abs(gs - out)))
    qdm.envelope = float(np.sum(steps * np.abs(qdm.theta[:, 1]) / 4))
    return qdm


# ---------------------------------------------------------------------------


def default_test_functions() -> dict:
    return {
        "ramp": lambda t: t - 0.5,
        "gaussian_bump": lambda t: 0.6 * np.exp(-((t - 0.4) ** 2) / 0.02) - 0.2,
        "cubic": lambda t: 0.8 * (t - 0.5) ** 3 * 4 + 0.1 * np.sin(6 * t),
    }


def run_theory_suite(grid: int = 50, theorem1_pairs: int = 20, steps: int = 200, seed: int = 0) -> list:
    """All dynamical checks as a flat list of :class:`CheckResult`."""
    from .model import closed_form_model, generate_trajectory, sub_rng  # local to keep import graph flat

    results = []
    # linearization of the reference trajectory
    th = 0.04 * np.pi
    traj = generate_trajectory(closed_form_model(-th, th, 0.0, 0.5), 200)
    z = np.stack([traj.memory[:, 0, 0], traj.data[:, 0, 0]], axis=1)
    fit = fit_linear_map(z, (th, 1.0, 1.0))
    spec = linear_map_spectrum(fit)
    results.append(CheckResult("linear_fit_stable_focus", 1.0, spec.modulus, spec.modulus < 1.0,
                               {"a": fit.a, "b": fit.b, "gamma": fit.gamma, "beta": fit.beta, "alpha": fit.alpha}))
    recon = float(np.max(np.abs(fit.matrix - fit.beta * fit.rotation)))
    results.append(CheckResult("linear_factorization", 1e-14, recon, recon <= 1e-14))
    sp = spiral_check(fit, z[0], 100)
    results.append(CheckResult("spiral_norm_law", 1e-12, sp.linear_deviation, sp.linear_deviation < 1e-12))

    # lemma grid
    As = np.linspace(0.01, 0.5 - 1e-9, grid)
    Ds = np.linspace(1e-4, 0.25 / np.pi - 1e-9, grid)
    worst: dict = {}
    t_grid = np.arange(201)
    for A in As:
        for D in Ds:
            for r in check_lemma_bounds(A, D, t_grid, np.linspace(-0.1, 0.1, 5)):
                prev = worst.get(r.name)
                if prev is None or r.observed - r.bound > prev[0].observed - prev[0].bound:
                    worst[r.name] = (r, prev[1] if prev else True)
                worst[r.name] = (worst[r.name][0], worst[r.name][1] and bool(r.passed))
    for name, (r, ok) in worst.items():
        results.append(CheckResult(f"{name}_grid", r.bound, r.observed, ok,
                                   {"grid": grid, "worst_A": r.details["A"], "worst_delta": r.details["delta"]}))

    rng = sub_rng(seed, "theorem1")
    worst_t1, ok_t1 = None, True
    for _ in range(theorem1_pairs):
        A = rng.uniform(0.01, 0.5)
        D = rng.uniform(1e-3, 0.25 / np.pi) * rng.choice([-1, 1])
        _, _, r = check_theorem1_growth(A, D, steps, phase=rng.uniform(0, 2 * np.pi))
        ok_t1 &= r.passed
        if worst_t1 is None or r.details["worst_margin"] > worst_t1.details["worst_margin"]:
            worst_t1 = r
    results.append(CheckResult("theorem1_growth_random", worst_t1.bound, worst_t1.observed, ok_t1,
                               {"pairs": theorem1_pairs, "steps": steps}))

    for name, fn in default_test_functions().items():
        r = construct_trig_qdm(fn, 8).check()
        r.name = f"theorem3_{name}"
        results.append(r)
    return results
