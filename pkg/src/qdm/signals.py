"""Ground-truth series: composite cosines, the Rayleigh oscillator, scaling."""
from __future__ import annotations

from dataclasses import dataclass, field
import numpy as np

__all__ = [
    "Component", "SignalSpec", "generate_signal", "cosine_spec", "composite_spec",
    "RayleighSpec", "rayleigh_rhs", "rk4_integrate", "rayleigh_trajectory",
    "AffineScaling", "normalize", "denormalize",
]


@dataclass(frozen=True)
class Component:
    amplitude: float
    omega: float  # rad/step
    phase: float = 0.0
    kind: str = "cos"

    def __post_init__(self):
        if self.kind not in ("cos", "sin"):
            raise ValueError(f"component kind must be 'cos' or 'sin', got {self.kind!r}")
        if not np.all(np.isfinite([self.amplitude, self.omega, self.phase])):
            raise ValueError("component parameters must be finite")


@dataclass(frozen=True)
class SignalSpec:
    """Sum of sinusoids sampled on integer steps.

    ``delta`` only relabels the time axis (``t * delta``) and never changes
    the samples.
    """

    components: tuple = ()
    delta: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(
            c if isinstance(c, Component) else Component(**c) for c in self.components))

    def __add__(self, other: "SignalSpec") -> "SignalSpec":
        return SignalSpec(self.components + other.components, self.delta)

    @property
    def peak_bound(self) -> float:
        return float(sum(abs(c.amplitude) for c in self.components))


def generate_signal(spec: SignalSpec, t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    for c in spec.components:
        trig = np.cos if c.kind == "cos" else np.sin
        out = out + c.amplitude * trig(c.omega * t + c.phase)
    return out


def cosine_spec(amplitude: float = 0.5, omega: float = 0.04 * np.pi) -> SignalSpec:
    return SignalSpec((Component(amplitude, omega),), delta=0.04)


def composite_spec(ratio: float = 2.0, omega: float = 0.04 * np.pi) -> SignalSpec:
    """``0.2 cos(w t) + 0.3 sin(ratio w t)``; ratio 2 is periodic, sqrt(5) is not."""
    return SignalSpec((Component(0.2, omega), Component(0.3, ratio * omega, kind="sin")), delta=0.04)


# ---------------------------------------------------------------------------
# Rayleigh oscillator (van der Pol form)


@dataclass(frozen=True)
class RayleighSpec:
    epsilon: float = np.pi
    delta: float = 3.0
    omega: float = np.pi
    x0: float = 0.0
    v0: float = 0.01
    dt: float = 1e-3
    sample_every: int = 40  # integration steps per model step
    steps: int = 200  # model steps after t=0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.sample_every < 1 or self.steps < 0:
            raise ValueError("sample_every must be >= 1 and steps >= 0")
        if not np.all(np.isfinite([self.epsilon, self.delta, self.omega, self.x0, self.v0])):
            raise ValueError("Rayleigh parameters must be finite")

    @property
    def sample_interval(self) -> float:
        return self.dt * self.sample_every


def rayleigh_rhs(state: np.ndarray, epsilon: float, delta: float, omega: float) -> np.ndarray:
    x, v = state
    return np.array([v, epsilon * v * (1.0 - delta * x * x) - omega**2 * x])


def rk4_integrate(f, y0, dt: float, n_steps: int, record_every: int = 1) -> np.ndarray:
    """Classic fixed-step RK4; returns states at multiples of ``record_every``."""
    y = np.asarray(y0, dtype=float).copy()
    out = [y.copy()]
    for i in range(1, n_steps + 1):
        k1 = f(y)
        k2 = f(y + 0.5 * dt * k1)
        k3 = f(y + 0.5 * dt * k2)
        k4 = f(y + dt * k3)
        y = y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise FloatingPointError(f"integration diverged at step {i}")
        if i % record_every == 0:
            out.append(y.copy())
    return np.array(out)


def rayleigh_trajectory(spec: RayleighSpec) -> np.ndarray:
    """``(steps + 1, 2)`` array of ``(x, v)`` on the model step grid."""
    f = lambda y: rayleigh_rhs(y, spec.epsilon, spec.delta, spec.omega)  # noqa: E731
    return rk4_integrate(f, (spec.x0, spec.v0), spec.dt, spec.steps * spec.sample_every, spec.sample_every)


# ---------------------------------------------------------------------------
# Range normalization


@dataclass(frozen=True)
class AffineScaling:
    """``normalized = scale * raw + offset``, per column."""

    scale: np.ndarray = field(default_factory=lambda: np.ones(1))
    offset: np.ndarray = field(default_factory=lambda: np.zeros(1))

    def to_dict(self) -> dict:
        return {"scale": np.atleast_1d(self.scale).tolist(), "offset": np.atleast_1d(self.offset).tolist()}


def normalize(series, bound: float = 1.0, only_if_needed: bool = True):
    """Affinely map each column into ``[-bound, bound]``.

    With ``only_if_needed`` a series already inside the range is left alone.
    A constant column maps to 0 with unit scale.
    """
    s = np.asarray(series, dtype=float)
    if s.size == 0:
        raise ValueError("cannot normalize an empty series")
    flat = s.ndim == 1
    s2 = s.reshape(s.shape[0], -1)
    lo, hi = s2.min(axis=0), s2.max(axis=0)
    if only_if_needed and np.all(lo >= -bound) and np.all(hi <= bound):
        rec = AffineScaling(np.ones(s2.shape[1]), np.zeros(s2.shape[1]))
        return s.copy(), rec
    span = hi - lo
    center = np.where(span > 0, (hi + lo) / 2, lo)
    scale = np.where(span > 0, 2 * bound / np.where(span > 0, span, 1.0), 1.0)
    out = scale * (s2 - center)
    return (out.ravel() if flat else out), AffineScaling(scale, -scale * center)


def denormalize(series, rec: AffineScaling) -> np.ndarray:
    s = np.asarray(series, dtype=float)
    flat = s.ndim == 1
    out = (s.reshape(s.shape[0], -1) - rec.offset) / rec.scale
    return out.ravel() if flat else out
