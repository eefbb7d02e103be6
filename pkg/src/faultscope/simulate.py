"""Forward simulation of ``x' = A x + w``, signals on a uniform grid, and p-q norms."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional, Sequence, Tuple

import numpy as np

from .graph import InfluenceGraph, from_state_matrix


class IntegrationError(ArithmeticError):
    """Raised when the state trajectory becomes non-finite."""


class GridError(ValueError):
    pass


def make_grid(horizon: float, dt: float) -> np.ndarray:
    if dt <= 0 or horizon <= 0:
        raise GridError(f"horizon and dt must be positive (got {horizon}, {dt})")
    steps = horizon / dt
    K = int(round(steps))
    if K < 1 or abs(steps - K) > 1e-9 * max(1.0, steps):
        raise GridError(f"horizon {horizon} is not an integer multiple of dt {dt}")
    return np.linspace(0.0, K * dt, K + 1)


def trapezoid_weights(grid: np.ndarray) -> np.ndarray:
    """Quadrature weights ``c`` with ``sum(c * f) ~ integral of f`` over the grid."""
    grid = np.asarray(grid, dtype=float)
    h = np.diff(grid)
    c = np.zeros_like(grid)
    c[:-1] += h / 2
    c[1:] += h / 2
    return c


@dataclass(frozen=True)
class LinearSystem:
    A: np.ndarray
    sensors: Tuple[int, ...]
    x0: np.ndarray
    horizon: float = 10.0
    dt: float = 0.05

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError(f"A must be square, got shape {A.shape}")
        n = A.shape[0]
        sensors = tuple(int(z) for z in self.sensors)
        if len(set(sensors)) != len(sensors):
            raise ValueError(f"sensors must be distinct: {sensors}")
        if any(not 0 <= z < n for z in sensors):
            raise ValueError(f"sensor index out of range for {n} states")
        x0 = np.zeros(n) if self.x0 is None else np.array(self.x0, dtype=float).reshape(-1)
        if x0.shape != (n,):
            raise ValueError(f"x0 must have length {n}")
        make_grid(self.horizon, self.dt)
        A.setflags(write=False)
        x0.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "sensors", sensors)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def grid(self) -> np.ndarray:
        return make_grid(self.horizon, self.dt)

    @property
    def n_steps(self) -> int:
        return len(self.grid) - 1

    @property
    def C(self) -> np.ndarray:
        C = np.zeros((len(self.sensors), self.n))
        C[np.arange(len(self.sensors)), self.sensors] = 1.0
        return C

    def graph(self) -> InfluenceGraph:
        return from_state_matrix(self.A)

    def with_sensors(self, sensors: Sequence[int]) -> "LinearSystem":
        return LinearSystem(self.A, tuple(sensors), self.x0, self.horizon, self.dt)

    def to_dict(self) -> dict:
        return {
            "A": self.A.tolist(),
            "sensors": list(self.sensors),
            "x0": self.x0.tolist(),
            "horizon": self.horizon,
            "dt": self.dt,
        }

    @classmethod
    def from_dict(cls, d) -> "LinearSystem":
        return cls(np.array(d["A"], dtype=float), tuple(d["sensors"]), np.array(d["x0"]),
                   float(d["horizon"]), float(d["dt"]))


@dataclass(frozen=True)
class SignalBundle:
    """Multichannel time series; ``values[k, c]`` is channel ``c`` at ``grid[k]``."""

    channels: Tuple[int, ...]
    grid: np.ndarray
    values: np.ndarray
    p: float = 2.0

    def __post_init__(self):
        grid = np.array(self.grid, dtype=float).reshape(-1)
        values = np.array(self.values, dtype=float)
        channels = tuple(int(c) for c in self.channels)
        if values.ndim == 1 and len(channels) == 1:
            values = values[:, None]
        if values.shape != (len(grid), len(channels)):
            raise GridError(f"values shape {values.shape} != ({len(grid)}, {len(channels)})")
        if len(grid) < 2 or np.any(np.diff(grid) <= 0):
            raise GridError("grid must be strictly increasing with at least two points")
        h = np.diff(grid)
        if not np.allclose(h, h[0], rtol=1e-9, atol=0):
            raise GridError("grid must be uniform")
        if not np.all(np.isfinite(values)):
            raise GridError("signal values must be finite")
        grid.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "channels", channels)

    @classmethod
    def zeros(cls, channels: Sequence[int], grid, p: float = 2.0) -> "SignalBundle":
        return cls(tuple(channels), grid, np.zeros((len(grid), len(channels))), p)

    def channel(self, node: int) -> np.ndarray:
        return self.values[:, self.channels.index(node)]

    def channel_norms(self, p: Optional[float] = None) -> np.ndarray:
        """Per-channel ``L^p`` norms over time (the underline vector)."""
        return lp_norms(self.values, self.grid, self.p if p is None else p)

    def norm_map(self) -> Dict[int, float]:
        return dict(zip(self.channels, self.channel_norms().tolist()))

    def restrict(self, channels: Sequence[int]) -> "SignalBundle":
        idx = [self.channels.index(c) for c in channels]
        return SignalBundle(tuple(channels), self.grid, self.values[:, idx], self.p)

    def embed(self, n: int) -> np.ndarray:
        """Dense ``(K+1, n)`` array with zeros for absent channels."""
        out = np.zeros((len(self.grid), n))
        out[:, list(self.channels)] = self.values
        return out

    def __add__(self, other: "SignalBundle") -> "SignalBundle":
        _same_layout(self, other)
        return SignalBundle(self.channels, self.grid, self.values + other.values, self.p)

    def __sub__(self, other: "SignalBundle") -> "SignalBundle":
        _same_layout(self, other)
        return SignalBundle(self.channels, self.grid, self.values - other.values, self.p)

    def __mul__(self, a: float) -> "SignalBundle":
        return SignalBundle(self.channels, self.grid, a * self.values, self.p)

    __rmul__ = __mul__

    def to_csv(self, labels: Optional[Sequence[str]] = None) -> str:
        labels = [str(c) for c in self.channels] if labels is None else list(labels)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + labels)
        for t, row in zip(self.grid, self.values):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, p: float = 2.0) -> "SignalBundle":
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], [r for r in rows[1:] if r]
        if not header or header[0] != "t":
            raise GridError("signal CSV must start with a 't' column")
        data = np.array(body, dtype=float).reshape(len(body), len(header))
        return cls(tuple(int(h) for h in header[1:]), data[:, 0], data[:, 1:], p)


def _same_layout(a: SignalBundle, b: SignalBundle):
    if a.channels != b.channels or a.grid.shape != b.grid.shape or not np.allclose(a.grid, b.grid):
        raise GridError("signals live on different channels or grids")


def lp_norms(values: np.ndarray, grid: np.ndarray, p: float = 2.0) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    if np.isinf(p):
        return np.max(np.abs(values), axis=0)
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    c = trapezoid_weights(grid)
    return (c @ np.abs(values) ** p) ** (1.0 / p)


def q_norm(underline: np.ndarray, q: float, support_tol: Optional[float] = None) -> float:
    """``q``-norm of a vector of channel norms; ``q = 0`` counts the support."""
    u = np.asarray(underline, dtype=float)
    if u.size == 0:
        return 0.0
    if q == 0:
        tol = support_tol if support_tol is not None else default_support_tol(u)
        return float(np.count_nonzero(u > tol))
    if np.isinf(q):
        return float(np.max(u))
    if q < 1:
        raise ValueError(f"q must be 0 or >= 1, got {q}")
    return float(np.sum(u ** q) ** (1.0 / q))


def default_support_tol(underline: np.ndarray) -> float:
    u = np.asarray(underline, dtype=float)
    return 1e-6 * float(u.max()) if u.size and u.max() > 0 else 0.0


def pq_norm(sig: SignalBundle, q: float, support_tol: Optional[float] = None) -> float:
    return q_norm(sig.channel_norms(), q, support_tol)


def support(sig: SignalBundle, support_tol: Optional[float] = None) -> Tuple[int, ...]:
    u = sig.channel_norms()
    tol = support_tol if support_tol is not None else default_support_tol(u)
    return tuple(c for c, v in zip(sig.channels, u) if v > tol)


def rk4_matrices(A: np.ndarray, dt: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One classical RK4 step of ``x' = A x + w`` as ``x+ = P x + Q0 w_k + Q1 w_{k+1}``.

    The input is interpolated linearly, so both middle stages see
    ``(w_k + w_{k+1}) / 2``.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    I, O = np.eye(n), np.zeros((n, n))

    def step(x, w0, wm, w1):
        k1 = A @ x + w0
        k2 = A @ (x + dt / 2 * k1) + wm
        k3 = A @ (x + dt / 2 * k2) + wm
        k4 = A @ (x + dt * k3) + w1
        return x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)

    P = step(I, O, O, O)
    Q0 = step(O, I, I / 2, O)
    Q1 = step(O, O, I / 2, I)
    return P, Q0, Q1


def propagate(P: np.ndarray, x0: np.ndarray, forcing: np.ndarray) -> np.ndarray:
    """States ``x_0..x_K`` of ``x_{k+1} = P x_k + forcing[k]``."""
    K = forcing.shape[0]
    X = np.empty((K + 1, len(x0)))
    X[0] = x0
    PT = P.T
    x = X[0]
    for k in range(K):
        x = x @ PT + forcing[k]
        X[k + 1] = x
    return X


def simulate(sys: LinearSystem, w: Optional[SignalBundle] = None) -> Tuple[SignalBundle, SignalBundle]:
    """Integrate ``x' = A x + w`` with fixed-step RK4 on the system grid.

    Channels absent from ``w`` carry no input. Returns ``(states, outputs)``.
    """
    grid = sys.grid
    if w is None:
        W = np.zeros((len(grid), sys.n))
    else:
        if len(w.grid) != len(grid) or not np.allclose(w.grid, grid):
            raise GridError("input grid does not match the system grid")
        if any(not 0 <= c < sys.n for c in w.channels):
            raise GridError("input channel outside the state space")
        W = w.embed(sys.n)
    P, Q0, Q1 = rk4_matrices(sys.A, sys.dt)
    forcing = W[:-1] @ Q0.T + W[1:] @ Q1.T
    with np.errstate(over="ignore", invalid="ignore"):
        X = propagate(P, sys.x0, forcing)
    bad = ~np.all(np.isfinite(X), axis=1) | (np.max(np.abs(X), axis=1) > 1e150)
    if bad.any():
        k = int(np.argmax(bad))
        raise IntegrationError(f"state became non-finite at step {k} (t = {grid[k]:g})")
    states = SignalBundle(tuple(range(sys.n)), grid, X)
    return states, states.restrict(sys.sensors)


def residual(y_data: SignalBundle, sys: LinearSystem) -> SignalBundle:
    """Data minus the output of the closed (input-free) system."""
    if tuple(y_data.channels) != tuple(sys.sensors):
        raise GridError("data channels must match the sensors")
    _, y0 = simulate(sys)
    if len(y0.grid) != len(y_data.grid) or not np.allclose(y0.grid, y_data.grid):
        raise GridError("data grid does not match the system grid")
    return y_data - y0


# --- twin experiments -------------------------------------------------------

INPUT_SHAPES = ("step", "pulse", "smooth-random")
DEFAULT_OUT_DEGREE = 8.0


def random_state_matrix(n: int, rng: np.random.Generator, out_degree: float = 2.0,
                        margin: float = 0.1) -> np.ndarray:
    """Directed Erdos-Renyi coupling with weights in ``+-[0.25, 1]``, shifted to be stable."""
    p = min(1.0, out_degree / max(n - 1, 1))
    mask = rng.random((n, n)) < p
    np.fill_diagonal(mask, False)
    mag = rng.uniform(0.25, 1.0, size=(n, n))
    sign = np.where(rng.random((n, n)) < 0.5, -1.0, 1.0)
    A = np.where(mask, mag * sign, 0.0)
    rho = float(np.max(np.abs(np.linalg.eigvals(A)))) if n else 0.0
    return A - (rho + margin) * np.eye(n)


def input_waveform(shape: str, grid: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    T = grid[-1]
    amp = rng.uniform(0.5, 1.5) * rng.choice([-1.0, 1.0])
    if shape == "step":
        t0 = rng.uniform(0.1, 0.4) * T
        return amp * (grid >= t0)
    if shape == "pulse":
        t0 = rng.uniform(0.1, 0.4) * T
        width = rng.uniform(0.2, 0.4) * T
        return amp * ((grid >= t0) & (grid < t0 + width))
    if shape == "smooth-random":
        out = np.zeros_like(grid)
        for _ in range(3):
            f = rng.uniform(0.5, 2.0) * 2 * np.pi / T
            out += rng.normal() * np.sin(f * grid + rng.uniform(0, 2 * np.pi))
        window = np.sin(np.pi * grid / T) ** 2
        out *= window
        return amp * out / max(np.max(np.abs(out)), 1e-12)
    raise ValueError(f"unknown input shape {shape!r}; choose from {INPUT_SHAPES}")


@dataclass(frozen=True)
class TwinExperiment:
    system: LinearSystem
    true_input: SignalBundle
    y_data: SignalBundle
    seed: int
    shape: str = "pulse"
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def targets(self) -> Tuple[int, ...]:
        return self.true_input.channels

    @property
    def graph(self) -> InfluenceGraph:
        return self.system.graph()

    def measure(self, sensors: Sequence[int]) -> SignalBundle:
        """Data the twin would deliver for a different sensor set."""
        states, _ = simulate(self.system, self.true_input)
        return states.restrict(tuple(sensors))


def make_twin(n: int, p_sensors: int, k: int, input_shape: str = "pulse", seed: int = 0,
              dt: float = 0.05, horizon: float = 10.0,
              out_degree: float = DEFAULT_OUT_DEGREE) -> TwinExperiment:
    """Random network, sensors and ``k`` injected inputs; deterministic in ``seed``."""
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n (got k={k}, n={n})")
    if not 1 <= p_sensors <= n:
        raise ValueError(f"need 1 <= sensors <= n (got {p_sensors}, n={n})")
    if input_shape not in INPUT_SHAPES:
        raise ValueError(f"unknown input shape {input_shape!r}; choose from {INPUT_SHAPES}")
    rng = np.random.default_rng(seed)
    A = random_state_matrix(n, rng, out_degree)
    sensors = tuple(sorted(int(z) for z in rng.choice(n, size=p_sensors, replace=False)))
    targets = tuple(sorted(int(t) for t in rng.choice(n, size=k, replace=False)))
    x0 = rng.uniform(0.0, 1.0, size=n)
    sys = LinearSystem(A, sensors, x0, horizon, dt)
    grid = sys.grid
    W = np.column_stack([input_waveform(input_shape, grid, rng) for _ in targets])
    w_true = SignalBundle(targets, grid, W)
    _, y = simulate(sys, w_true)
    meta = {"seed": int(seed), "shape": input_shape, "k": int(k), "n": int(n),
            "sensors": int(p_sensors), "targets": list(targets),
            "out_degree": float(out_degree), "dt": dt, "horizon": horizon}
    return TwinExperiment(sys, w_true, y, int(seed), input_shape, meta)
