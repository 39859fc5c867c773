"""Discrete-time forward models: recombining lattices and Euler-Maruyama paths.

The forward diffusion dX_t = b(t,X_t) dt + sigma(t,X_t) dB_t is approximated
two ways:

* a recombining binomial lattice with exact one-step conditional expectations
  (arithmetic and geometric Brownian models only), and
* Monte Carlo path bundles (Euler-Maruyama, any of the supported models).

Driving noise is one-dimensional; multi-dimensional drivers are a documented
extension point, not built.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

ARITHMETIC = "arithmetic"
GEOMETRIC = "geometric"


class CoarseTimeStepError(ValueError):
    """Raised when matched branch probabilities leave [0, 1]."""


@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition of a time interval of length ``horizon`` into ``n_steps``."""

    n_steps: int
    horizon: float

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if not self.horizon > 0.0:
            raise ValueError("horizon must be > 0")

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps


@dataclass(frozen=True)
class ForwardModel:
    """One-dimensional forward diffusion with constant coefficients.

    Two kinds are supported:

    * ``arithmetic``: dX = b0 dt + sigma0 dB (coeffs ``drift_coeff``/``vol_coeff``)
    * ``geometric``:  dX = mu X dt + sigma X dB

    ``start_time`` places the model at an absolute time t0, so a lattice or a
    path bundle built on a grid with horizon ``T - t0`` covers [t0, T].
    """

    kind: str
    x0: float
    drift_coeff: float = 0.0
    vol_coeff: float = 0.0
    start_time: float = 0.0

    def __post_init__(self):
        if self.kind not in (ARITHMETIC, GEOMETRIC):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.vol_coeff < 0.0:
            raise ValueError("volatility coefficient must be >= 0")
        if self.kind == GEOMETRIC and not self.x0 > 0.0:
            raise ValueError("geometric model requires x0 > 0")

    @classmethod
    def arithmetic(cls, b0: float, sigma0: float, x0: float, start_time: float = 0.0) -> "ForwardModel":
        return cls(ARITHMETIC, x0, b0, sigma0, start_time)

    @classmethod
    def geometric(cls, mu: float, sigma: float, x0: float, start_time: float = 0.0) -> "ForwardModel":
        return cls(GEOMETRIC, x0, mu, sigma, start_time)

    def drift(self, t, x):
        if self.kind == ARITHMETIC:
            return np.full_like(np.asarray(x, dtype=float), self.drift_coeff)
        return self.drift_coeff * np.asarray(x, dtype=float)

    def vol(self, t, x):
        if self.kind == ARITHMETIC:
            return np.full_like(np.asarray(x, dtype=float), self.vol_coeff)
        return self.vol_coeff * np.asarray(x, dtype=float)


@dataclass(frozen=True)
class Lattice:
    """Recombining binomial lattice: step k holds k+1 nodes, branch j -> (j, j+1).

    ``nodes[k][j]`` is the state at step k, node j (states increasing in j);
    ``up_prob[k][j]`` is the probability of the j -> j+1 branch. ``times`` are
    absolute times, starting at the model's ``start_time``.
    """

    grid: TimeGrid
    model: ForwardModel
    times: np.ndarray
    nodes: tuple
    up_prob: tuple

    @property
    def n_steps(self) -> int:
        return self.grid.n_steps

    @property
    def dt(self) -> float:
        return self.grid.dt

    def node_weights(self) -> list:
        """Forward-induced probability of reaching each node, one array per step."""
        w = [np.array([1.0])]
        for k in range(self.n_steps):
            p = self.up_prob[k]
            nxt = np.zeros(k + 2)
            nxt[1:] += w[k] * p
            nxt[:-1] += w[k] * (1.0 - p)
            w.append(nxt)
        return w


def build_lattice(model: ForwardModel, grid: TimeGrid) -> Lattice:
    """Build a recombining lattice whose one-step increments match the model.

    Arithmetic models branch to x +/- sigma0*sqrt(dt) around the drifted mean
    with probability 1/2 (both first moments exact). Geometric models use
    multiplicative factors u = exp(sigma*sqrt(dt)), d = 1/u with
    p = (exp(mu*dt) - d)/(u - d), which matches the one-step mean exactly and
    the variance to O(dt^2).

    Raises
    ------
    CoarseTimeStepError
        If the matched probability falls outside [0, 1] (geometric kind with
        dt too coarse for the drift/volatility).
    """
    n = grid.n_steps
    dt = grid.dt
    times = model.start_time + dt * np.arange(n + 1)
    nodes = []
    up_prob = []
    if model.kind == ARITHMETIC:
        b0, s0 = model.drift_coeff, model.vol_coeff
        root = math.sqrt(dt)
        for k in range(n + 1):
            j = np.arange(k + 1)
            nodes.append(model.x0 + b0 * k * dt + s0 * root * (2.0 * j - k))
        for k in range(n):
            up_prob.append(np.full(k + 1, 0.5))
    else:
        mu, sigma = model.drift_coeff, model.vol_coeff
        if sigma == 0.0:
            # Deterministic ODE: exact exponential states, probabilities moot.
            for k in range(n + 1):
                nodes.append(np.full(k + 1, model.x0 * math.exp(mu * k * dt)))
            for k in range(n):
                up_prob.append(np.full(k + 1, 0.5))
        else:
            u = math.exp(sigma * math.sqrt(dt))
            d = 1.0 / u
            p = (math.exp(mu * dt) - d) / (u - d)
            if not 0.0 <= p <= 1.0:
                raise CoarseTimeStepError(
                    f"dt too coarse for this drift/volatility at step 0: "
                    f"matched up-probability {p:.6g} outside [0, 1]"
                )
            for k in range(n + 1):
                j = np.arange(k + 1)
                nodes.append(model.x0 * u ** (2.0 * j - k))
            for k in range(n):
                up_prob.append(np.full(k + 1, p))
    return Lattice(grid, model, times, tuple(nodes), tuple(up_prob))


def lattice_expectation(lattice: Lattice, values_next: np.ndarray, k: int | None = None) -> np.ndarray:
    """One-step conditional expectation: map values at step k+1 back to step k.

    ``out[j] = p[k][j] * values_next[j+1] + (1 - p[k][j]) * values_next[j]``.
    The target step is inferred from the input length (k + 2 values) unless
    given explicitly.
    """
    values_next = np.asarray(values_next, dtype=float)
    if k is None:
        k = values_next.shape[0] - 2
    if not 0 <= k < lattice.n_steps:
        raise ValueError(f"step index {k} outside [0, {lattice.n_steps - 1}]")
    if values_next.shape != (k + 2,):
        raise ValueError(
            f"expected {k + 2} values at step {k + 1}, got {values_next.shape[0]}"
        )
    p = lattice.up_prob[k]
    return p * values_next[1:] + (1.0 - p) * values_next[:-1]


@dataclass(frozen=True)
class PathBundle:
    """Euler-Maruyama sample paths with their Brownian increments.

    ``states`` has shape (n_paths, n_steps+1) and ``brownian_increments``
    (n_paths, n_steps). Bundles are a pure function of
    (model, grid, n_paths, seed); the generator is numpy's PCG64.
    """

    model: ForwardModel
    grid: TimeGrid
    states: np.ndarray
    brownian_increments: np.ndarray
    seed: int

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.model.start_time + self.grid.dt * np.arange(self.grid.n_steps + 1)


def simulate_paths(model: ForwardModel, grid: TimeGrid, n_paths: int, seed: int) -> PathBundle:
    """Simulate Euler-Maruyama paths of the forward model (seed-deterministic).

    For the arithmetic kind the scheme is written in accumulated form
    x0 + b0*t + sigma0*W_t (pointwise exact, identical in law to the
    stepwise recursion); the geometric kind uses the stepwise recursion.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    n = grid.n_steps
    dt = grid.dt
    rng = np.random.Generator(np.random.PCG64(seed))
    dw = rng.standard_normal((n_paths, n)) * math.sqrt(dt)
    states = np.empty((n_paths, n + 1))
    states[:, 0] = model.x0
    if model.kind == ARITHMETIC:
        elapsed = dt * np.arange(1, n + 1)
        states[:, 1:] = (
            model.x0 + model.drift_coeff * elapsed + model.vol_coeff * np.cumsum(dw, axis=1)
        )
    else:
        times = model.start_time + dt * np.arange(n + 1)
        for k in range(n):
            x = states[:, k]
            states[:, k + 1] = (
                x + model.drift(times[k], x) * dt + model.vol(times[k], x) * dw[:, k]
            )
    return PathBundle(model, grid, states, dw, seed)


def sample_node_paths(lattice: Lattice, n_paths: int, seed: int) -> np.ndarray:
    """Sample node-index paths (n_paths, n_steps+1) from the lattice branch law."""
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    n = lattice.n_steps
    uniforms = rng.random((n_paths, n))
    idx = np.zeros((n_paths, n + 1), dtype=np.int64)
    for k in range(n):
        p = lattice.up_prob[k][idx[:, k]]
        idx[:, k + 1] = idx[:, k] + (uniforms[:, k] < p)
    return idx


def states_along(lattice: Lattice, node_paths: np.ndarray) -> np.ndarray:
    """State values visited by node-index paths."""
    out = np.empty(node_paths.shape, dtype=float)
    for k in range(lattice.n_steps + 1):
        out[:, k] = lattice.nodes[k][node_paths[:, k]]
    return out


def lattice_to_csv(lattice: Lattice, path) -> None:
    """Write the lattice as columnar CSV with header ``step,node,value``."""
    with open(path, "w") as fh:
        fh.write("step,node,value\n")
        for k, layer in enumerate(lattice.nodes):
            for j, v in enumerate(layer):
                fh.write(f"{k},{j},{float(v)!r}\n")


def paths_to_csv(bundle: PathBundle, path) -> None:
    """Write a path bundle as columnar CSV with header ``step,path,value``."""
    with open(path, "w") as fh:
        fh.write("step,path,value\n")
        for k in range(bundle.grid.n_steps + 1):
            col = bundle.states[:, k]
            for i, v in enumerate(col):
                fh.write(f"{k},{i},{float(v)!r}\n")
