"""Backward dynamic programming for the reflected equation on a lattice.

``solve_snell`` runs the discrete analogue of the smallest-supermartingale
construction: backward through the lattice it solves the one-step equation
implicitly in y, reflects at the obstacle, and reads the pushing increment
off the reflection gap (the discrete decomposition of the resulting
supermartingale into martingale minus nondecreasing part).

``brute_force_stopping_value`` is the independent oracle: an exhaustive
max-over-stop/continue recursion on the full (non-recombining) binary tree
of branch histories, which realizes the maximum of
E[sum_{s < tau} f(t_s) dt + reward(tau)] over all adapted stopping rules.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lattice import Lattice, lattice_expectation
from .problem import (
    ProblemSpec,
    SolutionTriple,
    check_terminal_dominates,
    obstacle_values,
    terminal_values,
)

FP_TOL = 1e-14
FP_MAX_ITER = 100
TIE_TOL = 1e-12


class ContractionError(ValueError):
    """Raised when the one-step implicit solve is not a contraction."""


def _require_contraction(spec: ProblemSpec, dt: float) -> None:
    if spec.lipschitz_kappa * dt >= 1.0:
        raise ContractionError(
            f"one-step implicit solve requires lipschitz_kappa * dt < 1; "
            f"got {spec.lipschitz_kappa} * {dt} = {spec.lipschitz_kappa * dt:.6g}"
        )


@dataclass(frozen=True)
class SnellOutput:
    """Solver output: the solution triple plus per-node diagnostics.

    ``continuation[k][j]`` is the pre-reflection value (layer n_steps repeats
    the terminal payoff); ``exercise_region[k][j]`` is True where the
    obstacle attains the max, i.e. obstacle >= continuation - tie_tol
    (terminal layer: where the payoff equals the obstacle).
    """

    triple: SolutionTriple
    continuation: tuple
    exercise_region: tuple


def estimate_z(lattice: Lattice, y_next: np.ndarray, k: int) -> np.ndarray:
    """Integrand estimate at step k from next-layer values (discrete delta hedge).

    Z[k][j] = (y_next[j+1] - y_next[j]) / (x_{k+1,j+1} - x_{k+1,j})
              * sigma(t_k, x_{k,j});
    zero where the lattice spacing is degenerate (sigma = 0).
    """
    y_next = np.asarray(y_next, dtype=float)
    if y_next.shape != (k + 2,):
        raise ValueError(f"expected {k + 2} next-layer values, got {y_next.shape[0]}")
    x_next = lattice.nodes[k + 1]
    dx = np.diff(x_next)
    dy = np.diff(y_next)
    slope = np.divide(dy, dx, out=np.zeros_like(dy), where=dx != 0.0)
    sigma = lattice.model.vol(lattice.times[k], lattice.nodes[k])
    return slope * sigma


def _implicit_reflected_step(spec, t, x, cond, z, h_layer, dt):
    """Fixed point of y -> max(h, cond + dt * f(t, x, y, z)); returns (y, c)."""
    y = np.maximum(h_layer, cond)
    for _ in range(FP_MAX_ITER):
        c = cond + dt * np.asarray(spec.generator(t, x, y, z), dtype=float)
        y_new = np.maximum(h_layer, c)
        # Stop test relative to the iterate scale, above the float noise floor.
        if float(np.max(np.abs(y_new - y))) <= FP_TOL * (1.0 + float(np.max(np.abs(y_new)))):
            return y_new, c
        y = y_new
    raise ContractionError(
        "implicit one-step solve did not converge; lipschitz_kappa * dt < 1 "
        "must hold for the fixed point to contract"
    )


def solve_snell(lattice: Lattice, spec: ProblemSpec) -> SnellOutput:
    """Solve the discrete reflected equation by backward induction.

    Each step solves y = max(h, E_k[Y_{k+1}] + dt * f(t_k, x, y, z)) with z
    estimated explicitly from the next layer, then splits the reflected value
    into continuation c = E_k[Y_{k+1}] + dt * f(t_k, x, y, z) and increment
    dK = (h - c)^+. By construction Y >= h exactly, dK >= 0, dK > 0 only
    where Y = h, and the one-step backward equation holds to solver tolerance.
    """
    _require_contraction(spec, lattice.dt)
    check_terminal_dominates(spec, lattice)
    n = lattice.n_steps
    dt = lattice.dt
    h = obstacle_values(spec, lattice)

    y_layers = [None] * (n + 1)
    z_layers = [None] * n
    dk_layers = [None] * n
    cont_layers = [None] * (n + 1)
    exercised = [None] * (n + 1)

    g = terminal_values(spec, lattice)
    y_layers[n] = g
    cont_layers[n] = g
    exercised[n] = np.abs(g - h[n]) <= TIE_TOL

    for k in range(n - 1, -1, -1):
        z = estimate_z(lattice, y_layers[k + 1], k)
        cond = lattice_expectation(lattice, y_layers[k + 1], k)
        y, c = _implicit_reflected_step(
            spec, lattice.times[k], lattice.nodes[k], cond, z, h[k], dt
        )
        z_layers[k] = z
        cont_layers[k] = c
        y_layers[k] = np.maximum(h[k], c)
        dk_layers[k] = np.maximum(h[k] - c, 0.0)
        exercised[k] = h[k] >= c - TIE_TOL

    triple = SolutionTriple(tuple(y_layers), tuple(z_layers), tuple(dk_layers), lattice)
    return SnellOutput(triple, tuple(cont_layers), tuple(exercised))


def optimal_stopping_time(out: SnellOutput, node_path: np.ndarray) -> int:
    """First step at which the path enters the exercise region, else n_steps."""
    node_path = np.asarray(node_path, dtype=np.int64)
    n = out.triple.n_steps
    if node_path.shape != (n + 1,):
        raise ValueError(f"node path must have {n + 1} entries")
    for k in range(n + 1):
        if out.exercise_region[k][node_path[k]]:
            return k
    return n


def optimal_stopping_times(out: SnellOutput, node_paths: np.ndarray) -> np.ndarray:
    """Vectorized ``optimal_stopping_time`` over a batch of node-index paths."""
    node_paths = np.asarray(node_paths, dtype=np.int64)
    n = out.triple.n_steps
    stops = np.full(node_paths.shape[0], n, dtype=np.int64)
    undecided = np.ones(node_paths.shape[0], dtype=bool)
    for k in range(n + 1):
        hit = undecided & out.exercise_region[k][node_paths[:, k]]
        stops[hit] = k
        undecided &= ~hit
        if not undecided.any():
            break
    return stops


def brute_force_stopping_value(lattice: Lattice, spec: ProblemSpec) -> float:
    """Optimal stopping value by exhaustive recursion over branch histories.

    Requires a generator that does not depend on (y, z); it is evaluated at
    f(t, x, 0, 0). Stopping at step k < n_steps collects the obstacle, at
    n_steps the terminal payoff (the obstacle with overridden endpoint).
    The recursion never recombines and never reuses the solver's layer
    arithmetic, so it is an independent check of solve_snell's root value.
    """
    n = lattice.n_steps
    if n > 12:
        raise ValueError("exhaustive stopping enumeration requires n_steps <= 12")
    dt = lattice.dt
    h = obstacle_values(spec, lattice)
    g = terminal_values(spec, lattice)
    zeros = [np.zeros(k + 1) for k in range(n + 1)]
    f0 = [
        np.asarray(
            spec.generator(lattice.times[k], lattice.nodes[k], zeros[k], zeros[k]),
            dtype=float,
        )
        for k in range(n)
    ]

    def best(k: int, j: int) -> float:
        if k == n:
            return float(g[j])
        p = float(lattice.up_prob[k][j])
        continue_value = float(f0[k][j]) * dt + p * best(k + 1, j + 1) + (1.0 - p) * best(k + 1, j)
        return max(float(h[k][j]), continue_value)

    return best(0, 0)


def snell_to_csv(out: SnellOutput, path) -> None:
    """CSV export with header ``k,j,state,Y,Z,K,continuation,exercised``.

    K is the node-conditioned cumulative pushing process; terminal-layer Z
    is written as 0 (no integrand is attached to the final date).
    """
    triple = out.triple
    lattice = triple.lattice
    k_cum = triple.k_nodewise()
    n = triple.n_steps
    with open(path, "w") as fh:
        fh.write("k,j,state,Y,Z,K,continuation,exercised\n")
        for k in range(n + 1):
            zc = triple.z[k] if k < n else np.zeros(k + 1)
            for j in range(k + 1):
                fh.write(
                    f"{k},{j},{float(lattice.nodes[k][j])!r},{float(triple.y[k][j])!r},"
                    f"{float(zc[j])!r},{float(k_cum[k][j])!r},{float(out.continuation[k][j])!r},"
                    f"{int(out.exercise_region[k][j])}\n"
                )
