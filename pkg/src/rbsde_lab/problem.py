"""Problem data for the reflected backward equation and its solution contract.

A problem instance is (f, g, h, kappa, p): generator f(t, x, y, z), terminal
payoff g(x), lower obstacle h(t, x), a Lipschitz bound kappa for f in (y, z),
and an integrability exponent p in (1, 2). The terminal condition is always
g evaluated at the forward state (Markovian data); the obstacle process is
h evaluated along the forward state.

A solution is the triple (Y, Z, K) on a lattice: Y dominates the obstacle,
K is nondecreasing with K_0 = 0 and acts only where Y touches the obstacle,
and the backward one-step equation holds at every node. ``validate_solution``
turns that contract into computed residuals.

Expectations of path functionals over a lattice are evaluated noise-free by
forward induction with the lattice's branch probabilities. Running suprema
and accumulated integrals are propagated per node by conditional averaging
(exact whenever the functional is a function of the current node, which
covers every closed-form case exercised in the tests; a deterministic
Jensen-type smoothing otherwise).

Callables must be numpy-vectorized: each is called with a scalar time and
equally-shaped state/value arrays.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .lattice import Lattice, lattice_expectation

P_RANGE_MESSAGE = "p must lie in (1,2)"


@dataclass(frozen=True)
class LpExponent:
    """Integrability exponent p in (1, 2) with its conjugate q = p/(p-1)."""

    p: float

    def __post_init__(self):
        if not 1.0 < self.p < 2.0:
            raise ValueError(P_RANGE_MESSAGE)

    @property
    def q(self) -> float:
        return self.p / (self.p - 1.0)

    @property
    def quadratic_coefficient(self) -> float:
        """p(p-1)/2, the weight of the quadratic-variation term at exponent p."""
        return self.p * (self.p - 1.0) / 2.0


@dataclass(frozen=True)
class ProblemSpec:
    """Data (f, g, h, kappa, p) of one reflected backward problem."""

    generator: Callable
    terminal: Callable
    obstacle: Callable
    lipschitz_kappa: float
    p_exponent: float = 1.5

    def __post_init__(self):
        if self.lipschitz_kappa < 0.0:
            raise ValueError("lipschitz_kappa must be >= 0")
        if not 1.0 < self.p_exponent < 2.0:
            raise ValueError(P_RANGE_MESSAGE)

    @property
    def lp(self) -> LpExponent:
        return LpExponent(self.p_exponent)


def obstacle_values(spec: ProblemSpec, lattice: Lattice) -> list:
    """Obstacle h(t_k, x) evaluated on every lattice layer."""
    return [
        np.asarray(spec.obstacle(lattice.times[k], lattice.nodes[k]), dtype=float)
        for k in range(lattice.n_steps + 1)
    ]


def terminal_values(spec: ProblemSpec, lattice: Lattice) -> np.ndarray:
    return np.asarray(spec.terminal(lattice.nodes[-1]), dtype=float)


def check_terminal_dominates(spec: ProblemSpec, lattice: Lattice, tol: float = 0.0) -> float:
    """Max violation of g >= h(T, .) over terminal nodes; raises beyond tol."""
    g = terminal_values(spec, lattice)
    h_T = np.asarray(spec.obstacle(lattice.times[-1], lattice.nodes[-1]), dtype=float)
    violation = float(np.max(h_T - g, initial=0.0))
    if violation > tol:
        raise ValueError(
            f"terminal payoff must dominate the obstacle at maturity "
            f"(violated by {violation:.3e})"
        )
    return violation


def sampled_lipschitz_ratio(
    spec: ProblemSpec, lattice: Lattice, n_samples: int = 200, seed: int = 0
) -> float:
    """Largest |f(y,z) - f(y',z')| / (|dy| + |dz|) over random sampled triples.

    A sample check that the declared lipschitz_kappa bounds the generator's
    (y, z)-variation on the lattice's time/state range; the global property
    itself is an assumption and cannot be certified by sampling.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    worst = 0.0
    for _ in range(n_samples):
        k = int(rng.integers(0, lattice.n_steps))
        j = int(rng.integers(0, k + 1))
        t = lattice.times[k]
        x = np.array([lattice.nodes[k][j]])
        y1, y2 = rng.normal(0.0, 10.0, size=2)
        z1, z2 = rng.normal(0.0, 10.0, size=2)
        denom = abs(y1 - y2) + abs(z1 - z2)
        if denom == 0.0:
            continue
        f1 = float(np.asarray(spec.generator(t, x, np.array([y1]), np.array([z1])))[0])
        f2 = float(np.asarray(spec.generator(t, x, np.array([y2]), np.array([z2])))[0])
        worst = max(worst, abs(f1 - f2) / denom)
    return worst


# ---------------------------------------------------------------------------
# Named closed-form problem ingredients
# ---------------------------------------------------------------------------

REGISTRY_FORMS = ("zero", "constant", "linear_discount", "put_payoff")


def _parse_form(name: str):
    head, sep, tail = name.partition(":")
    head = head.strip()
    if head not in REGISTRY_FORMS:
        raise ValueError(f"unknown form {name!r}; known forms: {', '.join(REGISTRY_FORMS)}")
    if head == "zero":
        if sep:
            raise ValueError("form 'zero' takes no parameter")
        return head, None
    if not sep:
        raise ValueError(f"form {head!r} needs a parameter, e.g. '{head}:0.5'")
    try:
        return head, float(tail)
    except ValueError:
        raise ValueError(f"parameter of form {name!r} is not a number") from None


def make_generator(name: str) -> Callable:
    """Generator f(t, x, y, z) from a registry name ('zero', 'constant:c', 'linear_discount:r')."""
    head, param = _parse_form(name)
    if head == "zero":
        return lambda t, x, y, z: np.zeros_like(np.asarray(y, dtype=float))
    if head == "constant":
        return lambda t, x, y, z: np.full_like(np.asarray(y, dtype=float), param)
    if head == "linear_discount":
        return lambda t, x, y, z: -param * np.asarray(y, dtype=float)
    raise ValueError(f"form {name!r} cannot be used as a generator")


def make_terminal(name: str) -> Callable:
    """Terminal payoff g(x) from a registry name ('zero', 'constant:c', 'put_payoff:strike')."""
    head, param = _parse_form(name)
    if head == "zero":
        return lambda x: np.zeros_like(np.asarray(x, dtype=float))
    if head == "constant":
        return lambda x: np.full_like(np.asarray(x, dtype=float), param)
    if head == "put_payoff":
        return lambda x: np.maximum(param - np.asarray(x, dtype=float), 0.0)
    raise ValueError(f"form {name!r} cannot be used as a terminal payoff")


def make_obstacle(name: str) -> Callable:
    """Obstacle h(t, x) from a registry name ('zero', 'constant:c', 'put_payoff:strike')."""
    head, param = _parse_form(name)
    if head == "zero":
        return lambda t, x: np.zeros_like(np.asarray(x, dtype=float))
    if head == "constant":
        return lambda t, x: np.full_like(np.asarray(x, dtype=float), param)
    if head == "put_payoff":
        return lambda t, x: np.maximum(param - np.asarray(x, dtype=float), 0.0)
    raise ValueError(f"form {name!r} cannot be used as an obstacle")


# ---------------------------------------------------------------------------
# Empirical norms on path arrays
# ---------------------------------------------------------------------------

def _exponent(p) -> float:
    return p.p if isinstance(p, LpExponent) else LpExponent(float(p)).p


def sp_norm(process_paths: np.ndarray, p) -> float:
    """Empirical sup-norm: (mean over paths of sup_k |value|^p)^(1/p)."""
    a = np.asarray(process_paths, dtype=float)
    if a.size == 0:
        raise ValueError("sp_norm of an empty path array")
    if a.ndim == 1:
        a = a[None, :]
    pw = _exponent(p)
    sup = np.max(np.abs(a), axis=1)
    return float(np.mean(sup**pw) ** (1.0 / pw))


def mp_norm(z_paths: np.ndarray, dt: float, p) -> float:
    """Empirical quadratic-integral norm: (mean of (sum_k z_k^2 dt)^(p/2))^(1/p)."""
    a = np.asarray(z_paths, dtype=float)
    if a.size == 0:
        raise ValueError("mp_norm of an empty path array")
    if dt <= 0.0:
        raise ValueError("dt must be > 0")
    if a.ndim == 1:
        a = a[None, :]
    pw = _exponent(p)
    quad = np.sum(a**2, axis=1) * dt
    return float(np.mean(quad ** (pw / 2.0)) ** (1.0 / pw))


# ---------------------------------------------------------------------------
# Noise-free lattice functionals
# ---------------------------------------------------------------------------

def _forward_conditional(lattice: Lattice, combine, initial) -> list:
    """Propagate a per-node statistic forward, averaging over incoming branches.

    ``combine(stat_at_k, k)`` returns the (down, up) contributions carried
    along the two branches; the statistic at an unreachable node (weight 0)
    is set to 0.
    """
    weights = lattice.node_weights()
    stats = [np.asarray(initial, dtype=float)]
    for k in range(lattice.n_steps):
        p = lattice.up_prob[k]
        w = weights[k]
        moved = combine(stats[k], k)
        num = np.zeros(k + 2)
        num[1:] += w * p * moved[1]
        num[:-1] += w * (1.0 - p) * moved[0]
        denom = weights[k + 1]
        nxt = np.divide(num, denom, out=np.zeros(k + 2), where=denom > 0.0)
        stats.append(nxt)
    return stats


def accumulated_along(lattice: Lattice, addends: list) -> list:
    """Node-conditioned accumulation A[k][j] = E[sum_{s<k} a_s | node (k, j)].

    ``addends[k]`` is the per-node amount added over [t_k, t_{k+1}]
    (k = 0 .. n_steps-1). Exact expectations of the total follow by weighting
    the terminal layer; p-th moments use the same layer (conditionally
    averaged, hence deterministic and exact for node-measurable totals).
    """

    def combine(stat, k):
        a = np.asarray(addends[k], dtype=float)
        s = stat + a
        return s, s  # identical along down- and up-branches

    return _forward_conditional(lattice, combine, [0.0])


def running_sup_along(lattice: Lattice, values: list) -> list:
    """Node-conditioned running supremum M[k][j] of |values| along paths."""
    v0 = float(np.abs(np.asarray(values[0], dtype=float))[0])
    weights = lattice.node_weights()
    stats = [np.array([v0])]
    for k in range(lattice.n_steps):
        p = lattice.up_prob[k]
        w = weights[k]
        num = np.zeros(k + 2)
        num[1:] += w * p * stats[k]
        num[:-1] += w * (1.0 - p) * stats[k]
        denom = weights[k + 1]
        carried = np.divide(num, denom, out=np.zeros(k + 2), where=denom > 0.0)
        layer = np.abs(np.asarray(values[k + 1], dtype=float))
        stats.append(np.maximum(carried, layer))
    return stats


def lattice_sup_moment(lattice: Lattice, values: list, power: float) -> float:
    """E[(sup_k |values_k|)^power] with lattice weights (node-conditioned sup)."""
    sups = running_sup_along(lattice, values)
    w = lattice.node_weights()[-1]
    return float(np.sum(w * sups[-1] ** power))


def lattice_accumulation_moment(lattice: Lattice, addends: list, power: float) -> float:
    """E[(sum_k addends_k)^power] with lattice weights (node-conditioned sum)."""
    acc = accumulated_along(lattice, addends)
    w = lattice.node_weights()[-1]
    return float(np.sum(w * acc[-1] ** power))


def lattice_expected_total(lattice: Lattice, addends: list) -> float:
    """Exact E[sum_k addends_k]: linear, so plain forward weighting suffices."""
    weights = lattice.node_weights()
    total = 0.0
    for k in range(lattice.n_steps):
        total += float(np.sum(weights[k] * np.asarray(addends[k], dtype=float)))
    return total


def lattice_terminal_moment(lattice: Lattice, layer_values: np.ndarray, power: float) -> float:
    """E[|terminal values|^power] with lattice weights."""
    w = lattice.node_weights()[-1]
    return float(np.sum(w * np.abs(np.asarray(layer_values, dtype=float)) ** power))


# ---------------------------------------------------------------------------
# Solution triple and its contract
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SolutionTriple:
    """Node-indexed solution (Y, Z, K) of the discrete reflected equation.

    ``y`` has n_steps+1 layers; ``z`` and ``dk`` have n_steps layers each,
    where ``dk[k][j]`` is the (nonnegative) reflection increment assigned to
    node (k, j) over [t_k, t_{k+1}]. K starts at 0, so K is nondecreasing
    along every lattice path iff every increment is >= 0; node-indexed
    cumulative values are exposed via ``k_nodewise``.
    """

    y: tuple
    z: tuple
    dk: tuple
    lattice: Lattice

    @property
    def n_steps(self) -> int:
        return self.lattice.n_steps

    def k_nodewise(self) -> list:
        """Cumulative K conditioned on the current node (K[0][0] = 0)."""
        return accumulated_along(self.lattice, list(self.dk))

    def expected_k_total(self) -> float:
        """Exact E[K_T]."""
        return lattice_expected_total(self.lattice, list(self.dk))


def triple_to_csv(sol: SolutionTriple, path) -> None:
    """Serialize a solution triple as CSV (k, j, Y, Z, dK); terminal Z/dK rows are 0."""
    with open(path, "w") as fh:
        fh.write("k,j,Y,Z,dK\n")
        n = sol.n_steps
        for k in range(n + 1):
            zc = sol.z[k] if k < n else np.zeros(k + 1)
            dkc = sol.dk[k] if k < n else np.zeros(k + 1)
            for j in range(k + 1):
                fh.write(f"{k},{j},{float(sol.y[k][j])!r},{float(zc[j])!r},{float(dkc[j])!r}\n")


def triple_from_csv(path, lattice: Lattice) -> SolutionTriple:
    """Rebuild a solution triple written by ``triple_to_csv``."""
    n = lattice.n_steps
    y = [np.zeros(k + 1) for k in range(n + 1)]
    z = [np.zeros(k + 1) for k in range(n)]
    dk = [np.zeros(k + 1) for k in range(n)]
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "k,j,Y,Z,dK":
            raise ValueError(f"unexpected header {header!r}")
        for line in fh:
            ks, js, ys, zs, dks = line.strip().split(",")
            k, j = int(ks), int(js)
            y[k][j] = float(ys)
            if k < n:
                z[k][j] = float(zs)
                dk[k][j] = float(dks)
    return SolutionTriple(tuple(y), tuple(z), tuple(dk), lattice)


@dataclass(frozen=True)
class ValidationReport:
    """Residuals of the discrete solution contract, with per-item pass flags."""

    obstacle_violation: float
    k_min_increment: float
    k_initial: float
    skorokhod_residual: float
    backward_residual: float
    tol: float
    obstacle_ok: bool
    k_monotone_ok: bool
    k_initial_ok: bool
    skorokhod_ok: bool
    backward_ok: bool

    @property
    def all_pass(self) -> bool:
        return (
            self.obstacle_ok
            and self.k_monotone_ok
            and self.k_initial_ok
            and self.skorokhod_ok
            and self.backward_ok
        )

    def to_dict(self) -> dict:
        return {
            "obstacle_violation": self.obstacle_violation,
            "k_min_increment": self.k_min_increment,
            "k_initial": self.k_initial,
            "skorokhod_residual": self.skorokhod_residual,
            "backward_residual": self.backward_residual,
            "tol": self.tol,
            "obstacle_ok": self.obstacle_ok,
            "k_monotone_ok": self.k_monotone_ok,
            "k_initial_ok": self.k_initial_ok,
            "skorokhod_ok": self.skorokhod_ok,
            "backward_ok": self.backward_ok,
            "all_pass": self.all_pass,
        }


def validate_solution(
    sol: SolutionTriple,
    spec: ProblemSpec,
    lattice: Lattice,
    tol: float = 1e-10,
    skorokhod_tol: float = 1e-12,
) -> ValidationReport:
    """Check the solution contract and report residuals.

    Items checked, in order: obstacle domination (max of h - Y over nodes),
    minimal reflection increment (K nondecreasing along every path iff
    >= 0), the starting value K_0, the Skorokhod sum, and the one-step
    backward equation |Y_k - (E_k[Y_{k+1}] + f(t_k, x, Y_k, Z_k) dt + dK_k)|.

    The Skorokhod residual is a certified bound over all lattice paths:
    sum over steps of the worst nodewise |(Y - h) * dK|, which dominates the
    pathwise sum |sum_k (Y_k - h_k) dK_k| for every path.
    """
    n = lattice.n_steps
    if len(sol.y) != n + 1 or len(sol.z) != n or len(sol.dk) != n:
        raise ValueError("solution layers inconsistent with lattice")
    for k in range(n + 1):
        if np.asarray(sol.y[k]).shape != (k + 1,):
            raise ValueError(f"Y layer {k} has wrong shape")

    h = obstacle_values(spec, lattice)
    dt = lattice.dt

    obstacle_violation = max(
        float(np.max(h[k] - sol.y[k])) for k in range(n + 1)
    )
    k_min_increment = min(
        (float(np.min(sol.dk[k])) for k in range(n)), default=0.0
    )
    k_initial = 0.0  # increments accumulate from zero by construction

    skorokhod = 0.0
    backward = 0.0
    for k in range(n):
        cond = lattice_expectation(lattice, sol.y[k + 1], k)
        fval = np.asarray(
            spec.generator(lattice.times[k], lattice.nodes[k], sol.y[k], sol.z[k]),
            dtype=float,
        )
        resid = sol.y[k] - (cond + dt * fval + sol.dk[k])
        backward = max(backward, float(np.max(np.abs(resid))))
        skorokhod += float(np.max(np.abs((sol.y[k] - h[k]) * sol.dk[k])))

    return ValidationReport(
        obstacle_violation=obstacle_violation,
        k_min_increment=k_min_increment,
        k_initial=k_initial,
        skorokhod_residual=skorokhod,
        backward_residual=backward,
        tol=tol,
        obstacle_ok=obstacle_violation <= tol,
        k_monotone_ok=k_min_increment >= -tol,
        k_initial_ok=abs(k_initial) <= tol,
        skorokhod_ok=skorokhod <= skorokhod_tol,
        backward_ok=backward <= tol,
    )
