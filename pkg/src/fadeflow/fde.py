"""Integration and probes for nonautonomous functional differential equations.

The right-hand side acts on the current history: an instantaneous matrix term
on x(0), discrete-delay matrix terms on x(-r), distributed terms on the
fading-memory integrals of x against exponential kernels, quasi-periodic
forcing, and an optional bounded nonlinearity of x(0).

Integration is the method of steps with a fixed-step classical Runge-Kutta
scheme on the head.  Delayed stage lookups interpolate already-computed
values with cubic Hermite polynomials; the distributed integrals are carried
as auxiliary states (the moving exponential average satisfies an exact ODE),
which keeps the scheme at fourth order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .baseflow import (
    BasePoint,
    MatrixCoefficient,
    TorusBase,
    VectorCoefficient,
    advance_many,
)
from .history import (
    HistoryFunction,
    OrderParams,
    RegularityReport,
    compact_metric,
    exp_order_le,
    random_cone_element,
    random_history,
    variation_regularity,
)

__all__ = [
    "BlowUpError",
    "ReturnPairError",
    "FdeModel",
    "Trajectory",
    "eval_rhs",
    "integrate",
    "integrate_functional",
    "coeff_stacks",
    "exp_kernel_weights",
    "check_quasimonotone",
    "check_monotonicity",
    "uniform_stability_probe",
    "continuity_probe",
    "omega_limit_probe",
    "QuasimonotoneReport",
    "MonotonicityReport",
    "StabilityTable",
    "ContinuityReport",
    "CopyOfBaseReport",
    "PairProbeEntry",
]

BLOWUP_LIMIT = 1e12


class BlowUpError(RuntimeError):
    """Raised when the integrated head exceeds the blow-up guard."""

    def __init__(self, t: float, norm: float):
        super().__init__(f"trajectory blew up at t={t:.6g} (|z| = {norm:.3e})")
        self.t = t
        self.norm = norm


class ReturnPairError(RuntimeError):
    """No base return pairs found in the probe window; widen the window."""


def exp_kernel_weights(gamma: float, step: float, n_steps: int) -> np.ndarray:
    """Quadrature weights w with w @ samples = integral of exp(gamma s) x(s) ds.

    Trapezoid rule on [-L, 0] plus the closed-form tail exp(-gamma L)/gamma
    applied to the value at -L (the constant tail).
    """
    t = (np.arange(n_steps + 1) - n_steps) * step
    w = step * np.exp(gamma * t)
    w[0] *= 0.5
    w[-1] *= 0.5
    w[0] += math.exp(-gamma * n_steps * step) / gamma
    return w


@dataclass(frozen=True)
class FdeModel:
    """Structured right-hand side over a torus base, with grid and order data.

    Discrete delays must be positive multiples of the grid step and at most
    the depth; distributed decays gamma must satisfy exp(-gamma L) < 1e-8 so
    the constant-tail truncation stays inside budget. ``nonlin_bound`` is a
    user-declared sup bound when a nonlinearity is present (used only for
    reporting the boundedness constants).
    """

    base: TorusBase
    dim: int
    step: float
    depth: float
    order: OrderParams
    linear_inst: Optional[MatrixCoefficient] = None
    delay_terms: tuple = ()
    dist_terms: tuple = ()
    forcing: Optional[VectorCoefficient] = None
    nonlinearity: Optional[Callable[[np.ndarray], np.ndarray]] = None
    nonlin_bound: float = 0.0

    def __post_init__(self):
        if self.dim < 1 or self.step <= 0:
            raise ValueError("dim must be >= 1 and step positive")
        n = round(self.depth / self.step)
        if n < 1 or not math.isclose(n * self.step, self.depth, rel_tol=1e-9):
            raise ValueError("depth must be a positive multiple of step")
        if self.order.dim != self.dim:
            raise ValueError("order dimension mismatch")
        for r, mc in self.delay_terms:
            p = round(r / self.step)
            if p < 1 or not math.isclose(p * self.step, r, rel_tol=1e-9, abs_tol=1e-12):
                raise ValueError(f"delay {r} must be a multiple of step {self.step}, at least step")
            if r > self.depth + 1e-9:
                raise ValueError(f"delay {r} exceeds depth {self.depth}")
            if mc.m != self.dim:
                raise ValueError("delay coefficient dimension mismatch")
        for gamma, mc in self.dist_terms:
            if gamma <= 0:
                raise ValueError("distributed decays must be positive")
            if math.exp(-gamma * self.depth) >= 1e-8:
                raise ValueError(
                    f"truncation budget violated: exp(-{gamma}*{self.depth}) >= 1e-8; increase depth"
                )
            if mc.m != self.dim:
                raise ValueError("distributed coefficient dimension mismatch")
        if self.linear_inst is not None and self.linear_inst.m != self.dim:
            raise ValueError("instantaneous coefficient dimension mismatch")
        if self.forcing is not None and self.forcing.m != self.dim:
            raise ValueError("forcing dimension mismatch")
        object.__setattr__(self, "delay_terms", tuple(self.delay_terms))
        object.__setattr__(self, "dist_terms", tuple(self.dist_terms))

    @property
    def n_steps(self) -> int:
        return round(self.depth / self.step)

    def delay_offsets(self) -> list[int]:
        return [round(r / self.step) for r, _ in self.delay_terms]

    def dist_weights(self) -> list[np.ndarray]:
        return [exp_kernel_weights(g, self.step, self.n_steps) for g, _ in self.dist_terms]

    def rhs_bound(self, r: float) -> float:
        """Bound of |rhs| over the base and the ball of sup-radius r."""
        total = self.nonlin_bound
        if self.linear_inst is not None:
            total += float(self.linear_inst.bound_abs(self.base).sum(axis=1).max()) * r
        for _, mc in self.delay_terms:
            total += float(mc.bound_abs(self.base).sum(axis=1).max()) * r
        for gamma, mc in self.dist_terms:
            total += float(mc.bound_abs(self.base).sum(axis=1).max()) * r / gamma
        if self.forcing is not None:
            total += float(self.forcing.bound_abs(self.base).max())
        return total

    def grid_matches(self, x: HistoryFunction) -> bool:
        return (
            x.dim == self.dim
            and x.n_steps == self.n_steps
            and math.isclose(x.step, self.step, rel_tol=1e-9)
        )


def eval_rhs(model: FdeModel, point: BasePoint, x: HistoryFunction) -> np.ndarray:
    """Right-hand side value at a base point and history.

    Distributed terms are computed by the trapezoid rule on [-L, 0] with the
    closed-form exponential tail below -L.
    """
    if not model.grid_matches(x):
        raise ValueError("history grid does not match the model grid")
    theta = point.theta
    out = np.zeros(model.dim)
    if model.linear_inst is not None:
        out += model.linear_inst.value(model.base, theta) @ x.samples[-1]
    for (r, mc), p in zip(model.delay_terms, model.delay_offsets()):
        out += mc.value(model.base, theta) @ x.samples[x.n_steps - p]
    for (gamma, mc), w in zip(model.dist_terms, model.dist_weights()):
        out += mc.value(model.base, theta) @ (w @ x.samples)
    if model.forcing is not None:
        out += model.forcing.value(model.base, theta)
    if model.nonlinearity is not None:
        out += np.asarray(model.nonlinearity(x.samples[-1]), dtype=float)
    return out


def _fd_derivs(values: np.ndarray, step: float) -> np.ndarray:
    """Fourth-order finite-difference derivatives of grid samples (one-sided at ends)."""
    n = values.shape[0]
    if n < 5:
        d = np.empty_like(values)
        if n == 1:
            d[:] = 0.0
            return d
        d[1:-1] = (values[2:] - values[:-2]) / (2.0 * step)
        d[0] = (values[1] - values[0]) / step
        d[-1] = (values[-1] - values[-2]) / step
        return d
    d = np.empty_like(values)
    d[2:-2] = (values[:-4] - 8.0 * values[1:-3] + 8.0 * values[3:-1] - values[4:]) / (12.0 * step)
    d[0] = (-25.0 * values[0] + 48.0 * values[1] - 36.0 * values[2] + 16.0 * values[3] - 3.0 * values[4]) / (12.0 * step)
    d[1] = (-3.0 * values[0] - 10.0 * values[1] + 18.0 * values[2] - 6.0 * values[3] + values[4]) / (12.0 * step)
    d[-1] = (25.0 * values[-1] - 48.0 * values[-2] + 36.0 * values[-3] - 16.0 * values[-4] + 3.0 * values[-5]) / (12.0 * step)
    d[-2] = (3.0 * values[-1] + 10.0 * values[-2] - 18.0 * values[-3] + 6.0 * values[-4] - values[-5]) / (12.0 * step)
    return d


class Trajectory:
    """Grid record of an integration run.

    Stores the full value array over [-L, T] (initial segment included), node
    derivatives, auxiliary distributed-integral states, and enough metadata
    to rebuild any snapshot u(t) as a :class:`HistoryFunction`.
    """

    def __init__(self, base, point0, step, n_hist, values, derivs, aux, gammas):
        self.base = base
        self.point0 = point0
        self.step = step
        self.n_hist = n_hist
        self._z = values
        self._dz = derivs
        self._aux = aux  # (n_run+1, K, m) or None
        self._gammas = gammas
        for arr in (values, derivs):
            arr.setflags(write=False)
        if aux is not None:
            aux.setflags(write=False)

    @property
    def dim(self) -> int:
        return self._z.shape[1]

    @property
    def n_run(self) -> int:
        return self._z.shape[0] - 1 - self.n_hist

    @property
    def t_final(self) -> float:
        return self.n_run * self.step

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_run + 1) * self.step

    @property
    def heads(self) -> np.ndarray:
        """Values z(t) at output times 0..T (read-only view)."""
        return self._z[self.n_hist:]

    @property
    def full_values(self) -> np.ndarray:
        """All grid values over [-L, T] (read-only view)."""
        return self._z

    def base_points(self) -> np.ndarray:
        return advance_many(self.base, self.point0, self.times)

    def _index_of(self, t: float) -> int:
        k = round(t / self.step)
        if not math.isclose(k * self.step, t, rel_tol=1e-9, abs_tol=1e-9 * self.step):
            raise ValueError(f"time {t} is not on the output grid")
        if k < 0 or k > self.n_run:
            raise ValueError(f"time {t} outside the recorded range [0, {self.t_final}]")
        return k

    def head_at(self, t: float) -> np.ndarray:
        return self._z[self.n_hist + self._index_of(t)].copy()

    def snapshot(self, t: float) -> HistoryFunction:
        """History u(t) on the model grid (constant-tail truncation at depth L)."""
        k = self._index_of(t)
        window = self._z[k: self.n_hist + k + 1]
        return HistoryFunction(self.step, window)

    def aux_at(self, t: float) -> Optional[np.ndarray]:
        if self._aux is None:
            return None
        return self._aux[self._index_of(t)].copy()

    def max_slope(self) -> float:
        """Largest |z(t+step) - z(t)| / step over the computed segment (equicontinuity modulus)."""
        seg = self._z[self.n_hist:]
        if seg.shape[0] < 2:
            return 0.0
        return float(np.abs(np.diff(seg, axis=0)).max() / self.step)

    def write_csv(self, fh, extra: Optional[dict[str, np.ndarray]] = None):
        """Write t, theta_*, z_* (and optional extra columns) as CSV."""
        thetas = self.base_points()
        d = thetas.shape[1]
        cols = ["t"] + [f"theta_{i+1}" for i in range(d)] + [f"z_{i+1}" for i in range(self.dim)]
        arrays = [self.times] + [thetas[:, i] for i in range(d)] + [self.heads[:, i] for i in range(self.dim)]
        for name, arr in (extra or {}).items():
            cols.append(name)
            arrays.append(arr)
        fh.write(",".join(cols) + "\n")
        for row in zip(*arrays):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def _steps_of(T: float, step: float) -> int:
    if T <= 0:
        raise ValueError("T must be positive")
    n = max(1, round(T / step))
    return n


def coeff_stacks(model: FdeModel, thetas: np.ndarray):
    """Coefficient values of every rhs term along a batch of torus points.

    Returns (lin, delays, dists, forc) with value stacks shaped
    (len(thetas), m, m) (broadcast views for constant coefficients), delay
    entries paired with their integer grid offsets and distributed entries
    with their decays.
    """
    m = model.dim
    nt = thetas.shape[0]

    def stack(mc: MatrixCoefficient) -> np.ndarray:
        if mc.is_constant:
            return np.broadcast_to(mc.const, (nt, m, m))
        return mc.values(model.base, thetas)

    lin = stack(model.linear_inst) if model.linear_inst is not None else None
    delays = [(stack(mc), round(r / model.step)) for r, mc in model.delay_terms]
    dists = [(stack(mc), gamma) for (gamma, mc) in model.dist_terms]
    if model.forcing is not None:
        if model.forcing.is_constant:
            forc = np.broadcast_to(model.forcing.const, (nt, m))
        else:
            forc = model.forcing.values(model.base, thetas)
    else:
        forc = None
    return lin, delays, dists, forc


def integrate(
    model: FdeModel,
    point0: BasePoint,
    x0: HistoryFunction,
    T: float,
    aux0: Optional[np.ndarray] = None,
    blowup_limit: float = BLOWUP_LIMIT,
) -> Trajectory:
    """Integrate the model forward from (point0, x0) for time T.

    Fixed-step classical Runge-Kutta on the head; delayed stage lookups use
    cubic Hermite interpolation of already-computed values (the half-step
    stage lookups never read ahead of the step start because delays are at
    least one step).  Distributed terms evolve as auxiliary convolution
    states, initialized by quadrature on x0 unless ``aux0`` is supplied
    (e.g. to continue a run with its recorded states).  T is rounded to the
    nearest number of grid steps.
    """
    if not model.grid_matches(x0):
        raise ValueError("initial history grid does not match the model grid")
    if point0.dim != model.base.dim_base:
        raise ValueError("base point dimension mismatch")
    n = _steps_of(T, model.step)
    m = model.dim
    N = model.n_steps
    h = model.step
    h2 = 0.5 * h

    # base points and coefficient values at all stage times 0, h/2, h, ...
    stage_times = 0.5 * h * np.arange(2 * n + 1)
    thetas = advance_many(model.base, point0, stage_times)
    lin, delays, dists, forc = coeff_stacks(model, thetas)
    gammas = np.array([g for g, _ in model.dist_terms])
    nl = model.nonlinearity

    K = len(dists)
    Z = np.empty((N + n + 1, m))
    Z[: N + 1] = x0.samples
    Dn = np.empty_like(Z)
    Dn[: N + 1] = _fd_derivs(x0.samples, h)
    if K:
        if aux0 is not None:
            ys = np.asarray(aux0, dtype=float).reshape(K, m).copy()
        else:
            ys = np.stack([w @ x0.samples for w in model.dist_weights()])
        AUX = np.empty((n + 1, K, m))
        AUX[0] = ys
        gcol = gammas[:, None]
    else:
        ys = np.zeros((0, m))
        AUX = None
        gcol = None

    def rhs(s2: int, z: np.ndarray, ys_: np.ndarray, dvals: list) -> np.ndarray:
        out = forc[s2].copy() if forc is not None else np.zeros(m)
        if lin is not None:
            out += lin[s2] @ z
        for (cv, _), dv in zip(delays, dvals):
            out += cv[s2] @ dv
        for i, (ev, _) in enumerate(dists):
            out += ev[s2] @ ys_[i]
        if nl is not None:
            out += nl(z)
        return out

    eighth = h / 8.0
    for k in range(n):
        g = N + k
        s2 = 2 * k
        z = Z[g]
        d_node = [Z[g - p] for _, p in delays]
        k1z = rhs(s2, z, ys, d_node)
        Dn[g] = k1z  # needed below when a delay is exactly one step
        d_mid = [
            0.5 * (Z[g - p] + Z[g - p + 1]) + eighth * (Dn[g - p] - Dn[g - p + 1])
            for _, p in delays
        ]
        d_next = [Z[g + 1 - p] for _, p in delays]
        if K:
            k1y = z - gcol * ys
            y2 = ys + h2 * k1y
        else:
            k1y = y2 = ys
        z2 = z + h2 * k1z
        k2z = rhs(s2 + 1, z2, y2, d_mid)
        if K:
            k2y = z2 - gcol * y2
            y3 = ys + h2 * k2y
        else:
            k2y = y3 = ys
        z3 = z + h2 * k2z
        k3z = rhs(s2 + 1, z3, y3, d_mid)
        if K:
            k3y = z3 - gcol * y3
            y4 = ys + h * k3y
        else:
            k3y = y4 = ys
        z4 = z + h * k3z
        k4z = rhs(s2 + 2, z4, y4, d_next)

        z_new = z + (h / 6.0) * (k1z + 2.0 * k2z + 2.0 * k3z + k4z)
        nrm = float(np.abs(z_new).max())
        if not np.isfinite(nrm) or nrm > blowup_limit:
            raise BlowUpError((k + 1) * h, nrm)
        Z[g + 1] = z_new
        if K:
            k4y = z4 - gcol * y4
            ys = ys + (h / 6.0) * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)
            AUX[k + 1] = ys

    d_final = [Z[N + n - p] for _, p in delays]
    Dn[N + n] = rhs(2 * n, Z[N + n], ys, d_final)
    return Trajectory(model.base, point0, h, N, Z, Dn, AUX, gammas)


def integrate_functional(
    base: TorusBase,
    rhs: Callable[[BasePoint, HistoryFunction], np.ndarray],
    point0: BasePoint,
    y0: HistoryFunction,
    T: float,
    blowup_limit: float = BLOWUP_LIMIT,
) -> Trajectory:
    """Integrate a generic functional right-hand side (point, history) -> vector.

    Slower than :func:`integrate`: every stage rebuilds the full history
    window (cubic Hermite between nodes).  Used for right-hand sides without
    the structured form, e.g. neutral equations transformed through the
    inverse convolution operator.
    """
    n = _steps_of(T, y0.step)
    m = y0.dim
    N = y0.n_steps
    h = y0.step
    h2 = 0.5 * h
    Z = np.empty((N + n + 1, m))
    Z[: N + 1] = y0.samples
    Dn = np.empty_like(Z)
    Dn[: N + 1] = _fd_derivs(y0.samples, h)

    stage_times = 0.5 * h * np.arange(2 * n + 1)
    thetas = advance_many(base, point0, stage_times)
    points = [BasePoint(thetas[i]) for i in range(2 * n + 1)]

    def window_at_node(k: int) -> HistoryFunction:
        return HistoryFunction(h, Z[k: N + k + 1])

    def window_at_mid(k: int, head: np.ndarray) -> HistoryFunction:
        # window of the half-step solution: Hermite midpoints of stored
        # segments, with the provisional stage head at position 0.
        left = Z[k: N + k]
        right = Z[k + 1: N + k + 1]
        dl = Dn[k: N + k]
        dr = Dn[k + 1: N + k + 1]
        vals = np.empty((N + 1, m))
        vals[:-1] = 0.5 * (left + right) + (h / 8.0) * (dl - dr)
        vals[-1] = head
        return HistoryFunction(h, vals)

    for k in range(n):
        g = N + k
        s2 = 2 * k
        z = Z[g]
        k1 = rhs(points[s2], window_at_node(k))
        Dn[g] = k1
        zmid1 = z + h2 * k1
        k2 = rhs(points[s2 + 1], window_at_mid(k, zmid1))
        zmid2 = z + h2 * k2
        k3 = rhs(points[s2 + 1], window_at_mid(k, zmid2))
        z4 = z + h * k3
        Z[g + 1] = z4  # provisional, so the node window sees the stage head
        k4 = rhs(points[s2 + 2], window_at_node(k + 1))
        z_new = z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        nrm = float(np.abs(z_new).max())
        if not np.isfinite(nrm) or nrm > blowup_limit:
            raise BlowUpError((k + 1) * h, nrm)
        Z[g + 1] = z_new

    Dn[N + n] = rhs(points[2 * n], window_at_node(n))
    return Trajectory(base, point0, h, N, Z, Dn, None, np.zeros(0))


# ---------------------------------------------------------------------------
# hypothesis checkers and probes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuasimonotoneReport:
    passed: bool
    min_margin: float
    n_pairs: int
    worst_component: int


def check_quasimonotone(model: FdeModel, seed: int = 0, n_pairs: int = 50) -> QuasimonotoneReport:
    """Sample ordered pairs and check the quasimonotone inequality of the rhs.

    Pairs are built as (x, x + c) with c an exact cone element, so the order
    precondition holds by construction.  The margin is the componentwise
    ``rhs(y) - rhs(x) - diag * (y(0) - x(0))``; the check passes when its
    minimum over all samples stays above ``-tol``.
    """
    rng = np.random.default_rng(seed)
    worst = math.inf
    worst_i = -1
    for _ in range(n_pairs):
        theta = BasePoint(rng.uniform(0.0, 1.0, size=model.base.dim_base))
        x = random_history(rng, model.dim, model.step, model.depth)
        c = random_cone_element(rng, model.order, model.step, model.depth, scale=rng.uniform(0.1, 1.0))
        y = x + c
        fx = eval_rhs(model, theta, x)
        fy = eval_rhs(model, theta, y)
        margin = fy - fx - model.order.diag * (y.samples[-1] - x.samples[-1])
        i = int(np.argmin(margin))
        if margin[i] < worst:
            worst = float(margin[i])
            worst_i = i
    return QuasimonotoneReport(
        passed=bool(worst >= -model.order.tol), min_margin=worst, n_pairs=n_pairs, worst_component=worst_i
    )


@dataclass(frozen=True)
class MonotonicityReport:
    passed: bool
    first_violation: Optional[float]
    min_margin: float
    t_final: float


def _cone_scan(diff: np.ndarray, step: float, n_hist: int, order: OrderParams) -> tuple[Optional[float], float]:
    """Scan a full grid difference array for exponential-order violations.

    Checking pointwise nonnegativity and the one-step inequality on the whole
    array covers the cone conditions of every snapshot window at once (each
    window's checks are a subset, and its constant-tail step is implied by
    pointwise nonnegativity at the window base).  Returns (first violation
    output time or None, minimal margin).
    """
    slack = order.tol * (1.0 + float(np.abs(diff).max()))
    fac = order.decay_factor(step)
    margins_pt = diff
    margins_step = diff[1:] - fac * diff[:-1]
    min_margin = float(min(margins_pt.min(), margins_step.min()))
    bad_pt = np.nonzero((margins_pt < -slack).any(axis=1))[0]
    bad_st = np.nonzero((margins_step < -slack).any(axis=1))[0] + 1
    bad = np.concatenate([bad_pt, bad_st])
    bad = bad[bad >= n_hist + 1]  # indices at or before t=0 are the initial data
    if bad.size == 0:
        return None, min_margin
    return float((int(bad.min()) - n_hist) * step), min_margin


def check_monotonicity(
    model: FdeModel,
    point0: BasePoint,
    x0: HistoryFunction,
    y0: HistoryFunction,
    T: float,
    traj_x: Optional[Trajectory] = None,
    traj_y: Optional[Trajectory] = None,
) -> MonotonicityReport:
    """Integrate an ordered pair and verify order preservation at every output step.

    Pre-integrated trajectories may be passed to reuse runs (e.g. one shared
    lower datum against many upper ones).
    """
    if not exp_order_le(x0, y0, model.order):
        raise ValueError("precondition failed: x0 must be below y0 in the exponential order")
    tx = traj_x if traj_x is not None else integrate(model, point0, x0, T)
    ty = traj_y if traj_y is not None else integrate(model, point0, y0, T)
    first, margin = _cone_scan(ty.full_values - tx.full_values, model.step, model.n_steps, model.order)
    return MonotonicityReport(
        passed=first is None, first_violation=first, min_margin=margin, t_final=tx.t_final
    )


@dataclass(frozen=True)
class StabilityTable:
    """Empirical uniform-stability table: best passing delta per epsilon."""

    rows: tuple  # (epsilon, delta or None)
    deviations: tuple  # (delta, max deviation) for the sampled deltas
    collapsed: bool  # True when some epsilon admitted no passing delta


def _scale_to_metric(x: HistoryFunction, c: HistoryFunction, target: float) -> HistoryFunction:
    """Scale the cone element c so that metric(x, x+c) is just below target."""
    lo, hi = 0.0, 1.0
    # metric(x, x + s c) is monotone in s
    if compact_metric(x, x + c) <= target:
        return c
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if compact_metric(x, x + c.scaled(mid)) < target:
            lo = mid
        else:
            hi = mid
    return c.scaled(lo)


def uniform_stability_probe(
    model: FdeModel,
    r: float,
    eps_list: Sequence[float],
    n_pairs: int,
    T: float,
    seed: int = 0,
    deltas: Optional[Sequence[float]] = None,
    t_stride: int = 25,
) -> StabilityTable:
    """Empirical modulus of uniform stability for the order on the ball B_r.

    For each delta in a dyadic grid, samples ordered pairs in B_r at metric
    distance below delta, integrates them over [0, T] and records the largest
    metric deviation along the runs (sampled every ``t_stride`` steps).  The
    reported delta for each epsilon is the largest grid delta whose recorded
    deviation stays below epsilon; rows are monotone in epsilon by
    construction.  Dissipativity on B_r is the caller's assertion; blow-ups
    propagate.
    """
    rng = np.random.default_rng(seed)
    if deltas is None:
        deltas = [2.0 ** (-j) for j in range(0, 11)]
    deltas = sorted(deltas, reverse=True)
    devs = []
    for delta in deltas:
        worst = 0.0
        for _ in range(n_pairs):
            x = random_history(rng, model.dim, model.step, model.depth, amplitude=0.45 * r)
            c = random_cone_element(rng, model.order, model.step, model.depth, scale=0.45 * r)
            c = _scale_to_metric(x, c, 0.9 * delta)
            y = x + c
            tx = integrate(model, BasePoint(rng.uniform(0, 1, model.base.dim_base)), x, T)
            # same base point for the pair
            ty = integrate(model, tx.point0, y, T)
            for k in range(0, tx.n_run + 1, t_stride):
                t = k * model.step
                worst = max(worst, compact_metric(tx.snapshot(t), ty.snapshot(t)))
        devs.append((delta, worst))
    rows = []
    collapsed = False
    for eps in eps_list:
        best = None
        for delta, dev in devs:
            if dev < eps:
                best = delta
                break  # deltas descend; first hit is the largest
        rows.append((float(eps), best))
        if best is None:
            collapsed = True
    return StabilityTable(rows=tuple(rows), deviations=tuple(devs), collapsed=collapsed)


@dataclass(frozen=True)
class ContinuityReport:
    depths: tuple
    input_metric: tuple  # metric distance of each perturbed datum to x0
    deviations: tuple  # sup over strided output times of the trajectory metric gap
    head_deviations: tuple  # sup over output times of |z_n(t) - z(t)|: the dynamical response
    decreasing: bool


def continuity_probe(
    model: FdeModel,
    point0: BasePoint,
    x0: HistoryFunction,
    r: float,
    T: float,
    depths: Sequence[float] = (5.0, 10.0, 20.0),
    bump: float = 0.5,
    t_stride: int = 25,
) -> ContinuityReport:
    """Continuity on balls for the compact-open topology, probed by deep-tail bumps.

    Perturbations are supported below -n for each depth n (ramping to a
    constant over one unit), so their metric distance to x0 vanishes as n
    grows.  The report lists the trajectory metric gaps, which inherit the
    perturbed window and shrink with the metric weights, and the head
    responses sup_t |z_n(t) - z(t)|, which are bounded by the kernel mass
    below -n and shrink at least at the kernel tail rate.
    """
    if x0.sup_norm() > r:
        raise ValueError("x0 must lie in the probed ball")
    base_run = integrate(model, point0, x0, T)
    times = x0.times
    in_metric = []
    devs = []
    head_devs = []
    for n_depth in depths:
        if n_depth + 1.0 > x0.depth:
            raise ValueError(f"perturbation depth {n_depth} + 1 exceeds the grid depth {x0.depth}")
        ramp = np.clip(-(times + n_depth), 0.0, 1.0) * bump
        pert = HistoryFunction(x0.step, x0.samples + ramp[:, None])
        in_metric.append(compact_metric(pert, x0))
        run = integrate(model, point0, pert, T)
        worst = 0.0
        for k in range(0, run.n_run + 1, t_stride):
            t = k * model.step
            worst = max(worst, compact_metric(run.snapshot(t), base_run.snapshot(t)))
        devs.append(worst)
        head_devs.append(float(np.abs(run.heads - base_run.heads).max()))
    decreasing = all(devs[i + 1] <= devs[i] for i in range(len(devs) - 1))
    return ContinuityReport(
        depths=tuple(float(d) for d in depths),
        input_metric=tuple(in_metric),
        deviations=tuple(devs),
        head_deviations=tuple(head_devs),
        decreasing=decreasing,
    )


@dataclass(frozen=True)
class PairProbeEntry:
    transient: float
    lag: float
    lag_base_distance: float
    n_pairs: int
    max_distance: float
    mean_distance: float


@dataclass(frozen=True)
class CopyOfBaseReport:
    """Recurrence probe outcome: near-return snapshot distances and two-solution gap."""

    pair_entries: tuple
    two_solution: tuple  # (t, metric distance) rows
    decay_rate: Optional[float]
    monotone: bool
    final_below: bool
    threshold: float
    passed: bool
    regularity: Optional[RegularityReport]


def _return_lags(base, point0, delta_base, step, lag_max) -> list[tuple[float, float]]:
    """Return lags s (grid multiples) with near-return base distance, thinned to local minima."""
    n_lags = int(lag_max / step)
    ts = step * np.arange(1, n_lags + 1)
    thetas = advance_many(base, point0, ts)
    d = np.abs(thetas - point0.theta[None, :])
    dist = np.minimum(d, 1.0 - d).max(axis=1)
    hits = np.nonzero(dist < delta_base)[0]
    out = []
    for i in hits:
        left = dist[i - 1] if i > 0 else np.inf
        right = dist[i + 1] if i + 1 < dist.size else np.inf
        if dist[i] <= left and dist[i] <= right:
            out.append((float(ts[i]), float(dist[i])))
    return out


def omega_limit_probe(
    model: FdeModel,
    point0: BasePoint,
    x0: HistoryFunction,
    transients: Sequence[float],
    t_max: float,
    delta_base: float,
    y0: Optional[HistoryFunction] = None,
    n_pairs: int = 24,
    threshold: float = 1e-3,
    traj: Optional[Trajectory] = None,
    traj_y: Optional[Trajectory] = None,
) -> CopyOfBaseReport:
    """Probe whether the long-run behavior reproduces the base recurrence.

    For each transient cutoff, examines snapshot pairs (t, t + s) taken at the
    best available near-return lag s of the base within the window, and the
    metric gap between two independently started solutions.  Distances
    decreasing with the cutoff and falling below the threshold are the
    observable content of the one-cover property of the long-run set.

    Pre-integrated trajectories can be passed to reuse runs; otherwise the
    model is integrated here (the blow-up guard doubles as the boundedness
    check).  Raises :class:`ReturnPairError` when a window has no near-return
    lag below ``delta_base``.
    """
    transients = sorted(float(t) for t in transients)
    if traj is None:
        traj = integrate(model, point0, x0, t_max)
    if y0 is None:
        y0 = x0.shift_values(np.full(x0.dim, 0.5 + 0.5 * x0.sup_norm())).scaled(0.6)
    if traj_y is None:
        traj_y = integrate(model, point0, y0, t_max)
    t_max = min(traj.t_final, traj_y.t_final)
    step = traj.step
    lag_max = t_max - transients[0]
    lags = _return_lags(traj.base, point0, delta_base, step, lag_max)
    if not lags:
        raise ReturnPairError(
            f"no base return lag below {delta_base} within {lag_max} time units; widen the window"
        )
    entries = []
    for T_tr in transients:
        window = t_max - T_tr
        avail = [(s, d) for s, d in lags if s <= window + 1e-9]
        if not avail:
            raise ReturnPairError(f"no return lag fits in the window [{T_tr}, {t_max}]")
        lag, lag_dist = min(avail, key=lambda sd: sd[1])
        t_lo, t_hi = T_tr, t_max - lag
        count = max(2, n_pairs)
        ts = np.linspace(t_lo, t_hi, count)
        ts = np.unique(np.round(ts / step) * step)
        dists = [
            compact_metric(traj.snapshot(float(t)), traj.snapshot(float(t + lag))) for t in ts
        ]
        entries.append(
            PairProbeEntry(
                transient=T_tr,
                lag=lag,
                lag_base_distance=lag_dist,
                n_pairs=len(ts),
                max_distance=float(np.max(dists)),
                mean_distance=float(np.mean(dists)),
            )
        )
    two = []
    for t in transients + [t_max]:
        t_snap = min(round(t / step) * step, traj.t_final)
        two.append((float(t_snap), compact_metric(traj.snapshot(t_snap), traj_y.snapshot(t_snap))))
    maxima = np.array([e.max_distance for e in entries])
    decay = None
    if len(entries) >= 2 and np.all(maxima > 0):
        decay = float(
            np.polyfit([e.transient for e in entries], np.log(np.maximum(maxima, 1e-300)), 1)[0]
        )
    monotone = bool(np.all(np.diff(maxima) < 0))
    final_below = bool(maxima[-1] < threshold and two[-1][1] < threshold)
    try:
        reg = variation_regularity(x0)
    except ValueError:
        reg = None
    return CopyOfBaseReport(
        pair_entries=tuple(entries),
        two_solution=tuple(two),
        decay_rate=decay,
        monotone=monotone,
        final_below=final_below,
        threshold=threshold,
        passed=monotone and final_below,
        regularity=reg,
    )
