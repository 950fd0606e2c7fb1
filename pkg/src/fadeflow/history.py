"""Truncated phase space for infinite-delay systems.

A history is a function on (-infty, 0] into R^m, represented by samples on a
uniform grid over [-L, 0] plus a constant tail below -L.  This module provides
the compact-open metric, the exponential order cone, grid total variation,
and the envelope constructions used by the order-theoretic probes.

All norms on R^m are maximum norms.  Values are immutable after construction
and every operation is pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "HistoryFunction",
    "OrderParams",
    "RegularityReport",
    "constant_history",
    "history_from_callable",
    "seminorm_n",
    "compact_metric",
    "exp_order_le",
    "total_variation",
    "variation_regularity",
    "variation_envelope",
    "common_upper_envelope",
    "forward_shifted_envelope",
    "order_envelope",
    "random_history",
    "random_cone_element",
]

_GRID_RTOL = 1e-9


def _as_matrix(samples) -> np.ndarray:
    arr = np.asarray(samples, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] < 1:
        raise ValueError("samples must be a nonempty (n_points, dim) array")
    return arr


@dataclass(frozen=True)
class HistoryFunction:
    """Sampled element of the bounded-history phase space.

    Parameters
    ----------
    step : float
        Grid spacing (time units), > 0.
    samples : ndarray, shape (n_points, dim)
        Values at grid times -L, -L+step, ..., 0 in increasing time order;
        ``samples[-1]`` is the value at 0.
    tail : ndarray, shape (dim,), optional
        Constant value assumed for all s <= -L.  Must equal ``samples[0]``
        (continuity of the extension); defaults to it.
    """

    step: float
    samples: np.ndarray
    tail: Optional[np.ndarray] = None

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError("step must be positive")
        arr = _as_matrix(self.samples)
        if not np.all(np.isfinite(arr)):
            raise ValueError("history samples must be finite")
        tail = arr[0].copy() if self.tail is None else np.asarray(self.tail, dtype=float)
        if tail.shape != (arr.shape[1],):
            raise ValueError("tail shape does not match sample dimension")
        if not np.allclose(tail, arr[0], rtol=0.0, atol=1e-12 * (1.0 + np.abs(arr[0]).max())):
            raise ValueError("sample at -depth must equal the tail value")
        arr = arr.copy()
        arr.setflags(write=False)
        tail.setflags(write=False)
        object.__setattr__(self, "samples", arr)
        object.__setattr__(self, "tail", tail)

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    @property
    def n_steps(self) -> int:
        return self.samples.shape[0] - 1

    @property
    def depth(self) -> float:
        return self.n_steps * self.step

    @property
    def times(self) -> np.ndarray:
        """Grid times -L, ..., 0 (increasing)."""
        return (np.arange(self.samples.shape[0]) - self.n_steps) * self.step

    def sup_norm(self) -> float:
        return float(np.abs(self.samples).max())

    def grid_matches(self, other: "HistoryFunction") -> bool:
        return (
            self.dim == other.dim
            and self.n_steps == other.n_steps
            and math.isclose(self.step, other.step, rel_tol=_GRID_RTOL, abs_tol=0.0)
        )

    def eval(self, s: float) -> np.ndarray:
        """Value at time s <= 0: linear interpolation on the grid, constant tail below -L."""
        if s > 0:
            raise ValueError(f"history is only defined for s <= 0, got {s}")
        pos = s / self.step + self.n_steps  # fractional index into samples
        if pos <= 0.0:
            return self.tail.copy()
        j = min(int(math.floor(pos)), self.n_steps - 1)
        w = pos - j
        return (1.0 - w) * self.samples[j] + w * self.samples[j + 1]

    def __call__(self, s: float) -> np.ndarray:
        return self.eval(s)

    def shift_values(self, v) -> "HistoryFunction":
        """Pointwise addition of a constant vector (v broadcast over the grid)."""
        v = np.broadcast_to(np.asarray(v, dtype=float), (self.dim,))
        return HistoryFunction(self.step, self.samples + v, self.tail + v)

    def __add__(self, other: "HistoryFunction") -> "HistoryFunction":
        _require_match(self, other)
        return HistoryFunction(self.step, self.samples + other.samples, self.tail + other.tail)

    def __sub__(self, other: "HistoryFunction") -> "HistoryFunction":
        _require_match(self, other)
        return HistoryFunction(self.step, self.samples - other.samples, self.tail - other.tail)

    def scaled(self, a: float) -> "HistoryFunction":
        return HistoryFunction(self.step, a * self.samples, a * self.tail)


@dataclass(frozen=True)
class OrderParams:
    """Diagonal matrix with negative entries defining the exponential order.

    ``diag`` holds the strictly negative diagonal; ``tol`` is the base slack
    for cone-membership checks, applied relative to the pair being compared:
    the effective slack is ``tol * (1 + sup|y - x|)``.
    """

    diag: np.ndarray
    tol: float = 1e-9

    def __post_init__(self):
        arr = np.atleast_1d(np.asarray(self.diag, dtype=float))
        if arr.ndim != 1 or arr.size < 1:
            raise ValueError("diag must be a nonempty vector")
        if not np.all(arr < 0):
            raise ValueError("all diagonal entries must be strictly negative")
        if self.tol < 0:
            raise ValueError("tol must be nonnegative")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "diag", arr)

    @property
    def dim(self) -> int:
        return self.diag.size

    def decay_factor(self, dt: float) -> np.ndarray:
        """Componentwise exp(diag * dt), the one-step cone factor."""
        return np.exp(self.diag * dt)


def constant_history(value, step: float, depth: float) -> HistoryFunction:
    """History identically equal to ``value`` (vector or scalar)."""
    v = np.atleast_1d(np.asarray(value, dtype=float))
    n = _steps_for(depth, step)
    return HistoryFunction(step, np.tile(v, (n + 1, 1)))


def history_from_callable(fn: Callable[[float], object], dim: int, step: float, depth: float) -> HistoryFunction:
    """Sample ``fn`` on the grid; the tail is pinned to the value at -depth."""
    n = _steps_for(depth, step)
    times = (np.arange(n + 1) - n) * step
    rows = [np.broadcast_to(np.asarray(fn(t), dtype=float), (dim,)).copy() for t in times]
    return HistoryFunction(step, np.vstack(rows))


def _steps_for(depth: float, step: float) -> int:
    n = round(depth / step)
    if n < 1 or not math.isclose(n * step, depth, rel_tol=1e-9, abs_tol=1e-12):
        raise ValueError(f"depth {depth} must be a positive multiple of step {step}")
    return n


def _require_match(x: HistoryFunction, y: HistoryFunction):
    if not x.grid_matches(y):
        raise ValueError("history grids do not match (dim/step/depth)")


def seminorm_n(x: HistoryFunction, y: HistoryFunction, n: float) -> float:
    """sup over grid points of [-n, 0] of the max-norm difference; tail used beyond -L."""
    _require_match(x, y)
    if n <= 0:
        raise ValueError("n must be positive")
    diff = np.abs(x.samples - y.samples).max(axis=1)
    k = min(int(math.floor(n / x.step + 1e-9)), x.n_steps)
    out = float(diff[x.n_steps - k:].max())
    if n > x.depth:
        out = max(out, float(np.abs(x.tail - y.tail).max()))
    return out


def compact_metric(x: HistoryFunction, y: HistoryFunction, n_terms: int = 30) -> float:
    """Weighted-series metric of uniform convergence on compact sets.

    Returns ``sum_{n=1..n_terms} 2^-n * s_n / (1 + s_n)`` with
    ``s_n = seminorm_n(x, y, n)``; the truncation error is at most
    ``2^-n_terms``.  Always <= 1.
    """
    _require_match(x, y)
    if n_terms < 1:
        raise ValueError("n_terms must be >= 1")
    diff = np.abs(x.samples - y.samples).max(axis=1)
    # suffix maxima: sup over [-n, 0] for every window in one pass
    suffix = np.maximum.accumulate(diff[::-1])[::-1]
    tail_diff = float(np.abs(x.tail - y.tail).max())
    total = 0.0
    for n in range(1, n_terms + 1):
        k = min(int(math.floor(n / x.step + 1e-9)), x.n_steps)
        s = float(suffix[x.n_steps - k])
        if n > x.depth:
            s = max(s, tail_diff)
        total += 2.0 ** (-n) * s / (1.0 + s)
    return total


def exp_order_le(x: HistoryFunction, y: HistoryFunction, order: OrderParams) -> bool:
    """Exponential-order comparison x <= y.

    True iff componentwise ``y - x >= -slack`` at every grid point and the
    one-step condition ``(y-x)(t_{j+1}) >= exp(diag*step) (y-x)(t_j) - slack``
    holds for all consecutive grid pairs, with the tail treated as constant.
    One-step checks imply the condition for all pairs s <= t because the
    exponential factor factorizes over steps.  ``slack = tol*(1 + sup|y-x|)``.
    """
    _require_match(x, y)
    if order.dim != x.dim:
        raise ValueError("order dimension does not match history dimension")
    d = y.samples - x.samples
    slack = order.tol * (1.0 + float(np.abs(d).max()))
    if d.min() < -slack:
        return False
    fac = order.decay_factor(x.step)
    if (d[1:] - fac * d[:-1]).min() < -slack:
        return False
    # constant tail: one step from the tail value into itself
    dtail = y.tail - x.tail
    return bool((dtail - fac * dtail).min() >= -slack)


def total_variation(x: HistoryFunction, a: float, b: float) -> np.ndarray:
    """Componentwise grid total variation of x over [a, b].

    Sum of absolute increments over grid points inside the interval; a lower
    bound of the true variation, exact for functions that are piecewise
    monotone between grid points.
    """
    if not (-x.depth - 1e-9 <= a < b <= 1e-12):
        raise ValueError(f"interval [{a}, {b}] must satisfy -depth <= a < b <= 0")
    times = x.times
    mask = (times >= a - 1e-9 * x.step) & (times <= b + 1e-9 * x.step)
    idx = np.nonzero(mask)[0]
    if idx.size < 2:
        return np.zeros(x.dim)
    seg = x.samples[idx[0]: idx[-1] + 1]
    return np.abs(np.diff(seg, axis=0)).sum(axis=0)


@dataclass(frozen=True)
class RegularityReport:
    """Outcome of the unit-window variation scan."""

    satisfied: bool
    sup_var: float
    norm_r: float
    windows: int  # number of unit windows inspected (truncation scope)


def variation_regularity(x: HistoryFunction, bound: float = math.inf) -> RegularityReport:
    """Scan the variation of x over the unit windows [-k, -k+1].

    Only windows inside the represented interval [-L, 0] are inspected; the
    report states how many, and no claim is made beyond that range.
    ``sup_var`` is the largest componentwise window variation, ``norm_r`` is
    ``sup|x| + sup_var`` and ``satisfied`` compares sup_var against ``bound``.
    """
    k_max = int(math.floor(x.depth + 1e-9))
    if k_max < 2:
        raise ValueError("depth must be at least 2 to inspect unit windows")
    sup_var = 0.0
    for k in range(1, k_max + 1):
        v = total_variation(x, -float(k), -float(k) + 1.0)
        sup_var = max(sup_var, float(v.max()))
    return RegularityReport(
        satisfied=bool(sup_var <= bound),
        sup_var=sup_var,
        norm_r=x.sup_norm() + sup_var,
        windows=k_max,
    )


def variation_envelope(x: HistoryFunction, order: OrderParams) -> HistoryFunction:
    """Upper envelope h with h >= x and h >= 0 in the exponential order.

    Per component with a = -diag entry, ``h(t) = exp(-a t) * V(t)`` where
    ``V(t)`` is the cumulative variation of ``exp(a s) x(s)`` over (-inf, t],
    the tail contribution being the closed form |tail| * exp(-a L).  The grid
    cumulative sums make both cone memberships hold exactly stepwise.
    """
    if order.dim != x.dim:
        raise ValueError("order dimension does not match history dimension")
    a = -order.diag  # positive rates
    if float((a * x.depth).max()) > 600.0:
        raise ValueError("depth * |order rate| too large for stable exponentials")
    t = x.times
    g = np.exp(np.outer(t, a)) * x.samples
    v0 = np.abs(x.tail) * np.exp(-a * x.depth)
    v = v0 + np.vstack([np.zeros(x.dim), np.cumsum(np.abs(np.diff(g, axis=0)), axis=0)])
    h = np.exp(-np.outer(t, a)) * v
    return HistoryFunction(x.step, h)


def common_upper_envelope(x: HistoryFunction, order: OrderParams) -> HistoryFunction:
    """Envelope above x, 0 and the recentered history x - x(0).

    The variation envelope raised by the constant sup|x| in every component;
    all three cone memberships hold up to the order slack.
    """
    h = variation_envelope(x, order)
    return h.shift_values(np.full(x.dim, x.sup_norm()))


def forward_shifted_envelope(h0: HistoryFunction, order: OrderParams, T: float) -> HistoryFunction:
    """Shift the envelope forward by T >= 0, decaying it exponentially past 0.

    The extension of h0 by ``exp(diag * s) h0(0)`` for s > 0 is shifted left
    by T and restricted to the grid.  The result stays above 0 in the
    exponential order for every T and shrinks to 0 in the compact metric as
    T grows.
    """
    if T < 0:
        raise ValueError("T must be nonnegative")
    if order.dim != h0.dim:
        raise ValueError("order dimension does not match history dimension")
    head = h0.samples[-1]
    t = h0.times + T
    out = np.empty_like(h0.samples)
    pos = t > 1e-12
    if np.any(pos):
        out[pos] = np.exp(np.outer(t[pos], order.diag)) * head
    for j in np.nonzero(~pos)[0]:
        out[j] = h0.eval(min(t[j], 0.0))
    return HistoryFunction(h0.step, out)


def _grid_derivative(values: np.ndarray, step: float) -> np.ndarray:
    """Central differences, second-order one-sided at the ends."""
    d = np.empty_like(values)
    d[1:-1] = (values[2:] - values[:-2]) / (2.0 * step)
    d[0] = (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * step)
    d[-1] = (3.0 * values[-1] - 4.0 * values[-2] + values[-3]) / (2.0 * step)
    return d


def order_envelope(
    v: HistoryFunction, c: HistoryFunction, order: OrderParams
) -> tuple[HistoryFunction, HistoryFunction]:
    """Exponentially filtered lower/upper brackets of two histories.

    Writing m-(s) and m+(s) for the componentwise inf and sup of the two
    driver functions ``v' - diag v`` and ``c' - diag c`` (derivatives by
    central differences), returns

        a(s) = integral_{-inf}^s exp(diag (s - tau)) m-(tau) dtau,
        b(s) = likewise with m+,

    by an exponentially weighted trapezoid recursion on the grid plus the
    constant-integrand closed form below -L.  Both outputs bracket both
    inputs in the exponential order up to quadrature slack O(step^2).
    """
    _require_match(v, c)
    if order.dim != v.dim:
        raise ValueError("order dimension does not match history dimension")
    if v.n_steps < 3:
        raise ValueError("need at least 4 grid points for derivative stencils")
    step = v.step
    diag = order.diag
    dv = _grid_derivative(v.samples, step) - diag * v.samples
    dc = _grid_derivative(c.samples, step) - diag * c.samples
    lo = np.minimum(dv, dc)
    hi = np.maximum(dv, dc)
    # constant tails have zero derivative below -L
    lo_tail = np.minimum(-diag * v.tail, -diag * c.tail)
    hi_tail = np.maximum(-diag * v.tail, -diag * c.tail)
    fac = np.exp(diag * step)

    def accumulate(m: np.ndarray, m_tail: np.ndarray) -> np.ndarray:
        out = np.empty_like(m)
        out[0] = m_tail / (-diag)  # exact integral of the constant tail
        for j in range(1, m.shape[0]):
            out[j] = fac * out[j - 1] + 0.5 * step * (fac * m[j - 1] + m[j])
        return out

    a = HistoryFunction(step, accumulate(lo, lo_tail))
    b = HistoryFunction(step, accumulate(hi, hi_tail))
    return a, b


def random_history(
    rng: np.random.Generator,
    dim: int,
    step: float,
    depth: float,
    amplitude: float = 1.0,
    n_modes: int = 3,
) -> HistoryFunction:
    """Random smooth bounded history: a few cosine modes per component."""
    n = _steps_for(depth, step)
    t = (np.arange(n + 1) - n) * step
    out = np.zeros((n + 1, dim))
    for i in range(dim):
        freqs = rng.uniform(0.2, 2.5, size=n_modes)
        phases = rng.uniform(0.0, 2.0 * np.pi, size=n_modes)
        amps = rng.uniform(-1.0, 1.0, size=n_modes)
        for f, p, a in zip(freqs, phases, amps):
            out[:, i] += a * np.cos(f * t + p)
        peak = np.abs(out[:, i]).max()
        if peak > 0:
            out[:, i] *= amplitude * rng.uniform(0.2, 1.0) / peak
    return HistoryFunction(step, out)


def random_cone_element(
    rng: np.random.Generator,
    order: OrderParams,
    step: float,
    depth: float,
    scale: float = 1.0,
    components: Optional[Sequence[int]] = None,
) -> HistoryFunction:
    """Random element of the exponential-order cone.

    Nonnegative combination of exact cone generators per component: constants,
    exponentials exp(mu t) with mu >= diag entry, and rising-bump primitives
    exp(diag_i t) * sigmoid.  ``components`` restricts which components are
    nonzero (the rest are identically 0), for separation-style probes.
    """
    n = _steps_for(depth, step)
    t = (np.arange(n + 1) - n) * step
    active = range(order.dim) if components is None else components
    out = np.zeros((n + 1, order.dim))
    for i in active:
        di = order.diag[i]
        acc = np.zeros(n + 1)
        w = rng.uniform(0.0, 1.0, size=3)
        acc += w[0] * np.ones(n + 1)
        mu = rng.uniform(di, abs(di) + 0.5)
        acc += w[1] * np.exp(mu * t)
        t0 = rng.uniform(-depth, 0.0)
        width = rng.uniform(0.3, 2.0)
        acc += w[2] * np.exp(di * t) / (1.0 + np.exp(-(t - t0) / width))
        peak = acc.max()
        if peak > 0:
            acc *= scale / peak
        out[:, i] = acc
    return HistoryFunction(step, out)
