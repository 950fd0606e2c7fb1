"""Minimal driving flow: irrational rotation on a d-torus.

Time variation of all model coefficients is encoded by trigonometric
polynomials evaluated along the rotation orbit.  The rotation is the
canonical compact minimal almost-periodic flow, which makes near-return
times computable for the recurrence probes.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass
from types import MappingProxyType
from typing import Mapping, Optional, Sequence, Union

import numpy as np

__all__ = [
    "TrigCoefficient",
    "TorusBase",
    "BasePoint",
    "MatrixCoefficient",
    "VectorCoefficient",
    "advance",
    "advance_many",
    "base_distance",
    "eval_coeff",
    "return_times",
]


class TrigCoefficient:
    """Finite trigonometric polynomial on the torus.

    value(theta) = offset + sum_j amp_j * cos(2 pi k_j . theta + phase_j)
    with integer multi-indices k_j.
    """

    def __init__(self, terms: Sequence[tuple[Sequence[int], float, float]], offset: float = 0.0):
        self.offset = float(offset)
        if terms:
            self.k = np.asarray([t[0] for t in terms], dtype=float)
            if self.k.ndim != 2:
                raise ValueError("multi-indices must all have the same length")
            if not np.allclose(self.k, np.round(self.k)):
                raise ValueError("multi-indices must be integers")
            self.amps = np.asarray([t[1] for t in terms], dtype=float)
            self.phases = np.asarray([t[2] for t in terms], dtype=float)
        else:
            self.k = np.zeros((0, 0))
            self.amps = np.zeros(0)
            self.phases = np.zeros(0)

    def value(self, theta: np.ndarray) -> float:
        if self.amps.size == 0:
            return self.offset
        return self.offset + float(
            (self.amps * np.cos(2.0 * np.pi * (self.k @ theta) + self.phases)).sum()
        )

    def values(self, thetas: np.ndarray) -> np.ndarray:
        """Vectorized evaluation over an (n, d) array of torus points."""
        if self.amps.size == 0:
            return np.full(thetas.shape[0], self.offset)
        args = 2.0 * np.pi * (thetas @ self.k.T) + self.phases
        return self.offset + (np.cos(args) * self.amps).sum(axis=1)

    def sup_bound(self) -> float:
        """|offset| + sum |amp|: a bound on |value| over the torus."""
        return abs(self.offset) + float(np.abs(self.amps).sum())

    def min_bound(self) -> float:
        """offset - sum |amp|: a lower bound on value over the torus."""
        return self.offset - float(np.abs(self.amps).sum())


def _check_independence_heuristic(freq: np.ndarray, k_max: int = 20, tol: float = 1e-9):
    """Warn on small integer relations |k . freq| < tol, |k|_inf <= k_max."""
    d = freq.size
    if d > 3:
        return  # scan too large; independence stays user-asserted
    ranges = [range(-k_max, k_max + 1)] * d
    for k in itertools.product(*ranges):
        if all(v == 0 for v in k):
            continue
        if abs(float(np.dot(k, freq))) < tol:
            warnings.warn(
                f"frequency vector admits a near integer relation k={k}; "
                "the rotation flow may not be minimal",
                stacklevel=3,
            )
            return


@dataclass(frozen=True)
class TorusBase:
    """Rotation flow on the d-torus with named coefficient functions.

    Rational independence of the frequencies is asserted by the user; a
    heuristic scan for small integer relations only warns.
    """

    freq: np.ndarray
    coeffs: Mapping[str, TrigCoefficient]

    def __init__(self, freq, coeffs: Optional[Mapping[str, TrigCoefficient]] = None):
        freq = np.atleast_1d(np.asarray(freq, dtype=float))
        if freq.ndim != 1 or freq.size < 1:
            raise ValueError("freq must be a nonempty vector")
        if np.any(freq == 0.0):
            raise ValueError("frequency entries must be nonzero")
        _check_independence_heuristic(freq)
        freq = freq.copy()
        freq.setflags(write=False)
        object.__setattr__(self, "freq", freq)
        object.__setattr__(self, "coeffs", MappingProxyType(dict(coeffs or {})))

    @property
    def dim_base(self) -> int:
        return self.freq.size

    def coefficient(self, cid: str) -> TrigCoefficient:
        try:
            return self.coeffs[cid]
        except KeyError:
            raise KeyError(f"unknown coefficient id {cid!r}") from None


@dataclass(frozen=True)
class BasePoint:
    """Point on the torus, coordinates in [0, 1)."""

    theta: np.ndarray

    def __post_init__(self):
        arr = np.atleast_1d(np.asarray(self.theta, dtype=float))
        if arr.ndim != 1:
            raise ValueError("theta must be a vector")
        if np.any(arr < 0.0) or np.any(arr >= 1.0):
            raise ValueError("theta coordinates must lie in [0, 1)")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "theta", arr)

    @property
    def dim(self) -> int:
        return self.theta.size


def advance(base: TorusBase, point: BasePoint, t: float) -> BasePoint:
    """Flow the point for time t: (theta + freq t) mod 1, exact group law up to rounding."""
    if point.dim != base.dim_base:
        raise ValueError("point dimension does not match base dimension")
    return BasePoint(np.mod(point.theta + base.freq * t, 1.0))


def advance_many(base: TorusBase, point: BasePoint, ts: np.ndarray) -> np.ndarray:
    """(n, d) array of torus points along the orbit at times ts."""
    ts = np.asarray(ts, dtype=float)
    return np.mod(point.theta[None, :] + np.outer(ts, base.freq), 1.0)


def base_distance(p1: BasePoint, p2: BasePoint) -> float:
    """Max over coordinates of the circle distance min(|d|, 1 - |d|)."""
    if p1.dim != p2.dim:
        raise ValueError("dimension mismatch")
    d = np.abs(p1.theta - p2.theta)
    return float(np.minimum(d, 1.0 - d).max())


def _circle_dist_rows(thetas: np.ndarray, ref: np.ndarray) -> np.ndarray:
    d = np.abs(thetas - ref[None, :])
    return np.minimum(d, 1.0 - d).max(axis=1)


def eval_coeff(base: TorusBase, cid: str, point: BasePoint) -> float:
    """Value of the registered coefficient at a torus point."""
    return base.coefficient(cid).value(point.theta)


def return_times(
    base: TorusBase,
    point: BasePoint,
    delta: float,
    t_min: float,
    t_max: float,
    step: float,
    thin: bool = True,
) -> list[float]:
    """Sampled times t in [t_min, t_max] at which the orbit returns delta-close.

    Scans the grid t_min, t_min+step, ..., keeps times with
    ``base_distance(advance(point, t), point) < delta`` and, with ``thin``,
    reduces them to local minima of the distance (with delta above the torus
    diameter 1/2 and thinning off, every sampled time qualifies).  An empty
    result is not an error; the caller widens the window.
    """
    if not t_min < t_max:
        raise ValueError("t_min must be < t_max")
    if delta <= 0 or step <= 0:
        raise ValueError("delta and step must be positive")
    ts = np.arange(t_min, t_max + 0.5 * step, step)
    dist = _circle_dist_rows(advance_many(base, point, ts), point.theta)
    hits = np.nonzero(dist < delta)[0]
    if not thin:
        return [float(ts[i]) for i in hits]
    out = []
    for i in hits:
        left = dist[i - 1] if i > 0 else np.inf
        right = dist[i + 1] if i + 1 < dist.size else np.inf
        if dist[i] <= left and dist[i] <= right:
            out.append(float(ts[i]))
    return out


Entry = Union[float, int, str, tuple, list]


def _parse_entry(e: Entry) -> tuple[float, list[tuple[str, float]]]:
    """Normalize an entry to (constant, [(coefficient id, scale), ...]).

    Accepted forms: a number, an id string, a (id, scale) pair, or a list of
    any of those (summed).
    """
    if isinstance(e, str):
        return 0.0, [(e, 1.0)]
    if isinstance(e, tuple):
        cid, scale = e
        return 0.0, [(str(cid), float(scale))]
    if isinstance(e, list):
        const = 0.0
        ids: list[tuple[str, float]] = []
        for part in e:
            c, terms = _parse_entry(part)
            const += c
            ids.extend(terms)
        return const, ids
    return float(e), []


class _CoeffTable:
    """Shared machinery of matrix/vector coefficient tables.

    Each entry is an affine combination ``const + sum scale_k * coeff_k(w)``
    of registered coefficients on the base.
    """

    const: np.ndarray
    ids: list  # (index..., cid, scale)

    @property
    def is_constant(self) -> bool:
        return not self.ids

    def value(self, base: TorusBase, theta: np.ndarray) -> np.ndarray:
        out = self.const.copy()
        for *idx, cid, scale in self.ids:
            out[tuple(idx)] += scale * base.coefficient(cid).value(theta)
        return out

    def values(self, base: TorusBase, thetas: np.ndarray) -> np.ndarray:
        """Stack of values along a batch of torus points, leading axis first."""
        n = thetas.shape[0]
        out = np.broadcast_to(self.const, (n,) + self.const.shape).copy()
        for *idx, cid, scale in self.ids:
            out[(slice(None),) + tuple(idx)] += scale * base.coefficient(cid).values(thetas)
        return out

    def bound_abs(self, base: TorusBase) -> np.ndarray:
        """Entrywise upper bound of |entry| over the torus (triangle inequality)."""
        out = np.abs(self.const)
        for *idx, cid, scale in self.ids:
            out[tuple(idx)] += abs(scale) * base.coefficient(cid).sup_bound()
        return out

    def min_values(self, base: TorusBase) -> np.ndarray:
        """Entrywise lower bound of the entry over the torus."""
        out = self.const.copy()
        for *idx, cid, scale in self.ids:
            c = base.coefficient(cid)
            out[tuple(idx)] += scale * (c.min_bound() if scale >= 0 else c.sup_bound())
        return out


class MatrixCoefficient(_CoeffTable):
    """m x m matrix whose entries combine constants and coefficient ids."""

    def __init__(self, entries: Sequence[Sequence[Entry]]):
        rows = list(entries)
        m = len(rows)
        if m == 0 or any(len(r) != m for r in rows):
            raise ValueError("entries must form a square matrix")
        self.m = m
        self.const = np.zeros((m, m))
        self.ids = []
        for i, row in enumerate(rows):
            for j, e in enumerate(row):
                c, terms = _parse_entry(e)
                self.const[i, j] = c
                for cid, scale in terms:
                    self.ids.append((i, j, cid, scale))


class VectorCoefficient(_CoeffTable):
    """Length-m vector whose entries combine constants and coefficient ids."""

    def __init__(self, entries: Sequence[Entry]):
        entries = list(entries)
        if not entries:
            raise ValueError("entries must be nonempty")
        self.m = len(entries)
        self.const = np.zeros(self.m)
        self.ids = []
        for i, e in enumerate(entries):
            c, terms = _parse_entry(e)
            self.const[i] = c
            for cid, scale in terms:
                self.ids.append((i, cid, scale))
