"""The Engel group in exponential coordinates of the second kind.

Group law::

    x * y = (x1 + y1, x2 + y2, x3 + y3 - x1 y2, x4 + y4 - x1 y3 + x1^2 y2 / 2)

Horizontal frame ``X1 = d1`` and ``X2 = d2 - x1 d3 + (x1^2/2) d4``.  The
direction ``X2`` is abnormal: ``d(0, (0, 1, 0, -z)) - 1`` grows like ``z^(1/3)``,
so the distance has a maximal directional derivative at ``(0, 1, 0, 0)``
without being Pansu differentiable there.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from . import _controlopt as co
from .distance import DistanceBracket
from .errors import InvalidArgument

ENGEL_SEGMENTS = 24
WEIGHTS = np.array([1, 1, 2, 3])


@dataclass(frozen=True)
class EngelPoint:
    x1: float
    x2: float
    x3: float
    x4: float

    def __post_init__(self):
        for name in ("x1", "x2", "x3", "x4"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise InvalidArgument(f"{name} must be finite")
            object.__setattr__(self, name, v)

    @classmethod
    def of(cls, coords: Sequence[float]) -> "EngelPoint":
        c = [float(v) for v in coords]
        if len(c) != 4:
            raise InvalidArgument(f"Engel points have 4 coordinates, got {len(c)}")
        return cls(*c)

    @classmethod
    def identity(cls) -> "EngelPoint":
        return cls(0.0, 0.0, 0.0, 0.0)

    @property
    def coords(self) -> np.ndarray:
        return np.array([self.x1, self.x2, self.x3, self.x4])

    @property
    def horizontal(self) -> np.ndarray:
        return np.array([self.x1, self.x2])

    def __mul__(self, other: "EngelPoint") -> "EngelPoint":
        return engel_multiply(self, other)

    def inverse(self) -> "EngelPoint":
        return engel_inverse(self)

    def dilate(self, lam: float) -> "EngelPoint":
        return engel_dilate(lam, self)

    def allclose(self, other: "EngelPoint", rtol: float = 1e-9, atol: float = 1e-12) -> bool:
        return bool(np.allclose(self.coords, other.coords, rtol=rtol, atol=atol))


def engel_multiply(x: EngelPoint, y: EngelPoint) -> EngelPoint:
    return EngelPoint(
        x.x1 + y.x1,
        x.x2 + y.x2,
        x.x3 + y.x3 - x.x1 * y.x2,
        x.x4 + y.x4 - x.x1 * y.x3 + 0.5 * x.x1 * x.x1 * y.x2,
    )


def engel_inverse(x: EngelPoint) -> EngelPoint:
    return EngelPoint(-x.x1, -x.x2, -x.x3 - x.x1 * x.x2, -x.x4 - x.x1 * x.x3 - 0.5 * x.x1 * x.x1 * x.x2)


def engel_dilate(lam: float, x: EngelPoint) -> EngelPoint:
    if not lam > 0:
        raise InvalidArgument(f"dilation factor must be positive, got {lam!r}")
    return EngelPoint(lam * x.x1, lam * x.x2, lam**2 * x.x3, lam**3 * x.x4)


def engel_gauge(x: EngelPoint) -> float:
    """Homogeneous gauge ``(|x_H|^12 + x3^6 + x4^4)^(1/12)``."""
    h2 = x.x1 * x.x1 + x.x2 * x.x2
    return (h2**6 + x.x3**6 + x.x4**4) ** (1.0 / 12.0)


def engel_frame(coords: Sequence) -> list[list]:
    """Rows ``X1(x)``, ``X2(x)``; works with symbolic coordinates."""
    x1 = coords[0]
    return [[1, 0, 0, 0], [0, 1, -x1, x1 * x1 / 2]]


def _segment_step(x: np.ndarray, u: np.ndarray, t) -> np.ndarray:
    """Closed-form flow of ``u1 X1 + u2 X2`` for time ``t`` from ``x`` (broadcasts)."""
    x1, x2, x3, x4 = (x[..., i] for i in range(4))
    u1, u2 = u[..., 0], u[..., 1]
    return np.stack(
        [
            x1 + u1 * t,
            x2 + u2 * t,
            x3 - u2 * (x1 * t + u1 * t * t / 2),
            x4 + 0.5 * u2 * (x1 * x1 * t + x1 * u1 * t * t + u1 * u1 * t**3 / 3),
        ],
        axis=-1,
    )


@dataclass(frozen=True, eq=False)
class EngelCurve:
    start: EngelPoint
    durations: np.ndarray
    controls: np.ndarray

    def __post_init__(self):
        u = np.array(self.controls, dtype=float).reshape(-1, 2)
        d = np.array(self.durations, dtype=float).ravel()
        if d.shape[0] != u.shape[0]:
            raise InvalidArgument(f"{d.shape[0]} durations for {u.shape[0]} controls")
        if np.any(d < 0) or not (np.all(np.isfinite(d)) and np.all(np.isfinite(u))):
            raise InvalidArgument("durations must be finite and nonnegative, controls finite")
        d.setflags(write=False)
        u.setflags(write=False)
        object.__setattr__(self, "durations", d)
        object.__setattr__(self, "controls", u)

    @property
    def num_segments(self) -> int:
        return self.durations.shape[0]

    @property
    def length(self) -> float:
        return float(self.durations @ np.linalg.norm(self.controls, axis=1)) if self.num_segments else 0.0

    @property
    def lipschitz(self) -> float:
        live = self.durations > 0
        return float(np.linalg.norm(self.controls[live], axis=1).max()) if np.any(live) else 0.0

    @cached_property
    def _breakpoints(self) -> np.ndarray:
        pts = [self.start.coords]
        for d, u in zip(self.durations, self.controls):
            pts.append(_segment_step(pts[-1], u, d))
        return np.array(pts)

    @property
    def endpoint(self) -> EngelPoint:
        return EngelPoint.of(self._breakpoints[-1])

    def evaluate(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.num_segments == 0:
            return np.broadcast_to(self.start.coords, t.shape + (4,)).copy()
        bt = np.concatenate([[0.0], np.cumsum(self.durations)])
        tc = np.clip(t, 0.0, bt[-1])
        idx = np.clip(np.searchsorted(bt, tc, side="right") - 1, 0, self.num_segments - 1)
        return _segment_step(self._breakpoints[idx], self.controls[idx], tc - bt[idx])

    def then(self, other: "EngelCurve") -> "EngelCurve":
        return EngelCurve(
            self.start,
            np.concatenate([self.durations, other.durations]),
            np.vstack([self.controls, other.controls]),
        )

    def with_start(self, start: EngelPoint) -> "EngelCurve":
        return EngelCurve(start, self.durations, self.controls)

    def to_dict(self) -> dict:
        return {
            "start": self.start.coords.tolist(),
            "segments": [[float(d), u.tolist()] for d, u in zip(self.durations, self.controls)],
        }


def engel_lift(start: EngelPoint, segments: Sequence[tuple[float, Sequence[float]]]) -> EngelCurve:
    segs = list(segments)
    return EngelCurve(start, [s[0] for s in segs], np.array([s[1] for s in segs], dtype=float).reshape(-1, 2))


# --- distance bracketing ------------------------------------------------------


def _revcum_after(a: np.ndarray) -> np.ndarray:
    """``out[s] = sum_{q > s} a[q]``."""
    return np.cumsum(a[::-1])[::-1] - a


class EngelModel:
    """Endpoint of equal-duration words from the identity."""

    rank = 2

    def endpoint(self, U: np.ndarray) -> np.ndarray:
        k = U.shape[0]
        tau = 1.0 / k
        u1, u2 = U[:, 0], U[:, 1]
        X1 = tau * (np.cumsum(u1) - u1)
        g3 = -(u2 * (X1 * tau + u1 * tau**2 / 2)).sum()
        g4 = (0.5 * u2 * (X1**2 * tau + X1 * u1 * tau**2 + u1**2 * tau**3 / 3)).sum()
        return np.array([tau * u1.sum(), tau * u2.sum(), g3, g4])

    def jacobian(self, U: np.ndarray) -> np.ndarray:
        k = U.shape[0]
        tau = 1.0 / k
        u1, u2 = U[:, 0], U[:, 1]
        X1 = tau * (np.cumsum(u1) - u1)
        J = np.zeros((4, k, 2))
        J[0, :, 0] = tau
        J[1, :, 1] = tau
        J[2, :, 1] = -(X1 * tau + u1 * tau**2 / 2)
        J[2, :, 0] = -tau * _revcum_after(u2 * tau) - u2 * tau**2 / 2
        J[3, :, 1] = 0.5 * (X1**2 * tau + X1 * u1 * tau**2 + u1**2 * tau**3 / 3)
        dX = 0.5 * u2 * (2 * X1 * tau + u1 * tau**2)
        J[3, :, 0] = tau * _revcum_after(dX) + 0.5 * u2 * (X1 * tau**2 + 2 * u1 * tau**3 / 3)
        return J.reshape(4, 2 * k)


def engel_witness(w: EngelPoint, a: float = 1.0) -> EngelCurve:
    """Explicit curve from 0 to ``w``: ``X1``, ``X2`` legs, then two commutator loops.

    The loop ``X1 a, X2 b, X1 -a, X2 -b`` ends at ``(0, 0, -ab, a^2 b / 2)``;
    loops with ``(a, b1)`` and ``(-a, b2)`` reach any ``(0, 0, X3, X4)``.
    """
    legs = engel_lift(EngelPoint.identity(), [(1.0, (w.x1, 0.0)), (1.0, (0.0, w.x2))])
    rest = legs.endpoint.inverse() * w
    b_sum = 2 * rest.x4 / (a * a)
    b_diff = rest.x3 / a
    b1, b2 = (b_sum - b_diff) / 2, (b_sum + b_diff) / 2
    segs = []
    for aa, b in ((a, b1), (-a, b2)):
        segs += [(1.0, (aa, 0.0)), (1.0, (0.0, b)), (1.0, (-aa, 0.0)), (1.0, (0.0, -b))]
    return legs.then(engel_lift(EngelPoint.identity(), segs)).with_start(EngelPoint.identity())


def _engel_budget(budget) -> co.Budget:
    if isinstance(budget, co.Budget):
        return budget
    doc = {"segments": ENGEL_SEGMENTS, "max_segments": 96}
    if isinstance(budget, str):
        import json

        budget = json.loads(budget)
    doc.update(budget or {})
    return co.Budget.from_dict(doc)


def engel_cc_bracket(x: EngelPoint, y: EngelPoint, budget=None) -> DistanceBracket:
    """Bracket the Engel CC distance; the lower bound is the horizontal displacement."""
    budget = _engel_budget(budget)
    z = x.inverse() * y
    rho = engel_gauge(z)
    if rho == 0.0:
        return DistanceBracket(0.0, 0.0, EngelCurve(x, [], np.zeros((0, 2))), "identity", "identity")
    w = z.dilate(1.0 / rho)
    lower = float(np.linalg.norm(w.horizontal))
    line = engel_lift(EngelPoint.identity(), [(1.0, w.horizontal)]).endpoint
    flags: list[str] = []
    if np.allclose(line.coords, w.coords, rtol=0.0, atol=1e-14):
        durations, U = np.array([1.0]), w.horizontal[None, :]
        upper, method, converged, segs = lower, "straight-line", True, 1
    else:
        fallback = engel_witness(w)
        k = budget.segments
        seeds = [np.repeat(w.horizontal[None, :], k, axis=0), co.resample(fallback.durations, fallback.controls, k)]

        def random_init(rng, k):
            return w.horizontal + 0.5 * rng.normal(size=(k, 2))

        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            res = co.search(EngelModel(), w.coords, budget, random_init, seeds, lower=lower)
        converged, segs = res.converged, res.segments
        T = float(fallback.durations.sum())
        if res.controls is not None and res.length <= fallback.length:
            U = res.controls
            durations = np.full(U.shape[0], 1.0 / U.shape[0])
            upper, method = res.length, "optimizer"
        else:
            durations, U = fallback.durations / T, fallback.controls * T
            upper, method = fallback.length, "explicit"
            flags.append("optimizer-failed")
            converged = False
        if not converged:
            flags.append("not-converged")
    witness = EngelCurve(x, durations, U * rho)
    return DistanceBracket(rho * lower, rho * max(upper, lower), witness, "projection", method, converged, segs, tuple(flags))


# --- Martinet submersion -------------------------------------------------------


def martinet_project(x: EngelPoint) -> np.ndarray:
    """``(x1, x2, x3, x4) -> (x2, x1, x4)``: forget the third coordinate and swap."""
    return np.array([x.x2, x.x1, x.x4])


def martinet_frame(q: Sequence) -> list[list]:
    """Rows ``X = dx + (y^2/2) dz`` and ``Y = dy`` at ``q = (x, y, z)``."""
    y = q[1]
    return [[1, 0, y * y / 2], [0, 1, 0]]


def martinet_lift(start: Sequence[float], durations: Sequence[float], controls) -> np.ndarray:
    """Endpoint of ``vX X + vY Y`` with piecewise-constant controls ``(vX, vY)``."""
    q = np.array(start, dtype=float)
    for t, (vx, vy) in zip(durations, np.asarray(controls, dtype=float).reshape(-1, 2)):
        y = q[1]
        q = np.array([q[0] + vx * t, y + vy * t, q[2] + 0.5 * vx * (y * y * t + y * vy * t * t + vy * vy * t**3 / 3)])
    return q


class _MartinetModel:
    """Martinet endpoint from ``start`` (the distribution is not translation invariant in y)."""

    rank = 2

    def __init__(self, start: np.ndarray, T: float):
        self.start = np.asarray(start, dtype=float)
        self.T = T

    def endpoint(self, U):
        k = U.shape[0]
        tau = self.T / k
        vx, vy = U[:, 0], U[:, 1]
        Y = self.start[1] + tau * (np.cumsum(vy) - vy)
        z = self.start[2] + (0.5 * vx * (Y**2 * tau + Y * vy * tau**2 + vy**2 * tau**3 / 3)).sum()
        return np.array([self.start[0] + tau * vx.sum(), self.start[1] + tau * vy.sum(), z])

    def jacobian(self, U):
        # reuse the Engel x4 derivative with roles swapped (vY plays u1, vX plays u2)
        k = U.shape[0]
        tau = self.T / k
        vx, vy = U[:, 0], U[:, 1]
        Y = self.start[1] + tau * (np.cumsum(vy) - vy)
        J = np.zeros((3, k, 2))
        J[0, :, 0] = tau
        J[1, :, 1] = tau
        J[2, :, 0] = 0.5 * (Y**2 * tau + Y * vy * tau**2 + vy**2 * tau**3 / 3)
        dY = 0.5 * vx * (2 * Y * tau + vy * tau**2)
        J[2, :, 1] = tau * _revcum_after(dY) + 0.5 * vx * (Y * tau**2 + 2 * vy * tau**3 / 3)
        return J.reshape(3, 2 * k)


def martinet_upper(p: Sequence[float], q: Sequence[float], budget=None, seed_curve: EngelCurve | None = None) -> float:
    """Length of the best Martinet curve found from ``p`` to ``q`` (an upper bound)."""
    budget = _engel_budget(budget)
    p, q = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
    scale = max(float(np.linalg.norm(q - p)), 1e-12)
    model = _MartinetModel(p, 1.0)
    k = budget.segments
    seeds = [np.repeat(((q - p)[:2])[None, :], k, axis=0)]
    if seed_curve is not None:
        T = float(seed_curve.durations.sum())
        seeds.append(co.resample(seed_curve.durations, seed_curve.controls[:, ::-1] * T, k))

    def random_init(rng, k):
        return (q - p)[:2] + 0.5 * scale * rng.normal(size=(k, 2))

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = co.search(model, q, budget.replace(max_segments=budget.segments), random_init, seeds, lower=0.0)
    return res.length


# --- cube-root scan ---------------------------------------------------------------


@dataclass
class CubeRootScan:
    zeta: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    D: np.ndarray
    flagged: np.ndarray
    slope: float
    slope_all: float
    prefactor: np.ndarray
    quotient_growth: np.ndarray
    x2_quotients: np.ndarray
    x2_steps: np.ndarray
    c_prime: float
    rows: list = field(default_factory=list)

    @property
    def unflagged(self) -> int:
        return int((~self.flagged).sum())

    def to_dict(self) -> dict:
        return {
            "zeta": self.zeta.tolist(),
            "lower": self.lower.tolist(),
            "upper": self.upper.tolist(),
            "D": self.D.tolist(),
            "flagged": self.flagged.tolist(),
            "slope": self.slope,
            "slope_all": self.slope_all,
            "prefactor": self.prefactor.tolist(),
            "quotient_growth": self.quotient_growth.tolist(),
            "x2_steps": self.x2_steps.tolist(),
            "x2_quotients": self.x2_quotients.tolist(),
            "c_prime": self.c_prime,
            "unflagged": self.unflagged,
        }


def _fit_slope(z: np.ndarray, D: np.ndarray) -> float:
    if z.shape[0] < 2 or np.any(D <= 0):
        return float("nan")
    return float(np.polyfit(np.log(z), np.log(D), 1)[0])


def x2_quotients(steps: Sequence[float] | None = None, budget=None) -> tuple[np.ndarray, np.ndarray]:
    """``(d(0, (0, 1 + t, 0, 0)) - 1) / t``; dyadic steps keep ``(1 + t) - 1`` exact."""
    steps = np.asarray(steps if steps is not None else 2.0 ** -np.arange(3, 11), dtype=float)
    base = engel_cc_bracket(EngelPoint.identity(), EngelPoint(0.0, 1.0, 0.0, 0.0), budget).upper
    q = [(engel_cc_bracket(EngelPoint.identity(), EngelPoint(0.0, 1.0 + t, 0.0, 0.0), budget).upper - base) / t for t in steps]
    return steps, np.array(q)


def cube_root_scan(zeta_values: Sequence[float], budget=None, gap_fraction: float = 0.2) -> CubeRootScan:
    """``D(z) = d(0, (0, 1, 0, -z)) - 1`` from the upper bound, with a log-log slope fit.

    A point is flagged when its bracket gap exceeds ``gap_fraction * D``;
    flagged points are left out of ``slope`` (``slope_all`` uses every point).
    """
    zeta = np.asarray(zeta_values, dtype=float)
    if zeta.ndim != 1 or zeta.shape[0] < 5:
        raise InvalidArgument("need at least 5 zeta values")
    if np.any(zeta <= 0) or np.any(zeta > 0.01) or np.any(np.diff(zeta) >= 0):
        raise InvalidArgument("zeta values must be strictly decreasing in (0, 0.01]")
    lo, up, rows = [], [], []
    origin = EngelPoint.identity()
    for z in zeta:
        b = engel_cc_bracket(origin, EngelPoint(0.0, 1.0, 0.0, -z), budget)
        lo.append(b.lower)
        up.append(b.upper)
        rows.append({"zeta": float(z), "lower": b.lower, "upper": b.upper, "segments": b.segments, "flags": list(b.flags)})
    lo, up = np.array(lo), np.array(up)
    D = up - 1.0
    flagged = (up - lo) > gap_fraction * D
    keep = ~flagged
    c_prime = engel_cc_bracket(origin, EngelPoint(0.0, 0.0, 0.0, 1.0), budget).upper
    steps, q = x2_quotients(budget=budget)
    return CubeRootScan(
        zeta=zeta,
        lower=lo,
        upper=up,
        D=D,
        flagged=flagged,
        slope=_fit_slope(zeta[keep], D[keep]),
        slope_all=_fit_slope(zeta, D),
        prefactor=D / zeta ** (1.0 / 3.0),
        quotient_growth=D / zeta,
        x2_quotients=q,
        x2_steps=steps,
        c_prime=c_prime,
        rows=rows,
    )
