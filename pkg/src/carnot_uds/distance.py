"""CC distance: gauges, explicit curve synthesis and numerical bracketing."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from . import _controlopt as co
from .algebra import GroupPoint, GroupStructure, dilate, horizontal_isometry
from .curves import ControlCurve
from .errors import DegenerateDirection, InvalidArgument, StructureMismatch

MIN_Y1 = 1e-8
ALIGN_TOL = 1e-12


def koranyi(x: GroupPoint) -> float:
    h = float(x.horizontal @ x.horizontal)
    return (h * h + float(x.vertical @ x.vertical)) ** 0.25


def koranyi_distance(x: GroupPoint, y: GroupPoint) -> float:
    return koranyi(x.inverse() * y)


# --- exact Heisenberg distance --------------------------------------------


def _segment_ratio(theta: float) -> float:
    """Area between a circular arc of half-angle ``theta`` and its chord, over chord^2."""
    if theta < 1e-3:
        t2 = (2 * theta) ** 2
        sinc = 1 - theta * theta / 6 + theta**4 / 120
        return theta / 6 * (1 - t2 / 20 + t2 * t2 / 840) / (sinc * sinc)
    return (2 * theta - math.sin(2 * theta)) / (8 * math.sin(theta) ** 2)


def heisenberg_distance(rho: float, area: float) -> float:
    """Distance from 0 to a point of ``G_2`` with ``|x_H| = rho`` and ``|x_21| = area``.

    Geodesics project to circular arcs; the vertical coordinate is the area
    between arc and chord.
    """
    rho, area = abs(float(rho)), abs(float(area))
    if area == 0.0:
        return rho
    if rho == 0.0:
        return 2.0 * math.sqrt(math.pi * area)
    q = area / rho / rho
    if not math.isfinite(q):
        return 2.0 * math.sqrt(math.pi * area)
    hi_gap = 0.5
    while _segment_ratio(math.pi - hi_gap) < q:
        hi_gap *= 0.5
        if hi_gap < 1e-300:
            return 2.0 * math.sqrt(math.pi * area)
    lo = min(3.0 * q, 1.0)  # ratio ~ theta/6 near 0
    while _segment_ratio(lo) > q:
        lo *= 0.5
    theta = brentq(lambda t: _segment_ratio(t) - q, lo, math.pi - hi_gap, xtol=1e-300, rtol=1e-15, maxiter=500)
    return rho * theta / math.sin(theta)


def exact_distance(x: GroupPoint) -> tuple[float, str] | None:
    """Known closed-form ``d(0, x)``, if any: horizontal points and rank-2 groups."""
    s = x.structure
    if not np.any(x.vertical):
        return float(np.linalg.norm(x.horizontal)), "horizontal"
    if s.rank == 2 and s.vertical_dim == 1:
        area = x.vertical[0] / s.constants[0, 0]
        return heisenberg_distance(np.linalg.norm(x.horizontal), area), "heisenberg"
    return None


# --- explicit curve synthesis ---------------------------------------------


@dataclass(frozen=True, eq=False)
class CurveSynthesisReport:
    curve: ControlCurve
    A: float
    B: float
    lip_bound: float
    deriv_deviation_bound: float
    P: int
    target: GroupPoint

    @property
    def lipschitz(self) -> float:
        return self.curve.lipschitz

    @property
    def max_deviation(self) -> float:
        live = self.curve.durations > 0
        return float(np.linalg.norm(self.curve.controls[live] - self.target.horizontal, axis=1).max())

    @property
    def endpoint_error(self) -> float:
        return float(np.abs(self.curve.endpoint.coords - self.target.coords).max())

    def certificate(self, endpoint_tol: float = 1e-9, rel: float = 1e-12) -> dict:
        ok_end = self.endpoint_error <= endpoint_tol
        ok_lip = self.lipschitz <= self.lip_bound * (1 + rel)
        ok_dev = self.max_deviation <= self.deriv_deviation_bound * (1 + rel) + rel
        return {
            "endpoint_error": self.endpoint_error,
            "lipschitz": self.lipschitz,
            "lip_bound": self.lip_bound,
            "max_deviation": self.max_deviation,
            "deviation_bound": self.deriv_deviation_bound,
            "ok": bool(ok_end and ok_lip and ok_dev),
        }


def synthesis_bounds(y1: float, A: float, B: float, P: int) -> tuple[float, float]:
    """(Lipschitz bound, derivative deviation bound) of the synthesized curve."""
    lip = y1 * max(math.sqrt(1 + 16 * P**4 * A * A / y1**4), math.sqrt(1 + 288 * P * P * B / (y1 * y1)))
    dev = max(4 * P * P * A / y1, 24 * P * math.sqrt(B))
    return lip, dev


def synthesize_curve(y: GroupPoint) -> CurveSynthesisReport:
    """Concatenation of lines on ``[0, 1]`` from 0 to ``y`` with ``p(y) = (y_1, 0, ..., 0)``.

    ``[0, 1]`` is split into ``P`` equal intervals, one per pair ``(i, j)`` in
    lexicographic order.  Each interval drifts by ``y_1/P`` along ``X_1`` and
    returns the other horizontal coordinates to zero, so it changes only its own
    vertical coordinate:

    * ``j = 1``: two halves with ``y_1 e_1 +- lam e_i``, ``lam = 4P^2 y_i1 / y_1``;
    * ``j > 1``: six sixths with ``lam = 6P sqrt|y_ij|``,
      ``mu = -6P sign(y_ij) sqrt|y_ij|`` moving around the ``(j, i)`` plane.
    """
    s = y.structure
    if not s.free:
        raise InvalidArgument("synthesize_curve requires a free group")
    r, P = s.rank, s.num_pairs
    y1 = float(y.horizontal[0])
    scale = max(1.0, abs(y1))
    if not y1 > 0:
        raise InvalidArgument(f"need y_1 > 0, got {y1!r}; align with horizontal_isometry first")
    if y1 < MIN_Y1:
        raise DegenerateDirection(f"y_1 = {y1:.3g} is below {MIN_Y1:g}; bounds are vacuous")
    if np.any(np.abs(y.horizontal[1:]) > ALIGN_TOL * scale):
        raise InvalidArgument("need y_i = 0 for i > 1; align with horizontal_isometry first")

    durations, controls = [], []
    base = np.zeros(r)
    base[0] = y1
    A = B = 0.0
    for p, (i, j) in enumerate(s.pairs):
        yij = float(y.vertical[p])
        if j == 0:
            A = max(A, abs(yij))
            lam = 4 * P * P * yij / y1
            for sign in (1.0, -1.0):
                u = base.copy()
                u[i] += sign * lam
                controls.append(u)
                durations.append(1.0 / (2 * P))
        else:
            B = max(B, abs(yij))
            root = math.sqrt(abs(yij))
            lam = 6 * P * root
            mu = -6 * P * math.copysign(1.0, yij) * root
            for cj, ci in ((lam, 0), (0, mu), (-lam, 0), (0, -mu), (-2 * lam, -2 * mu), (2 * lam, 2 * mu)):
                u = base.copy()
                u[j] += cj
                u[i] += ci
                controls.append(u)
                durations.append(1.0 / (6 * P))
    curve = ControlCurve(s.identity(), durations, np.array(controls))
    lip, dev = synthesis_bounds(y1, A, B, P)
    return CurveSynthesisReport(curve, A, B, lip, dev, P, y)


def _aligned_synthesis(w: GroupPoint) -> ControlCurve:
    """Synthesised curve from 0 to ``w`` (free group) via the alignment isometry."""
    F = horizontal_isometry(w)
    aligned = F.apply(w)
    h = np.zeros_like(aligned.horizontal)
    h[0] = np.linalg.norm(w.horizontal)
    aligned = GroupPoint(w.structure, h, aligned.vertical)
    return synthesize_curve(aligned).curve.map_isometry(F.inverse())


def synthesis_witness(w: GroupPoint, min_horizontal: float = 0.1) -> ControlCurve:
    """Explicit curve from 0 to ``w``; used as a fallback and seed for the optimizer.

    Targets with short projection first move along ``X_1`` so the aligned
    synthesis never sees a tiny ``y_1``.  Quotients reuse the controls of a
    curve to a free-group preimage.
    """
    s = w.structure
    if not s.free:
        from .algebra import build_quotient

        F = build_quotient(s)
        free_curve = synthesis_witness(F.preimage(w), min_horizontal)
        return ControlCurve(s.identity(), free_curve.durations, free_curve.controls)
    if np.linalg.norm(w.horizontal) >= min_horizontal:
        return _aligned_synthesis(w)
    step = np.zeros(s.rank)
    step[0] = 1.0
    e = GroupPoint(s, step, np.zeros(s.vertical_dim))
    rest = _aligned_synthesis(e.inverse() * w)
    first = ControlCurve(s.identity(), [1.0], step[None, :])
    return first.then(rest)


# --- numerical bracketing ---------------------------------------------------


class Step2Model:
    """Endpoint map of equal-duration words from the identity in a step-2 group."""

    def __init__(self, structure: GroupStructure):
        self.structure = structure
        self.rank = structure.rank
        pr = np.array(structure.pairs, dtype=int).reshape(-1, 2)
        self._I, self._J = pr[:, 0], pr[:, 1]
        self._C = None if structure.free else np.asarray(structure.constants)

    def endpoint(self, U: np.ndarray) -> np.ndarray:
        k = U.shape[0]
        D = U / k
        before = np.cumsum(D, axis=0) - D
        H = D.sum(axis=0)
        I, J = self._I, self._J
        V = 0.5 * (before[:, I] * D[:, J] - before[:, J] * D[:, I]).sum(axis=0)
        if self._C is not None:
            V = self._C @ V
        return np.concatenate([H, V])

    def jacobian(self, U: np.ndarray) -> np.ndarray:
        k, r = U.shape
        tau = 1.0 / k
        m = len(self._I)
        before = np.cumsum(U, axis=0) - U
        after = U.sum(axis=0) - before - U
        diff = 0.5 * tau * tau * (after - before)
        Jh = np.zeros((r, k, r))
        for a in range(r):
            Jh[a, :, a] = tau
        Jv = np.zeros((m, k, r))
        for p, (i, j) in enumerate(zip(self._I, self._J)):
            Jv[p, :, i] += diff[:, j]
            Jv[p, :, j] -= diff[:, i]
        Jv = Jv.reshape(m, k * r)
        if self._C is not None:
            Jv = self._C @ Jv
        return np.vstack([Jh.reshape(r, k * r), Jv])


@dataclass(frozen=True, eq=False)
class DistanceBracket:
    lower: float
    upper: float
    witness: ControlCurve
    lower_method: str
    upper_method: str
    converged: bool = True
    segments: int = 0
    flags: tuple = field(default_factory=tuple)

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lower + self.upper)

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def to_dict(self) -> dict:
        return {
            "lower": self.lower,
            "upper": self.upper,
            "lower_method": self.lower_method,
            "upper_method": self.upper_method,
            "converged": self.converged,
            "segments": self.segments,
            "flags": list(self.flags),
            "witness": self.witness.to_dict(),
        }


def _as_budget(budget) -> co.Budget:
    if budget is None:
        return co.Budget()
    if isinstance(budget, co.Budget):
        return budget
    if isinstance(budget, str):
        return co.Budget.from_json(budget)
    return co.Budget.from_dict(budget)


def cc_bracket(x: GroupPoint, y: GroupPoint, budget=None) -> DistanceBracket:
    """Bracket ``d(x, y)``: certified lower bound, witnessed upper bound.

    The query is reduced to ``0 -> x^-1 y`` and dilated to Koranyi gauge 1.  The
    lower bound is ``|p(x^-1 y)|`` or a closed form where one is known; the upper
    bound is the length of the best curve found (optimizer or explicit synthesis).
    """
    if x.structure != y.structure:
        raise StructureMismatch("cc_bracket needs points of the same group")
    budget = _as_budget(budget)
    s = x.structure
    z = x.inverse() * y
    rho = koranyi(z)
    if rho == 0.0:
        return DistanceBracket(0.0, 0.0, ControlCurve(x, [], np.zeros((0, s.rank))), "identity", "identity")
    w = dilate(1.0 / rho, z)
    lower, lower_method = float(np.linalg.norm(w.horizontal)), "projection"
    ex = exact_distance(w)
    if ex is not None and ex[0] > lower:
        lower, lower_method = ex
    flags: list[str] = []

    if not np.any(w.vertical):
        durations, U = np.array([1.0]), w.horizontal[None, :].copy()
        upper, upper_method, converged, segs = lower, "straight-line", True, 1
    else:
        fallback = None
        try:
            fallback = synthesis_witness(w)
        except (DegenerateDirection, InvalidArgument):  # pragma: no cover - guarded by min_horizontal
            flags.append("no-synthesis")
        k = budget.segments
        seeds = [np.repeat(w.horizontal[None, :], k, axis=0)]
        if fallback is not None:
            seeds.append(co.resample(fallback.durations, fallback.controls, k))

        def random_init(rng, k):
            return w.horizontal + rng.normal(size=(k, s.rank))

        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            res = co.search(Step2Model(s), w.coords, budget, random_init, seeds, lower=lower)
        converged, segs = res.converged, res.segments
        fb_len = fallback.length if fallback is not None else np.inf
        if res.controls is not None and res.length <= fb_len:
            U = res.controls
            durations = np.full(U.shape[0], 1.0 / U.shape[0])
            upper, upper_method = res.length, "optimizer"
        elif fallback is not None:
            durations, U = fallback.durations, fallback.controls
            upper, upper_method = fb_len, "synthesis"
            flags.append("optimizer-failed")
            converged = False
        else:  # pragma: no cover
            raise RuntimeError("no witness curve available")
        if not converged:
            flags.append("not-converged")

    upper = max(upper, lower)  # an upper bound below the exact value is rounding only
    witness = ControlCurve(x, durations, U * rho)
    return DistanceBracket(rho * lower, rho * upper, witness, lower_method, upper_method, converged, segs, tuple(flags))


def cc_distance_upper(x: GroupPoint, y: GroupPoint, budget=None) -> float:
    return cc_bracket(x, y, budget).upper


# --- distance differential ---------------------------------------------------


def _check_horizontal_point(u: GroupPoint) -> float:
    if np.any(np.abs(u.vertical) > 1e-12 * max(1.0, float(np.abs(u.horizontal).max(initial=0.0)) ** 2)):
        raise InvalidArgument("u must have zero vertical part")
    n = float(np.linalg.norm(u.horizontal))
    if n == 0.0:
        raise DegenerateDirection("u = 0 has no distance differential")
    return n


def distance_differential(u: GroupPoint, z: GroupPoint) -> float:
    """``<p(z), p(u)/d(u)>``: the Pansu differential of ``d(., 0)`` at a horizontal point."""
    if u.structure != z.structure:
        raise StructureMismatch("u and z live in different groups")
    n = _check_horizontal_point(u)
    return float(z.horizontal @ u.horizontal) / n


def lower_bound_check(u: GroupPoint, z: GroupPoint, budget=None, slack: float = 0.02) -> bool:
    """``d(uz) >= d(u) + <p(z), p(u)/d(u)>`` with an additive slack of ``slack * d(u)``."""
    du = _check_horizontal_point(u)
    rhs = du + distance_differential(u, z)
    lhs = cc_bracket(u.structure.identity(), u * z, budget).upper
    return bool(lhs + slack * du >= rhs)


# --- empirical constants --------------------------------------------------------


def estimate_ck(structure: GroupStructure, n: int = 64, seed: int = 0, budget=None) -> dict:
    """Empirical range of ``d(0, x) / koranyi(x)`` over random directions (report only)."""
    rng = np.random.default_rng(seed)
    ratios = []
    for _ in range(n):
        x = structure.random_point(rng)
        x = dilate(1.0 / koranyi(x), x)
        b = cc_bracket(structure.identity(), x, budget)
        ratios.append((b.lower, b.upper))
    lo = np.array(ratios)
    return {"n": n, "min_lower": float(lo[:, 0].min()), "max_upper": float(lo[:, 1].max())}


def metric_comparison(structure: GroupStructure, n: int = 64, seed: int = 0, budget=None) -> dict:
    """Sampled ratios ``d/|x-y|`` (min) and ``d/|x-y|^(1/2)`` (max) on the unit Koranyi ball."""
    rng = np.random.default_rng(seed)
    lows, highs = [], []
    for _ in range(n):
        pts = []
        for _ in range(2):
            p = structure.random_point(rng)
            p = dilate(rng.uniform(0.05, 1.0) / koranyi(p), p)
            pts.append(p)
        x, y = pts
        eu = float(np.linalg.norm(x.coords - y.coords))
        b = cc_bracket(x, y, budget)
        lows.append(b.lower / eu)
        highs.append(b.upper / math.sqrt(eu))
    return {"n": n, "min_d_over_euclid": float(min(lows)), "max_d_over_sqrt_euclid": float(max(highs))}
