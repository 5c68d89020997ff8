"""Directional derivatives, Pansu difference quotients and curve perturbations.

Functions here duck-type over points: anything with ``*`` (group product),
``.dilate(lam)``, ``.horizontal`` and ``.inverse()`` works, which covers both
:class:`~carnot_uds.algebra.GroupPoint` and :class:`~carnot_uds.engel.EngelPoint`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.stats import norm, qmc

from . import distance as dist
from .algebra import (
    GroupPoint,
    GroupStructure,
    HorizontalVector,
    IsometryMap,
    dilate,
    exp_horizontal,
    horizontal_isometry,
)
from .curves import ControlCurve
from .engel import EngelPoint, engel_cc_bracket, engel_gauge, engel_lift
from .errors import EvaluationError, InvalidArgument

DEFAULT_SCHEDULE = tuple(0.1 * 2.0 ** -np.arange(8))
SHELL_SIZE = 64


@dataclass(frozen=True)
class ScalarField:
    evaluator: Callable
    declared_lipschitz: float | None = None
    name: str = "f"

    def __call__(self, x) -> float:
        v = float(self.evaluator(x))
        if not math.isfinite(v):
            raise EvaluationError(f"{self.name} returned {v!r} at {x!r}")
        return v


def linear_field(v: Sequence[float], name: str = "linear") -> ScalarField:
    """G-linear ``x -> <p(x), v>``; its Lipschitz constant is ``|v|``."""
    v = np.asarray(v, dtype=float)
    return ScalarField(lambda x: float(np.asarray(x.horizontal) @ v), float(np.linalg.norm(v)), name)


def distance_field(budget=None, side: str = "midpoint") -> ScalarField:
    """``x -> d(0, x)`` from brackets (``side`` is ``'midpoint'``, ``'upper'`` or ``'lower'``)."""

    def f(x):
        if isinstance(x, EngelPoint):
            b = engel_cc_bracket(EngelPoint.identity(), x, budget)
        else:
            b = dist.cc_bracket(x.structure.identity(), x, budget)
        return {"midpoint": b.midpoint, "upper": b.upper, "lower": b.lower}[side]

    return ScalarField(f, 1.0, f"d(.,0)[{side}]")


def _flow(x, E: HorizontalVector, t: float):
    """``x * exp(tE)`` for step-2 points and Engel points."""
    if isinstance(x, EngelPoint):
        return x * engel_lift(EngelPoint.identity(), [(1.0, t * E.coefficients)]).endpoint
    return x * exp_horizontal(t * E, x.structure)


def _check_schedule(schedule) -> np.ndarray:
    t = np.asarray(DEFAULT_SCHEDULE if schedule is None else schedule, dtype=float)
    if t.ndim != 1 or t.shape[0] < 4:
        raise InvalidArgument("schedule needs at least 4 steps")
    if np.any(t <= 0) or np.any(np.diff(t) >= 0):
        raise InvalidArgument("schedule must be positive and strictly decreasing")
    return t


@dataclass
class DerivativeEstimate:
    value: float
    step_schedule: np.ndarray
    quotients: np.ndarray
    residuals: np.ndarray

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "schedule": self.step_schedule.tolist(),
            "quotients": self.quotients.tolist(),
            "residuals": self.residuals.tolist(),
        }


def directional_derivative(f: ScalarField, x, E: HorizontalVector, schedule=None) -> DerivativeEstimate:
    """Symmetric quotients ``(f(x exp tE) - f(x exp -tE)) / 2t``, Richardson-extrapolated.

    The symmetric quotient has an even error expansion, so the last two steps
    combine as ``(rho^2 q_n - q_{n-1}) / (rho^2 - 1)`` with ``rho = t_{n-1}/t_n``.
    """
    t = _check_schedule(schedule)
    q = np.array([(f(_flow(x, E, s)) - f(_flow(x, E, -s))) / (2 * s) for s in t])
    rho2 = (t[-2] / t[-1]) ** 2
    value = float((rho2 * q[-1] - q[-2]) / (rho2 - 1))
    return DerivativeEstimate(value, t, q, np.abs(q - value))


# --- shells and Pansu scans ---------------------------------------------------


def default_shell(kind: GroupStructure | str, n: int = SHELL_SIZE, seed: int = 0) -> list:
    """``n`` deterministic directions at gauge 1, starting with all ``+-e_i`` coordinate axes.

    The rest are scrambled Halton points pushed through the normal quantile
    function and dilated onto the unit gauge sphere.
    """
    if isinstance(kind, str):
        if kind != "engel":
            raise InvalidArgument(f"unknown group kind {kind!r}")
        dim = 4
        make, gauge = EngelPoint.of, engel_gauge
    else:
        dim = kind.dim
        make, gauge = kind.point, dist.koranyi
    pts = []
    for i in range(dim):
        for sgn in (1.0, -1.0):
            e = np.zeros(dim)
            e[i] = sgn
            pts.append(make(e))
    if n < len(pts):
        raise InvalidArgument(f"shell needs at least {len(pts)} points to hold the axes")
    extra = n - len(pts)
    if extra:
        h = qmc.Halton(d=dim, scramble=True, seed=seed).random(extra)
        g = norm.ppf(np.clip(h, 1e-12, 1 - 1e-12))
        for row in g:
            p = make(row)
            pts.append(p.dilate(1.0 / gauge(p)))
    return pts


@dataclass
class PansuScan:
    candidate: np.ndarray
    worst_residual: float
    schedule: np.ndarray
    quotients: np.ndarray  # (steps, shell)
    residuals: np.ndarray  # per step, max over shell

    def to_dict(self) -> dict:
        return {
            "candidate": self.candidate.tolist(),
            "worst_residual": self.worst_residual,
            "schedule": self.schedule.tolist(),
            "residuals": self.residuals.tolist(),
        }


def pansu_scan(f: ScalarField, x, shell: Sequence | None = None, schedule=None) -> PansuScan:
    """Quotients ``(f(x delta_t xi) - f(x)) / t`` against the best linear form ``<p(xi), V>``.

    ``V`` is fit by least squares at the smallest step; residuals are reported
    per step as the max over the shell, and ``worst_residual`` covers the two
    smallest steps.
    """
    t = _check_schedule(schedule)
    if shell is None:
        shell = default_shell("engel" if isinstance(x, EngelPoint) else x.structure)
    shell = list(shell)
    if not shell:
        raise InvalidArgument("shell must be nonempty")
    fx = f(x)
    Q = np.array([[(f(x * xi.dilate(s)) - fx) / s for xi in shell] for s in t])
    Ph = np.array([np.asarray(xi.horizontal) for xi in shell])
    V, *_ = np.linalg.lstsq(Ph, Q[-1], rcond=None)
    R = np.abs(Q - Ph @ V)
    per_step = R.max(axis=1)
    return PansuScan(V, float(per_step[-2:].max()), t, Q, per_step)


@dataclass
class ResidualScan:
    steps: np.ndarray
    residuals: np.ndarray
    max_width_ratio: np.ndarray
    shell_size: int

    def decreasing(self, noise: float = 0.1) -> bool:
        return bool(np.all(self.residuals[1:] <= (1 + noise) * self.residuals[:-1]))

    def to_dict(self) -> dict:
        return {
            "steps": self.steps.tolist(),
            "residuals": self.residuals.tolist(),
            "max_width_over_t": self.max_width_ratio.tolist(),
            "shell_size": self.shell_size,
        }


def distance_residual_scan(u: GroupPoint, steps=(0.1, 0.05, 0.025, 0.0125), shell=None, budget=None) -> ResidualScan:
    """``max_xi |d(u delta_t xi) - d(u) - t L(xi)| / t`` with ``L`` the distance differential at ``u``."""
    steps = np.asarray(steps, dtype=float)
    shell = default_shell(u.structure) if shell is None else list(shell)
    du = dist._check_horizontal_point(u)
    origin = u.structure.identity()
    res, widths = [], []
    for t in steps:
        worst = wmax = 0.0
        for xi in shell:
            b = dist.cc_bracket(origin, u * dilate(t, xi), budget)
            r = abs(b.midpoint - du - t * dist.distance_differential(u, xi)) / t
            worst = max(worst, r)
            wmax = max(wmax, b.width / t)
        res.append(worst)
        widths.append(wmax)
    return ResidualScan(steps, np.array(res), np.array(widths), len(shell))


@dataclass
class MaximalityReport:
    derivative: DerivativeEstimate
    maximal: bool
    scan: PansuScan
    expected: np.ndarray
    deviation: float
    flags: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "derivative": self.derivative.value,
            "maximal": self.maximal,
            "candidate": self.scan.candidate.tolist(),
            "expected": self.expected.tolist(),
            "deviation": self.deviation,
            "scan_residuals": self.scan.residuals.tolist(),
            "flags": list(self.flags),
        }


def maximality_test(f: ScalarField, x, E: HorizontalVector, shell=None, schedule=None, tol: float = 0.01) -> MaximalityReport:
    """If ``Ef(x) = Lip(f)``, compare the Pansu candidate with ``Lip(f) p(E)``."""
    if f.declared_lipschitz is None:
        raise InvalidArgument("maximality_test needs a declared Lipschitz constant")
    if abs(E.norm - 1.0) > 1e-12:
        raise InvalidArgument("E must have unit norm")
    est = directional_derivative(f, x, E, schedule)
    lip = f.declared_lipschitz
    maximal = abs(est.value - lip) <= tol * max(lip, 1e-300)
    scan = pansu_scan(f, x, shell, schedule)
    expected = lip * E.coefficients
    flags = [] if maximal else ["not maximal"]
    return MaximalityReport(est, maximal, scan, expected, float(np.abs(scan.candidate - expected).max()), flags)


def lipschitz_from_derivatives(f: ScalarField, points: Sequence, directions: Sequence[HorizontalVector], schedule=None) -> float:
    """``sup |Ef(x)|`` over the sampled pairs: a lower estimate of ``Lip_G(f)``."""
    best = 0.0
    for x in points:
        for E in directions:
            if E.norm == 0:
                continue
            E1 = HorizontalVector(E.coefficients / E.norm)
            best = max(best, abs(directional_derivative(f, x, E1, schedule).value))
    return best


def random_sample(structure: GroupStructure, n_points: int, n_dirs: int, seed: int = 0, scale: float = 1.0):
    """Random base points and unit horizontal directions for :func:`lipschitz_from_derivatives`."""
    rng = np.random.default_rng(seed)
    pts = [structure.random_point(rng, scale) for _ in range(n_points)]
    dirs = []
    for _ in range(n_dirs):
        a = rng.normal(size=structure.rank)
        dirs.append(HorizontalVector(a / np.linalg.norm(a)))
    return pts, dirs


# --- perturbed lines -------------------------------------------------------------


def delta_max(eta: float, P: int) -> float:
    """A valid ``Delta(eta)``: small enough for the Lipschitz budget ``1 + eta Delta``."""
    return min(eta / 16.0, eta / (32.0 * P**4), eta / (576.0 * P * P), 0.125)


def c_m(P: int) -> float:
    """Constant in the derivative deviation bound ``|(p o g)' - p(E)| <= C_m Delta``."""
    return float(max(4.0, 8.0 * P * P, 48.0 * P))


@dataclass(frozen=True)
class PerturbationParams:
    eta: float
    delta: float
    r: float
    P: int
    strict: bool = True

    def __post_init__(self):
        if not (self.eta > 0 and self.delta > 0 and self.r > 0):
            raise InvalidArgument("eta, delta and r must be positive")
        if not self.delta < 0.25:
            raise InvalidArgument("delta must be below 1/4")
        if not self.r < self.delta:
            raise InvalidArgument("need 0 < r < delta")
        if self.strict and not self.delta < delta_max(self.eta, self.P):
            raise InvalidArgument(f"delta={self.delta} is not below Delta(eta)={delta_max(self.eta, self.P):.3g}")

    @property
    def s(self) -> float:
        return self.r / self.delta

    @property
    def C_m(self) -> float:
        return c_m(self.P)

    @property
    def delta_eta(self) -> float:
        return delta_max(self.eta, self.P)


def _claim_curve(u: GroupPoint, r: float, s: float) -> ControlCurve:
    """Curve on ``[0, s + zeta]`` from 0 to ``(s, 0, ..., 0) delta_r(u)``, ``zeta = r u_1``.

    Joins ``alpha`` (explicit synthesis to ``z``, time-rescaled to ``[0, s/2]``)
    with ``beta`` (straight line back to ``y``, run at speed ~1).
    """
    G = u.structure
    e1 = np.zeros(G.rank)
    e1[0] = 1.0
    y = GroupPoint(G, s * e1, np.zeros(G.vertical_dim)) * dilate(r, u)
    zeta = r * float(u.horizontal[0])
    zh = 0.5 * s * e1
    h = ControlCurve(y, [1.0], (zh - y.horizontal)[None, :])
    z = GroupPoint(G, zh, h.endpoint.vertical)
    rep = dist.synthesize_curve(z)
    alpha = rep.curve.rescale_time(s / 2)
    beta = ControlCurve(z, [s / 2 + zeta], ((y.horizontal - zh) / (s / 2 + zeta))[None, :])
    return alpha.then(beta)


@dataclass(frozen=True, eq=False)
class PerturbedLine:
    curve: ControlCurve
    x: GroupPoint
    u: GroupPoint
    E: HorizontalVector
    params: PerturbationParams
    zeta: float

    @property
    def s(self) -> float:
        return self.params.s

    def line(self, t) -> np.ndarray:
        """``x + t E(x)`` in coordinates."""
        t = np.asarray(t, dtype=float)
        return self.x.coords + t[..., None] * self.E.at(self.x)

    def certificate(self, n: int = 64) -> dict:
        s = self.s
        g = self.curve
        outer = np.concatenate([np.linspace(g.t0, -s, n), np.linspace(s, g.t1, n)])
        err1 = float(np.abs(g.evaluate(outer) - self.line(outer)).max())
        target = self.x * dilate(self.params.r, self.u)
        err2 = float(np.abs(g.evaluate(self.zeta) - target.coords).max())
        live = g.durations > 0
        dev = float(np.linalg.norm(g.controls[live] - self.E.coefficients, axis=1).max())
        lip = g.lipschitz
        d = self.params.delta
        return {
            "line_error": err1,
            "hit_error": err2,
            "lipschitz": lip,
            "lip_bound": 1 + self.params.eta * d,
            "deviation": dev,
            "deviation_ratio": dev / d,
            "C_m": self.params.C_m,
            "ok_1": err1 <= 1e-9,
            "ok_2": err2 <= 1e-9,
            "ok_3": lip <= (1 + self.params.eta * d) * (1 + 1e-12),
            "ok_4": dev <= self.params.C_m * d * (1 + 1e-12),
        }


def perturbed_line(x: GroupPoint, u: GroupPoint, E: HorizontalVector, params: PerturbationParams) -> PerturbedLine:
    """Concatenation of lines equal to ``x + tE(x)`` for ``|t| >= s`` that hits ``x delta_r(u)`` at ``zeta``.

    Reduced to ``x = 0``, ``E = X_1`` by translation and the alignment
    isometry.  The piece on ``[-s, zeta]`` is the claim curve translated by
    ``-s e_1``; the piece on ``[zeta, s]`` is the claim curve for the reflected
    target ``(-u_1, u_2, ...)`` traversed backwards and reflected again.  The
    returned curve covers ``[-2s, 2s]``.
    """
    G = x.structure
    if not G.free:
        raise InvalidArgument("perturbed_line requires a free group")
    if u.structure != G:
        raise InvalidArgument("u must live in the same group as x")
    if E.rank != G.rank or abs(E.norm - 1.0) > 1e-12:
        raise InvalidArgument("E must be a unit horizontal vector of matching rank")
    if params.P != G.num_pairs:
        raise InvalidArgument("params.P does not match the group")
    if dist.koranyi(u) > 1 + 1e-12:
        raise InvalidArgument("u must have Koranyi gauge at most 1")
    r, s = params.r, params.s
    FE = horizontal_isometry(exp_horizontal(E, G))
    ua = FE.apply(u)
    zeta = r * float(ua.horizontal[0])

    e1 = np.zeros(G.rank)
    e1[0] = 1.0
    shift = GroupPoint(G, -s * e1, np.zeros(G.vertical_dim))
    left = _claim_curve(ua, r, s).translate(shift)

    refl = np.eye(G.rank)
    refl[0, 0] = -1.0
    FA = IsometryMap.from_orthogonal(refl, G)
    phi = _claim_curve(FA.apply(ua), r, s)
    right_u = -FA.apply_vector(phi.controls[::-1])
    right = ControlCurve(left.endpoint, phi.durations[::-1], right_u)

    pad_l = ControlCurve(GroupPoint(G, -2 * s * e1, np.zeros(G.vertical_dim)), [s], e1[None, :])
    pad_r = ControlCurve(G.identity(), [s], e1[None, :])
    aligned = pad_l.then(left).then(right).then(pad_r)
    back = aligned.map_isometry(FE.inverse()).translate(x)
    curve = ControlCurve(back.start, back.durations, back.controls, t0=-2 * s).compact()
    return PerturbedLine(curve, x, u, E, params, zeta)


# --- deviation estimate -----------------------------------------------------------


@dataclass
class DeviationResult:
    ok: bool
    worst_ratio: float

    def to_dict(self) -> dict:
        return {"ok": self.ok, "worst_ratio": self.worst_ratio}


def _merged_times(g: ControlCurve, h: ControlCurve, lo: float, hi: float) -> np.ndarray:
    t = np.union1d(g.times(), h.times())
    return np.unique(np.concatenate([[lo, hi], t[(t >= lo) & (t <= hi)]]))


def deviation_check(g: ControlCurve, h: ControlCurve, S: float, A: float, c: float, n_samples: int = 201) -> DeviationResult:
    """Check the coordinate form of ``d(g(t), h(t)) <= (r + 2P sqrt S) sqrt A |t - c|``.

    Both curves are translated by ``g(c)^-1``; the left side is
    ``sum |h_i - g_i| + sum_{i>j} |h_ij - g_ij + (g_i h_j - g_j h_i)/2|^(1/2)``.
    """
    G = g.structure
    if h.structure != G or not G.free:
        raise InvalidArgument("deviation_check needs two curves in the same free group")
    if not (0 <= A <= 1) or not S > 0:
        raise InvalidArgument("need S > 0 and 0 <= A <= 1")
    lo, hi = max(g.t0, h.t0), min(g.t1, h.t1)
    if not lo <= c <= hi:
        raise InvalidArgument("c must lie in the common parameter interval")
    gc, hc = g.point_at(c), h.point_at(c)
    scale = max(1.0, float(np.abs(gc.coords).max()))
    if np.abs(gc.coords - hc.coords).max() > 1e-9 * scale:
        raise InvalidArgument("curves do not meet at c")
    slack = 1 + 1e-12
    if g.lipschitz > S * slack or h.lipschitz > S * slack:
        raise InvalidArgument("a curve is faster than S")
    tb = _merged_times(g, h, lo, hi)
    mids = 0.5 * (tb[1:] + tb[:-1])
    if mids.size and np.linalg.norm(g.velocity_at(mids) - h.velocity_at(mids), axis=1).max() > A * slack + 1e-15:
        raise InvalidArgument("controls differ by more than A")

    t = np.unique(np.concatenate([np.linspace(lo, hi, n_samples), tb]))
    t = t[np.abs(t - c) > 1e-12 * max(1.0, abs(c))]
    if t.size == 0:
        return DeviationResult(True, 0.0)
    ginv = gc.inverse()
    gp = np.array([(ginv * G.point(p)).coords for p in g.evaluate(t)])
    hp = np.array([(ginv * G.point(p)).coords for p in h.evaluate(t)])
    r = G.rank
    gh, hh = gp[:, :r], hp[:, :r]
    cross = 0.5 * G.wedge(gh, hh)
    lhs = np.abs(hh - gh).sum(axis=1) + np.sqrt(np.abs(hp[:, r:] - gp[:, r:] + cross)).sum(axis=1)
    rhs = (r + 2 * G.num_pairs * math.sqrt(S)) * math.sqrt(A) * np.abs(t - c)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(rhs > 0, lhs / rhs, np.where(lhs > 1e-12, np.inf, 0.0))
    worst = float(ratio.max())
    return DeviationResult(bool(worst <= 1.0), worst)


def random_curve_pair(G: GroupStructure, S: float, A: float, rng, segments: int = 6):
    """Two curves through a common point at ``c`` with speeds ``<= S`` and control gap ``<= A``."""
    r = G.rank
    k = segments

    def ball(radius, shape):
        v = rng.normal(size=shape)
        v /= np.linalg.norm(v, axis=-1, keepdims=True)
        return v * (radius * rng.uniform(0, 1, size=shape[:-1] + (1,)))

    ug = ball(S - A, (k, r))
    uh = ug + ball(A, (k, r))
    durations = rng.uniform(0.05, 0.5, size=k)
    split = int(rng.integers(0, k + 1))
    p = G.random_point(rng)
    t0 = -float(durations[:split].sum())
    curves = []
    for U in (ug, uh):
        back = ControlCurve(p, durations[:split][::-1], -U[:split][::-1])
        curves.append(ControlCurve(back.endpoint, durations, U, t0=t0))
    return curves[0], curves[1], 0.0
