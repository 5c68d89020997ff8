"""Covering estimates for tubes around horizontal segments.

The ``1/k``-neighbourhood of a horizontal segment of length at most one is
covered by ``k`` balls of radius ``2/k`` centred along the segment, so its
``s``-dimensional Hausdorff premeasure is at most ``k (4/k)^s = 4^s k^(1-s)``.
Stage ``i`` of the null set construction covers line ``j`` at scale
``1/2^(i+j)``, giving the sum ``sum_j 4^s (2^(i+j))^(1-s)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Rational
from typing import Sequence

import numpy as np

from . import distance as dist
from .algebra import GroupPoint, HomomorphismSpec, HorizontalVector, dilate, flow_line
from .errors import InvalidArgument, StructureMismatch

Number = Fraction | float


def _as_fraction(x) -> Fraction | None:
    """Exact rational value of ``x`` when it is a rational type or a float with a short binary expansion."""
    if isinstance(x, Rational):
        return Fraction(x)
    if isinstance(x, float) and math.isfinite(x):
        f = Fraction(x)
        return f if f.denominator <= 2**20 else None
    return None


def _iroot(n: int, q: int) -> int | None:
    if n < 0:
        return None
    r = round(n ** (1.0 / q)) if n else 0
    for c in (r - 1, r, r + 1):
        if c >= 0 and c**q == n:
            return c
    return None


def rational_power(base: Fraction, exp: Fraction) -> Fraction | None:
    """``base ** exp`` as a fraction when the root is exact, else ``None``."""
    if base <= 0:
        return None
    q = exp.denominator
    num, den = _iroot(base.numerator, q), _iroot(base.denominator, q)
    if num is None or den is None:
        return None
    return Fraction(num, den) ** exp.numerator


def premeasure(k: int, r_exp) -> Number:
    """``k (4/k)^r_exp``, exact when the inputs allow it."""
    e = _as_fraction(r_exp)
    if e is not None:
        p = rational_power(Fraction(4, k), e)
        if p is not None:
            return k * p
    return k * (4.0 / k) ** float(r_exp)


@dataclass(frozen=True, eq=False)
class HorizontalSegment:
    start: GroupPoint
    direction: HorizontalVector
    length: float

    def __post_init__(self):
        if abs(self.direction.norm - 1.0) > 1e-12:
            raise InvalidArgument("segment direction must have unit norm")
        if self.direction.rank != self.start.structure.rank:
            raise StructureMismatch("direction rank does not match the start point")
        if not 0 < self.length <= 1:
            raise InvalidArgument("segment length must lie in (0, 1]")

    def point(self, t: float) -> GroupPoint:
        return flow_line(self.start, self.direction, t)

    @property
    def end(self) -> GroupPoint:
        return self.point(self.length)

    def to_dict(self) -> dict:
        return {
            "start": self.start.coords.tolist(),
            "direction": self.direction.coefficients.tolist(),
            "length": self.length,
        }

    @classmethod
    def from_dict(cls, doc: dict, structure) -> "HorizontalSegment":
        return cls(structure.point(doc["start"]), HorizontalVector(doc["direction"]), float(doc["length"]))


@dataclass
class CoverReport:
    k: int
    segment: HorizontalSegment
    ball_centers: list
    center_params: np.ndarray
    ball_diameter: Number

    def premeasure(self, r_exp) -> Number:
        return premeasure(self.k, r_exp)

    @property
    def ball_radius(self) -> Number:
        return self.ball_diameter / 2


def tube_cover(segment: HorizontalSegment, k: int) -> CoverReport:
    """``k`` balls of diameter ``4/k`` centred at parameters ``(j + 1/2) L / k``."""
    if int(k) != k or k < 4:
        raise InvalidArgument("k must be an integer >= 4")
    k = int(k)
    params = (np.arange(k) + 0.5) * segment.length / k
    centers = [segment.point(t) for t in params]
    return CoverReport(k, segment, centers, params, Fraction(4, k))


@dataclass
class MembershipReport:
    sampled: int
    in_tube: int
    certified: int
    violations: int
    max_upper_over_radius: float
    rows: list = field(default_factory=list)

    @property
    def fraction(self) -> float:
        return self.certified / self.in_tube if self.in_tube else float("nan")

    def to_dict(self) -> dict:
        return {
            "sampled": self.sampled,
            "in_tube": self.in_tube,
            "certified": self.certified,
            "violations": self.violations,
            "fraction": self.fraction,
            "max_upper_over_radius": self.max_upper_over_radius,
        }


def verify_membership(report: CoverReport, n_samples: int = 200, seed: int = 0, budget=None) -> MembershipReport:
    """Sample tube points and certify each lies in a cover ball.

    A sample is ``segment(t) * w`` with Koranyi gauge of ``w`` below ``1/k``.
    It counts as a tube point only when the bracket upper bound certifies
    ``d(segment(t), sample) < 1/k``; it is certified covered when the nearest
    centre has bracket upper bound at most ``2/k``.  A violation means every
    centre's lower bound exceeds ``2/k``.
    """
    rng = np.random.default_rng(seed)
    seg, k = report.segment, report.k
    G = seg.start.structure
    radius = 2.0 / k
    in_tube = certified = violations = 0
    worst = 0.0
    rows = []
    for _ in range(n_samples):
        t = rng.uniform(0.0, seg.length)
        w = G.random_point(rng)
        w = dilate(rng.uniform(0.0, 1.0) / (k * dist.koranyi(w)), w)
        base = seg.point(t)
        q = base * w
        tube = dist.cc_bracket(base, q, budget)
        if not tube.upper < 1.0 / k:
            rows.append({"t": t, "in_tube": False})
            continue
        in_tube += 1
        j = int(np.argmin(np.abs(report.center_params - t)))
        b = dist.cc_bracket(report.ball_centers[j], q, budget)
        worst = max(worst, b.upper / radius)
        ok = b.upper <= radius
        if ok:
            certified += 1
        elif all(dist.cc_bracket(c, q, budget).lower > radius for c in report.ball_centers):
            violations += 1
        rows.append({"t": t, "in_tube": True, "center": j, "upper": b.upper, "certified": ok})
    return MembershipReport(n_samples, in_tube, certified, violations, worst, rows)


def stage_cover(lines: Sequence[HorizontalSegment], i: int, r_exp) -> Number:
    """``sum_j 4^r (2^(i+j))^(1-r)`` over lines ``j = 1, 2, ...``; exact when possible."""
    e = _as_fraction(r_exp)
    if (e is not None and e <= 1) or (e is None and not float(r_exp) > 1):
        raise InvalidArgument("r_exp must exceed 1")
    if int(i) != i or i < 0:
        raise InvalidArgument("stage index must be a nonnegative integer")
    total: Number = Fraction(0) if e is not None else 0.0
    for j in range(1, len(lines) + 1):
        total = total + premeasure(2 ** (int(i) + j), r_exp)
    return total


def stage_ratio(r_exp) -> Number:
    """Exact factor ``2^(1-r)`` between consecutive stage sums."""
    e = _as_fraction(r_exp)
    if e is not None:
        p = rational_power(Fraction(2), 1 - e)
        if p is not None:
            return p
    return 2.0 ** (1 - float(r_exp))


def projection_measure(segment: HorizontalSegment) -> Fraction:
    """Exact length of ``pi_1`` of the segment, a lower bound for ``pi_1`` of any tube around it."""
    return Fraction(segment.length) * abs(Fraction(float(segment.direction.coefficients[0])))


def image_under_hom(F: HomomorphismSpec, segments: Sequence[HorizontalSegment]) -> list[HorizontalSegment]:
    """Images of horizontal segments: same direction and length, start ``F(start)``."""
    out = []
    for seg in segments:
        if seg.start.structure != F.source:
            raise StructureMismatch("segment does not live in the homomorphism's source")
        out.append(HorizontalSegment(F.apply(seg.start), seg.direction, seg.length))
    return out
