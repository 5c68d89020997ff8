"""Piecewise-linear horizontal curves stored as control words.

A curve is a start point plus segments ``(duration, control)``.  On each
segment the projection moves in a straight line at velocity ``control`` and
the vertical coordinates follow the horizontal lift, which integrates in closed
form: a segment from ``a`` with displacement ``D`` adds ``1/2 * C @ wedge(a, D)``
(absolute horizontal position ``a``; the ``D x D`` part vanishes).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .algebra import GroupPoint, GroupStructure, HomomorphismSpec, IsometryMap
from .errors import InvalidArgument, StructureMismatch

HORIZONTAL_TOL = 1e-9


def _as_controls(controls, rank: int) -> np.ndarray:
    u = np.array(controls, dtype=float)
    if u.size == 0:
        return np.zeros((0, rank))
    u = u.reshape(-1, rank) if u.ndim == 1 and rank == u.shape[0] else u
    if u.ndim != 2 or u.shape[1] != rank:
        raise InvalidArgument(f"controls must have shape (k, {rank}), got {u.shape}")
    return u


@dataclass(frozen=True, eq=False)
class ControlCurve:
    """Horizontal curve ``[t0, t0 + sum(durations)] -> G``."""

    start: GroupPoint
    durations: np.ndarray
    controls: np.ndarray
    t0: float = 0.0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        r = self.start.structure.rank
        u = _as_controls(self.controls, r)
        d = np.array(self.durations, dtype=float).ravel()
        if d.shape[0] != u.shape[0]:
            raise InvalidArgument(f"{d.shape[0]} durations for {u.shape[0]} controls")
        if not (np.all(np.isfinite(d)) and np.all(np.isfinite(u))):
            raise InvalidArgument("durations and controls must be finite")
        if np.any(d < 0):
            raise InvalidArgument("durations must be nonnegative")
        d.setflags(write=False)
        u.setflags(write=False)
        object.__setattr__(self, "durations", d)
        object.__setattr__(self, "controls", u)
        object.__setattr__(self, "t0", float(self.t0))

    @classmethod
    def from_segments(cls, start: GroupPoint, segments: Iterable[tuple[float, Sequence[float]]], t0: float = 0.0):
        segs = list(segments)
        r = start.structure.rank
        d = [s[0] for s in segs]
        u = np.array([s[1] for s in segs], dtype=float).reshape(len(segs), r)
        return cls(start, d, u, t0)

    @property
    def structure(self) -> GroupStructure:
        return self.start.structure

    @property
    def segments(self) -> list[tuple[float, np.ndarray]]:
        return list(zip(self.durations.tolist(), self.controls))

    @property
    def num_segments(self) -> int:
        return self.durations.shape[0]

    @property
    def duration(self) -> float:
        return float(self.durations.sum())

    @property
    def t1(self) -> float:
        return self.t0 + self.duration

    @property
    def length(self) -> float:
        return float(self.durations @ np.linalg.norm(self.controls, axis=1)) if self.num_segments else 0.0

    @property
    def lipschitz(self) -> float:
        """Max speed over segments of positive duration (the Lipschitz constant in this parametrization)."""
        live = self.durations > 0
        if not np.any(live):
            return 0.0
        return float(np.linalg.norm(self.controls[live], axis=1).max())

    # --- evaluation ---------------------------------------------------

    def _breakpoints(self) -> tuple[np.ndarray, np.ndarray]:
        if "bp" not in self._cache:
            s = self.structure
            D = self.durations[:, None] * self.controls
            h = self.start.horizontal + np.vstack([np.zeros(s.rank), np.cumsum(D, axis=0)])
            inc = s.bracket_term(h[:-1], D) if self.num_segments else np.zeros((0, s.vertical_dim))
            v = self.start.vertical + np.vstack([np.zeros(s.vertical_dim), np.cumsum(inc, axis=0)])
            self._cache["bp"] = (h, v)
        return self._cache["bp"]

    @cached_property
    def endpoint(self) -> GroupPoint:
        h, v = self._breakpoints()
        return GroupPoint(self.structure, h[-1], v[-1])

    def breakpoints(self) -> list[GroupPoint]:
        h, v = self._breakpoints()
        return [GroupPoint(self.structure, a, b) for a, b in zip(h, v)]

    def times(self) -> np.ndarray:
        """Parameter values of the breakpoints."""
        return self.t0 + np.concatenate([[0.0], np.cumsum(self.durations)])

    def evaluate(self, t) -> np.ndarray:
        """Coordinates at parameter(s) ``t``, clamped to the curve's interval; shape ``(..., n)``."""
        t = np.asarray(t, dtype=float)
        h, v = self._breakpoints()
        s = self.structure
        if self.num_segments == 0:
            return np.broadcast_to(self.start.coords, t.shape + (s.dim,)).copy()
        bt = self.times()
        tc = np.clip(t, bt[0], bt[-1])
        idx = np.clip(np.searchsorted(bt, tc, side="right") - 1, 0, self.num_segments - 1)
        local = (tc - bt[idx])[..., None]
        disp = local * self.controls[idx]
        base = h[idx]
        hv = base + disp
        vv = v[idx] + s.bracket_term(base, disp)
        return np.concatenate([hv, vv], axis=-1)

    def point_at(self, t: float) -> GroupPoint:
        return self.structure.point(self.evaluate(t))

    def velocity_at(self, t) -> np.ndarray:
        """Horizontal control ``(p o g)'(t)`` (right-continuous at breakpoints)."""
        t = np.asarray(t, dtype=float)
        bt = self.times()
        idx = np.clip(np.searchsorted(bt, t, side="right") - 1, 0, max(self.num_segments - 1, 0))
        return self.controls[idx]

    # --- transformations ------------------------------------------------

    def with_start(self, start: GroupPoint) -> "ControlCurve":
        if start.structure != self.structure:
            raise StructureMismatch("new start lives in another group")
        return ControlCurve(start, self.durations, self.controls, self.t0)

    def translate(self, g: GroupPoint) -> "ControlCurve":
        """Left translation by ``g``: same controls, start ``g * start``."""
        return self.with_start(g * self.start)

    def shift(self, dt: float) -> "ControlCurve":
        return ControlCurve(self.start, self.durations, self.controls, self.t0 + dt)

    def reversed(self) -> "ControlCurve":
        """Traverse backwards from the endpoint: reversed order, negated controls."""
        return ControlCurve(self.endpoint, self.durations[::-1], -self.controls[::-1], self.t0)

    def then(self, other: "ControlCurve") -> "ControlCurve":
        """Concatenate ``other``'s controls after this curve (``other.start`` is ignored)."""
        if other.structure != self.structure:
            raise StructureMismatch("cannot concatenate curves in different groups")
        return ControlCurve(
            self.start,
            np.concatenate([self.durations, other.durations]),
            np.vstack([self.controls, other.controls]),
            self.t0,
        )

    def map_isometry(self, F: IsometryMap) -> "ControlCurve":
        """Image under a horizontal isometry: ``F(start)`` with controls ``A u``."""
        return ControlCurve(F.apply(self.start), self.durations, F.apply_vector(self.controls), self.t0)

    def rescale_time(self, factor: float) -> "ControlCurve":
        """Same trace, durations multiplied by ``factor`` (speeds divided by it)."""
        if not factor > 0:
            raise InvalidArgument("time factor must be positive")
        return ControlCurve(self.start, self.durations * factor, self.controls / factor, self.t0)

    def compact(self) -> "ControlCurve":
        """Drop zero-duration segments."""
        live = self.durations > 0
        return ControlCurve(self.start, self.durations[live], self.controls[live], self.t0)

    # --- serialization --------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "start": self.start.coords.tolist(),
            "segments": [[float(d), u.tolist()] for d, u in zip(self.durations, self.controls)],
        }

    @classmethod
    def from_dict(cls, doc: dict, structure: GroupStructure) -> "ControlCurve":
        start = structure.point(doc["start"])
        return cls.from_segments(start, [(d, u) for d, u in doc["segments"]])


def measure(curve: ControlCurve) -> dict:
    return {"length": curve.length, "lipschitz": curve.lipschitz}


def lift(planar, start: GroupPoint, durations: Sequence[float] | None = None) -> ControlCurve:
    """Horizontal lift of the polyline through ``planar`` (rows in ``R^r``) from ``start``.

    Without ``durations`` each edge is traversed at unit speed, so ``length``
    is the Euclidean length of the polyline.
    """
    s = start.structure
    pts = np.array(planar, dtype=float)
    if pts.size == 0:
        return ControlCurve(start, [], np.zeros((0, s.rank)))
    pts = pts.reshape(-1, s.rank)
    if not np.allclose(pts[0], start.horizontal, rtol=0.0, atol=1e-12 * max(1.0, np.abs(pts[0]).max())):
        raise InvalidArgument("polyline does not start at p(start)")
    D = np.diff(pts, axis=0)
    if durations is None:
        tau = np.linalg.norm(D, axis=1)
        keep = tau > 0
        D, tau = D[keep], tau[keep]
    else:
        tau = np.asarray(durations, dtype=float)
        if tau.shape != (D.shape[0],) or np.any(tau <= 0):
            raise InvalidArgument("need one positive duration per polyline edge")
    u = D / tau[:, None] if D.shape[0] else D
    return ControlCurve(start, tau, u)


def check_horizontal(v, p: GroupPoint, tol: float = HORIZONTAL_TOL) -> bool:
    """True iff the tangent vector ``v`` at ``p`` lies in the horizontal bundle."""
    s = p.structure
    v = np.asarray(v, dtype=float).ravel()
    if v.shape[0] != s.dim:
        raise InvalidArgument(f"tangent vector has {v.shape[0]} entries, expected {s.dim}")
    vh, vv = v[: s.rank], v[s.rank :]
    return bool(np.all(np.abs(vv - s.bracket_term(p.horizontal, vh)) <= tol))


def lift_through_hom(F: HomomorphismSpec, curve: ControlCurve, start: GroupPoint) -> ControlCurve:
    """Curve in ``F.source`` from ``start`` driven by the same controls as ``curve``."""
    if curve.structure != F.target:
        raise StructureMismatch("curve does not live in the homomorphism's target")
    if start.structure != F.source:
        raise StructureMismatch("start does not live in the homomorphism's source")
    if not np.allclose(start.horizontal, curve.start.horizontal, rtol=0.0, atol=1e-12):
        raise InvalidArgument("p(start) differs from the curve's starting projection")
    return ControlCurve(start, curve.durations, curve.controls, curve.t0)
