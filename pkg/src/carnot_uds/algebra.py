"""Step-2 Carnot groups in exponential coordinates of the first kind.

A step-2 group of rank ``r`` is ``R^r x R^m`` with the product

    (x * y)_H = x_H + y_H
    (x * y)_V = x_V + y_V + 1/2 * C @ wedge(x_H, y_H)

where ``wedge(a, b)[p] = a_i b_j - a_j b_i`` for the ``p``-th pair ``(i, j)``,
``i > j``, and ``C`` is the ``m x P`` matrix of structure constants
(``P = r(r-1)/2``).  Pairs are ordered lexicographically:
``(2,1), (3,1), (3,2), (4,1), ...`` (1-based).  The free group ``G_r`` has
``C = identity`` so its vertical coordinates are the signed areas ``x_ij``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .errors import DegenerateDirection, InvalidArgument, InvalidStructure, StructureMismatch

ORTHOGONALITY_TOL = 1e-12


def _pairs(rank: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(1, rank) for j in range(i)]


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class GroupStructure:
    """Rank, second-layer dimension and structure constants of a step-2 group.

    ``constants[k, p]`` is ``c[k][i][j]`` for the ``p``-th pair ``(i, j)``.
    """

    rank: int
    constants: np.ndarray
    free: bool = False

    def __post_init__(self):
        if int(self.rank) != self.rank or self.rank < 2:
            raise InvalidStructure(f"rank must be an integer >= 2, got {self.rank!r}")
        c = np.array(self.constants, dtype=float, ndmin=2)
        npairs = self.rank * (self.rank - 1) // 2
        if c.shape[1] != npairs:
            raise InvalidStructure(f"expected {npairs} pair columns, got shape {c.shape}")
        if not np.all(np.isfinite(c)):
            raise InvalidStructure("structure constants must be finite")
        m = c.shape[0]
        if m == 0 or np.linalg.matrix_rank(c) < m:
            raise InvalidStructure("brackets of the first layer do not span the second layer")
        is_free = m == npairs and np.array_equal(c, np.eye(npairs))
        object.__setattr__(self, "rank", int(self.rank))
        object.__setattr__(self, "constants", _readonly(c))
        object.__setattr__(self, "free", is_free)
        idx = np.array(_pairs(self.rank), dtype=int).reshape(-1, 2)
        object.__setattr__(self, "_I", _readonly(idx[:, 0].copy()))
        object.__setattr__(self, "_J", _readonly(idx[:, 1].copy()))

    # --- construction -------------------------------------------------

    @staticmethod
    @lru_cache(maxsize=None)
    def free_group(rank: int) -> "GroupStructure":
        n = rank * (rank - 1) // 2
        return GroupStructure(rank, np.eye(n))

    @classmethod
    def from_tensor(cls, c: Any) -> "GroupStructure":
        """Build from a full ``(m, r, r)`` array ``c[k][i][j]``; must be antisymmetric."""
        c = np.asarray(c, dtype=float)
        if c.ndim != 3 or c.shape[1] != c.shape[2]:
            raise InvalidStructure(f"expected an (m, r, r) array, got shape {c.shape}")
        if not np.allclose(c, -np.transpose(c, (0, 2, 1)), atol=0.0, rtol=0.0):
            raise InvalidStructure("structure constants must satisfy c[k][i][j] = -c[k][j][i]")
        rank = c.shape[1]
        pr = np.array(_pairs(rank), dtype=int).reshape(-1, 2)
        return cls(rank, c[:, pr[:, 0], pr[:, 1]])

    @classmethod
    def from_dict(cls, doc: dict) -> "GroupStructure":
        """Parse ``{"rank": r, "vertical_dim": m, "c": [[k, i, j, value], ...]}``.

        Indices are 1-based and only ``i > j`` entries are listed.
        """
        try:
            rank = int(doc["rank"])
            m = int(doc["vertical_dim"])
            entries = doc["c"]
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidStructure(f"malformed structure document: {exc}") from None
        if rank < 2 or m < 1:
            raise InvalidStructure("rank must be >= 2 and vertical_dim >= 1")
        index = {pair: p for p, pair in enumerate(_pairs(rank))}
        c = np.zeros((m, len(index)))
        for entry in entries:
            k, i, j, value = entry
            k, i, j = int(k) - 1, int(i) - 1, int(j) - 1
            if not (0 <= k < m) or (i, j) not in index:
                raise InvalidStructure(f"entry {entry!r} out of range (need 1 <= j < i <= rank)")
            c[k, index[(i, j)]] = float(value)
        return cls(rank, c)

    def to_dict(self) -> dict:
        entries = []
        for p, (i, j) in enumerate(self.pairs):
            for k in range(self.vertical_dim):
                if self.constants[k, p] != 0.0:
                    entries.append([k + 1, i + 1, j + 1, float(self.constants[k, p])])
        return {"rank": self.rank, "vertical_dim": self.vertical_dim, "c": entries}

    # --- shape --------------------------------------------------------

    @property
    def vertical_dim(self) -> int:
        return self.constants.shape[0]

    @property
    def num_pairs(self) -> int:
        return self.constants.shape[1]

    @property
    def dim(self) -> int:
        return self.rank + self.vertical_dim

    @property
    def homogeneous_dim(self) -> int:
        return self.rank + 2 * self.vertical_dim

    @property
    def pairs(self) -> list[tuple[int, int]]:
        """0-based ``(i, j)`` index pairs, ``i > j``, in coordinate order."""
        return list(zip(self._I.tolist(), self._J.tolist()))

    @property
    def structure_tensor(self) -> np.ndarray:
        """The antisymmetric ``(m, r, r)`` array ``c[k][i][j]``."""
        c = np.zeros((self.vertical_dim, self.rank, self.rank))
        c[:, self._I, self._J] = self.constants
        c[:, self._J, self._I] = -self.constants
        return c

    def __eq__(self, other):
        if self is other:
            return True
        if not isinstance(other, GroupStructure):
            return NotImplemented
        return self.rank == other.rank and np.array_equal(self.constants, other.constants)

    def __hash__(self):
        return hash((self.rank, self.constants.tobytes()))

    def __repr__(self):
        kind = "free" if self.free else "quotient"
        return f"GroupStructure(rank={self.rank}, vertical_dim={self.vertical_dim}, {kind})"

    # --- raw array kernels (broadcast over leading axes) --------------

    def wedge(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if not isinstance(a, np.ndarray):
            a = np.asarray(a, dtype=float)
        if not isinstance(b, np.ndarray):
            b = np.asarray(b, dtype=float)
        I, J = self._I, self._J
        return a[..., I] * b[..., J] - a[..., J] * b[..., I]

    def bracket_term(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """``1/2 * C @ wedge(a, b)``: the vertical cross term of a product."""
        w = self.wedge(a, b)
        if self.free:
            return 0.5 * w
        return 0.5 * w @ self.constants.T

    def point(self, coords: Sequence[float] | None = None, *, horizontal=None, vertical=None) -> "GroupPoint":
        if coords is not None:
            coords = np.asarray(coords, dtype=float).ravel()
            if coords.shape[0] != self.dim:
                raise InvalidArgument(f"expected {self.dim} coordinates, got {coords.shape[0]}")
            return GroupPoint(self, coords[: self.rank], coords[self.rank :])
        h = np.zeros(self.rank) if horizontal is None else horizontal
        v = np.zeros(self.vertical_dim) if vertical is None else vertical
        return GroupPoint(self, h, v)

    def identity(self) -> "GroupPoint":
        return self.point()

    def random_point(self, rng: np.random.Generator, scale: float = 1.0) -> "GroupPoint":
        """Gaussian coordinates, horizontal scaled by ``scale`` and vertical by ``scale**2``."""
        return GroupPoint._trusted(self, scale * rng.normal(size=self.rank), scale**2 * rng.normal(size=self.vertical_dim))


def load_structure(source: str | Path | dict) -> GroupStructure:
    """Load structure constants from a JSON file path, JSON string or parsed dict."""
    if isinstance(source, dict):
        return GroupStructure.from_dict(source)
    text = str(source)
    if text.lstrip().startswith("{"):
        return GroupStructure.from_dict(json.loads(text))
    return GroupStructure.from_dict(json.loads(Path(source).read_text()))


@dataclass(frozen=True, eq=False)
class GroupPoint:
    """A point ``(x_H, x_V)`` of a step-2 group."""

    structure: GroupStructure
    horizontal: np.ndarray
    vertical: np.ndarray

    def __post_init__(self):
        h = np.array(self.horizontal, dtype=float).ravel()
        v = np.array(self.vertical, dtype=float).ravel()
        s = self.structure
        if h.shape[0] != s.rank or v.shape[0] != s.vertical_dim:
            raise InvalidArgument(
                f"point shape ({h.shape[0]}, {v.shape[0]}) does not match structure ({s.rank}, {s.vertical_dim})"
            )
        if not (np.isfinite(h).all() and np.isfinite(v).all()):
            raise InvalidArgument("point coordinates must be finite")
        object.__setattr__(self, "horizontal", _readonly(h))
        object.__setattr__(self, "vertical", _readonly(v))

    @classmethod
    def _trusted(cls, s: GroupStructure, h: np.ndarray, v: np.ndarray) -> "GroupPoint":
        # skip validation for fresh float arrays built from already valid points
        p = object.__new__(cls)
        object.__setattr__(p, "structure", s)
        object.__setattr__(p, "horizontal", _readonly(h))
        object.__setattr__(p, "vertical", _readonly(v))
        return p

    @property
    def coords(self) -> np.ndarray:
        return np.concatenate([self.horizontal, self.vertical])

    def __mul__(self, other: "GroupPoint") -> "GroupPoint":
        return multiply(self, other)

    def inverse(self) -> "GroupPoint":
        return GroupPoint._trusted(self.structure, -self.horizontal, -self.vertical)

    def dilate(self, lam: float) -> "GroupPoint":
        return dilate(lam, self)

    def allclose(self, other: "GroupPoint", rtol: float = 1e-9, atol: float = 1e-12) -> bool:
        return self.structure == other.structure and np.allclose(self.coords, other.coords, rtol=rtol, atol=atol)

    def __repr__(self):
        h = np.array2string(self.horizontal, precision=6, separator=", ")
        v = np.array2string(self.vertical, precision=6, separator=", ")
        return f"GroupPoint(h={h}, v={v})"


def _check_same(x: GroupPoint, y: GroupPoint) -> None:
    if x.structure != y.structure:
        raise StructureMismatch(f"{x.structure!r} vs {y.structure!r}")


def multiply(x: GroupPoint, y: GroupPoint) -> GroupPoint:
    _check_same(x, y)
    s = x.structure
    v = x.vertical + y.vertical + s.bracket_term(x.horizontal, y.horizontal)
    return GroupPoint._trusted(s, x.horizontal + y.horizontal, v)


def dilate(lam: float, x: GroupPoint) -> GroupPoint:
    if not (lam > 0 and math.isfinite(lam)):
        raise InvalidArgument(f"dilation factor must be positive and finite, got {lam!r}")
    return GroupPoint._trusted(x.structure, lam * x.horizontal, lam * lam * x.vertical)


@dataclass(frozen=True)
class HorizontalVector:
    """``E = sum_i a_i X_i`` in the first layer; ``X_1..X_r`` are orthonormal."""

    coefficients: np.ndarray

    def __post_init__(self):
        a = np.array(self.coefficients, dtype=float).ravel()
        if not np.all(np.isfinite(a)):
            raise InvalidArgument("coefficients must be finite")
        object.__setattr__(self, "coefficients", _readonly(a))

    @classmethod
    def basis(cls, rank: int, i: int) -> "HorizontalVector":
        """``X_i`` with 1-based ``i``."""
        a = np.zeros(rank)
        a[i - 1] = 1.0
        return cls(a)

    @property
    def rank(self) -> int:
        return self.coefficients.shape[0]

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.coefficients))

    def at(self, x: GroupPoint) -> np.ndarray:
        """Tangent vector ``E(x)`` in coordinates."""
        if x.structure.rank != self.rank:
            raise StructureMismatch("vector rank does not match structure")
        a = self.coefficients
        return np.concatenate([a, x.structure.bracket_term(x.horizontal, a)])

    def __mul__(self, t: float) -> "HorizontalVector":
        return HorizontalVector(t * self.coefficients)

    __rmul__ = __mul__


def exp_horizontal(E: HorizontalVector, structure: GroupStructure | None = None) -> GroupPoint:
    s = structure if structure is not None else GroupStructure.free_group(E.rank)
    if s.rank != E.rank:
        raise StructureMismatch("vector rank does not match structure")
    return GroupPoint(s, E.coefficients, np.zeros(s.vertical_dim))


def flow_line(x: GroupPoint, E: HorizontalVector, t: float) -> GroupPoint:
    """``x * exp(tE)``; coincides with ``x + t E(x)`` since left translations are affine."""
    return multiply(x, exp_horizontal(t * E, x.structure))


def horizontal_frame(structure: GroupStructure, coords: Sequence) -> list[list]:
    """Rows ``X_1(x), ..., X_r(x)`` as plain lists.

    Uses only ``+``, ``-``, ``*`` so symbolic coordinates (e.g. sympy) work.
    """
    r = structure.rank
    x = list(coords)
    rows = []
    for k in range(r):
        row = [0] * structure.dim
        row[k] = 1
        for q in range(structure.vertical_dim):
            entry = 0
            for p, (i, j) in enumerate(structure.pairs):
                c = structure.constants[q, p]
                if c == 0.0:
                    continue
                c = int(c) if float(c).is_integer() else float(c)
                # 1/2 (x_i a_j - x_j a_i) with a = e_k
                if j == k:
                    entry = entry + c * x[i] / 2
                if i == k:
                    entry = entry - c * x[j] / 2
            row[r + q] = entry
        rows.append(row)
    return rows


# --- isometries ---------------------------------------------------------


def induced_vertical_map(A: np.ndarray) -> np.ndarray:
    """``B(e_ij) = sum_{k>l} (A_ki A_lj - A_li A_kj) e_kl`` for the free group."""
    A = np.asarray(A, dtype=float)
    pr = np.array(_pairs(A.shape[0]), dtype=int).reshape(-1, 2)
    K, L = pr[:, 0], pr[:, 1]
    I, J = pr[:, 0], pr[:, 1]
    return A[np.ix_(K, I)] * A[np.ix_(L, J)] - A[np.ix_(L, I)] * A[np.ix_(K, J)]


@dataclass(frozen=True, eq=False)
class IsometryMap:
    """Group isometric isomorphism ``F(x_H, x_V) = (A x_H, B x_V)`` of a free group."""

    horizontal_part: np.ndarray
    vertical_part: np.ndarray
    structure: GroupStructure

    @classmethod
    def from_orthogonal(cls, A: Any, structure: GroupStructure | None = None) -> "IsometryMap":
        A = np.array(A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise InvalidArgument("A must be square")
        s = structure if structure is not None else GroupStructure.free_group(A.shape[0])
        if not s.free:
            raise InvalidArgument("isometries are only constructed for free groups")
        if not np.allclose(A.T @ A, np.eye(A.shape[0]), rtol=0.0, atol=ORTHOGONALITY_TOL * max(1.0, np.abs(A).max())):
            raise InvalidArgument("A is not orthogonal")
        return cls(_readonly(A), _readonly(induced_vertical_map(A)), s)

    def apply(self, x: GroupPoint) -> GroupPoint:
        if x.structure != self.structure:
            raise StructureMismatch("point is not in the isometry's group")
        return GroupPoint(x.structure, self.horizontal_part @ x.horizontal, self.vertical_part @ x.vertical)

    __call__ = apply

    def apply_vector(self, v: np.ndarray) -> np.ndarray:
        """Act on horizontal vectors (or an array of them along the last axis)."""
        return np.asarray(v, dtype=float) @ self.horizontal_part.T

    def inverse(self) -> "IsometryMap":
        return IsometryMap.from_orthogonal(self.horizontal_part.T, self.structure)


def horizontal_isometry(y: GroupPoint) -> IsometryMap:
    """Rotation ``F`` with ``p(F(y)) = (|p(y)|, 0, ..., 0)``.

    Householder reflection taking ``p(y)/|p(y)|`` to ``e_1``, with its last row
    negated when that makes the determinant positive.  ``p(y)`` already along
    ``+e_1`` gives the identity.
    """
    s = y.structure
    if not s.free:
        raise InvalidArgument("horizontal_isometry requires a free group")
    L = float(np.linalg.norm(y.horizontal))
    if L == 0.0 or L < 1e-300:
        raise DegenerateDirection("p(y) = 0 has no direction to align")
    a = y.horizontal / L
    v = a.copy()
    v[0] -= 1.0
    vv = float(v @ v)
    r = s.rank
    if vv < 1e-30:
        A = np.eye(r)
    else:
        A = np.eye(r) - 2.0 * np.outer(v, v) / vv
        A[-1] *= -1.0
    return IsometryMap.from_orthogonal(A, s)


# --- quotient homomorphisms ----------------------------------------------


@dataclass(frozen=True, eq=False)
class HomomorphismSpec:
    """Homomorphism ``G_r -> H`` acting as identity on the first layer.

    ``vertical_map`` is ``m_target x P``: column ``(i, j)`` holds ``c[.][i][j]``.
    """

    source: GroupStructure
    target: GroupStructure
    vertical_map: np.ndarray

    def apply(self, x: GroupPoint) -> GroupPoint:
        if x.structure != self.source:
            raise StructureMismatch("point is not in the homomorphism's source group")
        return GroupPoint(self.target, x.horizontal, self.vertical_map @ x.vertical)

    __call__ = apply

    def preimage(self, y: GroupPoint) -> GroupPoint:
        """Some source point mapping to ``y`` (minimum-norm vertical part)."""
        if y.structure != self.target:
            raise StructureMismatch("point is not in the homomorphism's target group")
        v, *_ = np.linalg.lstsq(self.vertical_map, y.vertical, rcond=None)
        return GroupPoint(self.source, y.horizontal, v)


def build_quotient(spec: GroupStructure | dict | np.ndarray) -> HomomorphismSpec:
    """Homomorphism from the free group of the same rank onto the given step-2 group.

    ``spec`` is a structure, a JSON-style dict, or an ``(m, r, r)`` antisymmetric
    tensor.  Rank-deficient constants raise :class:`InvalidStructure`.
    """
    if isinstance(spec, GroupStructure):
        target = spec
    elif isinstance(spec, dict):
        target = GroupStructure.from_dict(spec)
    else:
        target = GroupStructure.from_tensor(spec)
    source = GroupStructure.free_group(target.rank)
    return HomomorphismSpec(source, target, _readonly(np.array(target.constants)))


def apply_hom(F: HomomorphismSpec, x: GroupPoint) -> GroupPoint:
    return F.apply(x)
