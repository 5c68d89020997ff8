"""Multi-start search over equal-duration control words.

A model maps a ``(k, r)`` control array ``U`` (each row held for ``1/k``) to the
endpoint of the curve from the identity and supplies the Jacobian.  We minimise
the energy ``(1/k) sum |u|^2`` subject to hitting the target (SLSQP), polish
the endpoint with Gauss-Newton steps, and keep the shortest word.  The segment
count is doubled, warm-starting from the best word, while that still helps.
"""

from __future__ import annotations

import json
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np
from scipy.optimize import minimize

from .errors import InvalidArgument

THREADS_ENV = "CARNOT_UDS_THREADS"
ENDPOINT_TOL = 1e-12


@dataclass(frozen=True)
class Budget:
    starts: int = 16
    segments: int = 8
    max_iters: int = 500
    seed: int = 0
    max_segments: int = 128
    rel_improvement: float = 1e-3
    gap_tol: float = 1e-9
    threads: int | None = None

    def __post_init__(self):
        if self.starts < 1 or self.segments < 1 or self.max_iters < 1:
            raise InvalidArgument("starts, segments and max_iters must be positive")
        if self.max_segments < self.segments:
            raise InvalidArgument("max_segments must be >= segments")

    @classmethod
    def from_dict(cls, doc: dict | None) -> "Budget":
        if not doc:
            return cls()
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise InvalidArgument(f"unknown budget keys: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def from_json(cls, text: str) -> "Budget":
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        return asdict(self)

    def replace(self, **kw) -> "Budget":
        return Budget(**{**self.to_dict(), **kw})

    def resolved_threads(self) -> int:
        if self.threads is not None:
            return max(1, int(self.threads))
        try:
            return max(1, int(os.environ.get(THREADS_ENV, "1")))
        except ValueError:
            return 1


class EndpointModel(Protocol):
    rank: int

    def endpoint(self, U: np.ndarray) -> np.ndarray: ...

    def jacobian(self, U: np.ndarray) -> np.ndarray: ...


@dataclass
class SearchResult:
    controls: np.ndarray | None
    length: float
    segments: int
    converged: bool
    history: list = field(default_factory=list)


def word_length(U: np.ndarray) -> float:
    return float(np.linalg.norm(U, axis=1).sum() / U.shape[0])


def resample(durations: np.ndarray, controls: np.ndarray, k: int) -> np.ndarray:
    """Controls of a curve averaged onto ``k`` equal subintervals of its (normalised) time."""
    T = float(np.sum(durations))
    edges = np.concatenate([[0.0], np.cumsum(durations)]) / T
    grid = np.linspace(0.0, 1.0, k + 1)
    # displacement of the projection at grid times, then finite differences
    disp = np.vstack([np.zeros(controls.shape[1]), np.cumsum(durations[:, None] * controls, axis=0)])
    at = np.stack([np.interp(grid, edges, disp[:, a]) for a in range(controls.shape[1])], axis=1)
    return np.diff(at, axis=0) * k


def polish(model: EndpointModel, U: np.ndarray, target: np.ndarray, iters: int = 30) -> tuple[np.ndarray, float]:
    """Minimum-norm Gauss-Newton corrections until the endpoint error is below ``ENDPOINT_TOL``."""
    k, r = U.shape
    x = U.ravel().copy()
    err = model.endpoint(x.reshape(k, r)) - target
    res = float(np.abs(err).max())
    for _ in range(iters):
        if res <= ENDPOINT_TOL:
            break
        J = model.jacobian(x.reshape(k, r))
        step, *_ = np.linalg.lstsq(J, -err, rcond=None)
        x_new = x + step
        err_new = model.endpoint(x_new.reshape(k, r)) - target
        res_new = float(np.abs(err_new).max())
        if not res_new < res:
            break
        x, err, res = x_new, err_new, res_new
    return x.reshape(k, r), res


def solve_word(model: EndpointModel, U0: np.ndarray, target: np.ndarray, max_iters: int) -> tuple[np.ndarray, float]:
    k, r = U0.shape
    tau = 1.0 / k

    def energy(x):
        return tau * float(x @ x), 2.0 * tau * x

    cons = {
        "type": "eq",
        "fun": lambda x: model.endpoint(x.reshape(k, r)) - target,
        "jac": lambda x: model.jacobian(x.reshape(k, r)),
    }
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        out = minimize(
            energy, U0.ravel(), jac=True, constraints=[cons], method="SLSQP",
            options={"maxiter": max_iters, "ftol": 1e-14},
        )
    x = out.x if np.all(np.isfinite(out.x)) else U0.ravel()
    return polish(model, x.reshape(k, r), target)


def _best(candidates: Sequence[tuple[np.ndarray, float]], tol: float):
    best, best_len = None, np.inf
    for U, res in candidates:
        if res > tol:
            continue
        L = word_length(U)
        if L < best_len:
            best, best_len = U, L
    return best, best_len


def search(
    model: EndpointModel,
    target: np.ndarray,
    budget: Budget,
    random_init: Callable[[np.random.Generator, int], np.ndarray],
    seeds: Sequence[np.ndarray] = (),
    lower: float = 0.0,
    accept_tol: float = 1e-10,
) -> SearchResult:
    """Shortest word found from ``len(seeds)`` given starts plus ``budget.starts`` random ones.

    Each random start ``i`` draws from ``default_rng([seed, i])`` so results do
    not depend on the order in which starts are evaluated.
    """
    k = budget.segments
    inits = [np.asarray(s, dtype=float) for s in seeds]
    inits += [random_init(np.random.default_rng([budget.seed, i]), k) for i in range(budget.starts)]
    threads = budget.resolved_threads()
    run = lambda U0: solve_word(model, U0, target, budget.max_iters)  # noqa: E731
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, inits))
    else:
        results = [run(U0) for U0 in inits]
    best, best_len = _best(results, accept_tol)
    history = [(k, best_len)]
    if best is None:
        return SearchResult(None, np.inf, k, False, history)

    converged = False
    while True:
        if best_len - lower <= budget.gap_tol:
            converged = True
            break
        if 2 * k > budget.max_segments:
            break
        U2, res = solve_word(model, np.repeat(best, 2, axis=0), target, budget.max_iters)
        L2 = word_length(U2) if res <= accept_tol else np.inf
        k *= 2
        history.append((k, L2))
        if L2 < best_len:
            gain = (best_len - L2) / best_len
            best, best_len = U2, L2
            if gain < budget.rel_improvement:
                converged = True
                break
        else:
            converged = True
            break
    return SearchResult(best, best_len, best.shape[0], converged, history)
