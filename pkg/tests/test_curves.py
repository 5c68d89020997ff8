from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from carnot_uds import (
    ControlCurve,
    GroupStructure,
    HorizontalVector,
    build_quotient,
    check_horizontal,
    lift,
    lift_through_hom,
    measure,
)
from carnot_uds.algebra import horizontal_isometry
from carnot_uds.errors import InvalidArgument, StructureMismatch

G2 = GroupStructure.free_group(2)
G3 = GroupStructure.free_group(3)

SQUARE = [(0, 0), (1, 0), (1, 1), (0, 1), (0, 0)]


def quadrature_endpoint(curve: ControlCurve) -> np.ndarray:
    """Integrate x' = sum_i u_i X_i(x) segment by segment with a tight RK45."""
    x = curve.start.coords.copy()
    G = curve.structure
    for d, u in zip(curve.durations, curve.controls):
        E = HorizontalVector(u)
        sol = solve_ivp(lambda t, y: E.at(G.point(y)), (0.0, d), x, rtol=1e-12, atol=1e-13)
        x = sol.y[:, -1]
    return x


def random_curve(G, rng, k=5):
    return ControlCurve(G.random_point(rng), rng.uniform(0.1, 1.0, k), rng.normal(size=(k, G.rank)))


def test_lift_examples():
    c = lift([(0, 0), (1, 1)], G2.identity())
    assert np.allclose(c.endpoint.coords, [1, 1, 0])
    sq = lift(SQUARE, G2.identity())
    assert np.allclose(sq.endpoint.coords, [0, 0, -1])
    assert measure(sq) == {"length": 4.0, "lipschitz": 1.0}
    empty = lift([], G2.point([1, 2, 3]))
    assert np.array_equal(empty.endpoint.coords, [1, 2, 3]) and empty.length == 0.0


def test_lift_rejects_wrong_start_and_durations():
    with pytest.raises(InvalidArgument):
        lift([(1, 0), (2, 0)], G2.identity())
    with pytest.raises(InvalidArgument):
        lift([(0, 0), (1, 0)], G2.identity(), durations=[0.0])


def test_single_segment_length():
    c = ControlCurve(G3.identity(), [0.7], [[3.0, 0.0, 4.0]])
    assert c.length == pytest.approx(3.5)
    assert c.lipschitz == pytest.approx(5.0)


@pytest.mark.parametrize("G", [G2, G3, GroupStructure(3, [[1.0, 0.5, -2.0]])])
def test_closed_form_matches_quadrature(G):
    rng = np.random.default_rng(0)
    for _ in range(3):
        c = random_curve(G, rng)
        assert np.abs(c.endpoint.coords - quadrature_endpoint(c)).max() < 1e-9


def test_square_loop_matches_quadrature():
    sq = lift(SQUARE, G2.identity())
    assert np.allclose(quadrature_endpoint(sq), [0, 0, -1], atol=1e-10)


def test_evaluate_interpolates_and_clamps():
    rng = np.random.default_rng(1)
    c = random_curve(G3, rng).shift(-0.4)
    assert np.allclose(c.evaluate(c.t0), c.start.coords)
    assert np.allclose(c.evaluate(c.t1), c.endpoint.coords)
    assert np.allclose(c.evaluate(c.t1 + 5.0), c.endpoint.coords)
    bps = c.breakpoints()
    for t, p in zip(c.times(), bps):
        assert np.allclose(c.evaluate(t), p.coords)
    ts = np.linspace(c.t0, c.t1, 7)
    assert c.evaluate(ts).shape == (7, G3.dim)


def test_curve_is_horizontal_along_every_segment():
    rng = np.random.default_rng(2)
    c = random_curve(G3, rng)
    for t in np.linspace(c.t0, c.t1, 40)[:-1]:
        p = c.point_at(t)
        v = HorizontalVector(c.velocity_at(t)).at(p)
        assert check_horizontal(v, p)


def test_check_horizontal_examples():
    p = G3.random_point(np.random.default_rng(3))
    assert check_horizontal(HorizontalVector.basis(3, 1).at(p), p)
    assert not check_horizontal([0, 0, 1], G2.identity())
    # v_21 = (p_2 v_1 - p_1 v_2)/2 = 1/2 at p = (0,1,0), v_H = (1,0)
    assert check_horizontal([1, 0, 0.5], G2.point([0, 1, 0]))
    assert not check_horizontal([1, 0, -0.5], G2.point([0, 1, 0]))
    with pytest.raises(InvalidArgument):
        check_horizontal([1, 0], G2.identity())


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_concatenation_matches_group_product(seed):
    rng = np.random.default_rng(seed)
    a, b = random_curve(G3, rng), random_curve(G3, rng)
    ab = a.then(b)
    expect = a.endpoint * (b.start.inverse() * b.endpoint)
    assert np.allclose(ab.endpoint.coords, expect.coords, atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_translation_and_isometry_commute_with_lift(seed):
    rng = np.random.default_rng(seed)
    c = random_curve(G3, rng)
    g = G3.random_point(rng)
    assert np.allclose(c.translate(g).endpoint.coords, (g * c.endpoint).coords, atol=1e-10)
    F = horizontal_isometry(G3.random_point(rng))
    assert np.allclose(c.map_isometry(F).endpoint.coords, F.apply(c.endpoint).coords, atol=1e-10)
    assert c.map_isometry(F).length == pytest.approx(c.length)


def test_reversed_and_rescaled():
    rng = np.random.default_rng(4)
    c = random_curve(G2, rng)
    assert np.allclose(c.reversed().endpoint.coords, c.start.coords, atol=1e-12)
    r = c.rescale_time(2.5)
    assert np.allclose(r.endpoint.coords, c.endpoint.coords)
    assert r.length == pytest.approx(c.length)
    assert r.lipschitz == pytest.approx(c.lipschitz / 2.5)


def test_zero_duration_segments_do_not_count():
    c = ControlCurve(G2.identity(), [1.0, 0.0], [[1.0, 0.0], [100.0, 0.0]])
    assert c.lipschitz == 1.0
    assert c.compact().num_segments == 1


def test_serialization_round_trip():
    c = random_curve(G3, np.random.default_rng(5))
    back = ControlCurve.from_dict(c.to_dict(), G3)
    assert np.allclose(back.endpoint.coords, c.endpoint.coords)


def test_invalid_curves():
    with pytest.raises(InvalidArgument):
        ControlCurve(G2.identity(), [1.0, 2.0], [[1.0, 0.0]])
    with pytest.raises(InvalidArgument):
        ControlCurve(G2.identity(), [-1.0], [[1.0, 0.0]])
    with pytest.raises(StructureMismatch):
        ControlCurve(G2.identity(), [1.0], [[1.0, 0.0]]).then(ControlCurve(G3.identity(), [1.0], [[1.0, 0.0, 0.0]]))


def test_lift_through_hom():
    F = build_quotient({"rank": 3, "vertical_dim": 1, "c": [[1, 2, 1, 1], [1, 3, 1, 1], [1, 3, 2, 1]]})
    H = F.target
    sq = [(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0), (0, 0, 0)]
    down = lift(sq, H.identity())
    up = lift_through_hom(F, down, G3.identity())
    assert up.length == down.length
    assert np.abs(F.apply(up.endpoint).coords - down.endpoint.coords).max() <= 1e-9
    ident = build_quotient(G3)
    c = random_curve(G3, np.random.default_rng(6))
    start = G3.point(horizontal=c.start.horizontal, vertical=[1.0, 2.0, 3.0])
    moved = lift_through_hom(ident, c, start)
    assert np.allclose(moved.endpoint.coords, (start * c.start.inverse() * c.endpoint).coords)
    with pytest.raises(StructureMismatch):
        lift_through_hom(F, c, G3.identity())
