from __future__ import annotations

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from carnot_uds import Budget, GroupStructure, HorizontalVector, build_quotient, cc_bracket
from carnot_uds.errors import InvalidArgument, StructureMismatch
from carnot_uds.uds import (
    HorizontalSegment,
    image_under_hom,
    premeasure,
    projection_measure,
    rational_power,
    stage_cover,
    stage_ratio,
    tube_cover,
    verify_membership,
)

G2 = GroupStructure.free_group(2)
G3 = GroupStructure.free_group(3)
FAST = Budget(starts=2, segments=8, max_iters=200, max_segments=32)


def seg(G, start=None, direction=None, length=1.0):
    d = np.eye(G.rank)[0] if direction is None else np.asarray(direction, float)
    return HorizontalSegment(G.identity() if start is None else start, HorizontalVector(d / np.linalg.norm(d)), length)


# --- premeasure arithmetic ----------------------------------------------------


@given(st.integers(4, 10**6))
def test_premeasure_at_one_is_four(k):
    assert premeasure(k, 1) == 4
    assert premeasure(k, 1.0) == Fraction(4)


def test_premeasure_examples():
    assert premeasure(100, Fraction(3, 2)) == Fraction(4, 5)
    assert premeasure(100, 1.5) == Fraction(4, 5)
    assert premeasure(8, 2) == Fraction(2)
    assert [premeasure(k, 2) for k in (4, 16, 64)] == [4, 1, Fraction(1, 4)]
    assert isinstance(premeasure(7, 1.5), float)
    assert premeasure(7, 1.5) == pytest.approx(7 * (4 / 7) ** 1.5)


def test_rational_power():
    assert rational_power(Fraction(8, 27), Fraction(2, 3)) == Fraction(4, 9)
    assert rational_power(Fraction(2), Fraction(1, 2)) is None
    assert rational_power(Fraction(-1), Fraction(1)) is None


@given(st.integers(1, 12), st.integers(4, 400))
def test_premeasure_closed_form(a, k):
    e = Fraction(a, 4)
    val = premeasure(k, e)
    assert float(val) == pytest.approx(4 ** float(e) * k ** (1 - float(e)), rel=1e-12)


# --- tube covers ----------------------------------------------------------------


def test_tube_cover_centres():
    s = seg(G2, length=0.5)
    rep = tube_cover(s, 10)
    assert rep.ball_diameter == Fraction(2, 5) and rep.ball_radius == Fraction(1, 5)
    assert np.allclose(rep.center_params, (np.arange(10) + 0.5) * 0.05)
    assert np.allclose(rep.ball_centers[0].coords, [0.025, 0, 0])
    assert rep.premeasure(1) == 4
    with pytest.raises(InvalidArgument):
        tube_cover(s, 3)


def test_segment_validation_and_endpoints():
    with pytest.raises(InvalidArgument):
        HorizontalSegment(G2.identity(), HorizontalVector([1.0, 1.0]), 0.5)
    with pytest.raises(InvalidArgument):
        seg(G2, length=1.5)
    with pytest.raises(StructureMismatch):
        HorizontalSegment(G3.identity(), HorizontalVector([1.0, 0.0]), 0.5)
    rng = np.random.default_rng(0)
    s = seg(G3, G3.random_point(rng), rng.normal(size=3), 0.7)
    b = cc_bracket(s.start, s.end, FAST)
    assert b.lower == pytest.approx(0.7) and b.upper == pytest.approx(0.7)
    assert HorizontalSegment.from_dict(s.to_dict(), G3).end.allclose(s.end)


def test_membership_small_run():
    rep = verify_membership(tube_cover(seg(G2), 8), n_samples=30, seed=1, budget=FAST)
    assert rep.violations == 0
    assert rep.in_tube > 0 and rep.certified == rep.in_tube
    assert rep.max_upper_over_radius <= 1.0


def test_projection_measure_is_exact():
    s = seg(G2, length=0.75)
    assert projection_measure(s) == Fraction(3, 4)
    for k in (4, 8, 100):
        assert projection_measure(s) >= Fraction(3, 4) - Fraction(2, k)
    diag = seg(G2, direction=[3, 4], length=0.5)
    assert float(projection_measure(diag)) == pytest.approx(0.3)


# --- stage sums --------------------------------------------------------------------


def test_stage_cover_examples():
    one = [seg(G2)]
    assert stage_cover(one, 0, 2) == 8
    assert stage_cover([], 3, 2) == 0
    with pytest.raises(InvalidArgument):
        stage_cover(one, 0, 1)
    with pytest.raises(InvalidArgument):
        stage_cover(one, -1, 2)


@pytest.mark.parametrize("r_exp", [2, 3, 4.0, Fraction(5)])
def test_stage_sums_decay_exactly(r_exp):
    lines = [seg(G2, length=0.1 * (j + 1)) for j in range(5)]
    sums = [stage_cover(lines, i, r_exp) for i in range(6)]
    ratio = stage_ratio(r_exp)
    assert isinstance(ratio, Fraction) and ratio == Fraction(1, 2 ** (int(r_exp) - 1))
    for a, b in zip(sums, sums[1:]):
        assert isinstance(b, Fraction) and b == a * ratio


@pytest.mark.parametrize("r_exp", [1.3, Fraction(3, 2), Fraction(5, 4)])
def test_stage_sums_decay_with_irrational_ratio(r_exp):
    # 2^(1-r) is irrational here, so the ratio holds to rounding only
    lines = [seg(G2)] * 3
    sums = [float(stage_cover(lines, i, r_exp)) for i in range(6)]
    for a, b in zip(sums, sums[1:]):
        assert b / a == pytest.approx(float(stage_ratio(r_exp)), rel=1e-12)


# --- images under quotients -----------------------------------------------------------


def test_image_under_identity_and_quotient():
    rng = np.random.default_rng(2)
    segs = [seg(G3, G3.random_point(rng), rng.normal(size=3), 0.5) for _ in range(3)]
    same = image_under_hom(build_quotient(G3), segs)
    assert all(a.start.allclose(b.start) and a.length == b.length for a, b in zip(segs, same))
    F = build_quotient({"rank": 3, "vertical_dim": 1, "c": [[1, 2, 1, 1], [1, 3, 1, 1], [1, 3, 2, 1]]})
    x1 = seg(G3)
    (img,) = image_under_hom(F, [x1])
    for t in np.linspace(0, 1, 5):
        assert np.allclose(img.point(t).coords, F.apply(x1.point(t)).coords)
    for s, m in zip(segs, image_under_hom(F, segs)):
        src = cc_bracket(s.start, s.end, FAST)
        dst = cc_bracket(m.start, m.end, FAST)
        assert dst.upper <= src.upper * (1 + 1e-12)
    with pytest.raises(StructureMismatch):
        image_under_hom(F, [seg(G2)])
