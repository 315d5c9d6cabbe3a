import numpy as np
import pytest

from slowfast_lv.core import (CENTRE, Z_MAX, CountState, JumpVector, ModelParams,
                              SimplexPoint, apply_jump, nearest_state, to_point,
                              z_of)


def test_z_of_examples():
    assert z_of(CENTRE) == pytest.approx(1.0 / 27.0, abs=1e-15)
    assert z_of(SimplexPoint(1.0, 0.0, 0.0)) == 0.0
    assert z_of(SimplexPoint(0.5, 0.25, 0.25)) == pytest.approx(0.03125, abs=1e-15)


def test_z_max_attained_only_at_centre():
    rng = np.random.default_rng(0)
    for _ in range(200):
        x = rng.dirichlet([1.0, 1.0, 1.0])
        p = SimplexPoint.from_array(x)
        assert z_of(p) <= Z_MAX + 1e-15


def test_z_of_cyclic_invariance():
    rng = np.random.default_rng(1)
    for _ in range(100):
        p = SimplexPoint.from_array(rng.dirichlet([0.7, 0.7, 0.7]))
        assert z_of(p.cycled(1)) == pytest.approx(z_of(p), abs=1e-15)
        assert z_of(p.cycled(2)) == pytest.approx(z_of(p), abs=1e-15)


def test_simplex_point_renormalizes_small_drift():
    p = SimplexPoint(0.5 + 4e-10, 0.3, 0.2)
    assert p.x1 + p.x2 + p.x3 == pytest.approx(1.0, abs=1e-15)


def test_simplex_point_rejects_large_drift():
    with pytest.raises(ValueError):
        SimplexPoint(0.5, 0.3, 0.2 + 1e-6)
    with pytest.raises(ValueError):
        SimplexPoint(0.7, 0.5, -0.2)


def test_to_point_examples():
    assert to_point(CountState(2, 0, 0)) == SimplexPoint(1.0, 0.0, 0.0)
    assert to_point(CountState(1, 1, 1)) == CENTRE
    p = to_point(CountState(3, 1, 0))
    assert (p.x1, p.x2, p.x3) == (0.75, 0.25, 0.0)
    with pytest.raises(ValueError):
        to_point(CountState(0, 0, 0))


def test_apply_jump_examples():
    assert apply_jump(CountState(1, 1, 1), JumpVector(0)) == CountState(0, 2, 1)
    assert apply_jump(CountState(0, 2, 1), JumpVector(1)) == CountState(0, 1, 2)
    with pytest.raises(ValueError):
        apply_jump(CountState(2, 0, 0), JumpVector(1))


def test_apply_jump_conserves_total():
    rng = np.random.default_rng(2)
    for _ in range(200):
        c = rng.integers(0, 40, size=3)
        s = CountState(*map(int, c))
        for j in range(3):
            if s.count(j) >= 1:
                assert apply_jump(s, JumpVector(j)).n == s.n


def test_jump_changes_z_by_at_most_bounds():
    # coarse bound 3/n for any feasible jump; the tight 1/n bound is checked
    # empirically on simulated jumps in the particle tests
    rng = np.random.default_rng(3)
    for _ in range(500):
        c = rng.multinomial(60, rng.dirichlet([1, 1, 1]))
        s = CountState(*map(int, c))
        for j in range(3):
            if s.count(j) < 1:
                continue
            before = z_of(to_point(s))
            after = z_of(to_point(apply_jump(s, JumpVector(j))))
            assert abs(after - before) <= 3.0 / s.n
            assert abs(after - before) <= 1.0 / s.n + 1e-15


def test_model_params_validation():
    assert ModelParams(a=0.0).a == 0.0
    with pytest.raises(ValueError):
        ModelParams(a=-0.1)


def test_jump_vector_delta():
    d = JumpVector(2).delta()
    assert list(d) == [1, 0, -1]
    with pytest.raises(ValueError):
        JumpVector(3)


def test_nearest_state_rounds_to_total():
    p = SimplexPoint(0.4, 0.3, 0.3)
    s = nearest_state(10, p)
    assert s.n == 10 and s.counts() == (4, 3, 3)
    s = nearest_state(7, CENTRE)
    assert s.n == 7
