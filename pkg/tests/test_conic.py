import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ma_throughput import conic
from ma_throughput.conic import (Affine, AffineCon, ConvexProgram, ExpCon, LogCon, QuadCon,
                                 Status, aff)


def _program(**scalars):
    p = ConvexProgram(tol=1e-9)
    for name, bounds in scalars.items():
        p.add_scalar(name, *bounds)
    return p


def test_linear_program():
    p = _program(x=(-math.inf, 3.0))
    p.objective = aff(x=1.0)
    sol = conic.solve(p)
    assert sol.ok
    assert sol.values["x"] == pytest.approx(3.0, abs=1e-7)


def test_concave_quadratic():
    p = _program(q=(), t=())
    p.objective = aff(t=1.0)
    p.add(QuadCon(aff(t=-1.0), [(1.0, aff(q=1.0))]))   # -t >= q^2
    sol = conic.solve(p)
    assert sol.ok
    assert sol.values["q"] == pytest.approx(0.0, abs=1e-4)
    assert sol.objective == pytest.approx(0.0, abs=1e-7)


def test_exponential_constraint_active():
    p = _program(u=(), a=(0.0, math.inf))
    p.objective = aff(u=1.0)
    p.add(ExpCon(aff(5.0, u=-1.0), 1.0, aff(a=1.0)))  # 5 - u >= exp(a)
    sol = conic.solve(p)
    assert sol.ok
    assert sol.values["u"] == pytest.approx(4.0, abs=1e-6)
    assert sol.values["a"] == pytest.approx(0.0, abs=1e-6)


def test_log_constraint():
    p = _program(t=(), z=(-math.inf, math.e ** 2))
    p.objective = aff(t=1.0)
    p.add(LogCon(aff(t=1.0), 1.0, aff(z=1.0)))          # t <= ln z
    sol = conic.solve(p)
    assert sol.ok and sol.objective == pytest.approx(2.0, abs=1e-6)


def test_log_constraint_offset_and_scale():
    p = _program(t=(), z=(-math.inf, 10.0))
    p.objective = aff(t=1.0)
    p.add(LogCon(aff(t=1.0), 3.0, aff(1.0, z=1.0), offset=-1.0))
    sol = conic.solve(p)
    assert sol.objective == pytest.approx(3.0 * math.log(11.0) - 1.0, abs=1e-6)


def test_equality_constraint():
    p = _program(x=(), y=(0.0, math.inf))
    p.objective = aff(x=1.0, y=-1.0)
    p.add(AffineCon(aff(-2.0, x=1.0, y=-1.0), equality=True))  # x = 2 + y
    sol = conic.solve(p)
    assert sol.ok and sol.objective == pytest.approx(2.0, abs=1e-7)


def _random_hermitian(rng, n):
    m = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return 0.5 * (m + m.conj().T)


@pytest.mark.parametrize("n", [1, 2, 4])
def test_hermitian_block_top_eigenvalue(n):
    rng = np.random.default_rng(n)
    m = _random_hermitian(rng, n)
    p = ConvexProgram(tol=1e-9)
    p.add_block("W", n)
    p.objective = Affine({}, 0.0, {"W": m})
    p.add(AffineCon(Affine({}, 1.0, {"W": -np.eye(n)})))
    sol = conic.solve_checked(p)
    assert sol.max_residual <= 1e-8
    assert sol.objective == pytest.approx(np.linalg.eigvalsh(m)[-1], abs=1e-6)
    w = sol.values["W"]
    np.testing.assert_allclose(w, w.conj().T, atol=1e-12)
    assert np.linalg.eigvalsh(w)[0] >= -1e-8


def test_two_blocks_share_budget():
    rng = np.random.default_rng(3)
    m1, m2 = _random_hermitian(rng, 3), _random_hermitian(rng, 3)
    p = ConvexProgram(tol=1e-9)
    p.add_block("A", 3)
    p.add_block("B", 3)
    p.objective = Affine({}, 0.0, {"A": m1, "B": m2})
    p.add(AffineCon(Affine({}, 1.0, {"A": -np.eye(3), "B": -np.eye(3)})))
    sol = conic.solve_checked(p)
    best = max(np.linalg.eigvalsh(m1)[-1], np.linalg.eigvalsh(m2)[-1], 0.0)
    assert sol.objective == pytest.approx(best, abs=1e-6)


def test_infeasible_reported_and_raised():
    p = _program(x=(1.0, math.inf))
    p.objective = aff(x=-1.0)
    p.add(AffineCon(aff(x=-1.0)))                       # x <= 0
    sol = conic.solve(p)
    assert sol.status == Status.INFEASIBLE and not sol.ok
    with pytest.raises(conic.SubproblemError) as info:
        conic.solve_checked(p, trace=[1.0, 2.0])
    assert info.value.trace == [1.0, 2.0]


def test_unbounded_reported():
    p = _program(x=())
    p.objective = aff(x=1.0)
    assert conic.solve(p).status == Status.UNBOUNDED


@pytest.mark.parametrize("build", [
    lambda p: p.add(QuadCon(aff(x=1.0), [(-1.0, aff(x=1.0))])),
    lambda p: p.add(ExpCon(aff(x=1.0), 0.0, aff(x=1.0))),
    lambda p: p.add(AffineCon(aff(y=1.0))),
])
def test_validation_errors(build):
    p = _program(x=())
    build(p)
    with pytest.raises(ValueError):
        conic.solve(p)


def test_duplicate_names_rejected():
    p = _program(x=())
    p.add_block("x", 2)
    with pytest.raises(ValueError):
        p.validate()


@given(c=st.floats(0.1, 10), s=st.floats(0.2, 5))
@settings(max_examples=25, deadline=None)
def test_residual_contract(c, s):
    # maximize t s.t. t <= s ln(z), z <= c + x, x^2 <= 1
    p = _program(t=(), z=(), x=())
    p.objective = aff(t=1.0)
    p.add(LogCon(aff(t=1.0), s, aff(z=1.0)))
    p.add(AffineCon(aff(c, x=1.0, z=-1.0)))
    p.add(QuadCon(aff(1.0), [(1.0, aff(x=1.0))]))
    sol = conic.solve(p)
    assert sol.status in (Status.OPTIMAL, Status.INACCURATE)
    t, z, x = (sol.values[k] for k in "tzx")
    by_hand = max(0.0,
                  (t - s * math.log(z)) / max(1.0, abs(t), abs(s * math.log(z))),
                  (z - c - x) / max(1.0, c),
                  (x * x - 1.0) / max(1.0, x * x))
    assert abs(by_hand - sol.max_residual) < 1e-9
    assert sol.objective == pytest.approx(s * math.log(c + 1.0), abs=1e-6 * max(1.0, s))


def test_constraint_residual_measures_violation():
    values = {"x": 2.0}
    assert conic.constraint_residual(AffineCon(aff(-1.0, x=1.0)), values) == 0.0
    assert conic.constraint_residual(AffineCon(aff(-3.0, x=1.0)), values) == pytest.approx(1 / 3)
    assert conic.constraint_residual(ExpCon(aff(x=1.0), 1.0, aff(x=1.0)), values) > 0
    assert conic.constraint_residual(LogCon(aff(x=1.0), 1.0, aff(-5.0)), values) == math.inf
