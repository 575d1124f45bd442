import dataclasses
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ddkf.bounds import (
    BoundsParams,
    bounds_report,
    compute_epsilon0,
    compute_epsilon1,
    compute_epsilon2,
    compute_MZ,
    compute_N0,
    compute_NG,
    epsilon0_from_params,
    params_from_system,
)
from ddkf.errors import ConstraintInfeasible, InstabilityError
from ddkf.identification import IdentifiedModel, true_Z


def toy(**changes):
    base = dict(n=1, m=1, p=1, L=1, sigma_xi=1.0, sigma_omega=1.0, sigma_nu=1.0, sigma_x0=1.0, sigma_u=1.0,
                rho_G=1.0, rho_H=1.0, norm_A=0.5, norm_B=1.0, norm_G1=1.0, lam_min_G1=1.0)
    base.update(changes)
    return BoundsParams(**base)


def test_MZ_toy_value():
    assert compute_MZ(toy()) == pytest.approx(16 * (2 * math.sqrt(3) + 2))
    assert compute_MZ(toy()) == pytest.approx(87.43, abs=5e-3)


def test_MZ_linear_in_noise_levels():
    base = compute_MZ(toy())
    scaled = compute_MZ(toy(sigma_xi=3.0, sigma_omega=3.0, sigma_nu=3.0))
    assert scaled == pytest.approx(3 * base)
    # sigma_max / sigma_min^2 with a common excitation level
    assert compute_MZ(toy(sigma_x0=2.0, sigma_u=2.0)) == pytest.approx(base / 2)


def test_NG_hand_value():
    p, delta, eps = toy(), 0.1, 2.0
    MZ = compute_MZ(p)
    first = 8 * 2 + 2 * 8 * math.log(12 / delta)
    second = math.log(108 / delta) * MZ**2 / eps**2
    assert compute_NG(eps, delta, p) == math.ceil(max(first, second))
    # for huge eps the dimension term dominates
    assert compute_NG(1e6, delta, p) == math.ceil(first)


def test_epsilon0_examples():
    Q, _ = np.linalg.qr(np.random.default_rng(0).standard_normal((6, 2)))
    assert compute_epsilon0(Q) == pytest.approx(math.sqrt(2) - 1)
    assert compute_epsilon0(np.diag([3.0, 4.0])) == pytest.approx(math.sqrt(25) - 4 + 0.0)
    assert epsilon0_from_params(toy()) == pytest.approx(math.sqrt(2) - 1)


def test_N0_hand_value():
    p, delta, eps = toy(), 0.1, 0.1
    MZ = compute_MZ(p)
    root = math.sqrt(1 - eps**2 - 2 * eps)
    MA, MB = 1.5 * MZ / root, 2.0 * MZ / root
    res = compute_N0(eps, delta, p)
    assert res.M_A == pytest.approx(MA) and res.M_B == pytest.approx(MB) and res.M_C == pytest.approx(MZ)
    assert res.M == pytest.approx(MB)
    assert res.N0 == math.ceil(max(16 + 16 * math.log(36 / delta), math.log(324 / delta) * MB**2 / eps**2))


def test_N0_rejects_large_eps():
    with pytest.raises(ValueError, match="epsilon0"):
        compute_N0(0.5, 0.1, toy())
    with pytest.raises(ValueError):
        compute_N0(0.1, 1.5, toy())


def turning_point(p):
    """Where eps^2 (lambda_min - eps^2 - 2 eps ||G1||) peaks; N0 grows again beyond it."""
    g, lam = p.norm_G1, p.lam_min_G1
    return (-3 * g + math.sqrt(9 * g**2 + 8 * lam)) / 4


@given(st.floats(1e-3, 0.999), st.floats(1e-3, 0.999), st.floats(1e-3, 0.9), st.floats(1e-3, 0.9))
def test_monotone_in_eps_and_delta(a, b, d1, d2):
    p = toy()
    top = turning_point(p)
    lo_e, hi_e = sorted((a * top, b * top))
    lo_d, hi_d = sorted((d1, d2))
    assert compute_N0(lo_e, hi_d, p).N0 >= compute_N0(hi_e, hi_d, p).N0
    assert compute_N0(lo_e, lo_d, p).N0 >= compute_N0(lo_e, hi_d, p).N0
    assert compute_NG(lo_e, lo_d, p) >= compute_NG(hi_e, hi_d, p)


def test_N0_rises_again_near_epsilon0():
    p = toy()
    top, eps0 = turning_point(p), epsilon0_from_params(p)
    assert top < eps0
    grid = np.linspace(top, eps0, 12)[1:-1]
    values = [compute_N0(e, 0.1, p).N0 for e in grid]
    assert all(x <= y for x, y in zip(values, values[1:]))


def test_epsilon1_scalar_hand_value():
    model = IdentifiedModel.from_matrices([[0.5]], [[1.0]], [[1.0]], L=1)
    eps1 = compute_epsilon1(model, [[-0.25]], [[1.0]], [[0.5]], epsilon0=0.1)
    MK = 1 + 0.25 + 0.1 * 0.25 + 0.25
    assert eps1 == pytest.approx(0.5 / (MK * (2 * 0.25 + 0.1 * MK)))


def test_epsilon1_vanishes_with_delta():
    model = IdentifiedModel.from_matrices([[0.5]], [[1.0]], [[1.0]], L=1)
    values = [compute_epsilon1(model, [[-0.25]], [[1.0]], [[d]], epsilon0=0.1) for d in (0.5, 1e-3, 1e-9)]
    assert values[0] > values[1] > values[2] > 0 and values[2] < 1e-8
    with pytest.raises(ConstraintInfeasible):
        compute_epsilon1(model, [[-0.25]], [[1.0]], [[2.0]], epsilon0=0.1)


def test_epsilon2_hand_value():
    eps2 = compute_epsilon2(0.5 * np.eye(2), np.zeros((1, 1)), np.ones((1, 1)), 0.2)
    assert eps2 == pytest.approx(3 / (4 * 1.2))
    with pytest.raises(InstabilityError):
        compute_epsilon2(1.1 * np.eye(2), np.zeros((1, 1)), np.ones((1, 1)), 0.2)


def test_params_from_motor(motor):
    p = params_from_system(motor, 20)
    Z = true_Z(motor, 20)
    assert p.rho_G == pytest.approx(np.linalg.norm(Z[:, :2], 2))
    assert p.sigma_omega == pytest.approx(math.sqrt(np.linalg.eigvalsh(motor.Q)[-1]))
    assert p.lam_min_G1 > 0


def test_motor_report(motor):
    p = params_from_system(motor, 20)
    eps0 = epsilon0_from_params(p)
    assert 0.02 < eps0 < 0.04
    with pytest.raises(ValueError):
        bounds_report(p, 0.05, 0.1)
    report = bounds_report(p, 0.02, 0.1)
    assert report.N0 > report.N_G > 0
    data = json.loads(report.to_json())
    assert data["inputs"] == dataclasses.asdict(p)
    assert data["epsilon_G"] == 0.02
