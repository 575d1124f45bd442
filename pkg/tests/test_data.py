import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ddkf.data import TrajectoryBatch, assemble_batch, collect_batch, load_batch, persistent_excitation_check, save_batch
from ddkf.errors import AssumptionViolation, BatchParseError, CovarianceError, DimensionError
from ddkf.system import LtiSystem

from conftest import random_system


def brute_force_response(sys, x0, inputs):
    """Outputs y_0..y_L of the noise-free plant by direct iteration."""
    x = np.array(x0, dtype=float)
    ys = [sys.C @ x]
    for u in inputs:
        x = sys.A @ x + sys.B @ u
        ys.append(sys.C @ x)
    return np.concatenate(ys)


def test_motor_batch_layout(motor):
    b = collect_batch(motor, 1000, 20, rng=0)
    assert b.dims == (1000, 20, 2, 2, 1)
    assert b.U.shape == (40, 1000) and b.Y.shape == (21, 1000) and b.X0_mean.shape == (2, 1000)
    assert b.seed == 0 and b.sigma_x0 == 100.0 and b.sigma_u == 100.0
    # default excitation scale
    assert 80 < np.std(b.U) < 120 and 80 < np.std(b.X0_mean) < 120


def test_zero_everything_gives_zero_outputs(motor):
    b = collect_batch(motor.noise_free(), 1, 2, sigma_x0=0.0, sigma_u=0.0, rng=1)
    assert np.array_equal(b.Y, np.zeros((3, 1)))


def test_scalar_integrator_column():
    sys = LtiSystem(A=[[1.0]], B=[[1.0]], C=[[1.0]], Q=[[0.0]], R=[[0.0]], x0_mean=[0.0], P0=[[0.0]])
    b = assemble_batch(sys, [[1.0]], np.ones((4, 1)), np.random.default_rng(0))
    np.testing.assert_array_equal(b.Y[:, 0], [1, 2, 3, 4, 5])


def test_columns_follow_noise_free_dynamics(motor):
    quiet = motor.noise_free()
    b = collect_batch(quiet, 5, 20, rng=3)
    for i in range(5):
        inputs = b.U[:, i].reshape(20, 2)
        np.testing.assert_allclose(b.Y[:, i], brute_force_response(quiet, b.X0_mean[:, i], inputs), rtol=1e-12, atol=1e-9)


def test_noise_realizations_reproduce_outputs(motor):
    b = collect_batch(motor, 4, 20, rng=7, keep_noise=True)
    assert b.has_noise
    for i in range(4):
        x = b.X0_mean[:, i] + b.Xi[:, i]
        W = b.Omega[:, i].reshape(20, 2)
        V = b.V[:, i].reshape(21, 1)
        ys = [motor.C @ x + V[0]]
        for h in range(20):
            x = motor.A @ x + motor.B @ b.U[2 * h : 2 * h + 2, i] + W[h]
            ys.append(motor.C @ x + V[h + 1])
        np.testing.assert_allclose(b.Y[:, i], np.concatenate(ys), atol=1e-9)


def test_short_horizon_is_rejected(motor):
    with pytest.raises(AssumptionViolation):
        collect_batch(motor, 10, 1, rng=0)
    with pytest.raises(AssumptionViolation):
        TrajectoryBatch(U=np.zeros((2, 3)), Y=np.zeros((2, 3)), X0_mean=np.zeros((2, 3)), L=1)


def test_bad_covariance_is_rejected(motor):
    with pytest.raises(CovarianceError):
        collect_batch(motor, 10, 20, P_xi=np.diag([1.0, -1.0]), rng=0)


def test_inconsistent_columns_are_rejected():
    with pytest.raises(DimensionError):
        TrajectoryBatch(U=np.zeros((4, 3)), Y=np.zeros((3, 2)), X0_mean=np.zeros((2, 3)), L=2)


def test_collect_is_deterministic(motor):
    a = collect_batch(motor, 50, 20, rng=11)
    b = collect_batch(motor, 50, 20, rng=11)
    assert a == b


def test_excitation_check(motor):
    ok, rank, smin = persistent_excitation_check(collect_batch(motor, 1000, 20, rng=0))
    assert ok and rank == 42 and smin > 0
    ok, rank, smin = persistent_excitation_check(collect_batch(motor, 30, 20, rng=0))
    assert not ok and rank == 30 and smin == 0.0
    one = collect_batch(motor, 1, 20, rng=0)
    dup = TrajectoryBatch(U=np.repeat(one.U, 100, axis=1), Y=np.repeat(one.Y, 100, axis=1),
                          X0_mean=np.repeat(one.X0_mean, 100, axis=1), L=20)
    ok, rank, _ = persistent_excitation_check(dup)
    assert not ok and rank == 1


@given(st.integers(0, 1000))
def test_excitation_check_is_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    sys = random_system(rng, n=2, m=1, p=1)
    N = int(rng.integers(5, 40))
    b = collect_batch(sys, N, 3, rng=rng)
    perm = rng.permutation(N)
    shuffled = TrajectoryBatch(U=b.U[:, perm], Y=b.Y[:, perm], X0_mean=b.X0_mean[:, perm], L=b.L)
    r1, r2 = persistent_excitation_check(b), persistent_excitation_check(shuffled)
    assert r1[0] == r2[0] and r1[1] == r2[1]
    assert abs(r1[2] - r2[2]) <= 1e-9 * max(1.0, r1[2])


def test_round_trip_is_bit_exact(motor, tmp_path):
    b = collect_batch(motor, 30, 20, rng=2, keep_noise=True)
    path = tmp_path / "b.batch"
    save_batch(b, path)
    back = load_batch(path)
    assert back == b
    assert np.array_equal(back.Omega, b.Omega)


def test_round_trip_without_generation_metadata(tmp_path):
    b = TrajectoryBatch(U=np.arange(6.0).reshape(2, 3) / 7, Y=np.ones((3, 3)), X0_mean=np.ones((1, 3)) * np.pi, L=2)
    save_batch(b, tmp_path / "x")
    assert load_batch(tmp_path / "x") == b


def test_wrong_row_length_names_expected_count(motor, tmp_path):
    b = collect_batch(motor, 3, 20, rng=2)
    path = tmp_path / "b.batch"
    save_batch(b, path)
    lines = path.read_text().splitlines()
    y_header = next(i for i, line in enumerate(lines) if line.startswith("[Y]"))
    lines[y_header + 2] = " ".join(lines[y_header + 2].split()[:-1])
    path.write_text("\n".join(lines))
    with pytest.raises(BatchParseError) as err:
        load_batch(path)
    assert "(L+1)*p = 21" in str(err.value)
    assert err.value.line == y_header + 3


def test_garbage_field_reports_offset(motor, tmp_path):
    b = collect_batch(motor, 2, 20, rng=2)
    path = tmp_path / "b.batch"
    save_batch(b, path)
    lines = path.read_text().splitlines()
    fields = lines[3].split()
    fields[1] = "abc"
    lines[3] = " ".join(fields)
    path.write_text("\n".join(lines))
    with pytest.raises(BatchParseError) as err:
        load_batch(path)
    assert err.value.line == 4 and err.value.offset == 1


def test_missing_magic_is_rejected(tmp_path):
    (tmp_path / "x").write_text("hello\n")
    with pytest.raises(BatchParseError):
        load_batch(tmp_path / "x")


def test_shipped_fixture(fixture_batch_path, motor):
    b = load_batch(fixture_batch_path)
    assert b.dims == (1000, 20, 2, 2, 1)
    assert b == collect_batch(motor, 1000, 20, rng=0)
