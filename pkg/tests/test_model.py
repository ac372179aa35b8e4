import numpy as np
import pytest

from lipfd.model import (
    ContractViolation, LipschitzPlant, NonlinearMap, ResidualStructure,
    UncertaintyEnvelope, check_psi_lipschitz, estimate_lipschitz_bound,
    evaluate_dynamics, evaluate_output, transform_coordinates, wrap_uncertain,
    zero_map, registry_phi,
)
from lipfd.manipulator import ManipulatorParams, build_plant, default_domain_box


PARAMS = ManipulatorParams()


def scalar_plant(a=-1.0):
    return LipschitzPlant(
        A=[[a]], B=[[0.0]], C=[[1.0]], D1=[[0.0]], D2=[[0.0]],
        Q1=[[0.0]], Q2=[[0.0]], phi=zero_map(1),
    )


# ---------------------------------------------------------------------------
# evaluate_dynamics / evaluate_output
# ---------------------------------------------------------------------------

def test_dynamics_zero_fixed_point():
    plant = scalar_plant()
    out = evaluate_dynamics(plant, [0.0], [0.0], [0.0], [0.0])
    assert out == pytest.approx([0.0])


def test_dynamics_manipulator_gravity_column():
    plant = build_plant(PARAMS, "symbolic")
    out = evaluate_dynamics(plant, [0, 0, 0, np.pi / 2], [0.0], np.zeros(3), np.zeros(2))
    assert out == pytest.approx([0.0, 0.0, -PARAMS.mgh, 0.0], abs=1e-12)
    assert PARAMS.mgh == pytest.approx(0.3087, abs=1e-6)


def test_dynamics_paper_literal_first_column():
    plant = build_plant(PARAMS, "paper_literal")
    out = evaluate_dynamics(plant, [1, 0, 0, 0], [0.0], np.zeros(3), np.zeros(2))
    assert out == pytest.approx([-1.2432, 270.2703, 0.0, 0.0], abs=1e-12)


def test_dynamics_dimension_mismatch():
    plant = scalar_plant()
    with pytest.raises(ContractViolation):
        evaluate_dynamics(plant, [0.0, 1.0], [0.0], [0.0], [0.0])


def test_output_examples():
    plant = build_plant(PARAMS, "paper_literal")
    assert evaluate_output(plant, np.zeros(4), np.zeros(3), np.zeros(2)) == pytest.approx(np.zeros(2))
    y = evaluate_output(plant, [0.0, 0.3, 0.0, 0.2], np.zeros(3), np.zeros(2))
    assert y == pytest.approx([0.5, 0.2])
    y = evaluate_output(plant, np.zeros(4), [1.0, 0.0, 0.0], np.zeros(2))
    assert y == pytest.approx([-0.001, 0.0])


# ---------------------------------------------------------------------------
# Lipschitz bound estimation
# ---------------------------------------------------------------------------

def test_lipschitz_estimate_zero_map():
    assert estimate_lipschitz_bound(zero_map(3), 100, seed=0) == 0.0


def test_lipschitz_estimate_manipulator_gravity():
    plant = build_plant(PARAMS, "symbolic")
    est = estimate_lipschitz_bound(plant.phi, 10_000, seed=42)
    assert est == pytest.approx(PARAMS.mgh, rel=0.01)
    assert est <= plant.phi.declared_lipschitz_bound * (1 + 1e-9)


def test_lipschitz_estimate_paper_amplitude():
    plant = build_plant(PARAMS, "paper_literal")
    est = estimate_lipschitz_bound(plant.phi, 10_000, seed=7)
    assert est == pytest.approx(0.33, rel=0.01)


def test_lipschitz_estimate_monotone_in_samples():
    plant = build_plant(PARAMS, "symbolic")
    estimates = [estimate_lipschitz_bound(plant.phi, n, seed=3)
                 for n in (500, 1000, 2000, 4000)]
    assert all(a <= b + 1e-15 for a, b in zip(estimates, estimates[1:]))


def test_lipschitz_estimate_deterministic():
    phi = build_plant(PARAMS, "symbolic").phi
    assert estimate_lipschitz_bound(phi, 1000, seed=5) == estimate_lipschitz_bound(phi, 1000, seed=5)


def test_lipschitz_estimate_preconditions():
    with pytest.raises(ContractViolation):
        estimate_lipschitz_bound(zero_map(2), 1, seed=0)
    bad = NonlinearMap(lambda x, u=None: np.zeros(1), 0.0, [[0.0, 0.0]])
    with pytest.raises(ContractViolation):
        estimate_lipschitz_bound(bad, 10, seed=0)


# ---------------------------------------------------------------------------
# wrap_uncertain
# ---------------------------------------------------------------------------

def test_wrap_zero_envelope_is_identity():
    plant = build_plant(PARAMS, "symbolic")
    env = UncertaintyEnvelope(Ma=np.zeros((4, 1)), Na=np.zeros((1, 4)),
                              Mb=np.zeros((4, 1)), Nb=np.zeros((1, 1)))
    wrapped = wrap_uncertain(plant, env, [[0.0]])
    x = np.array([0.3, -0.2, 0.1, 1.0])
    assert wrapped.phi(x, [0.5]) == pytest.approx(plant.phi(x, [0.5]))
    assert wrapped.phi.declared_lipschitz_bound == plant.phi.declared_lipschitz_bound


def test_wrap_scalar_example():
    plant = scalar_plant(a=-1.0)
    env = UncertaintyEnvelope(Ma=[[1.0]], Na=[[1.0]], Mb=[[0.0]], Nb=[[0.0]])
    wrapped = wrap_uncertain(plant, env, [[1.0]])
    assert wrapped.phi([2.0], [0.0]) == pytest.approx([2.0])
    assert wrapped.phi.declared_lipschitz_bound == pytest.approx(1.0)


def test_wrap_rejects_expansion():
    plant = scalar_plant()
    env = UncertaintyEnvelope(Ma=[[1.0]], Na=[[1.0]], Mb=[[0.0]], Nb=[[0.0]])
    with pytest.raises(ContractViolation):
        wrap_uncertain(plant, env, [[1.5]])


def test_wrap_sign_difference_exact():
    # with phi1 = 0 the F and -F wraps differ by exactly 2 Ma F Na x + 2 Mb F Nb u
    rng = np.random.default_rng(0)
    plant = LipschitzPlant(A=np.eye(3) * -1, B=rng.normal(size=(3, 2)),
                           C=np.eye(3), D1=np.zeros((3, 1)), D2=np.zeros((3, 1)),
                           Q1=np.zeros((3, 1)), Q2=np.zeros((3, 1)), phi=zero_map(3))
    Ma, Na = rng.normal(size=(3, 2)), rng.normal(size=(2, 3))
    Mb, Nb = rng.normal(size=(3, 2)), rng.normal(size=(2, 2))
    F = rng.normal(size=(2, 2))
    F /= 2 * np.linalg.norm(F, 2)
    env = UncertaintyEnvelope(Ma=Ma, Na=Na, Mb=Mb, Nb=Nb)
    plus = wrap_uncertain(plant, env, F)
    minus = wrap_uncertain(plant, env, -F)
    x, u = rng.normal(size=3), rng.normal(size=2)
    diff = plus.phi(x, u) - minus.phi(x, u)
    expected = 2 * Ma @ F @ Na @ x + 2 * Mb @ F @ Nb @ u
    np.testing.assert_array_equal(diff, expected)


def test_wrap_bound_dominates_sampling_oracle():
    # perturb the same state equation the gravity term lives in, so the
    # combined slope genuinely exceeds the nominal constant somewhere
    plant = build_plant(PARAMS, "symbolic")
    k = 0.05 * PARAMS.mgh
    env = UncertaintyEnvelope(Ma=np.array([[0.0], [0.0], [1.0], [0.0]]),
                              Na=np.array([[0.0, 0.0, 0.0, k]]),
                              Mb=np.zeros((4, 1)), Nb=np.zeros((1, 1)))
    wrapped = wrap_uncertain(plant, env, [[1.0]])
    est = estimate_lipschitz_bound(wrapped.phi, 10_000, seed=11)
    assert est <= wrapped.phi.declared_lipschitz_bound * (1 + 1e-9)
    # inflation is real: the wrapped map exceeds the nominal declared bound
    assert est > plant.phi.declared_lipschitz_bound


# ---------------------------------------------------------------------------
# transform_coordinates
# ---------------------------------------------------------------------------

def test_transform_identity():
    plant = build_plant(PARAMS, "symbolic")
    same = transform_coordinates(plant, np.eye(4))
    np.testing.assert_allclose(same.A, plant.A, atol=1e-14)
    np.testing.assert_allclose(same.C, plant.C, atol=1e-14)
    x = np.array([0.1, 0.2, -0.3, 0.7])
    assert same.phi(x, [0.0]) == pytest.approx(plant.phi(x, [0.0]))


def test_transform_rejects_singular():
    plant = build_plant(PARAMS, "symbolic")
    T = np.eye(4)
    T[2, 2] = 0.0
    with pytest.raises(ContractViolation):
        transform_coordinates(plant, T)


def test_transform_matrices():
    plant = build_plant(PARAMS, "symbolic")
    rng = np.random.default_rng(1)
    T = np.eye(4) + 0.2 * rng.normal(size=(4, 4))
    moved = transform_coordinates(plant, T)
    Tinv = np.linalg.inv(T)
    np.testing.assert_allclose(moved.A, T @ plant.A @ Tinv, rtol=1e-12)
    np.testing.assert_allclose(moved.B, T @ plant.B, rtol=1e-12)
    np.testing.assert_allclose(moved.C, plant.C @ Tinv, rtol=1e-12)
    np.testing.assert_allclose(moved.D1, T @ plant.D1, rtol=1e-12)
    np.testing.assert_allclose(moved.D2, plant.D2, rtol=1e-15)
    z = T @ np.array([0.1, -0.2, 0.3, 0.5])
    np.testing.assert_allclose(moved.phi(z, [0.0]),
                               T @ plant.phi(Tinv @ z, [0.0]), rtol=1e-10, atol=1e-15)


# ---------------------------------------------------------------------------
# ResidualStructure
# ---------------------------------------------------------------------------

def test_residual_structure_psi_lipschitz_sampled():
    from lipfd.manipulator import build_residual_structure
    rs = build_residual_structure(PARAMS, gamma=3.65)
    worst = check_psi_lipschitz(rs, samples=10_000, seed=0)
    assert worst <= 1e-12


def test_residual_structure_rejects_negative_upsilon():
    from lipfd.model import PSI_REGISTRY
    with pytest.raises(ContractViolation):
        ResidualStructure(
            M1=np.eye(2), M2=np.zeros((2, 2)), M3=np.eye(2),
            N1=np.zeros((2, 1)), N2=np.zeros((2, 1)), N3=np.zeros((2, 1)),
            Psi=PSI_REGISTRY["none"](r=2), Upsilon=[[0.0, 0.0], [0.0, -1.0]],
        )


def test_residual_structure_default_m3n_sign():
    from lipfd.model import PSI_REGISTRY
    rs = ResidualStructure(
        M1=np.eye(2), M2=np.zeros((2, 2)), M3=np.eye(2),
        N1=np.zeros((2, 1)), N2=np.zeros((2, 1)), N3=np.zeros((2, 1)),
        Psi=PSI_REGISTRY["none"](r=2), Upsilon=[[0.0, 0.0], [0.0, 0.5]],
    )
    np.testing.assert_allclose(rs.M3n, [[1.0, 0.0], [0.0, 0.5]])
