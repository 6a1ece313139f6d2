import dataclasses
import math

import numpy as np
import pytest

from cavitychain import dynamics
from cavitychain.dynamics import (
    DensityMatrix,
    TrajectoryOptions,
    apply_cavity_jump,
    average_trajectories,
    continue_trajectory,
    insert_error,
    jump_weights,
    oracle_evolution,
    rk4_step,
    run_trajectory,
    snapshot_hash,
    trajectory_rng,
)
from cavitychain.exceptions import (
    CapacityError,
    DegenerateJumpError,
    IntegrationError,
    NumericError,
)
from cavitychain.hilbert import build_space

from .test_hamiltonian import make_instance


@pytest.fixture(scope="module")
def space2():
    return build_space(2, 2)


def basis_state(space, qubits, cavities):
    psi = np.zeros(space.dim, dtype=complex)
    psi[space.index_of(qubits, cavities)] = 1.0
    return psi


# ---------------------------------------------------------------------------
# rk4_step


def test_rk4_phase_accuracy():
    # diagonal generator: exact propagator is e^{-i w dt}, local error O(dt^5)
    w = 1.3
    h = np.diag([0.0, w]).astype(complex)
    psi = np.array([1.0, 1.0], dtype=complex) / math.sqrt(2)
    dt = 0.1
    out = rk4_step(psi, lambda t: h, 0.0, dt)
    exact = psi * np.array([1.0, np.exp(-1j * w * dt)])
    assert np.max(np.abs(out - exact)) < (w * dt) ** 5 / 60


def test_rk4_decay_accuracy():
    # anti-Hermitian part: H = -i(g/2) n gives amplitude decay e^{-g dt / 2}
    g = 0.8
    h = np.diag([0.0, -0.5j * g])
    psi = np.array([0.0, 1.0], dtype=complex)
    dt = 0.1
    out = rk4_step(psi, lambda t: h, 0.0, dt)
    assert abs(out[1] - math.exp(-0.5 * g * dt)) < (g * dt) ** 5 / 60
    assert out[0] == 0.0


def test_rk4_zero_hamiltonian_identity():
    psi = np.array([0.6, 0.8j], dtype=complex)
    out = rk4_step(psi, lambda t: np.zeros((2, 2)), 5.0, 0.3)
    assert np.array_equal(out, psi)


def test_rk4_rejects_nonpositive_dt():
    psi = np.ones(2, dtype=complex)
    with pytest.raises(ValueError):
        rk4_step(psi, lambda t: np.eye(2), 0.0, 0.0)
    with pytest.raises(ValueError):
        rk4_step(psi, lambda t: np.eye(2), 0.0, -0.1)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_rk4_flags_nonfinite_output():
    psi = np.ones(2, dtype=complex)
    bad = np.full((2, 2), np.inf)
    with pytest.raises(IntegrationError):
        rk4_step(psi, lambda t: bad, 0.0, 0.1)


# ---------------------------------------------------------------------------
# rng streams and jump helpers


def test_trajectory_rng_reproducible_and_independent():
    a = trajectory_rng(123, 5).random(4)
    b = trajectory_rng(123, 5).random(4)
    c = trajectory_rng(123, 6).random(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_jump_weights_hand_case(space2):
    psi = (basis_state(space2, 0, 0b01) + basis_state(space2, 0, 0b11)) \
        / math.sqrt(2)
    w = jump_weights(space2, psi)
    # site 1 occupied in both branches, site 2 in one
    assert np.allclose(w, [1.0, 0.5])


def test_apply_cavity_jump_moves_one_photon(space2):
    psi = basis_state(space2, 0b10, 0b11)
    out = apply_cavity_jump(space2, psi, 1)
    assert np.allclose(out, basis_state(space2, 0b10, 0b10))


def test_apply_cavity_jump_on_empty_cavity_degenerate(space2):
    psi = basis_state(space2, 0b01, 0b00)
    with pytest.raises(DegenerateJumpError):
        apply_cavity_jump(space2, psi, 2)


# ---------------------------------------------------------------------------
# trajectories


def lossless(inst):
    return dataclasses.replace(inst, gamma_c=0.0)


def test_lossless_trajectory_has_no_jumps(space2):
    inst = lossless(make_instance(2, [0.03, -0.07], [0.0, 0.0], n_cycles=2))
    res = run_trajectory(space2, inst, 0, 0)
    assert res.jumps == []
    assert not res.annihilated
    assert len(res.snapshots) == 2
    for s in res.snapshots:
        assert abs(np.vdot(s, s).real - 1.0) < 1e-12


def test_sidebandless_vacuum_cavities_never_jump(space2):
    # without the sideband no photon ever enters a cavity, so even at a
    # large loss rate nothing can be emitted
    inst = make_instance(2, [0.03, -0.07], [0.0, 0.0], n_cycles=2,
                         om_peak=0.0)
    inst = dataclasses.replace(inst, gamma_c=0.5)
    res = run_trajectory(space2, inst, 0, 0)
    assert res.jumps == []


def test_same_index_reruns_bitwise_identical(space2):
    inst = make_instance(2, [0.03, -0.07], [0.0, 0.0], n_cycles=2)
    inst = dataclasses.replace(inst, gamma_c=0.2)
    a = run_trajectory(space2, inst, 99, 0)
    b = run_trajectory(space2, inst, 99, 0)
    assert a.jumps == b.jumps
    for x, y in zip(a.snapshots, b.snapshots):
        assert np.array_equal(x, y)


def test_distinct_indices_give_distinct_jump_times(space2):
    inst = make_instance(2, [0.03, -0.07], [0.0, 0.0], n_cycles=2,
                         om_peak=0.0)
    inst = dataclasses.replace(inst, gamma_c=0.04)
    init = basis_state(space2, 0b01, 0b11)
    a = run_trajectory(space2, inst, 7, 0, initial=init)
    b = run_trajectory(space2, inst, 7, 1, initial=init)
    assert a.jumps and b.jumps
    assert a.jumps != b.jumps


DECAY_RATE = 0.04


@pytest.fixture(scope="module")
def decay_ensemble(space2):
    # two preloaded cavity photons, sideband off: pure exponential decay
    inst = make_instance(2, [0.03, -0.07], [0.0, 0.0], n_cycles=2,
                         om_peak=0.0)
    inst = dataclasses.replace(inst, gamma_c=DECAY_RATE)
    init = basis_state(space2, 0b01, 0b11)
    runs = [run_trajectory(space2, inst, 7, i, initial=init)
            for i in range(100)]
    return inst, init, runs


def test_jump_rate_matches_pure_decay(space2, decay_ensemble):
    # each photon survives to time T with probability e^{-gamma T}, and
    # every jump lowers the cavity total by exactly one
    inst, init, runs = decay_ensemble
    p = 1.0 - math.exp(-DECAY_RATE * inst.total_duration)

    evo = oracle_evolution(space2, inst, initial=init)
    assert abs(evo.expected_losses[-1] - 2 * p) < 1e-6

    mean_jumps = np.mean([len(r.jumps) for r in runs])
    assert abs(mean_jumps - 2 * p) < 0.2
    for r in runs:
        n_c = space2.cavity_count @ (np.abs(r.snapshots[-1]) ** 2)
        assert abs(n_c - (2 - len(r.jumps))) < 1e-8


def test_jump_times_lie_inside_the_schedule(space2):
    inst = make_instance(2, [0.03, -0.07], [0.0, 0.0], n_cycles=2,
                         om_peak=0.0)
    inst = dataclasses.replace(inst, gamma_c=0.1)
    init = basis_state(space2, 0b01, 0b11)
    for i in range(20):
        res = run_trajectory(space2, inst, 21, i, initial=init)
        for t, site in res.jumps:
            assert 0.0 < t <= inst.total_duration
            assert site in (1, 2)
        assert [t for t, _ in res.jumps] == sorted(t for t, _ in res.jumps)


def test_dt_refinement_converges(space2):
    inst = lossless(make_instance(2, [0.03, -0.07], [0.0, 0.0], n_cycles=2))
    coarse = run_trajectory(space2, inst, 5, 0)
    fine = run_trajectory(space2, inst, 5, 0, TrajectoryOptions(dt=0.01))
    for a, b in zip(coarse.snapshots, fine.snapshots):
        assert np.max(np.abs(a - b)) < 1e-9


def test_continue_trajectory_matches_full_run(space2):
    inst = lossless(make_instance(2, [0.03, -0.07], [0.0, 0.0], n_cycles=4))
    full = run_trajectory(space2, inst, 3, 0)
    cont = continue_trajectory(space2, inst, full.snapshots[1], 2,
                               trajectory_rng(3, 0))
    assert len(cont.snapshots) == 2
    for a, b in zip(cont.snapshots, full.snapshots[2:]):
        assert np.max(np.abs(a - b)) < 1e-12


def test_continue_trajectory_rejects_bad_start(space2):
    inst = make_instance(2, [0.03, -0.07], [0.0, 0.0], n_cycles=2)
    psi = basis_state(space2, 0b01, 0)
    with pytest.raises(ValueError):
        continue_trajectory(space2, inst, psi, 2, trajectory_rng(0, 0))
    with pytest.raises(ValueError):
        continue_trajectory(space2, inst, psi, -1, trajectory_rng(0, 0))


# ---------------------------------------------------------------------------
# error insertion


def test_insert_error_validates_arguments():
    opts = TrajectoryOptions()
    with pytest.raises(ValueError):
        insert_error(opts, "x", 1, 0.0)
    with pytest.raises(ValueError):
        insert_error(opts, "z", 0, 0.0)
    with pytest.raises(ValueError):
        insert_error(opts, "loss", 1, -1.0)
    insert_error(opts, "z", 1, 3.0)
    insert_error(opts, "loss", 2, 1.5)
    assert [e.kind for e in opts.errors] == ["z", "loss"]


def test_error_beyond_schedule_rejected(space2):
    inst = make_instance(2, [0.03, -0.07], [0.0, 0.0], n_cycles=2)
    opts = TrajectoryOptions()
    insert_error(opts, "z", 1, inst.total_duration + 1.0)
    with pytest.raises(ValueError):
        run_trajectory(space2, inst, 0, 0, opts)


def test_z_error_at_start_flips_occupied_amplitudes(space2):
    # a z error on the initially occupied site multiplies the whole state
    # by -1; the evolution is linear, so every later snapshot is the exact
    # negation of the clean run
    inst = lossless(make_instance(2, [0.03, -0.07], [0.0, 0.0], n_cycles=2))
    clean = run_trajectory(space2, inst, 0, 0)
    opts = TrajectoryOptions()
    insert_error(opts, "z", 1, 0.0)
    flipped = run_trajectory(space2, inst, 0, 0, opts)
    assert flipped.error_insertions == opts.errors
    for a, b in zip(flipped.snapshots, clean.snapshots):
        assert np.array_equal(a, -b)


def test_z_error_on_empty_site_is_identity(space2):
    inst = lossless(make_instance(2, [0.03, -0.07], [0.0, 0.0], n_cycles=1))
    clean = run_trajectory(space2, inst, 0, 0)
    opts = TrajectoryOptions()
    insert_error(opts, "z", 2, 0.0)
    res = run_trajectory(space2, inst, 0, 0, opts)
    assert np.array_equal(res.snapshots[0], clean.snapshots[0])


def test_double_z_error_cancels(space2):
    inst = lossless(make_instance(2, [0.03, -0.07], [0.0, 0.0], n_cycles=2))
    clean = run_trajectory(space2, inst, 0, 0)
    opts = TrajectoryOptions()
    insert_error(opts, "z", 1, 12.34)
    insert_error(opts, "z", 1, 12.34)
    res = run_trajectory(space2, inst, 0, 0, opts)
    for a, b in zip(res.snapshots, clean.snapshots):
        assert np.max(np.abs(a - b)) < 1e-10


def test_mid_cycle_z_error_changes_the_state(space2):
    inst = lossless(make_instance(2, [0.03, -0.07], [0.0, 0.0], n_cycles=2))
    clean = run_trajectory(space2, inst, 0, 0)
    opts = TrajectoryOptions()
    insert_error(opts, "z", 1, 25.0)
    res = run_trajectory(space2, inst, 0, 0, opts)
    # cycle 0 finished before the error, cycle 1 carries it
    assert np.array_equal(res.snapshots[0], clean.snapshots[0])
    overlap = abs(np.vdot(res.snapshots[1], clean.snapshots[1]))
    assert overlap < 1.0 - 1e-3


def test_loss_error_on_occupied_site(space2):
    # sideband off so the vacuum reached by removing the lone excitation
    # stays the vacuum
    inst = lossless(make_instance(2, [0.03, -0.07], [0.0, 0.0], n_cycles=1,
                                  om_peak=0.0))
    opts = TrajectoryOptions()
    insert_error(opts, "loss", 1, 0.0)
    res = run_trajectory(space2, inst, 0, 0, opts)
    assert not res.annihilated
    assert abs(abs(res.snapshots[0][space2.index_of(0, 0)]) - 1.0) < 1e-12


def test_loss_error_on_empty_site_annihilates(space2):
    inst = lossless(make_instance(2, [0.03, -0.07], [0.0, 0.0], n_cycles=2))
    opts = TrajectoryOptions()
    insert_error(opts, "loss", 2, 0.0)
    res = run_trajectory(space2, inst, 0, 0, opts)
    assert res.annihilated
    assert res.snapshots == []


# ---------------------------------------------------------------------------
# density-matrix reference


def test_oracle_pure_decay_analytic(space2):
    gamma = 0.05
    inst = make_instance(2, [0.0, 0.0], [0.0, 0.0], n_cycles=1,
                         g_peak=0.0, om_peak=0.0)
    inst = dataclasses.replace(inst, gamma_c=gamma, dispersive_shift=0.0)
    init = basis_state(space2, 0, 0b01)
    evo = oracle_evolution(space2, inst, initial=init)
    T = inst.total_duration
    pops = evo.snapshots[0].populations()
    assert abs(pops[space2.index_of(0, 0b01)] - math.exp(-gamma * T)) < 1e-12
    assert abs(pops[space2.index_of(0, 0)] - (1 - math.exp(-gamma * T))) < 1e-12
    assert abs(evo.traces[0] - 1.0) < 1e-12
    assert abs(evo.expected_losses[0] - (1 - math.exp(-gamma * T))) < 1e-6


def test_oracle_trace_preserved_with_drives(space2):
    inst = make_instance(2, [0.03, -0.07], [0.0, 0.0], n_cycles=3)
    inst = dataclasses.replace(inst, gamma_c=0.05)
    evo = oracle_evolution(space2, inst)
    assert np.max(np.abs(evo.traces - 1.0)) < 1e-10
    assert np.all(np.diff(evo.expected_losses) >= 0)
    for snap in evo.snapshots:
        snap.validate()


def test_oracle_lossless_purity(space2):
    inst = lossless(make_instance(2, [0.03, -0.07], [0.0, 0.0], n_cycles=2))
    evo = oracle_evolution(space2, inst)
    for snap in evo.snapshots:
        assert abs(snap.purity() - 1.0) < 1e-9
    assert np.max(evo.expected_losses) == 0.0


def test_oracle_refuses_large_dimension():
    space = build_space(5, 3)
    assert space.dim == 832
    inst = make_instance(5, [0.0] * 5, [0.0] * 5)
    with pytest.raises(CapacityError):
        oracle_evolution(space, inst)


def test_density_matrix_validate_rejects_defects(space2):
    dim = space2.dim
    rho = np.zeros((dim, dim), dtype=complex)
    rho[0, 0] = 1.0

    bad = rho.copy()
    bad[0, 1] = 0.1
    with pytest.raises(NumericError):
        DensityMatrix(space2, bad).validate()

    bad = 1.5 * rho
    with pytest.raises(NumericError):
        DensityMatrix(space2, bad).validate()

    bad = rho.copy()
    bad[0, 0], bad[1, 1] = 1.5, -0.5
    with pytest.raises(NumericError):
        DensityMatrix(space2, bad).validate()

    DensityMatrix(space2, rho).validate()


# ---------------------------------------------------------------------------
# trajectory averaging


def test_average_single_trajectory_is_pure(space2):
    inst = lossless(make_instance(2, [0.03, -0.07], [0.0, 0.0], n_cycles=1))
    res = run_trajectory(space2, inst, 0, 0)
    rho = average_trajectories([res], 0)
    rho.validate()
    assert abs(rho.purity() - 1.0) < 1e-10


def test_average_reproduces_mixture(space2):
    inst = lossless(make_instance(2, [0.03, -0.07], [0.0, 0.0], n_cycles=1))
    a = run_trajectory(space2, inst, 0, 0)
    b = dataclasses.replace(
        a, snapshots=[basis_state(space2, 0b01, 0)])
    c = dataclasses.replace(
        a, snapshots=[basis_state(space2, 0b10, 0)])
    rho = average_trajectories([b, c], 0)
    rho.validate()
    assert abs(rho.purity() - 0.5) < 1e-12
    pops = rho.populations()
    assert abs(pops[space2.index_of(0b01, 0)] - 0.5) < 1e-12
    assert abs(pops[space2.index_of(0b10, 0)] - 0.5) < 1e-12


def test_average_rejects_bad_inputs(space2):
    inst = lossless(make_instance(2, [0.03, -0.07], [0.0, 0.0], n_cycles=1))
    res = run_trajectory(space2, inst, 0, 0)
    with pytest.raises(ValueError):
        average_trajectories([], 0)
    with pytest.raises(ValueError):
        average_trajectories([res], 1)
    other = dataclasses.replace(res, instance=dataclasses.replace(inst, seed=9))
    with pytest.raises(ValueError):
        average_trajectories([res, other], 0)
    dead = dataclasses.replace(res, annihilated=True)
    with pytest.raises(ValueError):
        average_trajectories([res, dead], 0)


def test_trajectory_average_approaches_oracle(space2, decay_ensemble):
    # 100 trajectories reproduce the master equation populations; the bound
    # reflects the sampling noise of the fixed seed
    inst, init, runs = decay_ensemble
    evo = oracle_evolution(space2, inst, initial=init)
    rho = average_trajectories(runs, 1)
    rho.validate()
    dev = np.max(np.abs(rho.populations() - evo.snapshots[1].populations()))
    assert dev < 0.08


# ---------------------------------------------------------------------------
# snapshot digests


def test_snapshot_hash_frozen_value():
    v = np.array([3 / 5, 4j / 5], dtype=complex)
    assert snapshot_hash(v) == (
        "29dd9f4a2a46a1c967e496cca81c4769cc37d80ead1b14e62d5e0f481c071fa1")


def test_snapshot_hash_distinguishes_states():
    a = np.array([1.0, 0.0], dtype=complex)
    b = np.array([0.0, 1.0], dtype=complex)
    assert snapshot_hash(a) != snapshot_hash(b)
    assert snapshot_hash(a) == snapshot_hash(a.copy())
