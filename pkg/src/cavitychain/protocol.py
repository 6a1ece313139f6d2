"""Randomized protocol instances and multi-run orchestration.

A protocol instance fixes the disorder realization (qubit and cavity
detunings) and the randomized cycle durations.  Two detuning schemes exist:

* A: qubit detunings uniform in 2π·[−0.020, 0.020] rad/ns, cavities resonant;
* B: qubit detunings uniform in 2π·[−0.005, 0.005] rad/ns, cavity detunings a
  random permutation of the single-particle hopping energies at peak coupling.

Ensembles run many instances, each with many trajectories; every random
stream derives from (master seed, instance index, trajectory index) so
results never depend on scheduling or worker count.
"""

from __future__ import annotations

import math
import multiprocessing
from collections import Counter
from dataclasses import dataclass, replace

import numpy as np

from .dynamics import (
    JUMP_TIME_TOLERANCE,
    TIME_STEP,
    TrajectoryOptions,
    TrajectoryResult,
    average_trajectories,
    continue_trajectory,
    oracle_evolution,
    run_trajectory,
    trajectory_rng,
)
from .hamiltonian import (
    CAVITY_LOSS_RATE,
    COUPLER_PEAK,
    COUPLER_RAMP_INSET,
    COUPLER_RAMP_WIDTH,
    CYCLE_DURATION_RANGE,
    DISPERSIVE_SHIFT,
    NONLINEARITY,
    SIDEBAND_PEAK,
    SIDEBAND_RAMP_INSET,
    SIDEBAND_RAMP_WIDTH,
    CyclePulses,
    ProtocolInstance,
    WaveformParams,
    hopping_eigenvalues,
)
from .hilbert import HilbertSpace, OutputDistribution, build_space, qubit_marginal
from . import observables as obs

DEFAULT_CYCLES = 12
DEFAULT_CAVITY_CAP = 2
TASK_CHUNK = 8          # trajectories per pool task, fixed for determinism
_SAMPLER_KEY = 2**31    # spawn key of the error-position stream


def _round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


def default_photon_count(L: int) -> int:
    return L // 2 - 1


def initial_state(space: HilbertSpace, n0: int | None = None) -> np.ndarray:
    """Product state with n0 qubit photons on evenly spaced sites
    round((j−½)·L/n0), all cavities empty."""
    L = space.L
    if n0 is None:
        n0 = default_photon_count(L)
    if not 0 <= n0 <= L:
        raise ValueError(f"need 0 <= n0 <= L, got {n0}")
    sites = [_round_half_up((j - 0.5) * L / n0) for j in range(1, n0 + 1)]
    assert len(set(sites)) == n0, f"photon placement collided: {sites}"
    qmask = 0
    for s in sites:
        qmask |= 1 << (s - 1)
    psi = np.zeros(space.dim, dtype=complex)
    psi[space.index_of(qmask, 0)] = 1.0
    return psi


def _pulses(duration: float, g_peak: float, om_peak: float) -> CyclePulses:
    return CyclePulses(
        coupler=WaveformParams(g_peak, duration, COUPLER_RAMP_WIDTH,
                               COUPLER_RAMP_INSET),
        sideband=WaveformParams(om_peak, duration, SIDEBAND_RAMP_WIDTH,
                                SIDEBAND_RAMP_INSET),
    )


def generate_instance(L: int, parametrization: str, seed: int,
                      n_cycles: int = DEFAULT_CYCLES,
                      n0: int | None = None) -> ProtocolInstance:
    """Draw one disorder realization; deterministic in the seed."""
    if L < 2:
        raise ValueError(f"need L >= 2, got {L}")
    if parametrization not in ("A", "B"):
        raise ValueError(f"unknown parametrization {parametrization!r}")
    if n_cycles < 1:
        raise ValueError(f"need at least one cycle, got {n_cycles}")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    if parametrization == "A":
        bound = 2 * math.pi * 0.020
        h = rng.uniform(-bound, bound, L)
        h_c = np.zeros(L)
    else:
        bound = 2 * math.pi * 0.005
        h = rng.uniform(-bound, bound, L)
        h_c = rng.permutation(hopping_eigenvalues(L, COUPLER_PEAK))
    lo, hi = CYCLE_DURATION_RANGE
    durations = rng.uniform(lo, hi, n_cycles)
    inst = ProtocolInstance(
        L=L,
        parametrization=parametrization,
        h=h,
        h_c=h_c,
        delta=NONLINEARITY,
        dispersive_shift=DISPERSIVE_SHIFT,
        gamma_c=CAVITY_LOSS_RATE,
        cycles=[_pulses(float(T), COUPLER_PEAK, SIDEBAND_PEAK)
                for T in durations],
        n0=default_photon_count(L) if n0 is None else n0,
        seed=seed,
    )
    inst.validate()
    return inst


def unitary_variant(inst: ProtocolInstance,
                    extra_photon: bool = False) -> ProtocolInstance:
    """Same disorder and schedule with the sideband and loss switched off
    (number-conserving protocol, used by the error-insertion study).

    ``extra_photon`` starts the chain with one more photon than the base
    instance, the variant used to probe how sensitivity to phase noise
    depends on filling."""
    cycles = [_pulses(c.duration, c.coupler.peak, 0.0) for c in inst.cycles]
    return replace(
        inst,
        gamma_c=0.0,
        cycles=cycles,
        n0=inst.n0 + 1 if extra_photon else inst.n0,
    )


def post_select(samples, N_target: int) -> Counter:
    """Keep bitstrings whose photon number equals N_target."""
    counted = samples if isinstance(samples, Counter) else Counter(samples)
    return Counter({k: v for k, v in counted.items()
                    if int(k).bit_count() == N_target})


def instance_seed(master_seed: int, index: int) -> int:
    """Per-instance seed; adding instances never reshuffles earlier ones."""
    ss = np.random.SeedSequence(master_seed, spawn_key=(index,))
    return int(ss.generate_state(1, np.uint64)[0])


# ---------------------------------------------------------------------------
# ensembles


@dataclass
class EnsembleSpec:
    L: int
    parametrization: str = "A"
    n_instances: int = 1
    n_cycles: int = DEFAULT_CYCLES
    trajectories_per_instance: int | None = None   # None -> 6 L^2
    master_seed: int = 0
    cavity_cap: int = DEFAULT_CAVITY_CAP
    dt: float = TIME_STEP
    jump_tol: float = JUMP_TIME_TOLERANCE

    @property
    def n_trajectories(self) -> int:
        if self.trajectories_per_instance is None:
            return 6 * self.L**2
        return self.trajectories_per_instance

    def __post_init__(self):
        if self.n_cycles < 1:
            raise ValueError(f"need at least one cycle, got {self.n_cycles}")
        if self.trajectories_per_instance is not None \
                and self.trajectories_per_instance < 1:
            raise ValueError("need at least one trajectory per instance")


OBSERVABLE_NAMES = (
    "negativity",
    "qubit_negativity",
    "kl_porter_thomas",
    "ipr",
    "heavy_fraction",
    "photons_added",
    "cavity_population",
    "cumulative_losses",
)


@dataclass
class InstanceRun:
    instance: ProtocolInstance
    space: HilbertSpace
    trajectories: list[TrajectoryResult]
    distributions: list[OutputDistribution]          # per cycle
    observables: dict[str, np.ndarray]               # name -> per-cycle values


@dataclass
class EnsembleResult:
    spec: EnsembleSpec
    instances: list[InstanceRun]
    aggregate: dict[str, tuple[np.ndarray, np.ndarray]]   # mean, stderr


def _trajectory_task(args):
    L, cap, inst, indices, dt, jump_tol = args
    space = build_space(L, cap)
    options = TrajectoryOptions(dt=dt, jump_tol=jump_tol)
    out = []
    for i in indices:
        r = run_trajectory(space, inst, inst.seed, i, options)
        out.append((i, np.stack(r.snapshots) if r.snapshots else
                    np.zeros((0, space.dim), dtype=complex),
                    r.jumps, r.annihilated))
    return out


def run_trajectories(space: HilbertSpace, inst: ProtocolInstance,
                     n_trajectories: int, threads: int = 1,
                     dt: float = TIME_STEP,
                     jump_tol: float = JUMP_TIME_TOLERANCE,
                     ) -> list[TrajectoryResult]:
    """All trajectories of one instance, optionally on a worker pool.

    Tasks are fixed-size chunks and results are reassembled in trajectory
    order, so the output is identical for any thread count.
    """
    if threads <= 1:
        options = TrajectoryOptions(dt=dt, jump_tol=jump_tol)
        return [run_trajectory(space, inst, inst.seed, i, options)
                for i in range(n_trajectories)]
    chunks = [
        (space.L, space.max_cavity_total, inst,
         tuple(range(a, min(a + TASK_CHUNK, n_trajectories))), dt, jump_tol)
        for a in range(0, n_trajectories, TASK_CHUNK)
    ]
    ctx = multiprocessing.get_context("spawn")
    with ctx.Pool(threads) as pool:
        rows = [row for chunk in pool.map(_trajectory_task, chunks)
                for row in chunk]
    rows.sort(key=lambda r: r[0])
    return [
        TrajectoryResult(instance=inst, space=space,
                         snapshots=list(snaps), jumps=jumps,
                         error_insertions=[], annihilated=annihilated)
        for _, snaps, jumps, annihilated in rows
    ]


def cycle_distributions(space: HilbertSpace,
                        trajectories: list[TrajectoryResult],
                        ) -> list[OutputDistribution]:
    """Per-cycle qubit marginals of the trajectory-averaged state."""
    n_cycles = min(len(r.snapshots) for r in trajectories)
    out = []
    for k in range(n_cycles):
        weights = np.zeros(space.dim)
        for r in trajectories:
            s = r.snapshots[k]
            weights += s.real**2 + s.imag**2
        out.append(qubit_marginal(space, weights / len(trajectories)))
    return out


def instance_observables(space: HilbertSpace, inst: ProtocolInstance,
                         trajectories: list[TrajectoryResult],
                         names=OBSERVABLE_NAMES) -> dict[str, np.ndarray]:
    """The per-cycle observable suite of one finished instance."""
    n_cycles = min(len(r.snapshots) for r in trajectories)
    dists = cycle_distributions(space, trajectories)
    series = obs.number_series(trajectories)
    part = obs.default_partition(space.L)
    out: dict[str, np.ndarray] = {}
    for name in names:
        vals = np.empty(n_cycles)
        for k in range(n_cycles):
            if name == "negativity":
                rho = average_trajectories(trajectories, k)
                vals[k] = obs.negativity(rho, part)
            elif name == "qubit_negativity":
                rho = average_trajectories(trajectories, k)
                vals[k] = obs.qubit_negativity(rho, space.L)
            elif name == "kl_porter_thomas":
                vals[k] = obs.kl_from_porter_thomas(dists[k])
            elif name == "ipr":
                vals[k] = obs.ipr(dists[k])
            elif name == "heavy_fraction":
                vals[k] = obs.heavy_fraction(dists[k])
            elif name == "photons_added":
                vals[k] = series.photons_added[k]
            elif name == "cavity_population":
                vals[k] = series.cavity_population[k]
            elif name == "cumulative_losses":
                vals[k] = series.cumulative_losses[k]
            else:
                raise ValueError(f"unknown observable {name!r}")
        out[name] = vals
    return out


def run_ensemble(spec: EnsembleSpec, threads: int = 1,
                 observable_names=OBSERVABLE_NAMES,
                 on_instance=None) -> EnsembleResult:
    """Run every instance of the ensemble and aggregate across instances.

    ``on_instance(index, run)`` fires as each instance finishes so callers
    can persist partial results; an exception later on leaves those intact.
    """
    space = build_space(spec.L, spec.cavity_cap)
    runs: list[InstanceRun] = []
    for idx in range(spec.n_instances):
        inst = generate_instance(spec.L, spec.parametrization,
                                 instance_seed(spec.master_seed, idx),
                                 spec.n_cycles)
        trajectories = run_trajectories(space, inst, spec.n_trajectories,
                                        threads=threads, dt=spec.dt,
                                        jump_tol=spec.jump_tol)
        run = InstanceRun(
            instance=inst,
            space=space,
            trajectories=trajectories,
            distributions=cycle_distributions(space, trajectories),
            observables=instance_observables(space, inst, trajectories,
                                             observable_names),
        )
        runs.append(run)
        if on_instance is not None:
            on_instance(idx, run)
    aggregate = {}
    for name in observable_names:
        stacked = np.stack([r.observables[name] for r in runs])
        mean = stacked.mean(axis=0)
        if len(runs) > 1:
            se = stacked.std(axis=0, ddof=1) / math.sqrt(len(runs))
        else:
            se = np.zeros_like(mean)
        aggregate[name] = (mean, se)
    return EnsembleResult(spec=spec, instances=runs, aggregate=aggregate)


# ---------------------------------------------------------------------------
# error-insertion fidelity study


@dataclass
class ErrorStudyResult:
    fidelity: float
    abs_distance: float
    ideal: OutputDistribution
    observed: OutputDistribution
    reference_deltaN: float
    n_samples: int
    n_redraws: int


def _draw_insertions(rng: np.random.Generator, L: int, total: float,
                     kind: str, n_errors: int, sample: int,
                     n_samples: int) -> list:
    from .dynamics import ErrorInsertion
    ins = []
    # first error: round-robin site, time stratified over the full window
    site = 1 + sample % L
    t = (sample + rng.random()) / n_samples * total
    ins.append(ErrorInsertion(kind, site, t))
    for _ in range(n_errors - 1):
        ins.append(ErrorInsertion(kind, 1 + int(rng.integers(L)),
                                  rng.random() * total))
    return ins


def error_fidelity_study(L: int, kind: str = "z", n_errors: int = 1,
                         n_cycles: int = DEFAULT_CYCLES, seed: int = 0,
                         n_samples: int = 48, parametrization: str = "A",
                         extra_photon: bool = False,
                         dt: float = TIME_STEP) -> ErrorStudyResult:
    """Fidelity of the unitary protocol after inserting random errors.

    Runs the number-conserving variant (no sideband, no loss), averages the
    output distribution over stratified error positions and times, and
    scores it against the clean distribution with the K-L-ratio fidelity.
    Loss insertions are conditioned on the error occurring: a loss that
    annihilates the state is redrawn.
    """
    if kind not in ("z", "loss"):
        raise ValueError(f"error kind must be 'z' or 'loss', got {kind!r}")
    if n_errors < 1:
        raise ValueError("need at least one error")
    base = generate_instance(L, parametrization, seed, n_cycles)
    inst = unitary_variant(base, extra_photon)
    space = build_space(L, 0)
    options = TrajectoryOptions(dt=dt)

    clean = run_trajectory(space, inst, inst.seed, 0, options)
    p_ideal = qubit_marginal(space, np.abs(clean.snapshots[-1])**2)
    checkpoints = [initial_state(space, inst.n0)] + \
        [s.copy() for s in clean.snapshots]
    starts = inst.cycle_starts()
    total = inst.total_duration

    rng = np.random.Generator(np.random.Philox(
        np.random.SeedSequence(inst.seed, spawn_key=(_SAMPLER_KEY,))))
    mean_weights = np.zeros(space.dim)
    redraws = 0
    for s in range(n_samples):
        for attempt in range(200):
            ins = _draw_insertions(rng, L, total, kind, n_errors, s,
                                   n_samples)
            k0 = int(np.searchsorted(starts, min(e.time for e in ins),
                                     side="right")) - 1
            run = continue_trajectory(
                space, inst, checkpoints[k0], k0,
                trajectory_rng(inst.seed, s + 1),
                TrajectoryOptions(dt=dt, errors=ins))
            if not run.annihilated:
                break
            redraws += 1
        else:
            raise RuntimeError(
                f"loss insertion annihilated 200 straight draws at sample {s}")
        final = run.snapshots[-1]
        mean_weights += final.real**2 + final.imag**2
    p_obs = qubit_marginal(space, mean_weights / n_samples)

    counts = np.bitwise_count(np.arange(2**L, dtype=np.uint32))
    delta_n = max(0.0, float(p_obs.probs @ counts) - inst.n0)
    p_tc = obs.wiur(L, inst.n0, delta_n)
    return ErrorStudyResult(
        fidelity=obs.fidelity(p_ideal, p_obs, p_tc),
        abs_distance=obs.abs_distance(p_ideal, p_obs),
        ideal=p_ideal,
        observed=p_obs,
        reference_deltaN=delta_n,
        n_samples=n_samples,
        n_redraws=redraws,
    )


# ---------------------------------------------------------------------------
# truncation comparison


@dataclass
class TruncationComparison:
    caps: tuple[int, ...]
    fidelity_by_cap: dict[int, np.ndarray]     # cap -> per-cycle F
    reference_cap: int


def truncation_fidelity(L: int, caps=(1, 2), seed: int = 0,
                        n_cycles: int = DEFAULT_CYCLES,
                        trajectories: int | None = None, threads: int = 1,
                        dt: float = TIME_STEP,
                        oracle_limit: int = 600) -> TruncationComparison:
    """Per-cycle fidelity of capped runs against the highest requested cap.

    Uses the exact density-matrix reference when every capped space fits,
    trajectory averages otherwise; the same instance seed drives all caps.
    """
    caps = tuple(sorted(set(caps)))
    if len(caps) < 2:
        raise ValueError("need at least two caps to compare")
    ref_cap = caps[-1]
    dists: dict[int, list[OutputDistribution]] = {}
    for cap in caps:
        space = build_space(L, cap)
        inst = generate_instance(L, "A", seed, n_cycles)
        if space.dim <= oracle_limit:
            evo = oracle_evolution(space, inst, dt)
            dists[cap] = [qubit_marginal(space, s.populations())
                          for s in evo.snapshots]
        else:
            n_t = trajectories if trajectories is not None else 6 * L**2
            runs = run_trajectories(space, inst, n_t, threads=threads, dt=dt)
            dists[cap] = cycle_distributions(space, runs)

    counts = np.bitwise_count(np.arange(2**L, dtype=np.uint32))
    n0 = default_photon_count(L)
    out: dict[int, np.ndarray] = {}
    for cap in caps:
        f = np.empty(n_cycles)
        for k in range(n_cycles):
            ref = dists[ref_cap][k]
            delta_n = max(0.0, float(ref.probs @ counts) - n0)
            p_tc = obs.wiur(L, n0, delta_n)
            f[k] = obs.fidelity(ref, dists[cap][k], p_tc)
        out[cap] = f
    return TruncationComparison(caps=caps, fidelity_by_cap=out,
                                reference_cap=ref_cap)
