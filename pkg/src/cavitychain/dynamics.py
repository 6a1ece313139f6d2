"""Time evolution: stochastic wavefunction trajectories and the exact
density-matrix reference.

Trajectories integrate dψ/dt = (−iH(t) − Γ_C/2 Σ n_Ci) ψ with fixed-step RK4
and realize cavity losses through the norm-decay scheme: the squared norm is
compared against a uniform draw r, and when it crosses, a loss is applied to
one cavity (chosen with probability ∝ ⟨n_Ci⟩) at a bisected crossing time.
Averaging |ψ⟩⟨ψ| over trajectories reproduces the master equation

    dρ/dt = −i[H, ρ] + Γ_C Σ_i (a_i ρ a_i† − ½{n_i, ρ})

which :func:`evolve_density_matrix` integrates directly in vectorized form for
cross-validation at small dimension.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .exceptions import (
    CapacityError,
    DegenerateJumpError,
    IntegrationError,
    NumericError,
)
from .hamiltonian import HamiltonianTerms, ProtocolInstance
from .hilbert import HilbertSpace

TIME_STEP = 0.02             # ns, fixed RK4 step
JUMP_TIME_TOLERANCE = 1e-3   # ns, bisection window for the loss time
DEGENERATE_WEIGHT = 1e-14    # total channel weight below which a jump is invalid
NORM_GROWTH_TOLERANCE = 1e-10
MAX_ORACLE_DIM = 600         # dense dim^2 evolution guard

_TIME_FUZZ = 1e-12


def rk4_step(psi: np.ndarray, h_eff, t: float, dt: float) -> np.ndarray:
    """One classic RK4 step of dψ/dt = −i·H_eff(t)·ψ, no renormalization.

    ``h_eff`` maps a time to an operator supporting ``@``.  The operator may
    be non-Hermitian; norm loss is the caller's business.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    k1 = -1j * (h_eff(t) @ psi)
    k2 = -1j * (h_eff(t + dt / 2) @ (psi + (dt / 2) * k1))
    k3 = -1j * (h_eff(t + dt / 2) @ (psi + (dt / 2) * k2))
    k4 = -1j * (h_eff(t + dt) @ (psi + dt * k3))
    out = psi + (dt / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise IntegrationError(f"non-finite amplitudes at t={t}, dt={dt}")
    return out


@dataclass(frozen=True)
class ErrorInsertion:
    """A deliberately injected single-qubit error."""

    kind: str      # "z" or "loss"
    site: int      # 1-based qubit index
    time: float    # ns from the start of the protocol


@dataclass
class TrajectoryOptions:
    dt: float = TIME_STEP
    jump_tol: float = JUMP_TIME_TOLERANCE
    errors: list[ErrorInsertion] = field(default_factory=list)


def insert_error(options: TrajectoryOptions, kind: str, site: int,
                 time: float) -> None:
    """Schedule an error on a trajectory run; window bounds are checked at
    run time against the instance."""
    if kind not in ("z", "loss"):
        raise ValueError(f"error kind must be 'z' or 'loss', got {kind!r}")
    if site < 1:
        raise ValueError(f"site is 1-based, got {site}")
    if time < 0:
        raise ValueError(f"error time must be nonnegative, got {time}")
    options.errors.append(ErrorInsertion(kind, site, time))


@dataclass
class TrajectoryResult:
    """One stochastic evolution: per-cycle snapshots plus the loss record."""

    instance: ProtocolInstance
    space: HilbertSpace
    snapshots: list[np.ndarray]             # normalized, one per finished cycle
    jumps: list[tuple[float, int]]          # (absolute ns, 1-based cavity)
    error_insertions: list[ErrorInsertion]
    annihilated: bool = False               # loss error hit an empty site


def trajectory_rng(master_seed: int, traj_index: int) -> np.random.Generator:
    """Counter-based stream for one trajectory; independent of how many other
    trajectories run or in what order."""
    ss = np.random.SeedSequence(master_seed, spawn_key=(traj_index,))
    return np.random.Generator(np.random.Philox(ss))


def jump_weights(space: HilbertSpace, psi: np.ndarray) -> np.ndarray:
    """Unnormalized loss-channel weights ⟨ψ|n_Ci|ψ⟩ for every cavity."""
    p = psi.real**2 + psi.imag**2
    bits = (space.cavity_occ[None, :] >> np.arange(space.L)[:, None]) & 1
    return bits @ p


def apply_cavity_jump(space: HilbertSpace, psi: np.ndarray,
                      site: int) -> np.ndarray:
    """Remove one photon from a cavity and renormalize."""
    src, dst = space.cavity_lowering_map(site)
    out = np.zeros_like(psi)
    out[dst] = psi[src]
    norm = np.linalg.norm(out)
    if norm < 1e-14:
        raise DegenerateJumpError(f"no photon amplitude in cavity {site}")
    return out / norm


class _Annihilated(Exception):
    """Internal: a loss error met an empty site."""


class _Engine:
    """Shared stepping machinery over one (space, instance) pair.

    Keeps a persistent fused CSR whose data array is rebound per coefficient
    evaluation, plus a one-slot cache so consecutive steps reuse the
    evaluation their boundaries share.
    """

    def __init__(self, space: HilbertSpace, inst: ProtocolInstance,
                 dt: float = TIME_STEP,
                 jump_tol: float = JUMP_TIME_TOLERANCE):
        self.space = space
        self.inst = inst
        self.dt = float(dt)
        self.jump_tol = float(jump_tol)
        self.terms = HamiltonianTerms(space, inst)
        self._M = self.terms.fused_matrix(
            np.zeros(self.terms._nnz, dtype=complex))
        self._cache_key: tuple[int, float] | None = None
        self._cache_data: np.ndarray | None = None
        L = space.L
        self._cavity_bits = ((space.cavity_occ[None, :]
                              >> np.arange(L)[:, None]) & 1).astype(float)
        self._lower = [space.cavity_lowering_map(i) for i in range(1, L + 1)]
        self._qubit_lower = {}
        self._zdiag = {}

    def _data(self, cycle: int, t: float) -> np.ndarray:
        key = (cycle, t)
        if key != self._cache_key:
            g, c2, om = self.terms.coefficients(cycle, t)
            self._cache_data = self.terms.generator_data(
                g, c2, om, self.inst.gamma_c)
            self._cache_key = key
        return self._cache_data

    def _apply(self, data: np.ndarray, v: np.ndarray) -> np.ndarray:
        self._M.data = data
        return self._M @ v

    def step(self, psi: np.ndarray, cycle: int, t: float,
             h: float) -> np.ndarray:
        d1 = self._data(cycle, t)
        dm = self._data(cycle, t + h / 2)
        k1 = self._apply(d1, psi)
        k2 = self._apply(dm, psi + (h / 2) * k1)
        k3 = self._apply(dm, psi + (h / 2) * k2)
        d2 = self._data(cycle, t + h)
        k4 = self._apply(d2, psi + h * k3)
        out = psi + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(out)):
            raise IntegrationError(
                f"non-finite amplitudes in cycle {cycle} at t={t}, dt={h}")
        return out

    # -- error operators ---------------------------------------------------

    def apply_error(self, psi: np.ndarray, err: ErrorInsertion) -> np.ndarray:
        if not 1 <= err.site <= self.space.L:
            raise ValueError(f"error site {err.site} outside 1..{self.space.L}")
        if err.kind == "z":
            if err.site not in self._zdiag:
                self._zdiag[err.site] = self.space.qubit_z_diagonal(err.site)
            return psi * self._zdiag[err.site]
        if err.site not in self._qubit_lower:
            self._qubit_lower[err.site] = \
                self.space.qubit_lowering_map(err.site)
        src, dst = self._qubit_lower[err.site]
        out = np.zeros_like(psi)
        out[dst] = psi[src]
        norm = np.linalg.norm(out)
        if norm**2 < 1e-28:
            raise _Annihilated
        return out / norm


class _Walker:
    """Norm-decay jump evolution of one trajectory."""

    def __init__(self, engine: _Engine, psi: np.ndarray,
                 rng: np.random.Generator):
        self.e = engine
        self.psi = np.ascontiguousarray(psi, dtype=complex)
        self.rng = rng
        self.r = rng.random()
        self.norm2 = float(np.vdot(self.psi, self.psi).real)
        self.jumps: list[tuple[float, int]] = []

    def advance(self, cycle: int, t0: float, t1: float,
                cycle_start: float) -> None:
        """Integrate local time t0 -> t1 within one cycle, realizing jumps."""
        dt = self.e.dt
        n = max(1, int(np.ceil((t1 - t0) / dt - _TIME_FUZZ)))
        t = t0
        for j in range(1, n + 1):
            b = min(t0 + j * dt, t1)
            if t < b - _TIME_FUZZ:
                self._step_with_jumps(cycle, t, b, cycle_start)
            t = b

    def _step_with_jumps(self, cycle: int, t: float, b: float,
                         cycle_start: float) -> None:
        psi_new = self.e.step(self.psi, cycle, t, b - t)
        n2 = float(np.vdot(psi_new, psi_new).real)
        if n2 > self.norm2 + NORM_GROWTH_TOLERANCE:
            raise NumericError(
                f"norm grew by {n2 - self.norm2:.3e} in one step at t={t}")
        if n2 > self.r:
            self.psi, self.norm2 = psi_new, n2
            return
        # the squared norm crossed r inside (t, b]: bisect for the loss time
        lo, hi = t, b
        psi_lo = self.psi
        while hi - lo > self.e.jump_tol:
            mid = 0.5 * (lo + hi)
            psi_mid = self.e.step(psi_lo, cycle, lo, mid - lo)
            if float(np.vdot(psi_mid, psi_mid).real) > self.r:
                lo, psi_lo = mid, psi_mid
            else:
                hi = mid
        psi_jump = self.e.step(psi_lo, cycle, lo, hi - lo)
        self._jump(psi_jump, cycle_start + hi)
        # finish the interrupted step from the jump time, watching for
        # further crossings
        if hi < b - _TIME_FUZZ:
            self._step_with_jumps(cycle, hi, b, cycle_start)

    def _jump(self, psi: np.ndarray, abs_time: float) -> None:
        p = psi.real**2 + psi.imag**2
        w = self.e._cavity_bits @ p
        total = w.sum()
        if total < DEGENERATE_WEIGHT:
            raise DegenerateJumpError(
                f"all loss channels empty at t={abs_time:.4f} "
                f"(total weight {total:.3e})")
        u = self.rng.random() * total
        site = int(np.searchsorted(np.cumsum(w), u, side="left")) + 1
        src, dst = self.e._lower[site - 1]
        out = np.zeros_like(psi)
        out[dst] = psi[src]
        out /= np.linalg.norm(out)
        self.psi = out
        self.norm2 = 1.0
        self.r = self.rng.random()
        self.jumps.append((abs_time, site))

    def apply_error(self, err: ErrorInsertion) -> None:
        self.psi = self.e.apply_error(self.psi, err)
        if err.kind == "loss":
            # the state was renormalized, so the decay threshold resets
            self.norm2 = 1.0
            self.r = self.rng.random()

    def snapshot(self) -> np.ndarray:
        return self.psi / np.linalg.norm(self.psi)


def _errors_by_cycle(inst: ProtocolInstance, errors, start_cycle: int):
    """Group scheduled errors by cycle, times made cycle-local."""
    starts = inst.cycle_starts()
    total = inst.total_duration
    out: dict[int, list[tuple[float, ErrorInsertion]]] = {}
    for err in sorted(errors, key=lambda e: e.time):
        if not 0.0 <= err.time <= total + _TIME_FUZZ:
            raise ValueError(
                f"error time {err.time} outside the evolution window "
                f"[0, {total}]")
        k = int(np.searchsorted(starts, err.time, side="right")) - 1
        local = err.time - starts[k]
        if k < start_cycle:
            raise ValueError(
                f"error at t={err.time} precedes the resume cycle {start_cycle}")
        out.setdefault(k, []).append((local, err))
    return out


def _propagate(space: HilbertSpace, inst: ProtocolInstance, psi: np.ndarray,
               rng: np.random.Generator, options: TrajectoryOptions, errors,
               start_cycle: int) -> TrajectoryResult:
    engine = _Engine(space, inst, options.dt, options.jump_tol)
    walker = _Walker(engine, psi, rng)
    by_cycle = _errors_by_cycle(inst, errors, start_cycle)
    starts = inst.cycle_starts()
    snapshots: list[np.ndarray] = []
    annihilated = False
    try:
        for k in range(start_cycle, inst.n_cycles):
            T = inst.cycles[k].duration
            t = 0.0
            for local, err in by_cycle.get(k, ()):
                if local > t + _TIME_FUZZ:
                    walker.advance(k, t, local, starts[k])
                    t = local
                walker.apply_error(err)
            if T > t + _TIME_FUZZ:
                walker.advance(k, t, T, starts[k])
            snapshots.append(walker.snapshot())
    except _Annihilated:
        annihilated = True
    return TrajectoryResult(
        instance=inst,
        space=space,
        snapshots=snapshots,
        jumps=walker.jumps,
        error_insertions=sorted(errors, key=lambda e: e.time),
        annihilated=annihilated,
    )


def run_trajectory(space: HilbertSpace, inst: ProtocolInstance,
                   master_seed: int, traj_index: int,
                   options: TrajectoryOptions | None = None,
                   initial: np.ndarray | None = None) -> TrajectoryResult:
    """Evolve one trajectory through all cycles of the instance.

    Deterministic given (master_seed, traj_index) and the options; the
    per-trajectory stream never depends on other trajectories.
    """
    options = options or TrajectoryOptions()
    if initial is None:
        from .protocol import initial_state
        initial = initial_state(space, inst.n0)
    rng = trajectory_rng(master_seed, traj_index)
    return _propagate(space, inst, initial, rng, options, options.errors,
                      start_cycle=0)


def continue_trajectory(space: HilbertSpace, inst: ProtocolInstance,
                        psi: np.ndarray, start_cycle: int,
                        rng: np.random.Generator,
                        options: TrajectoryOptions | None = None,
                        ) -> TrajectoryResult:
    """Resume evolution from a cycle-boundary state.

    Used with checkpointed states to replay only the cycles after an error
    insertion; snapshots cover ``start_cycle`` onward.
    """
    options = options or TrajectoryOptions()
    if not 0 <= start_cycle < inst.n_cycles:
        raise ValueError(f"start_cycle {start_cycle} outside the schedule")
    return _propagate(space, inst, psi, rng, options, options.errors,
                      start_cycle)


def snapshot_hash(psi: np.ndarray) -> str:
    """Digest of the raw amplitudes, for checkpoint audit lines."""
    return hashlib.sha256(np.ascontiguousarray(psi).tobytes()).hexdigest()


# ---------------------------------------------------------------------------
# density-matrix reference


@dataclass
class DensityMatrix:
    """Dense ρ over the truncated basis."""

    space: HilbertSpace
    entries: np.ndarray

    def validate(self) -> None:
        m = self.entries
        if m.shape != (self.space.dim, self.space.dim):
            raise ValueError(f"entries shape {m.shape} does not match space")
        herm = np.max(np.abs(m - m.conj().T))
        if herm > 1e-10:
            raise NumericError(f"not Hermitian: max asymmetry {herm:.3e}")
        tr = np.trace(m).real
        if abs(tr - 1.0) > 1e-8:
            raise NumericError(f"trace {tr} deviates from 1")
        lo = float(np.linalg.eigvalsh(m)[0])
        if lo < -1e-8:
            raise NumericError(f"negative eigenvalue {lo:.3e}")

    def populations(self) -> np.ndarray:
        return self.entries.diagonal().real.copy()

    def purity(self) -> float:
        return float(np.vdot(self.entries, self.entries).real)


@dataclass
class OracleEvolution:
    """Per-cycle master-equation snapshots plus bookkeeping totals."""

    instance: ProtocolInstance
    snapshots: list[DensityMatrix]
    expected_losses: np.ndarray   # cumulative Γ_C ∫⟨N_c⟩dt at cycle ends
    traces: np.ndarray            # trace at cycle ends


class _Superoperator:
    """Vectorized GKSL generator split by pulse coefficient.

    Row-major vec convention: vec(AρB) = (A ⊗ Bᵀ) vec(ρ).  The action is
    f(v) = S0·v − g·S1·v + (g²/δ)·S2·v + Ω·S3·v with S0 carrying the static
    diagonal and the dissipator.
    """

    def __init__(self, space: HilbertSpace, terms: HamiltonianTerms,
                 gamma_c: float):
        dim = space.dim
        eye = sp.identity(dim, format="csr")

        def commutator(X):
            return (-1j * (sp.kron(X, eye) - sp.kron(eye, X.T))).tocsr()

        static = sp.diags(terms.static_diag.astype(complex))
        s0 = commutator(static)
        if gamma_c != 0.0:
            ncav = sp.diags(space.cavity_count.astype(float))
            for site in range(1, space.L + 1):
                src, dst = space.cavity_lowering_map(site)
                a = sp.csr_matrix((np.ones(len(src)), (dst, src)),
                                  shape=(dim, dim))
                s0 = s0 + gamma_c * sp.kron(a, a)
            s0 = s0 - 0.5 * gamma_c * (sp.kron(ncav, eye) + sp.kron(eye, ncav))
        self.s0 = s0.tocsr()
        self.s1 = commutator(terms.hop.astype(complex))
        self.s2 = commutator(terms.second_order.astype(complex))
        self.s3 = commutator(terms.sideband.astype(complex))
        self.terms = terms

    def apply(self, cycle: int, t: float, v: np.ndarray) -> np.ndarray:
        g, c2, om = self.terms.coefficients(cycle, t)
        out = self.s0 @ v
        if g != 0.0:
            out += (-g) * (self.s1 @ v)
        if c2 != 0.0:
            out += c2 * (self.s2 @ v)
        if om != 0.0:
            out += om * (self.s3 @ v)
        return out


def oracle_evolution(space: HilbertSpace, inst: ProtocolInstance,
                     dt: float = TIME_STEP,
                     initial: np.ndarray | None = None) -> OracleEvolution:
    """Integrate the master equation exactly (dense ρ, RK4) per cycle."""
    if space.dim > MAX_ORACLE_DIM:
        raise CapacityError(
            f"dense dim²={space.dim**2} evolution refused above "
            f"dim {MAX_ORACLE_DIM}; use trajectories")
    if initial is None:
        from .protocol import initial_state
        initial = initial_state(space, inst.n0)
    dim = space.dim
    rho = np.outer(initial, initial.conj())
    v = np.ascontiguousarray(rho.reshape(-1), dtype=complex)
    sup = _Superoperator(space, HamiltonianTerms(space, inst), inst.gamma_c)
    diag_idx = np.arange(dim) * (dim + 1)
    cav = space.cavity_count.astype(float)

    def ncav_of(vec):
        return float(vec[diag_idx].real @ cav)

    snapshots = []
    losses = []
    traces = []
    cum_loss = 0.0
    for k in range(inst.n_cycles):
        T = inst.cycles[k].duration
        n = max(1, int(np.ceil(T / dt - _TIME_FUZZ)))
        t = 0.0
        for j in range(1, n + 1):
            b = min(j * dt, T)
            h = b - t
            nc_before = ncav_of(v)
            k1 = sup.apply(k, t, v)
            k2 = sup.apply(k, t + h / 2, v + (h / 2) * k1)
            k3 = sup.apply(k, t + h / 2, v + (h / 2) * k2)
            k4 = sup.apply(k, t + h, v + h * k3)
            v = v + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
            if not np.all(np.isfinite(v)):
                raise IntegrationError(
                    f"non-finite density matrix in cycle {k} at t={t}")
            cum_loss += inst.gamma_c * h * 0.5 * (nc_before + ncav_of(v))
            t = b
        snapshots.append(DensityMatrix(space, v.reshape(dim, dim).copy()))
        losses.append(cum_loss)
        traces.append(float(v[diag_idx].real.sum()))
    return OracleEvolution(
        instance=inst,
        snapshots=snapshots,
        expected_losses=np.array(losses),
        traces=np.array(traces),
    )


def evolve_density_matrix(space: HilbertSpace, inst: ProtocolInstance,
                          dt: float = TIME_STEP) -> list[DensityMatrix]:
    """Per-cycle master-equation snapshots (see :func:`oracle_evolution`)."""
    return oracle_evolution(space, inst, dt).snapshots


def average_trajectories(results: list[TrajectoryResult],
                         cycle: int) -> DensityMatrix:
    """ρ = (1/N) Σ |ψ⟩⟨ψ| over the cycle snapshots, in list order."""
    if not results:
        raise ValueError("cannot average an empty trajectory set")
    first = results[0]
    for r in results:
        if r.instance.L != first.instance.L \
                or r.instance.seed != first.instance.seed \
                or r.space.dim != first.space.dim:
            raise ValueError("trajectories come from different instances")
        if r.annihilated or len(r.snapshots) <= cycle:
            raise ValueError(f"trajectory lacks a cycle-{cycle} snapshot")
    a = np.stack([r.snapshots[cycle] for r in results])
    rho = (a.T @ a.conj()) / len(results)
    return DensityMatrix(first.space, rho)
