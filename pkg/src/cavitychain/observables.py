"""Entanglement measures and output-distribution statistics.

Negativity uses the partial transpose over a chosen bipartition.  The global
cavity cap means the truncated basis is not a tensor product, but a partial
transpose that keeps all cavities on one side never mixes amplitude into
discarded cavity patterns, so it can be evaluated inside the truncated block;
partitions that split the cavities fall back to an explicit embedding into
the uncapped product space.

Distribution statistics (K-L divergence, Porter-Thomas rank reference, IPR,
heavy-output fraction, the reweighted-uniform reference, and the K-L-ratio
fidelity) all operate on probability vectors over the 2^L qubit bitstrings.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from .dynamics import DensityMatrix, OracleEvolution, TrajectoryResult
from .exceptions import (
    CapacityError,
    DegenerateReferenceError,
    InsufficientSamplesError,
    SupportError,
)
from .hilbert import HilbertSpace, OutputDistribution

ZERO_PROBABILITY = 1e-15     # below this a probability counts as exact zero
MAX_EIG_DIM = 4096           # dense eigenvalue guard

_LABEL = re.compile(r"^([qc])([1-9][0-9]*)$")


# ---------------------------------------------------------------------------
# partitions and negativity


@dataclass(frozen=True)
class Partition:
    """Bipartition of the 2L subsystem labels ("q3" = qubit 3, "c1" =
    cavity 1); side A must be a nonempty proper subset."""

    side_a: frozenset[str]

    def __post_init__(self):
        for label in self.side_a:
            if not _LABEL.match(label):
                raise ValueError(f"bad subsystem label {label!r}")

    def masks(self, L: int) -> tuple[int, int]:
        """(qubit bitmask, cavity bitmask) of side A; validates against L."""
        qm = cm = 0
        for label in self.side_a:
            m = _LABEL.match(label)
            i = int(m.group(2))
            if i > L:
                raise ValueError(f"label {label!r} outside a chain of {L} sites")
            if m.group(1) == "q":
                qm |= 1 << (i - 1)
            else:
                cm |= 1 << (i - 1)
        if qm == 0 and cm == 0:
            raise ValueError("side A is empty")
        if qm == (1 << L) - 1 and cm == (1 << L) - 1:
            raise ValueError("side A is the whole system")
        return qm, cm


def default_partition(L: int) -> Partition:
    """All cavities plus the leftmost ceil((L−3)/2) qubits."""
    n_q = max(0, math.ceil((L - 3) / 2))
    labels = {f"c{i}" for i in range(1, L + 1)}
    labels |= {f"q{i}" for i in range(1, n_q + 1)}
    return Partition(frozenset(labels))


def max_negativity(L: int) -> float:
    """½(√N_H,eff − 1) with N_H,eff = (1+L)·2^L, the cap-1 effective size."""
    return 0.5 * (math.sqrt((1 + L) * 2**L) - 1.0)


def max_qubit_negativity(L: int) -> float:
    return float(2 ** (L // 2 - 1))


def _pt_eigenvalues(mat: np.ndarray, a: np.ndarray,
                    b: np.ndarray) -> np.ndarray:
    """Eigenvalues of the partial transpose over the "a" components.

    ``a`` and ``b`` give, per basis index, the additive contribution of the
    side-A and side-B quantum numbers (a + b reconstructs the index).  The
    transpose swaps the A parts between row and column.
    """
    dim = mat.shape[0]
    if dim > MAX_EIG_DIM:
        raise CapacityError(
            f"dense partial-transpose eigenproblem of dim {dim} refused")
    out = np.empty_like(mat)
    rows = b[:, None] + a[None, :]
    cols = a[:, None] + b[None, :]
    out[rows, cols] = mat
    return np.linalg.eigvalsh(out)


def _embedded_pt_eigenvalues(space: HilbertSpace, rho: np.ndarray,
                             qmask_a: int, cmask_a: int) -> np.ndarray:
    # uncapped product space, index = qubit_pattern · 2^L + cavity_pattern
    L = space.L
    full = 1 << (2 * L)
    if full > MAX_EIG_DIM:
        raise CapacityError(
            f"cavity-splitting partition needs the {full}-dim product space; "
            f"too large for dense eigenvalues")
    big = np.zeros((full, full), dtype=complex)
    emb = space.qubit_occ * (1 << L) + space.cavity_occ
    big[np.ix_(emb, emb)] = rho
    idx = np.arange(full, dtype=np.int64)
    q, c = idx >> L, idx & ((1 << L) - 1)
    a = ((q & qmask_a) << L) + (c & cmask_a)
    return _pt_eigenvalues(big, a, idx - a)


def negativity(rho: DensityMatrix, p: Partition) -> float:
    """N = ½(‖ρ^{T_A}‖₁ − 1)."""
    space = rho.space
    L = space.L
    qmask_a, cmask_a = p.masks(L)
    all_cav = (1 << L) - 1
    if cmask_a in (0, all_cav):
        if cmask_a == 0:
            # transpose over the complement instead; the spectrum is the same
            qmask_a = all_cav & ~qmask_a
        crank = space.cavity_rank[space.cavity_occ]
        S = space.n_cavity_states
        a = (space.qubit_occ & qmask_a) * S + crank
        b = (space.qubit_occ & ~qmask_a & all_cav) * S
        vals = _pt_eigenvalues(np.asarray(rho.entries), a, b)
    else:
        vals = _embedded_pt_eigenvalues(space, np.asarray(rho.entries),
                                        qmask_a, cmask_a)
    return 0.5 * (float(np.abs(vals).sum()) - 1.0)


def trace_out_cavities(rho: DensityMatrix) -> np.ndarray:
    """Reduced qubit density matrix (2^L × 2^L)."""
    space = rho.space
    nq, S = 2**space.L, space.n_cavity_states
    r4 = np.asarray(rho.entries).reshape(nq, S, nq, S)
    return np.einsum("isjs->ij", r4)


def qubit_negativity(rho: DensityMatrix, L: int) -> float:
    """Negativity of the cavity-traced state across the leftmost-floor(L/2)
    qubit cut."""
    rq = trace_out_cavities(rho)
    mask = (1 << (L // 2)) - 1
    idx = np.arange(2**L, dtype=np.int64)
    a = idx & mask
    vals = _pt_eigenvalues(rq, a, idx - a)
    return 0.5 * (float(np.abs(vals).sum()) - 1.0)


def conditioned_negativity(trajectories: list[TrajectoryResult],
                           jump_count: int, cycle: int, partition: Partition,
                           min_samples: int = 20) -> float:
    """Negativity of ρ built from trajectories with exactly ``jump_count``
    losses by the end of the given cycle."""
    from .dynamics import average_trajectories
    if not trajectories:
        raise InsufficientSamplesError(min_samples, 0)
    boundary = float(np.cumsum(trajectories[0].instance.durations)[cycle])
    chosen = [
        r for r in trajectories
        if not r.annihilated and len(r.snapshots) > cycle
        and sum(1 for t, _ in r.jumps if t <= boundary + 1e-9) == jump_count
    ]
    if len(chosen) < min_samples:
        raise InsufficientSamplesError(min_samples, len(chosen))
    return negativity(average_trajectories(chosen, cycle), partition)


# ---------------------------------------------------------------------------
# distribution statistics


@dataclass(frozen=True)
class ReferenceDistribution:
    """Materialized analytic reference over output ranks or bitstrings."""

    kind: str          # "PT" | "IUR" | "WIUR"
    params: dict
    probs: np.ndarray

    def __post_init__(self):
        s = self.probs.sum()
        if abs(s - 1.0) > 1e-12:
            raise ValueError(f"reference normalizes to {s}, not 1")


def _probs(dist) -> np.ndarray:
    if isinstance(dist, (OutputDistribution, ReferenceDistribution)):
        return np.asarray(dist.probs, dtype=float)
    return np.asarray(dist, dtype=float)


def kl_divergence(P, Q) -> float:
    """Σ P_k ln(P_k/Q_k) with 0·ln 0 = 0; requires support(P) ⊆ support(Q)."""
    p, q = _probs(P), _probs(Q)
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {q.shape}")
    live = p > ZERO_PROBABILITY
    dead_q = q <= ZERO_PROBABILITY
    bad = live & dead_q
    if np.any(bad):
        k = int(np.argmax(bad))
        raise SupportError(
            f"P has weight {p[k]:.3e} at index {k} where Q vanishes")
    return float(np.sum(p[live] * np.log(p[live] / q[live])))


def porter_thomas_rank_reference(N: int) -> ReferenceDistribution:
    """Expected descending order statistics of N exponential weights:
    rank j carries (1/N)·Σ_{i=j}^{N} 1/i."""
    if N < 1:
        raise ValueError(f"N must be at least 1, got {N}")
    inv = 1.0 / np.arange(1, N + 1)
    tail = np.cumsum(inv[::-1])[::-1]     # tail[j] = Σ_{i≥j+1} 1/i
    probs = tail / N
    probs = probs / probs.sum()           # exact unit sum despite rounding
    return ReferenceDistribution("PT", {"N": N}, probs)


def iur(N: int) -> ReferenceDistribution:
    if N < 1:
        raise ValueError(f"N must be at least 1, got {N}")
    return ReferenceDistribution("IUR", {"N": N}, np.full(N, 1.0 / N))


def kl_from_porter_thomas(P) -> float:
    """K-L of the descending-sorted distribution against the same-size
    Porter-Thomas rank reference."""
    p = np.sort(_probs(P))[::-1]
    return kl_divergence(p, porter_thomas_rank_reference(len(p)))


def wiur(L: int, N0: int, deltaN: float) -> ReferenceDistribution:
    """Uniform randomness reweighted by a Poisson number of added photons:
    bitstrings below N0 photons get zero, sector N gets weight
    e^{−δN}·δN^{N−N0}/(N−N0)! split evenly over its C(L,N) strings."""
    if not 0 <= N0 <= L:
        raise ValueError(f"need 0 <= N0 <= L, got N0={N0}, L={L}")
    if deltaN < 0:
        raise ValueError(f"deltaN must be nonnegative, got {deltaN}")
    counts = np.bitwise_count(np.arange(2**L, dtype=np.uint32)).astype(int)
    probs = np.zeros(2**L)
    for n in range(N0, L + 1):
        sector = math.exp(-deltaN) * deltaN**(n - N0) / math.factorial(n - N0)
        probs[counts == n] = sector / math.comb(L, n)
    probs /= probs.sum()
    return ReferenceDistribution(
        "WIUR", {"L": L, "N0": N0, "deltaN": deltaN}, probs)


def ipr(P) -> float:
    """Inverse participation ratio (Σ P²)^{-1}."""
    p = _probs(P)
    return float(1.0 / np.sum(p * p))


def heavy_fraction(P) -> float:
    """Probability mass on bitstrings strictly above the (lower) median
    probability."""
    p = _probs(P)
    m = np.sort(p)[(len(p) - 1) // 2]
    return float(p[p > m].sum())


def fidelity(P_ideal, P_obs, P_TC) -> float:
    """F = 1 − KL(P_ideal, P_obs)/KL(P_ideal, P_TC), clamped below at 0.

    A support violation in the numerator (the observed distribution misses
    ideal-support strings entirely) drives K-L to infinity; the clamp maps
    that to 0.
    """
    denom = kl_divergence(P_ideal, P_TC)
    if denom < 1e-12:
        raise DegenerateReferenceError(
            f"trivial reference coincides with the ideal (K-L {denom:.3e})")
    try:
        num = kl_divergence(P_ideal, P_obs)
    except SupportError:
        return 0.0
    return max(0.0, 1.0 - num / denom)


def abs_distance(P, Q) -> float:
    """Total-variation distance ½ Σ |P_k − Q_k|."""
    p, q = _probs(P), _probs(Q)
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {q.shape}")
    return 0.5 * float(np.abs(p - q).sum())


# ---------------------------------------------------------------------------
# photon-number bookkeeping


@dataclass
class NumberSeries:
    """Per-cycle diagonal observables of one run."""

    photons_added: np.ndarray       # ⟨N_q⟩ − N0
    cavity_population: np.ndarray   # ⟨N_c⟩
    cumulative_losses: np.ndarray


def number_series(source) -> NumberSeries:
    """Cycle-resolved photon bookkeeping from trajectories or the oracle."""
    if isinstance(source, OracleEvolution):
        inst = source.instance
        nq, nc = [], []
        for snap in source.snapshots:
            pops = snap.populations()
            nq.append(pops @ snap.space.qubit_count)
            nc.append(pops @ snap.space.cavity_count)
        return NumberSeries(
            photons_added=np.array(nq) - inst.n0,
            cavity_population=np.array(nc),
            cumulative_losses=source.expected_losses.copy(),
        )
    results: list[TrajectoryResult] = list(source)
    if not results:
        raise ValueError("no trajectories given")
    inst = results[0].instance
    space = results[0].space
    n_cycles = min(len(r.snapshots) for r in results)
    ends = np.cumsum(inst.durations)
    nq = np.zeros(n_cycles)
    nc = np.zeros(n_cycles)
    losses = np.zeros(n_cycles)
    for r in results:
        for k in range(n_cycles):
            p = np.abs(r.snapshots[k])**2
            nq[k] += p @ space.qubit_count
            nc[k] += p @ space.cavity_count
            losses[k] += sum(1 for t, _ in r.jumps if t <= ends[k] + 1e-9)
    n = len(results)
    return NumberSeries(
        photons_added=nq / n - inst.n0,
        cavity_population=nc / n,
        cumulative_losses=losses / n,
    )
