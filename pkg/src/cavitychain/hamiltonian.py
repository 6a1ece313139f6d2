"""Pulse waveforms and sparse Hamiltonian assembly.

The chain Hamiltonian consists of five groups, all expressed in the truncated
occupation basis of :mod:`.hilbert` (hbar = 1, angular frequencies in rad/ns,
times in ns):

* photon hopping  -g(t) (s+_i s-_{i+1} + h.c.) on the L - 1 bonds,
* nearest-neighbor interaction  4 g(t)^2/delta n_i n_{i+1},
* interaction-mediated hopping  2 g(t)^2/delta (s+_i n_{i+1} s-_{i+2} + h.c.),
* static diagonal  h_i n_i + h_Ci n_Ci + Delta n_i n_Ci,
* blue-sideband drive  Omega(t) (s+_i s+_Ci + h.c.), which creates or removes
  a qubit photon and a cavity photon together and therefore conserves
  N_q - N_c.

Matrix elements that would leave the truncated space are dropped (projector
truncation).  The non-Hermitian trajectory generator adds the purely diagonal
decay -i/2 Gamma_C sum_i n_Ci.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .hilbert import HilbertSpace

# Default drive and loss parameters. Magnitudes stay O(0.01 - 0.3) in these
# units, which keeps fixed-step RK4 well conditioned.
COUPLER_PEAK = 2 * math.pi * 0.040       # rad/ns
SIDEBAND_PEAK = 2 * math.pi * 0.003      # rad/ns
NONLINEARITY = -2 * math.pi * 0.200      # rad/ns, negative by convention
DISPERSIVE_SHIFT = 2 * math.pi * 0.005   # rad/ns
CAVITY_LOSS_RATE = 0.010                 # 1/ns
COUPLER_RAMP_WIDTH = 2.0                 # ns
COUPLER_RAMP_INSET = 4.0                 # ns
SIDEBAND_RAMP_WIDTH = 2.0                # ns
SIDEBAND_RAMP_INSET = 5.0                # ns
CYCLE_DURATION_RANGE = (20.0, 30.0)      # ns

# The tanh ramp with the default width/inset pair leaves ~1.8e-2 of the peak
# at the pulse edges; the guard rejects anything worse than that regime.
EDGE_RESIDUAL_LIMIT = 2e-2


@dataclass(frozen=True)
class WaveformParams:
    """Symmetrized hyperbolic-tangent pulse envelope.

    The envelope ramps up around t = ramp_inset, down around
    t = duration - ramp_inset, and is normalized to reach ``peak`` exactly at
    mid-pulse.
    """

    peak: float          # rad/ns
    duration: float      # ns
    ramp_width: float    # ns
    ramp_inset: float    # ns, delay of the ramp center from the pulse edge

    def __post_init__(self):
        if self.peak < 0:
            raise ValueError(f"peak must be nonnegative, got {self.peak}")
        if not 0 < 2 * self.ramp_inset < self.duration:
            raise ValueError(
                f"need 0 < 2*ramp_inset < duration, got inset {self.ramp_inset} "
                f"for duration {self.duration}"
            )
        if self.ramp_width <= 0:
            raise ValueError(f"ramp_width must be positive, got {self.ramp_width}")
        edge = abs(_tanh_profile(0.0, self.duration, self.ramp_width, self.ramp_inset))
        if edge > EDGE_RESIDUAL_LIMIT:
            raise ValueError(
                f"pulse edges retain {edge:.3g} of the peak; "
                f"widen ramp_inset/ramp_width (limit {EDGE_RESIDUAL_LIMIT})"
            )


def _tanh_profile(t: float, duration: float, width: float, inset: float) -> float:
    up = math.tanh((t - inset) / width)
    down = math.tanh((t - (duration - inset)) / width)
    norm = 2.0 * math.tanh((duration / 2.0 - inset) / width)
    return (up - down) / norm


def waveform_value(w: WaveformParams, t: float) -> float:
    """Envelope value at time t; zero outside [0, duration] by contract."""
    if t < 0.0 or t > w.duration:
        return 0.0
    return w.peak * _tanh_profile(t, w.duration, w.ramp_width, w.ramp_inset)


def hopping_eigenvalues(L: int, g: float) -> np.ndarray:
    """Single-particle energies of the uniform hopping chain, ascending.

    These are -2 g cos(j pi / (L+1)) for j = 1..L; odd L always contains an
    exact zero mode.
    """
    if L < 1:
        raise ValueError(f"L must be positive, got {L}")
    if g < 0:
        raise ValueError(f"g must be nonnegative, got {g}")
    j = np.arange(1, L + 1)
    return np.sort(-2.0 * g * np.cos(j * np.pi / (L + 1)))


@dataclass(frozen=True)
class CyclePulses:
    """Coupler and sideband envelopes of one protocol cycle."""

    coupler: WaveformParams
    sideband: WaveformParams

    def __post_init__(self):
        if self.coupler.duration != self.sideband.duration:
            raise ValueError("coupler and sideband must share the cycle duration")

    @property
    def duration(self) -> float:
        return self.coupler.duration


@dataclass
class ProtocolInstance:
    """One randomized experiment: detunings, pulse schedule, loss rate.

    Detunings are fixed across all cycles; only the envelopes vary cycle to
    cycle through their randomized durations.
    """

    L: int
    parametrization: str                 # "A" or "B"
    h: np.ndarray                        # qubit detunings, rad/ns
    h_c: np.ndarray                      # cavity detunings, rad/ns
    delta: float                         # qubit nonlinearity, rad/ns
    dispersive_shift: float              # rad/ns
    gamma_c: float                       # cavity loss rate, 1/ns
    cycles: list[CyclePulses]
    n0: int                              # initial qubit photon count
    seed: int

    @property
    def n_cycles(self) -> int:
        return len(self.cycles)

    @property
    def durations(self) -> np.ndarray:
        return np.array([c.duration for c in self.cycles])

    @property
    def total_duration(self) -> float:
        return float(self.durations.sum())

    def cycle_starts(self) -> np.ndarray:
        """Absolute start time of each cycle."""
        return np.concatenate([[0.0], np.cumsum(self.durations)[:-1]])

    def validate(self) -> None:
        """Enforce the parametrization invariants."""
        if self.parametrization not in ("A", "B"):
            raise ValueError(f"unknown parametrization {self.parametrization!r}")
        if len(self.h) != self.L or len(self.h_c) != self.L:
            raise ValueError("detuning arrays must have length L")
        lo, hi = CYCLE_DURATION_RANGE
        for c in self.cycles:
            if not lo <= c.duration <= hi:
                raise ValueError(f"cycle duration {c.duration} outside [{lo}, {hi}]")
        if self.parametrization == "A":
            bound = 2 * math.pi * 0.020
            if np.any(self.h_c != 0.0):
                raise ValueError("parametrization A requires all cavity detunings 0")
        else:
            bound = 2 * math.pi * 0.005
            g_peak = max(c.coupler.peak for c in self.cycles)
            want = hopping_eigenvalues(self.L, g_peak)
            if not np.allclose(np.sort(self.h_c), want, atol=1e-9):
                raise ValueError(
                    "parametrization B cavity detunings must permute the "
                    "single-particle hopping energies"
                )
        if np.any(np.abs(self.h) > bound + 1e-12):
            raise ValueError(
                f"qubit detunings exceed the parametrization {self.parametrization} "
                f"bound {bound:.6g}"
            )


class HamiltonianTerms:
    """Structural operator groups of one (space, instance) pair.

    The full operator at local cycle time t is

        H(t) = -g(t) * hop + g(t)^2/delta * second_order
               + Omega(t) * sideband + diag(static_diag)

    and the trajectory generator is M(t) = -i H(t) - Gamma_C/2 diag(cavity
    photon count).  A fused CSR matrix sharing one sparsity pattern across all
    groups makes evaluating M(t) @ psi a single sparse product.
    """

    def __init__(self, space: HilbertSpace, inst: ProtocolInstance):
        if inst.L != space.L:
            raise ValueError(f"instance L={inst.L} does not match space L={space.L}")
        self.space = space
        self.inst = inst

        dim = space.dim
        nc = space.n_cavity_states
        q = space.qubit_occ
        c = space.cavity_occ
        crank = space.cavity_rank
        L = space.L
        idx = np.arange(dim, dtype=np.int64)

        hop_r, hop_c, hop_v = [], [], []
        sec_r, sec_c, sec_v = [], [], []
        sb_r, sb_c, sb_v = [], [], []

        def both_ways(rows, cols, vals, acc_r, acc_c, acc_v):
            acc_r.append(rows); acc_c.append(cols); acc_v.append(vals)
            acc_r.append(cols); acc_c.append(rows); acc_v.append(vals)

        for i in range(L - 1):
            b1, b2 = 1 << i, 1 << (i + 1)
            # photon transfer site i+2 -> i+1 (and h.c. via both_ways)
            src = idx[((q & b1) == 0) & ((q & b2) != 0)]
            tgt = src + (b1 - b2) * nc
            both_ways(tgt, src, np.ones(len(src)), hop_r, hop_c, hop_v)
            # density-density shift on doubly occupied bonds
            on = idx[((q & b1) != 0) & ((q & b2) != 0)]
            sec_r.append(on); sec_c.append(on); sec_v.append(np.full(len(on), 4.0))

        for i in range(L - 2):
            b1, b3 = 1 << i, 1 << (i + 2)
            b2 = 1 << (i + 1)
            src = idx[((q & b1) == 0) & ((q & b2) != 0) & ((q & b3) != 0)]
            tgt = src + (b1 - b3) * nc
            both_ways(tgt, src, np.full(len(src), 2.0), sec_r, sec_c, sec_v)

        for i in range(L):
            b = 1 << i
            ok = ((q & b) == 0) & ((c & b) == 0) & (crank[c | b] >= 0)
            src = idx[ok]
            tgt = (q[src] + b) * nc + crank[c[src] | b]
            both_ways(tgt, src, np.ones(len(src)), sb_r, sb_c, sb_v)

        def gather(rs, cs, vs):
            if not rs:
                return (np.empty(0, np.int64),) * 2 + (np.empty(0),)
            return np.concatenate(rs), np.concatenate(cs), np.concatenate(vs)

        self._coo = {
            "hop": gather(hop_r, hop_c, hop_v),
            "second_order": gather(sec_r, sec_c, sec_v),
            "sideband": gather(sb_r, sb_c, sb_v),
        }

        site_bits = (q[:, None] >> np.arange(L)[None, :]) & 1
        cav_bits = (c[:, None] >> np.arange(L)[None, :]) & 1
        self.static_diag = (site_bits @ inst.h + cav_bits @ inst.h_c
                            + inst.dispersive_shift
                            * np.bitwise_count(q & c).astype(float))
        self.cavity_total = space.cavity_count.astype(float)

        self.hop = self._to_csr("hop")
        self.second_order = self._to_csr("second_order")
        self.sideband = self._to_csr("sideband")

        self._build_fused()

    def _to_csr(self, name: str) -> sp.csr_matrix:
        r, c, v = self._coo[name]
        m = sp.csr_matrix((v, (r, c)), shape=(self.space.dim, self.space.dim))
        m.sum_duplicates()
        m.sort_indices()
        return m

    def _build_fused(self) -> None:
        dim = self.space.dim
        diag = np.arange(dim, dtype=np.int64)
        keys = [r * dim + c for r, c, _ in self._coo.values()]
        keys.append(diag * dim + diag)
        ukeys = np.unique(np.concatenate(keys))
        rows, cols = np.divmod(ukeys, dim)
        indptr = np.searchsorted(rows, np.arange(dim + 1))
        self._fused_indices = cols.astype(np.int32)
        self._fused_indptr = indptr.astype(np.int32)
        self._nnz = len(ukeys)

        def aligned(r, c, v):
            out = np.zeros(self._nnz)
            np.add.at(out, np.searchsorted(ukeys, r * dim + c), v)
            return out

        self._d_hop = aligned(*self._coo["hop"])
        self._d_second = aligned(*self._coo["second_order"])
        self._d_sideband = aligned(*self._coo["sideband"])
        d_static = aligned(diag, diag, self.static_diag)
        d_cavity = aligned(diag, diag, self.cavity_total)
        self._d_static = d_static
        self._d_cavity = d_cavity

    # -- evaluation --------------------------------------------------------

    def coefficients(self, cycle: int, t_local: float) -> tuple[float, float, float]:
        """Pulse values (g, g^2/delta, Omega) at a local cycle time."""
        pulses = self.inst.cycles[cycle]
        g = waveform_value(pulses.coupler, t_local)
        om = waveform_value(pulses.sideband, t_local)
        return g, g * g / self.inst.delta, om

    def generator_data(self, g: float, c2: float, om: float,
                       gamma_c: float) -> np.ndarray:
        """Fused-pattern data of M = -i H - gamma_c/2 diag(N_cav)."""
        h_data = (-g) * self._d_hop + c2 * self._d_second + om * self._d_sideband \
            + self._d_static
        return -1j * h_data - 0.5 * gamma_c * self._d_cavity

    def fused_matrix(self, data: np.ndarray) -> sp.csr_matrix:
        """CSR matrix over the fused pattern with the given data.

        The pattern arrays are copied so callers may canonicalize (e.g.
        eliminate zeros) without corrupting the shared template.
        """
        m = sp.csr_matrix(
            (data, self._fused_indices.copy(), self._fused_indptr.copy()),
            shape=(self.space.dim, self.space.dim))
        return m

    def matrix(self, cycle: int, t_local: float) -> sp.csr_matrix:
        """Hermitian H(t) for one cycle at a local time, as CSR."""
        g, c2, om = self.coefficients(cycle, t_local)
        data = (-g) * self._d_hop + c2 * self._d_second + om * self._d_sideband \
            + self._d_static
        m = self.fused_matrix(data.astype(complex))
        m.eliminate_zeros()
        return m


def assemble_hamiltonian(space: HilbertSpace, inst: ProtocolInstance,
                         cycle: int, t: float) -> sp.csr_matrix:
    """H(t) of one cycle at local time t, in the truncated basis."""
    return HamiltonianTerms(space, inst).matrix(cycle, t)


def effective_hamiltonian(H: sp.spmatrix, space: HilbertSpace,
                          gamma_c: float) -> sp.csr_matrix:
    """Non-Hermitian trajectory generator H - i/2 gamma_c sum_i n_Ci."""
    decay = sp.diags(-0.5j * gamma_c * space.cavity_count.astype(float))
    out = (H + decay).tocsr()
    out.sort_indices()
    return out


def cavity_annihilator(space: HilbertSpace, site: int) -> sp.csr_matrix:
    """Annihilation operator of one cavity mode (0/1 photon), as CSR."""
    src, dst = space.cavity_lowering_map(site)
    return sp.csr_matrix((np.ones(len(src)), (dst, src)),
                         shape=(space.dim, space.dim))
