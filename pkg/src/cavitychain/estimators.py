"""Closed-form scale estimates: how far the protocol reaches before loss
wins, and what simulating it costs in memory and samples.

Unit convention for the length estimates: the coupling g_max enters as an
angular rate (rad/ns) while the loss rate enters as a plain rate (1/ns).
The ≈72-site mode-splitting figure only comes out under this mixed
convention, so it is kept deliberately.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import InsufficientSamplesError


def _round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


def lmax_lower(v: float, n_cav: float, gamma_c: float) -> float:
    """Sites reachable by ballistic information spread before one loss:
    √(v / (n_cav · Γ_C))."""
    if v <= 0 or n_cav <= 0 or gamma_c <= 0:
        raise ValueError("v, n_cav and gamma_c must all be positive")
    return math.sqrt(v / (n_cav * gamma_c))


def lmax_mode_splitting(g_max: float, gamma_c: float) -> float:
    """Chain length at which the collective-mode splitting 5.8·g_max/L near
    the band center falls to twice the loss rate."""
    if g_max <= 0 or gamma_c <= 0:
        raise ValueError("g_max and gamma_c must be positive")
    return 5.8 * g_max / (2.0 * gamma_c)


@dataclass(frozen=True)
class TruncationSpec:
    """Occupancy-truncated wavefunction storage model.

    Qubit sites hold 0..3 photons with at most ``doublon_cap`` doubly and
    ``triplon_cap`` triply occupied sites, restricted to a photon-number
    band (default [round(0.35·L), round(0.65·L)]); cavities hold at most
    round(L / cavity_divisor) photons in total.
    """

    L: int
    doublon_cap: int
    triplon_cap: int
    cavity_divisor: float
    qubit_band: tuple[int, int] | None = None

    def __post_init__(self):
        if self.L < 1:
            raise ValueError(f"need L >= 1, got {self.L}")
        if self.doublon_cap < 0 or self.triplon_cap < 0:
            raise ValueError("occupancy caps must be nonnegative")
        if self.cavity_divisor <= 0:
            raise ValueError("cavity_divisor must be positive")
        lo, hi = self.band()
        if not 0 <= lo <= hi:
            raise ValueError(f"bad photon band [{lo}, {hi}]")

    def band(self) -> tuple[int, int]:
        if self.qubit_band is not None:
            return self.qubit_band
        return (_round_half_up(0.35 * self.L), _round_half_up(0.65 * self.L))

    def cavity_cap(self) -> int:
        if math.isinf(self.cavity_divisor):
            return 0
        return _round_half_up(self.L / self.cavity_divisor)


def _qubit_state_count(spec: TruncationSpec) -> int:
    L = spec.L
    lo, hi = spec.band()
    total = 0
    for n3 in range(spec.triplon_cap + 1):
        if 3 * n3 > hi or n3 > L:
            continue
        for n2 in range(spec.doublon_cap + 1):
            if n2 + n3 > L or 2 * n2 + 3 * n3 > hi:
                continue
            for n1 in range(0, L - n2 - n3 + 1):
                n = n1 + 2 * n2 + 3 * n3
                if not lo <= n <= hi:
                    continue
                n0 = L - n1 - n2 - n3
                total += (math.factorial(L)
                          // (math.factorial(n1) * math.factorial(n2)
                              * math.factorial(n3) * math.factorial(n0)))
    return total


def wavefunction_bytes(spec: TruncationSpec) -> int:
    """complex128 storage of the truncated wavefunction."""
    cavity_states = sum(math.comb(spec.L, m)
                        for m in range(spec.cavity_cap() + 1))
    return 16 * _qubit_state_count(spec) * cavity_states


def density_matrix_bytes(L: int, cavity_cap: int) -> int:
    """complex128 storage of the dense density matrix at a cavity cap."""
    from .hilbert import space_dimension
    dim = space_dimension(L, cavity_cap)
    return dim * dim * 16


def trajectory_budget(L: int, N_c: int) -> int:
    """Trajectories needed for stable per-cycle statistics, ≈ 3·L·N_c."""
    if L < 1 or N_c < 0:
        raise ValueError("need L >= 1 and N_c >= 0")
    return math.ceil(3 * L * N_c)


def kl_sampling_scaling(traj_counts, kls) -> float:
    """Log-log least-squares exponent of K-L versus trajectory count."""
    n = np.asarray(traj_counts, dtype=float)
    k = np.asarray(kls, dtype=float)
    if n.shape != k.shape or n.ndim != 1:
        raise ValueError("counts and K-L values must be matching 1-d arrays")
    if len(n) < 4:
        raise InsufficientSamplesError(4, len(n))
    if np.any(n <= 0) or np.any(k <= 0):
        raise ValueError("counts and K-L values must be positive")
    slope = np.polyfit(np.log(n), np.log(k), 1)[0]
    return float(slope)
