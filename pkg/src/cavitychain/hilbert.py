"""Truncated joint occupation basis for a chain of qubits and cavities.

Each of the L sites carries one hard-core qubit and one cavity mode, both
restricted to zero or one photon; cavity photons are additionally capped
globally.  Basis states are ordered lexicographically on
(qubit pattern, cavity pattern) with the qubit pattern as the major key, so
every qubit block shares the same ordered cavity sub-list and marginalizing
onto qubit bitstrings is a contiguous reduction.

Bit convention used everywhere in this package: site i occupies bit i - 1 of a
pattern, i.e. site 1 is the least significant bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np

from .exceptions import CapacityError

#: Basis enumeration guard; index tables of this size remain comfortably
#: addressable, anything larger is refused rather than swapped to death.
MAX_DIM = 1 << 26


def space_dimension(L: int, max_cavity_total: int) -> int:
    """Dimension of the truncated space, 2^L * sum_{m<=cap} C(L, m)."""
    return (1 << L) * sum(comb(L, m) for m in range(max_cavity_total + 1))


@dataclass(frozen=True)
class BasisState:
    """One product occupation state.

    Attributes
    ----------
    qubit_occ : int
        Bit pattern of qubit photons, bit i - 1 for site i.
    cavity_occ : int
        Bit pattern of cavity photons, same convention.
    """

    qubit_occ: int
    cavity_occ: int


class HilbertSpace:
    """Enumerated truncated basis with bidirectional index maps.

    Immutable after construction and safe to share across workers.  Use
    :func:`build_space` rather than calling the constructor directly.
    """

    def __init__(self, L: int, max_cavity_total: int):
        if L < 1:
            raise ValueError(f"L must be positive, got {L}")
        if not 0 <= max_cavity_total <= L:
            raise ValueError(
                f"max_cavity_total must lie in [0, L={L}], got {max_cavity_total}"
            )
        dim = space_dimension(L, max_cavity_total)
        if dim > MAX_DIM:
            raise CapacityError(
                f"basis of dimension {dim} exceeds the enumeration guard {MAX_DIM}"
            )

        self.L = L
        self.max_cavity_total = max_cavity_total
        self.dim = dim

        # Cavity patterns with popcount <= cap, ascending by integer value.
        all_masks = np.arange(1 << L, dtype=np.int64)
        keep = np.bitwise_count(all_masks) <= max_cavity_total
        self.cavity_masks = all_masks[keep]
        self.n_cavity_states = len(self.cavity_masks)

        # Rank of each admissible cavity mask; -1 marks masks over the cap.
        self.cavity_rank = np.full(1 << L, -1, dtype=np.int64)
        self.cavity_rank[self.cavity_masks] = np.arange(self.n_cavity_states)

        # Per-index occupation tables, heavily used by operator assembly.
        self.qubit_occ = np.repeat(
            np.arange(1 << L, dtype=np.int64), self.n_cavity_states
        )
        self.cavity_occ = np.tile(self.cavity_masks, 1 << L)
        self.qubit_count = np.bitwise_count(self.qubit_occ).astype(np.int64)
        self.cavity_count = np.bitwise_count(self.cavity_occ).astype(np.int64)

    # -- index maps --------------------------------------------------------

    def index_of(self, qubit_occ: int, cavity_occ: int) -> int:
        """Ordinal of the state with the given patterns.

        Raises
        ------
        KeyError
            If the cavity pattern lies outside the truncation.
        ValueError
            If either pattern does not fit in L bits.
        """
        if not 0 <= qubit_occ < (1 << self.L):
            raise ValueError(f"qubit pattern {qubit_occ:#x} does not fit in {self.L} bits")
        if not 0 <= cavity_occ < (1 << self.L):
            raise ValueError(f"cavity pattern {cavity_occ:#x} does not fit in {self.L} bits")
        rank = self.cavity_rank[cavity_occ]
        if rank < 0:
            raise KeyError(
                f"cavity pattern {cavity_occ:#x} exceeds the global cap "
                f"{self.max_cavity_total}"
            )
        return int(qubit_occ) * self.n_cavity_states + int(rank)

    def state(self, i: int) -> BasisState:
        """Inverse of :meth:`index_of`."""
        if not 0 <= i < self.dim:
            raise IndexError(f"basis index {i} outside [0, {self.dim})")
        return BasisState(int(self.qubit_occ[i]), int(self.cavity_occ[i]))

    def states(self):
        """Iterate the basis in enumeration order."""
        for i in range(self.dim):
            yield self.state(i)

    # -- lowering maps and diagonals ---------------------------------------

    def cavity_lowering_map(self, site: int) -> tuple[np.ndarray, np.ndarray]:
        """Index pairs (src, dst) realizing the cavity annihilator on a site.

        src lists every basis index whose cavity bit for ``site`` is set, dst
        the corresponding index with that bit cleared.  Sites are 1-based.
        """
        bit = self._site_bit(site)
        src = np.nonzero(self.cavity_occ & bit)[0]
        dst = (self.qubit_occ[src] * self.n_cavity_states
               + self.cavity_rank[self.cavity_occ[src] & ~bit])
        return src, dst

    def qubit_lowering_map(self, site: int) -> tuple[np.ndarray, np.ndarray]:
        """Same as :meth:`cavity_lowering_map` for the qubit annihilator."""
        bit = self._site_bit(site)
        src = np.nonzero(self.qubit_occ & bit)[0]
        dst = ((self.qubit_occ[src] & ~bit) * self.n_cavity_states
               + self.cavity_rank[self.cavity_occ[src]])
        return src, dst

    def qubit_z_diagonal(self, site: int) -> np.ndarray:
        """Diagonal of sigma_z on a qubit site: +1 on empty, -1 on occupied."""
        bit = self._site_bit(site)
        return np.where(self.qubit_occ & bit, -1.0, 1.0)

    def _site_bit(self, site: int) -> int:
        if not 1 <= site <= self.L:
            raise ValueError(f"site must lie in [1, {self.L}], got {site}")
        return 1 << (site - 1)

    def __repr__(self) -> str:
        return (f"HilbertSpace(L={self.L}, max_cavity_total={self.max_cavity_total}, "
                f"dim={self.dim})")


@dataclass
class OutputDistribution:
    """Probabilities over the 2^L qubit bitstrings.

    probs[k] is the probability of the bitstring whose site-i photon is bit
    i - 1 of k.  Invariants: entries nonnegative, total 1 within 1e-9.
    """

    L: int
    probs: np.ndarray

    def validate(self) -> None:
        if self.probs.shape != (1 << self.L,):
            raise ValueError(
                f"expected {1 << self.L} probabilities, got {self.probs.shape}"
            )
        if np.any(self.probs < 0):
            raise ValueError("negative probability entry")
        total = float(self.probs.sum())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"probabilities sum to {total}, not 1")

    def photon_numbers(self) -> np.ndarray:
        """Popcount of every bitstring, aligned with probs."""
        return np.bitwise_count(np.arange(1 << self.L, dtype=np.int64))


def build_space(L: int, max_cavity_total: int) -> HilbertSpace:
    """Enumerate the truncated space for L sites and a global cavity cap."""
    return HilbertSpace(L, max_cavity_total)


def state_index(space: HilbertSpace, s: BasisState) -> int:
    """Ordinal of ``s`` in the enumeration; KeyError outside the truncation."""
    return space.index_of(s.qubit_occ, s.cavity_occ)


def index_state(space: HilbertSpace, i: int) -> BasisState:
    """State at ordinal ``i``; round-trips with :func:`state_index`."""
    return space.state(i)


def qubit_marginal(space: HilbertSpace, weights: np.ndarray) -> OutputDistribution:
    """Collapse a diagonal weight vector onto the qubit bitstring space.

    ``weights`` is |psi|^2 or the diagonal of a density matrix over the full
    basis; it must be nonnegative up to -1e-9 roundoff and sum to 1 within
    1e-6.  The marginal is renormalized to exactly 1.
    """
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (space.dim,):
        raise ValueError(f"expected {space.dim} weights, got shape {weights.shape}")
    low = float(weights.min(initial=0.0))
    if low < -1e-9:
        raise ValueError(f"weight {low} below the -1e-9 integrity floor")
    total = float(weights.sum())
    if abs(total - 1.0) > 1e-6:
        raise ValueError(f"weights sum to {total}, outside 1 +- 1e-6")
    # Qubit-major ordering makes the reduction contiguous.
    probs = weights.clip(min=0.0).reshape(1 << space.L, space.n_cavity_states).sum(axis=1)
    probs /= probs.sum()
    return OutputDistribution(space.L, probs)
