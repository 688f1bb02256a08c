"""One-particle mode systems: a finite chain of modes with a hopping-type
one-body operator and an even pair potential acting on mode-index differences.

The pair potential w enters everywhere through the Toeplitz matrix
``wmat[i, j] = w(|i - j|)``: it is simultaneously the diagonal of the
two-mode pair operator and the kernel of the discrete (zero-padded)
convolution used by the mean-field equations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import RangeError, ShapeError, ValidationError

HERMITICITY_TOL = 1e-12


def hopping_hamiltonian(d: int) -> np.ndarray:
    """Discrete one-dimensional kinetic operator, rescaled to unit norm.

    The raw matrix is the second-difference stencil (2 on the diagonal,
    -1 on the first off-diagonals, open ends). Rescaling by its spectral
    norm pins the energy scale so that times of order 0.1-1 probe the
    short-time regime.
    """
    if d < 1:
        raise RangeError(f"need at least one mode, got d={d}")
    h = 2.0 * np.eye(d) - np.eye(d, k=1) - np.eye(d, k=-1)
    return h / np.linalg.norm(h, 2)


def well_hamiltonian(d: int, depth: float = 1.0, center: int | None = None) -> np.ndarray:
    """Hopping term plus an attractive soft well pinned at ``center``."""
    if center is None:
        center = (d - 1) // 2
    h = hopping_hamiltonian(d)
    sites = np.arange(d)
    h = h - depth * np.diag(1.0 / (np.abs(sites - center) + 1.0))
    return h / np.linalg.norm(h, 2)


def soft_coulomb(d: int, g: float = 1.0) -> np.ndarray:
    """Soft Coulomb profile g / (|m| + 1) on offsets m = 0 .. d-1."""
    return g / (np.arange(d) + 1.0)


def gaussian_potential(d: int, g: float = 1.0, width: float = 2.0) -> np.ndarray:
    return g * np.exp(-((np.arange(d) / width) ** 2))


def zero_potential(d: int) -> np.ndarray:
    return np.zeros(d)


H_PRESETS = {"hopping": hopping_hamiltonian, "well": well_hamiltonian}
W_PRESETS = {"soft-coulomb": soft_coulomb, "gaussian": gaussian_potential, "zero": zero_potential}


@dataclass
class ModeSystem:
    """A d-mode one-particle space with one-body operator and pair potential.

    Parameters
    ----------
    d : int
        Number of modes.
    h : ndarray, shape (d, d)
        Hermitian one-body operator.
    w : ndarray, shape (d,)
        Pair potential sampled on offsets 0 .. d-1; extended to negative
        offsets by evenness.
    """

    d: int
    h: np.ndarray
    w: np.ndarray
    _eig: tuple | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=complex)
        self.w = np.asarray(self.w, dtype=float)
        if self.d < 1:
            raise RangeError(f"need at least one mode, got d={self.d}")
        if self.h.shape != (self.d, self.d):
            raise ShapeError(f"h must be {self.d}x{self.d}, got {self.h.shape}")
        if self.w.shape != (self.d,):
            raise ShapeError(f"w must have one value per offset 0..{self.d - 1}")
        if np.max(np.abs(self.h - self.h.conj().T)) > HERMITICITY_TOL:
            raise ValidationError("one-body operator must be Hermitian")
        if not np.all(np.isfinite(self.w)) or not np.all(np.isfinite(self.h)):
            raise ValidationError("non-finite entries in system operators")

    @classmethod
    def chain(cls, d: int, coupling: float = 1.0, h_preset: str = "hopping",
              w_preset: str = "soft-coulomb") -> "ModeSystem":
        """Standard test bench: unit-norm hopping plus soft Coulomb."""
        try:
            h = H_PRESETS[h_preset](d)
        except KeyError:
            raise ValidationError(f"unknown h preset {h_preset!r}") from None
        try:
            w = W_PRESETS[w_preset](d)
        except KeyError:
            raise ValidationError(f"unknown w preset {w_preset!r}") from None
        return cls(d=d, h=h, w=coupling * w)

    @property
    def wmat(self) -> np.ndarray:
        """Toeplitz convolution kernel wmat[i, j] = w(|i - j|)."""
        idx = np.abs(np.subtract.outer(np.arange(self.d), np.arange(self.d)))
        return self.w[idx]

    @property
    def kappa(self) -> float:
        """Operator norm of the two-mode pair operator (max |w|)."""
        return float(np.max(np.abs(self.w)))

    def pair_operator(self) -> np.ndarray:
        """Dense two-mode pair operator: diagonal with entries w(i - j)."""
        return np.diag(self.wmat.reshape(-1)).astype(complex)

    def swap_operator(self) -> np.ndarray:
        """Exchange operator E on the two-mode space: E(x ⊗ y) = y ⊗ x."""
        e = np.zeros((self.d * self.d, self.d * self.d))
        for i in range(self.d):
            for j in range(self.d):
                e[j * self.d + i, i * self.d + j] = 1.0
        return e

    def exchange_pair_operator(self) -> np.ndarray:
        """The exchange-corrected pair operator W(1 - E)."""
        return self.pair_operator() @ (np.eye(self.d * self.d) - self.swap_operator())

    def _eigensystem(self):
        if self._eig is None:
            vals, vecs = np.linalg.eigh(self.h)
            self._eig = (vals, vecs)
        return self._eig

    def free_propagator(self, t: float) -> np.ndarray:
        """One-particle propagator exp(-i t h), via the cached eigensystem."""
        vals, vecs = self._eigensystem()
        return (vecs * np.exp(-1j * t * vals)) @ vecs.conj().T
