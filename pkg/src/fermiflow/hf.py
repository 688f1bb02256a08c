"""Mean-field (Hartree-Fock) dynamics in three equivalent formulations.

All three flows share one mean-field potential

    V(A) = diag(wmat @ diag A) - wmat ⊙ A,

whose two pieces are the direct (convolution with the occupation density)
and exchange (elementwise convolution kernel) terms; here wmat is the
Toeplitz kernel w(|i - j|) and the convolutions are zero padded, never
periodic. The orbital flow moves a frame of columns, the density flow moves
the one-particle density matrix gamma, and the factorized flow moves a root
kappa with gamma = kappa kappa†. Time stepping is classic fixed-step RK4 in
the interaction picture, so the stiff free rotation is handled exactly and
a zero potential propagates exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb, factorial

import numpy as np

from .errors import (DivergenceError, RangeError, ShapeError, ValidationError)
from .modes import ModeSystem
from .sector import (PSectorOperator, compound_matrix, gram, marginal, slater,
                     trace_norm)

ORTHONORMAL = "orthonormal"   # columns are an orthonormal frame
NORMALIZED = "normalized"     # columns carry norm 1/sqrt(N); gamma = sum |psi><psi|

_GRAM_TOL = 1e-6


@dataclass
class HFConfig:
    """Integrator settings for the mean-field flows."""

    dt: float = 1e-3

    def __post_init__(self):
        if not 0 < self.dt <= 0.5:
            raise RangeError(f"step size dt={self.dt} outside (0, 0.5]")


@dataclass
class OrbitalSet:
    """A frame of orbital columns with an explicit scale marker.

    ``orthonormal`` columns form an orthonormal frame; ``normalized``
    columns are the orthonormal frame divided by sqrt(N), so that the sum
    of their rank-one projectors is the trace-one density matrix.
    """

    matrix: np.ndarray
    scale: str = ORTHONORMAL

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=complex)
        if self.matrix.ndim != 2:
            raise ShapeError("orbitals must form a (d, N) matrix")
        d, n = self.matrix.shape
        if n < 1:
            raise RangeError("an orbital set needs at least one column")
        if n > d:
            raise RangeError(f"cannot hold {n} fermions in {d} modes")
        if self.scale not in (ORTHONORMAL, NORMALIZED):
            raise ValidationError(f"unknown scale marker {self.scale!r}")
        g = gram(self.matrix)
        target = np.eye(n) if self.scale == ORTHONORMAL else np.eye(n) / n
        if np.max(np.abs(g - target)) > _GRAM_TOL:
            raise ValidationError(
                f"columns do not match the {self.scale!r} scale marker "
                f"(Gram deviation {np.max(np.abs(g - target)):.2e})")

    @property
    def d(self) -> int:
        return self.matrix.shape[0]

    @property
    def n(self) -> int:
        return self.matrix.shape[1]

    def as_orthonormal(self) -> np.ndarray:
        if self.scale == ORTHONORMAL:
            return self.matrix
        return self.matrix * np.sqrt(self.n)

    def as_normalized(self) -> np.ndarray:
        if self.scale == NORMALIZED:
            return self.matrix
        return self.matrix / np.sqrt(self.n)

    def density(self) -> np.ndarray:
        """Trace-one one-particle density matrix of the frame."""
        psi = self.as_normalized()
        return psi @ psi.conj().T

    def to_state(self):
        return slater(self.as_orthonormal())

    def rescaled(self, scale: str) -> "OrbitalSet":
        mat = self.as_orthonormal() if scale == ORTHONORMAL else self.as_normalized()
        return OrbitalSet(mat, scale=scale)

    @classmethod
    def random(cls, rng: np.random.Generator, d: int, n: int) -> "OrbitalSet":
        """Haar-ish frame: QR of a complex Gaussian matrix."""
        raw = rng.normal(size=(d, n)) + 1j * rng.normal(size=(d, n))
        q, _ = np.linalg.qr(raw)
        return cls(q, scale=ORTHONORMAL)

    @classmethod
    def ground_state(cls, system: ModeSystem, n: int) -> "OrbitalSet":
        """The n lowest one-body eigenvectors (deterministic reference frame)."""
        _, vecs = np.linalg.eigh(system.h)
        return cls(vecs[:, :n], scale=ORTHONORMAL)


@dataclass
class DensityMatrix:
    """A positive-semidefinite one-particle density matrix, trace <= 1 + tol."""

    mat: np.ndarray

    def __post_init__(self):
        self.mat = np.asarray(self.mat, dtype=complex)
        d = self.mat.shape[0]
        if self.mat.shape != (d, d):
            raise ShapeError("density matrix must be square")
        if np.max(np.abs(self.mat - self.mat.conj().T)) > 1e-10:
            raise ValidationError("density matrix must be Hermitian")
        eigs = np.linalg.eigvalsh(self.mat)
        if eigs.min() < -1e-10:
            raise ValidationError(f"density matrix not PSD (min eig {eigs.min():.2e})")

    @property
    def d(self) -> int:
        return self.mat.shape[0]


@dataclass
class KappaFactor:
    """Root factor of a density matrix: gamma = kappa kappa†."""

    mat: np.ndarray

    def __post_init__(self):
        self.mat = np.asarray(self.mat, dtype=complex)
        if self.mat.ndim != 2 or self.mat.shape[0] != self.mat.shape[1]:
            raise ShapeError("kappa must be a square matrix")

    def density(self) -> np.ndarray:
        return self.mat @ self.mat.conj().T

    @classmethod
    def from_density(cls, gamma) -> "KappaFactor":
        mat = gamma.mat if isinstance(gamma, DensityMatrix) else np.asarray(gamma)
        vals, vecs = np.linalg.eigh(mat)
        vals = np.clip(vals, 0.0, None)
        return cls((vecs * np.sqrt(vals)) @ vecs.conj().T)


def mean_field_potential(a: np.ndarray, wmat: np.ndarray,
                         exchange: bool = True) -> np.ndarray:
    """Direct-minus-exchange potential V(A); A need not be Hermitian."""
    direct = np.diag(wmat @ np.diag(a)).astype(complex)
    if not exchange:
        return direct
    return direct - wmat * a


def hf_rhs_orbitals(orbitals: OrbitalSet, system: ModeSystem) -> np.ndarray:
    """Time derivative of the orbital frame under the mean-field flow.

    The direct term convolves the potential with the total occupation
    density; the exchange term convolves it with the pointwise product
    phi_i(m') conj(phi_j(m')) before recombining with phi_j. Both carry
    the same 1/N suppression through the trace-one density matrix.
    """
    v = mean_field_potential(orbitals.density(), system.wmat)
    return -1j * ((system.h + v) @ orbitals.matrix)


def hf_rhs_density(gamma: np.ndarray | DensityMatrix,
                   system: ModeSystem) -> np.ndarray:
    """Right-hand side of i dgamma/dt = [h + V(gamma), gamma]."""
    g = gamma.mat if isinstance(gamma, DensityMatrix) else np.asarray(gamma)
    heff = system.h + mean_field_potential(g, system.wmat)
    return -1j * (heff @ g - g @ heff)


def hf_rhs_kappa(kappa: np.ndarray, system: ModeSystem) -> np.ndarray:
    """Right-hand side of i dkappa/dt = (h + V(kappa kappa†)) kappa."""
    g = kappa @ kappa.conj().T
    return -1j * ((system.h + mean_field_potential(g, system.wmat)) @ kappa)


def hf_energy(orbitals: OrbitalSet, system: ModeSystem) -> float:
    """Mean-field energy: one-body part plus half (direct - exchange).

    Evaluated on the normalized-scale orbitals, so the value is the
    conserved quantity of all three flows; the i = j self-pairs cancel
    between direct and exchange.
    """
    return energy_functional(orbitals.density(), system)


def energy_functional(gamma: np.ndarray, system: ModeSystem) -> float:
    g = gamma.mat if isinstance(gamma, DensityMatrix) else np.asarray(gamma)
    dens = np.real(np.diag(g))
    one_body = np.real(np.trace(system.h @ g))
    direct = dens @ system.wmat @ dens
    exch = np.sum(system.wmat * np.abs(g) ** 2)
    return float(one_body + 0.5 * (direct - exch))


def quasi_free_marginal(gamma: np.ndarray | DensityMatrix,
                        p: int) -> PSectorOperator:
    """Quasi-free p-particle reduced density: p! times the p-minors of gamma.

    This is the sector form of gamma^{⊗p} followed by the scaled
    antisymmetrizer; its trace is the sum of products of p distinct
    eigenvalues, hence at most one when tr gamma = 1.
    """
    g = gamma.mat if isinstance(gamma, DensityMatrix) else np.asarray(gamma)
    d = g.shape[0]
    if not 1 <= p <= d:
        raise RangeError(f"marginal order p={p} outside [1, {d}]")
    return PSectorOperator(d, p, factorial(p) * compound_matrix(g, p))


@dataclass
class MarginalRelationReport:
    """Trace-norm gaps between quasi-free and contraction marginals."""

    n: int
    p: int
    prefactor: float
    exact_relation_gap: float   # ||gamma^(p) - prefactor * Gamma^(p)||_1
    plain_gap: float            # ||gamma^(p) - Gamma^(p)||_1
    bound: float                # p**2 / N

    @property
    def bound_satisfied(self) -> bool:
        return self.plain_gap <= self.bound + 1e-12


def marginal_relation_check(orbitals: OrbitalSet, p: int) -> MarginalRelationReport:
    """Compare the quasi-free marginal of gamma with the Slater contraction."""
    n = orbitals.n
    state = orbitals.to_state()
    contraction = marginal(state, p)
    quasi = quasi_free_marginal(orbitals.density(), p)
    prefactor = factorial(p) * comb(n, p) / float(n) ** p
    return MarginalRelationReport(
        n=n, p=p, prefactor=prefactor,
        exact_relation_gap=trace_norm(quasi.mat - prefactor * contraction.mat),
        plain_gap=trace_norm(quasi.mat - contraction.mat),
        bound=p ** 2 / n,
    )


# ---------------------------------------------------------------------------
# Interaction-picture RK4 driver and trajectories
# ---------------------------------------------------------------------------

def _rk4_stream(y0, t_grid, derivative, dt):
    """Fixed-step RK4 between consecutive grid points; yields (t, y)."""
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or len(t_grid) < 1:
        raise ShapeError("t_grid must be a non-empty 1d array")
    if len(t_grid) > 1 and np.min(np.diff(t_grid)) <= 0:
        raise RangeError("t_grid must be strictly increasing")
    y = y0
    yield t_grid[0], y
    for t0, t1 in zip(t_grid[:-1], t_grid[1:]):
        nsub = max(1, int(np.ceil((t1 - t0) / dt - 1e-12)))
        h = (t1 - t0) / nsub
        t = t0
        for _ in range(nsub):
            k1 = derivative(t, y)
            k2 = derivative(t + h / 2, y + h / 2 * k1)
            k3 = derivative(t + h / 2, y + h / 2 * k2)
            k4 = derivative(t + h, y + h * k3)
            y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            t += h
        if not np.all(np.isfinite(y)):
            raise DivergenceError(f"non-finite values at t={t1}")
        yield t1, y


@dataclass
class Trajectory:
    """Common container: recorded times, states, and diagnostics."""

    times: np.ndarray
    states: list
    energy: np.ndarray
    gram_drift: np.ndarray
    trace: np.ndarray
    min_eigenvalue: np.ndarray
    config: HFConfig

    def expected_gram_drift(self, t: float) -> float:
        """A priori fourth-order drift allowance for the fixed-step scheme."""
        return 10.0 * self.config.dt ** 4 * t

    def csv_rows(self):
        for i, t in enumerate(self.times):
            yield (t, self.energy[i], self.gram_drift[i], self.trace[i],
                   self.min_eigenvalue[i])

    def to_csv(self) -> str:
        lines = ["t,energy,gram_drift,trace,min_eigenvalue"]
        for row in self.csv_rows():
            lines.append(",".join("%.17g" % v for v in row))
        return "\n".join(lines) + "\n"


@dataclass
class OrbitalTrajectory(Trajectory):
    def orbitals(self, i: int) -> OrbitalSet:
        return self.states[i]

    def final(self) -> OrbitalSet:
        return self.states[-1]


@dataclass
class DensityTrajectory(Trajectory):
    def gamma(self, i: int) -> np.ndarray:
        return self.states[i]

    def final(self) -> np.ndarray:
        return self.states[-1]


@dataclass
class KappaTrajectory(Trajectory):
    def kappa(self, i: int) -> np.ndarray:
        return self.states[i]

    def final(self) -> np.ndarray:
        return self.states[-1]


def evolve_hf_orbitals(orbitals: OrbitalSet, system: ModeSystem, t_grid,
                       config: HFConfig | None = None) -> OrbitalTrajectory:
    """Integrate the orbital flow, recording conservation diagnostics.

    Interaction picture: the frame is stored with the free rotation
    removed, so the integrator only sees the mean-field potential and a
    zero potential is propagated exactly.
    """
    config = config or HFConfig()
    scale = orbitals.scale
    g0 = gram(orbitals.matrix)
    t_grid = np.atleast_1d(np.asarray(t_grid, dtype=float))
    u0 = system.free_propagator(t_grid[0])
    y0 = u0.conj().T @ orbitals.matrix

    def derivative(t, phi_tilde):
        u = system.free_propagator(t)
        phi = u @ phi_tilde
        dens = phi @ phi.conj().T
        if scale == ORTHONORMAL:
            dens = dens / orbitals.n
        v = mean_field_potential(dens, system.wmat)
        return -1j * (u.conj().T @ (v @ phi))

    times, states = [], []
    energy, gdrift, trace, mineig = [], [], [], []
    for t, y in _rk4_stream(y0, t_grid, derivative, config.dt):
        u = system.free_propagator(t)
        orbs = OrbitalSet(u @ y, scale=scale)
        times.append(t)
        states.append(orbs)
        dens = orbs.density()
        energy.append(energy_functional(dens, system))
        gdrift.append(float(np.max(np.abs(gram(orbs.matrix) - g0))))
        trace.append(float(np.real(np.trace(dens))))
        mineig.append(float(np.linalg.eigvalsh(dens).min()))
    return OrbitalTrajectory(np.array(times), states, np.array(energy),
                             np.array(gdrift), np.array(trace),
                             np.array(mineig), config)


def _density_diagnostics(system, times, gammas, config, cls, spectra_of=None):
    spectra_of = spectra_of or (lambda g: g)
    energy, sdrift, trace, mineig = [], [], [], []
    spec0 = np.linalg.eigvalsh(spectra_of(gammas[0]))
    for g in gammas:
        dens = spectra_of(g)
        energy.append(energy_functional(dens, system))
        spec = np.linalg.eigvalsh(dens)
        sdrift.append(float(np.max(np.abs(spec - spec0))))
        trace.append(float(np.real(np.trace(dens))))
        mineig.append(float(spec.min()))
    return cls(np.asarray(times), list(gammas), np.array(energy),
               np.array(sdrift), np.array(trace), np.array(mineig), config)


def evolve_hf_density(gamma0: np.ndarray | DensityMatrix, system: ModeSystem,
                      t_grid, config: HFConfig | None = None) -> DensityTrajectory:
    """Integrate the density-matrix flow i dgamma/dt = [h + V(gamma), gamma].

    The gram_drift diagnostic column holds the spectrum drift, which is the
    conserved analogue of frame orthonormality for this formulation.
    """
    config = config or HFConfig()
    g0 = gamma0.mat if isinstance(gamma0, DensityMatrix) else np.asarray(gamma0)
    t_grid = np.atleast_1d(np.asarray(t_grid, dtype=float))
    u0 = system.free_propagator(t_grid[0])
    y0 = u0.conj().T @ g0 @ u0

    def derivative(t, gt):
        u = system.free_propagator(t)
        g = u @ gt @ u.conj().T
        v = mean_field_potential(g, system.wmat)
        vt = u.conj().T @ v @ u
        return -1j * (vt @ gt - gt @ vt)

    times, states = [], []
    for t, y in _rk4_stream(y0, t_grid, derivative, config.dt):
        u = system.free_propagator(t)
        states.append(u @ y @ u.conj().T)
        times.append(t)
    return _density_diagnostics(system, times, states, config, DensityTrajectory)


def evolve_kappa(kappa0: KappaFactor | np.ndarray, system: ModeSystem, t_grid,
                 config: HFConfig | None = None) -> KappaTrajectory:
    """Integrate the factorized flow i dkappa/dt = (h + V(kappa kappa†)) kappa."""
    config = config or HFConfig()
    k0 = kappa0.mat if isinstance(kappa0, KappaFactor) else np.asarray(kappa0)
    t_grid = np.atleast_1d(np.asarray(t_grid, dtype=float))
    y0 = system.free_propagator(t_grid[0]).conj().T @ k0

    def derivative(t, kt):
        u = system.free_propagator(t)
        k = u @ kt
        v = mean_field_potential(k @ k.conj().T, system.wmat)
        return -1j * (u.conj().T @ (v @ k))

    times, states = [], []
    for t, y in _rk4_stream(y0, t_grid, derivative, config.dt):
        u = system.free_propagator(t)
        states.append(u @ y)
        times.append(t)
    return _density_diagnostics(system, times, states, config, KappaTrajectory,
                                spectra_of=lambda k: k @ k.conj().T)
