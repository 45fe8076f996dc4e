"""Truncated Fock-space operator algebra.

Everything is dimensionless. The basis is the number basis {|0>, ..., |dim-1>}
of a harmonic oscillator, with

    a       annihilation operator,  a|n> = sqrt(n)|n-1>
    q       = (a + a^dag) / sqrt(2)
    p       = -1j * (a - a^dag) / sqrt(2)

Density matrices are dense complex Hermitian arrays with unit trace.
Polynomial operators in (q, p) are banded in this basis; ``BandedOperator``
stores them by diagonals so the integrator can multiply them against dense
states in O(bandwidth * dim^2).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import _kernels


def build_annihilation(dim: int) -> np.ndarray:
    """Annihilation operator on a dim-level truncated Fock space."""
    if dim < 2:
        raise ValueError(f"basis size must be >= 2, got {dim}")
    a = np.zeros((dim, dim), dtype=np.complex128)
    ns = np.arange(1, dim)
    a[ns - 1, ns] = np.sqrt(ns)
    return a


def hermitize(mat: np.ndarray) -> np.ndarray:
    """Hermitian part (M + M^dag) / 2."""
    return (mat + mat.conj().T) * 0.5


class BandedOperator:
    """A matrix stored by diagonals: drow[b, r] = A[r, r + offsets[b]].

    Entries outside the stored diagonals are zero. Offsets are sorted and
    drow is zero-padded to length dim for every band.
    """

    __slots__ = ("dim", "offsets", "drow")

    def __init__(self, dim: int, offsets: np.ndarray, drow: np.ndarray):
        self.dim = dim
        self.offsets = np.asarray(offsets, dtype=np.int64)
        self.drow = np.ascontiguousarray(drow, dtype=np.complex128)

    @classmethod
    def from_dense(cls, mat: np.ndarray, tol: float = 0.0) -> "BandedOperator":
        n = mat.shape[0]
        offsets = []
        rows = []
        for k in range(-(n - 1), n):
            d = np.diagonal(mat, k)
            if np.max(np.abs(d)) > tol:
                offsets.append(k)
                row = np.zeros(n, dtype=np.complex128)
                if k >= 0:
                    row[: n - k] = d
                else:
                    row[-k:] = d
                rows.append(row)
        if not offsets:
            offsets = [0]
            rows = [np.zeros(n, dtype=np.complex128)]
        return cls(n, np.array(offsets), np.array(rows))

    @classmethod
    def from_diagonals(cls, dim: int, diagonals: dict[int, np.ndarray]) -> "BandedOperator":
        offsets = sorted(diagonals)
        drow = np.zeros((len(offsets), dim), dtype=np.complex128)
        for b, k in enumerate(offsets):
            d = np.asarray(diagonals[k], dtype=np.complex128)
            if d.shape != (dim - abs(k),):
                raise ValueError(f"diagonal {k} must have length {dim - abs(k)}")
            if k >= 0:
                drow[b, : dim - k] = d
            else:
                drow[b, -k:] = d
        return cls(dim, np.array(offsets, dtype=np.int64), drow)

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.dim, self.dim), dtype=np.complex128)
        n = self.dim
        for b, k in enumerate(self.offsets):
            if k >= 0:
                out[np.arange(n - k), np.arange(k, n)] = self.drow[b, : n - k]
            else:
                out[np.arange(-k, n), np.arange(n + k)] = self.drow[b, -k:]
        return out

    def dagger(self) -> "BandedOperator":
        """Adjoint, still banded: band k of A^dag is conj(band -k of A)."""
        n = self.dim
        diags = {}
        for b, k in enumerate(self.offsets):
            if k >= 0:
                d = self.drow[b, : n - k]
            else:
                d = self.drow[b, -k:]
            diags[-int(k)] = d.conj()
        return BandedOperator.from_diagonals(n, diags)

    def padded_to(self, offsets: np.ndarray) -> np.ndarray:
        """drow array aligned to a superset offset list (for fast combining)."""
        offsets = np.asarray(offsets, dtype=np.int64)
        out = np.zeros((len(offsets), self.dim), dtype=np.complex128)
        pos = {int(k): i for i, k in enumerate(offsets)}
        for b, k in enumerate(self.offsets):
            i = pos.get(int(k))
            if i is None:
                raise ValueError(f"offset {k} not contained in target set")
            out[i] = self.drow[b]
        return out

    def left(self, x: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
        """self @ x."""
        if out is None:
            out = np.empty_like(x)
        return _kernels.band_left(self.offsets, self.drow, x, out)

    def right_dag(self, x: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
        """x @ self^dagger."""
        if out is None:
            out = np.empty_like(x)
        return _kernels.band_right_dag(self.offsets, self.drow, x, out)

    def trace_with(self, rho: np.ndarray) -> complex:
        """Tr[self @ rho]."""
        return _kernels.band_trace(self.offsets, self.drow, rho)

    def __matmul__(self, other: "BandedOperator") -> "BandedOperator":
        """Exact banded product; offsets add."""
        if not isinstance(other, BandedOperator):
            return NotImplemented
        n = self.dim
        diags: dict[int, np.ndarray] = {}
        for ba, ka in enumerate(self.offsets):
            ka = int(ka)
            for bb, kb in enumerate(other.offsets):
                kb = int(kb)
                kc = ka + kb
                if abs(kc) >= n:
                    continue
                # C[r, r+kc] += A[r, r+ka] * B[r+ka, r+kc] over valid rows
                lo = max(0, -ka, -kc)
                hi = min(n, n - ka, n - kc)
                if lo >= hi:
                    continue
                acc = diags.setdefault(kc, np.zeros(n - abs(kc), dtype=np.complex128))
                vals = self.drow[ba, lo:hi] * other.drow[bb, lo + ka:hi + ka]
                if kc >= 0:
                    acc[lo:hi] += vals
                else:
                    acc[lo + kc:hi + kc] += vals
        return BandedOperator.from_diagonals(n, diags)

    @staticmethod
    def combine(dim: int, terms) -> "BandedOperator":
        """Linear combination sum(coeff * op) over (coeff, BandedOperator) pairs."""
        diags: dict[int, np.ndarray] = {}
        for coeff, op in terms:
            if coeff == 0:
                continue
            n = op.dim
            for b, k in enumerate(op.offsets):
                k = int(k)
                d = op.drow[b, : n - k] if k >= 0 else op.drow[b, -k:]
                acc = diags.setdefault(k, np.zeros(dim - abs(k), dtype=np.complex128))
                acc += coeff * d
        if not diags:
            diags = {0: np.zeros(dim, dtype=np.complex128)}
        return BandedOperator.from_diagonals(dim, diags)


@dataclass(frozen=True, eq=False)
class OperatorTable:
    """Precomputed operator monomials on a fixed truncated basis.

    All Hamiltonians used by the integrator are linear combinations of these.
    The table is immutable and safe to share across workers.
    """

    dim: int
    a: np.ndarray = field(repr=False)
    adag: np.ndarray = field(repr=False)
    q: np.ndarray = field(repr=False)
    q2: np.ndarray = field(repr=False)
    q3: np.ndarray = field(repr=False)
    q4: np.ndarray = field(repr=False)
    p: np.ndarray = field(repr=False)
    p2: np.ndarray = field(repr=False)
    qp_pq: np.ndarray = field(repr=False)
    identity: np.ndarray = field(repr=False)
    _bands: dict = field(default_factory=dict, repr=False, compare=False)

    def band(self, name: str) -> BandedOperator:
        """Banded form of a table operator, cached."""
        op = self._bands.get(name)
        if op is None:
            op = BandedOperator.from_dense(getattr(self, name), tol=0.0)
            self._bands[name] = op
        return op


def build_operator_table(dim: int) -> OperatorTable:
    """Build the monomial cache for a dim-level basis."""
    a = build_annihilation(dim)
    adag = a.conj().T.copy()
    q = (a + adag) / np.sqrt(2.0)
    p = (a - adag) * (-1j / np.sqrt(2.0))
    q2 = q @ q
    q3 = q2 @ q
    q4 = q2 @ q2
    p2 = p @ p
    qp_pq = q @ p + p @ q
    identity = np.eye(dim, dtype=np.complex128)
    return OperatorTable(dim=dim, a=a, adag=adag, q=q, q2=q2, q3=q3, q4=q4,
                         p=p, p2=p2, qp_pq=qp_pq, identity=identity)


def displacement(alpha: complex, dim: int) -> np.ndarray:
    """Phase-space displacement unitary exp(alpha a^dag - conj(alpha) a).

    Computed by scaling-and-squaring matrix exponential of the (truncated)
    generator, so the result is unitary to machine precision at every dim.
    The generator is reduced to its real form exp(|alpha| (a^dag - a)) and
    rotated back with number-operator phases, which keeps the exponential in
    real arithmetic.
    """
    alpha = complex(alpha)
    if not (np.isfinite(alpha.real) and np.isfinite(alpha.imag)):
        raise ValueError(f"displacement amplitude must be finite, got {alpha}")
    if alpha == 0:
        return np.eye(dim, dtype=np.complex128)
    r = abs(alpha)
    theta = np.angle(alpha)
    a_real = np.zeros((dim, dim))
    ns = np.arange(1, dim)
    a_real[ns - 1, ns] = np.sqrt(ns)
    d0 = scipy.linalg.expm(r * (a_real.T - a_real))
    phase = np.exp(1j * theta * np.arange(dim))
    return (phase[:, None] * d0) * phase.conj()[None, :]


def expectation(op: np.ndarray, rho: np.ndarray) -> complex:
    """Tr[op @ rho]."""
    if op.shape != rho.shape:
        raise ValueError(f"dimension mismatch: {op.shape} vs {rho.shape}")
    # Tr[A B] = sum_ij A_ij B_ji
    return complex(np.sum(op * rho.T))


def purity(rho: np.ndarray) -> float:
    """Tr[rho^2] for Hermitian rho; equals the squared Frobenius norm."""
    return float(np.vdot(rho, rho).real)


def trace_distance(rho1: np.ndarray, rho2: np.ndarray) -> float:
    """(1/2) * sum |eigenvalues| of (rho1 - rho2)."""
    if rho1.shape != rho2.shape:
        raise ValueError(f"dimension mismatch: {rho1.shape} vs {rho2.shape}")
    diff = hermitize(rho1 - rho2)
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(diff))))


def vacuum_dm(dim: int) -> np.ndarray:
    """|0><0| on a dim-level basis."""
    rho = np.zeros((dim, dim), dtype=np.complex128)
    rho[0, 0] = 1.0
    return rho


def fock_dm(n: int, dim: int) -> np.ndarray:
    """|n><n| on a dim-level basis."""
    if not 0 <= n < dim:
        raise ValueError(f"level {n} outside basis of size {dim}")
    rho = np.zeros((dim, dim), dtype=np.complex128)
    rho[n, n] = 1.0
    return rho


def coherent_dm(alpha: complex, dim: int) -> np.ndarray:
    """Coherent-state projector D(alpha)|0><0|D(alpha)^dag."""
    d = displacement(alpha, dim)
    psi = d[:, 0]
    return np.outer(psi, psi.conj())


def assert_density_matrix(rho: np.ndarray, herm_tol: float = 1e-10,
                          trace_tol: float = 1e-10, eig_floor: float = -1e-8) -> None:
    """Diagnostic validation of density-matrix invariants; raises ValueError."""
    dev = np.max(np.abs(rho - rho.conj().T))
    if dev > herm_tol:
        raise ValueError(f"not Hermitian: max deviation {dev:.3e}")
    tr = complex(np.trace(rho))
    if abs(tr - 1.0) > trace_tol:
        raise ValueError(f"trace {tr} not 1")
    w = np.linalg.eigvalsh(hermitize(rho))
    if w.min() < eig_floor:
        raise ValueError(f"negative eigenvalue {w.min():.3e}")
