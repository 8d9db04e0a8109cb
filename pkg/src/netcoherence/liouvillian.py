"""Master-equation generator on the truncated excitation space and its steady state.

Basis of the ``{0,1}``-excitation space: index 0 is the global ground state,
index ``j`` (1..N) is a single excitation on site ``j``.

Superoperators act on column-stacked density matrices, ``vec(rho)[i + d*j] =
rho[i, j]``, for which ``vec(A X B) = kron(B.T, A) @ vec(X)``.
"""

from __future__ import annotations

import itertools
import json
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .network import NetworkGeometry, RateSet, coupling_matrix

RESIDUAL_TOL = 1e-10
POSITIVITY_TOL = 1e-10
UNIQUENESS_RATIO = 1e6


class SteadyStateError(RuntimeError):
    """The stationary solve failed one of its a-posteriori checks."""


@dataclass(frozen=True)
class JumpOperator:
    label: str
    rate: float
    matrix: np.ndarray  # already multiplied by sqrt(rate)


@dataclass(frozen=True)
class Liouvillian:
    matrix: np.ndarray
    hamiltonian: np.ndarray
    jump_ops: tuple = field(default_factory=tuple)

    @property
    def hilbert_dim(self) -> int:
        return self.hamiltonian.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def apply(self, rho: np.ndarray) -> np.ndarray:
        """``L(rho)`` evaluated term by term in extended precision.

        The dense ``matrix @ vec(rho)`` product rounds at ``eps * |L| * |rho|``,
        which exceeds 1e-12 once two sites sit close enough for couplings near
        1e5. Term by term, Hermiticity is preserved exactly; what remains of
        the trace error is the final rounding of entries of size ``|H| |rho|``.
        """
        r = np.asarray(rho).astype(np.clongdouble)
        h = self.hamiltonian.astype(np.clongdouble)
        out = -1j * (h @ r - r @ h)
        for jump in self.jump_ops:
            lk = (jump.matrix if isinstance(jump, JumpOperator) else jump).astype(np.clongdouble)
            ldl = lk.conj().T @ lk
            out += lk @ r @ lk.conj().T - 0.5 * (ldl @ r + r @ ldl)
        return out.astype(complex)

    def to_json(self) -> str:
        return json.dumps({"hilbert_dim": self.hilbert_dim, "matrix": complex_to_pairs(self.matrix)})


@dataclass(frozen=True)
class FluxTriple:
    j_in: float
    j_rec: float
    j_out: float

    @property
    def imbalance(self) -> float:
        return self.j_in - self.j_rec - self.j_out


def vec(rho: np.ndarray) -> np.ndarray:
    return np.asarray(rho, dtype=complex).reshape(-1, order="F")


def unvec(v: np.ndarray, d: int) -> np.ndarray:
    return np.asarray(v).reshape((d, d), order="F")


def complex_to_pairs(a: np.ndarray) -> list:
    a = np.asarray(a, dtype=complex)
    return np.stack([a.real, a.imag], axis=-1).tolist()


def pairs_to_complex(pairs) -> np.ndarray:
    a = np.asarray(pairs, dtype=float)
    return a[..., 0] + 1j * a[..., 1]


def density_to_json(rho: np.ndarray) -> str:
    return json.dumps(complex_to_pairs(rho))


def density_from_json(text: str) -> np.ndarray:
    return pairs_to_complex(json.loads(text))


def embed_hamiltonian(h: np.ndarray) -> np.ndarray:
    """Place the N x N hopping matrix in the single-excitation block; |0> is annihilated."""
    n = h.shape[0]
    out = np.zeros((n + 1, n + 1), dtype=complex)
    out[1:, 1:] = h
    return out


def _ket_bra(d: int, i: int, j: int) -> np.ndarray:
    m = np.zeros((d, d), dtype=complex)
    m[i, j] = 1.0
    return m


def build_jump_operators(rates: RateSet, n_sites: int) -> list[JumpOperator]:
    """Jump operators of the driven network projected onto the {0,1}-excitation space."""
    if n_sites < 2:
        raise ValueError("n_sites must be >= 2")
    d = n_sites + 1
    ops = []
    if rates.gamma_in > 0:
        g = np.sqrt(rates.gamma_in)
        ops.append(JumpOperator("in_emit", rates.gamma_in, g * _ket_bra(d, 0, 1)))
        ops.append(JumpOperator("in_absorb", rates.gamma_in, g * _ket_bra(d, 1, 0)))
    if rates.gamma_rec > 0:
        g = np.sqrt(rates.gamma_rec)
        for i in range(1, d):
            ops.append(JumpOperator(f"rec_{i}", rates.gamma_rec, g * _ket_bra(d, 0, i)))
    if rates.gamma_out > 0:
        ops.append(JumpOperator("out", rates.gamma_out, np.sqrt(rates.gamma_out) * _ket_bra(d, 0, n_sites)))
    if rates.gamma_deph > 0:
        g = np.sqrt(rates.gamma_deph)
        for i in range(1, d):
            z = -np.ones(d)
            z[i] = 1.0
            ops.append(JumpOperator(f"deph_{i}", rates.gamma_deph, g * np.diag(z).astype(complex)))
    return ops


def lindblad_superoperator(h: np.ndarray, jumps) -> np.ndarray:
    """Column-stacked matrix of rho -> -i[H, rho] + sum_k D[L_k](rho)."""
    d = h.shape[0]
    eye = np.eye(d)
    sup = -1j * (np.kron(eye, h) - np.kron(h.T, eye))
    for jump in jumps:
        lk = jump.matrix if isinstance(jump, JumpOperator) else jump
        if lk.shape != (d, d):
            raise ValueError(f"jump operator shape {lk.shape} does not match dimension {d}")
        ldl = lk.conj().T @ lk
        sup += np.kron(lk.conj(), lk) - 0.5 * np.kron(eye, ldl) - 0.5 * np.kron(ldl.T, eye)
    return sup


def build_liouvillian(h: np.ndarray, jumps) -> Liouvillian:
    """Generator for an N x N hopping matrix ``h`` and jump operators on N+1 levels."""
    h = np.asarray(h)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ValueError("hamiltonian must be square")
    hf = embed_hamiltonian(h)
    return Liouvillian(lindblad_superoperator(hf, jumps), hf, tuple(jumps))


def liouvillian_for(geom: NetworkGeometry, rates: RateSet) -> Liouvillian:
    return build_liouvillian(coupling_matrix(geom), build_jump_operators(rates, geom.n_sites))


def solve_stationary(sup: np.ndarray, d: int, check_uniqueness: bool = True) -> np.ndarray:
    """Kernel of ``sup`` normalised to unit trace, via trace-row replacement."""
    a = sup.copy()
    trace_row = np.zeros(d * d, dtype=complex)
    trace_row[:: d + 1] = 1.0
    a[0, :] = trace_row
    rhs = np.zeros(d * d, dtype=complex)
    rhs[0] = 1.0
    try:
        with warnings.catch_warnings():
            # conditioning is judged below by the singular values and the residual
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            x = scipy.linalg.solve(a, rhs, check_finite=False)
    except (scipy.linalg.LinAlgError, ValueError) as exc:
        raise SteadyStateError(f"stationary solve failed: {exc}") from exc
    if check_uniqueness:
        s = scipy.linalg.svdvals(sup, check_finite=False)
        floor = np.finfo(float).eps * s[0]
        if s[-2] < UNIQUENESS_RATIO * max(s[-1], floor):
            raise SteadyStateError(
                f"kernel not one-dimensional: smallest singular values {s[-2]:.3e}, {s[-1]:.3e}")
    rho = unvec(x, d)
    rho = 0.5 * (rho + rho.conj().T)
    resid = np.linalg.norm(sup @ vec(rho))
    if not resid <= RESIDUAL_TOL:
        raise SteadyStateError(f"steady-state residual {resid:.3e} above {RESIDUAL_TOL}")
    lam_min = np.linalg.eigvalsh(rho)[0]
    if lam_min < -POSITIVITY_TOL:
        raise SteadyStateError(f"steady state has negative eigenvalue {lam_min:.3e}")
    return rho


def steady_state(l: Liouvillian, check_uniqueness: bool = True) -> np.ndarray:
    return solve_stationary(l.matrix, l.hilbert_dim, check_uniqueness)


def fluxes(rho: np.ndarray, rates: RateSet) -> FluxTriple:
    """Injection, recombination and sink fluxes of a {0,1}-excitation density matrix.

    ``j_in`` is ``tr(N L_in(rho))`` for the projected injection channel,
    ``gamma_in * (rho_00 - rho_11)``. In the untruncated model this reads
    ``gamma_in * (1 - 2 rho_11)``; the two differ by ``gamma_in`` times the
    population of sites 2..N, i.e. at second order in ``gamma_in``.
    """
    pops = np.real(np.diag(rho))
    j_in = rates.gamma_in * (pops[0] - pops[1])
    j_rec = rates.gamma_rec * float(np.sum(pops[1:]))
    j_out = rates.gamma_out * pops[-1]
    return FluxTriple(float(j_in), j_rec, float(j_out))


def stationary_efficiency(rho: np.ndarray, rates: RateSet) -> float:
    """Sink flux per unit injection rate, ``(gamma_out / gamma_in) * rho_NN``."""
    if rates.gamma_in <= 0:
        raise ValueError("stationary efficiency needs gamma_in > 0")
    return float(rates.gamma_out / rates.gamma_in * np.real(rho[-1, -1]))


# --- {0,1,2}-excitation check -------------------------------------------------

def two_excitation_basis(n_sites: int) -> list[tuple]:
    basis = [()]
    basis += [(i,) for i in range(n_sites)]
    basis += list(itertools.combinations(range(n_sites), 2))
    return basis


def _two_exc_operators(n_sites: int):
    basis = two_excitation_basis(n_sites)
    index = {s: k for k, s in enumerate(basis)}
    d = len(basis)
    lower = []
    raise_ = []
    for i in range(n_sites):
        lo = np.zeros((d, d), dtype=complex)
        up = np.zeros((d, d), dtype=complex)
        for k, s in enumerate(basis):
            if i in s:
                lo[index[tuple(x for x in s if x != i)], k] = 1.0
            else:
                t = tuple(sorted(s + (i,)))
                if t in index:
                    up[index[t], k] = 1.0
        lower.append(lo)
        raise_.append(up)
    return basis, lower, raise_


@dataclass(frozen=True)
class DoubleExcitationCheck:
    ratio: float
    one_excitation: float
    two_excitation: float
    flags: frozenset = frozenset()


def validate_single_excitation(geom: NetworkGeometry, rates: RateSet) -> DoubleExcitationCheck:
    """Steady-state weight of doubly excited states relative to singly excited ones.

    The same channels as :func:`build_jump_operators` are built on the
    ``{0,1,2}``-excitation space (dimension ``1 + N + N(N-1)/2``), with the
    injection raising operator projected onto that space.
    """
    n = geom.n_sites
    h = coupling_matrix(geom)
    basis, lower, up = _two_exc_operators(n)
    d = len(basis)
    hf = np.zeros((d, d), dtype=complex)
    for i in range(n):
        for j in range(n):
            if i != j:
                hf += h[i, j] * (up[i] @ lower[j])
    jumps = []
    if rates.gamma_in > 0:
        jumps += [np.sqrt(rates.gamma_in) * lower[0], np.sqrt(rates.gamma_in) * up[0]]
    if rates.gamma_rec > 0:
        jumps += [np.sqrt(rates.gamma_rec) * lo for lo in lower]
    if rates.gamma_out > 0:
        jumps.append(np.sqrt(rates.gamma_out) * lower[-1])
    if rates.gamma_deph > 0:
        for i in range(n):
            z = np.array([1.0 if i in s else -1.0 for s in basis])
            jumps.append(np.sqrt(rates.gamma_deph) * np.diag(z).astype(complex))
    rho = solve_stationary(lindblad_superoperator(hf, jumps), d, check_uniqueness=False)
    pops = np.real(np.diag(rho))
    p1 = float(np.sum(pops[1 : n + 1]))
    p2 = float(np.sum(pops[n + 1 :]))
    if rates.gamma_in == 0 or p1 <= 0:
        return DoubleExcitationCheck(0.0, p1, p2, frozenset({"no_excitation"}))
    return DoubleExcitationCheck(p2 / p1, p1, p2)
