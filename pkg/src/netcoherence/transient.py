"""Coherent transient transport from the input to the output site."""

from __future__ import annotations

import numpy as np
import scipy.linalg

from .liouvillian import build_jump_operators, build_liouvillian, vec
from .network import RateSet

IMAG_TOL = 1e-12


def _spectrum(h: np.ndarray):
    h = np.asarray(h, dtype=float)
    try:
        energies, vecs = np.linalg.eigh(h)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError(f"eigendecomposition failed: {exc}") from exc
    # c_a = <N|a><a|1>
    return energies, vecs[-1, :] * vecs[0, :]


def output_amplitude(h: np.ndarray, t):
    """``<N| exp(-iHt) |1>`` for scalar or array ``t``."""
    energies, c = _spectrum(h)
    t = np.asarray(t, dtype=float)
    return np.exp(-1j * np.multiply.outer(t, energies)) @ c


def transient_population(h: np.ndarray, t):
    """Output-site population ``|<N|exp(-iHt)|1>|**2`` starting from site 1."""
    if np.any(np.asarray(t) < 0):
        raise ValueError("t must be non-negative")
    return np.abs(output_amplitude(h, t)) ** 2


def transient_efficiency(h: np.ndarray, t_weight: float) -> float:
    """Exponentially weighted output population, ``(1/T) int p_N(t) exp(-t/T) dt``.

    Evaluated in closed form over the eigenpairs of ``h``:
    ``sum_ab c_a conj(c_b) / (1 + i T (E_a - E_b))``.
    """
    if not t_weight > 0:
        raise ValueError("t_weight must be positive")
    energies, c = _spectrum(h)
    gap = energies[:, None] - energies[None, :]
    val = np.sum(np.outer(c, c) / (1.0 + 1j * t_weight * gap))
    if abs(val.imag) > IMAG_TOL:
        raise RuntimeError(f"transient efficiency has imaginary part {val.imag:.3e}")
    return float(min(max(val.real, 0.0), 1.0))


def transient_efficiency_dissipative(h: np.ndarray, rates: RateSet, t_weight: float) -> float:
    """Variant where the excitation evolves under the full generator (no injection).

    Uses the resolvent ``(1/T) <N|(1/T - L)^{-1} |1><1|`` instead of unitary
    dynamics. Exploration only.
    """
    if not t_weight > 0:
        raise ValueError("t_weight must be positive")
    n = h.shape[0]
    gen = build_liouvillian(h, build_jump_operators(rates.replace(gamma_in=0.0), n))
    d = n + 1
    rho0 = np.zeros((d, d), dtype=complex)
    rho0[1, 1] = 1.0
    a = np.eye(d * d) / t_weight - gen.matrix
    x = scipy.linalg.solve(a, vec(rho0)) / t_weight
    return float(np.real(x[n + d * n]))


def two_site_efficiency(t_weight: float) -> float:
    """Closed form for two sites with unit coupling, ``2T^2 / (1 + 4T^2)``."""
    return 2 * t_weight**2 / (1 + 4 * t_weight**2)
