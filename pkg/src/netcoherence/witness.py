"""K-site coherence witness on the single-excitation sector.

Each site ``i`` carries a pair of orthonormal qubit states parametrised by
Bloch angles::

    |phi_i>      =  cos(theta_i/2) |g> + exp(i phi_i) sin(theta_i/2) |e>
    |phi_i^perp> = -exp(-i phi_i) sin(theta_i/2) |g> + cos(theta_i/2) |e>

and the raw witness for a normalised single-excitation state ``rho`` is::

    |<P1|rho|P2>| - a_KN * sum_i sqrt(<P1^i|rho|P1^i> <P2^i|rho|P2^i>)

with ``P1 = (x) phi``, ``P2 = (x) phi^perp``, and ``P1^i`` / ``P2^i`` the
same products with site ``i`` swapped to the partner state. It is
non-positive on every state without K-site coherence, for any angles, so any
parameter set yields a valid lower bound; ``tau`` maximises it with a
multi-start Nelder-Mead search and rescales by ``b_KN`` so that the state
``sum_{i<=K} |i> / sqrt(K)`` scores one.

Parameter vectors are laid out as ``[theta_1..theta_N, phi_1..phi_N]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

WEIGHT_FLOOR = 1e-12
INITIAL_STEP = 0.25
ROUNDING_GUARD = 4 * np.finfo(np.float64).eps


class WitnessError(ValueError):
    pass


@dataclass(frozen=True)
class ProjectedState:
    matrix: np.ndarray
    weight: float = 1.0

    @property
    def n_sites(self) -> int:
        return self.matrix.shape[0]


@dataclass
class WitnessConfig:
    restarts: int = 32
    max_iters: int = 2000
    tol: float = 1e-8
    b_cache: dict = field(default_factory=dict)
    calibration_restarts: int = 128
    calibration_seed: int = 0

    def __post_init__(self):
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.max_iters < 1 or not self.tol > 0:
            raise ValueError("max_iters and tol must be positive")
        for key, b in self.b_cache.items():
            if not b > 0:
                raise ValueError(f"b_cache[{key}] must be positive")

    def to_dict(self) -> dict:
        return {"restarts": self.restarts, "max_iters": self.max_iters, "tol": self.tol,
                "b_cache": {f"{k},{n}": b for (k, n), b in sorted(self.b_cache.items())}}

    @classmethod
    def from_dict(cls, d: dict) -> "WitnessConfig":
        d = dict(d)
        cache = {}
        for key, b in d.pop("b_cache", {}).items():
            k, n = (int(v) for v in key.split(","))
            cache[(k, n)] = float(b)
        return cls(b_cache=cache, **d)


@dataclass(frozen=True)
class TauResult:
    value: float
    raw: float
    params: np.ndarray
    converged: bool
    restart_values: np.ndarray

    @property
    def certifies(self) -> bool:
        return self.value > 0


def project_single_excitation(rho: np.ndarray, floor: float = WEIGHT_FLOOR) -> ProjectedState:
    """Renormalised single-excitation block of an (N+1) x (N+1) density matrix."""
    rho = np.asarray(rho, dtype=complex)
    block = rho[1:, 1:]
    weight = float(np.real(np.trace(block)))
    if not weight > floor:
        raise WitnessError(f"single-excitation weight {weight:.3e} below floor {floor:.1e}")
    m = block / weight
    return ProjectedState(0.5 * (m + m.conj().T), weight)


def w_state(k: int, n_sites: int) -> ProjectedState:
    """Excitation spread with equal amplitude over the first ``k`` of ``n_sites`` sites."""
    if not 2 <= k <= n_sites:
        raise WitnessError(f"need 2 <= k <= n_sites, got k={k}, n_sites={n_sites}")
    psi = np.zeros(n_sites, dtype=complex)
    psi[:k] = 1 / math.sqrt(k)
    return ProjectedState(np.outer(psi, psi.conj()))


def prefactor(k: int, n_sites: int) -> float:
    if not 2 <= k <= n_sites:
        raise WitnessError(f"need 2 <= k <= n_sites, got k={k}, n_sites={n_sites}")
    return 1.0 / n_sites if k == 2 else 1.0 / (n_sites - k + 1)


# --- jitted kernels -----------------------------------------------------------

@numba.njit(cache=True)
def _pair_products(g, single, pair):
    # single[j] = prod_{k != j} g_k ; pair[i, j] = prod_{k not in {i, j}} g_k
    n = g.shape[0]
    suffix = np.empty(n + 1, np.complex128)
    suffix[n] = 1.0
    for j in range(n - 1, -1, -1):
        suffix[j] = suffix[j + 1] * g[j]
    pre = 1.0 + 0.0j
    for i in range(n):
        single[i] = pre * suffix[i + 1]
        mid = 1.0 + 0.0j
        for j in range(i + 1, n):
            pair[i, j] = pre * mid * suffix[j + 1]
            pair[j, i] = pair[i, j]
            mid *= g[j]
        pre *= g[i]


@numba.njit(cache=True)
def _swapped_expectations(rho, e_own, g_swap, e_swap, single, pair, x, out):
    # out is complex storage; only the real part is written
    # out[i] = <X^i|rho|X^i>, X^i the product state with the partner pair at site i
    n = rho.shape[0]
    for i in range(n):
        for j in range(n):
            if j == i:
                x[j] = e_swap[i] * single[i]
            else:
                x[j] = e_own[j] * g_swap[i] * pair[i, j]
        acc = 0.0
        for j in range(n):
            xj = x[j].conjugate()
            acc += rho[j, j].real * (xj * x[j]).real
            off = 0.0j
            for l in range(j + 1, n):
                off += rho[j, l] * x[l]
            acc += 2.0 * (xj * off).real
        out[i] = acc


@numba.njit(cache=True)
def _raw_core(rho, a, x, reduced, buf):
    # reduced: x = [thetas, phis[1:]] with phi_1 = 0; a common phase shift
    # of all phis leaves the witness unchanged.
    n = rho.shape[0]
    g1 = buf[0]
    e1 = buf[1]
    g2 = buf[2]
    e2 = buf[3]
    single1 = buf[4]
    single2 = buf[5]
    tmp = buf[6]
    q1 = buf[7]
    q2 = buf[8]
    pair1 = buf[9 : 9 + n]
    pair2 = buf[9 + n : 9 + 2 * n]
    for k in range(n):
        c = math.cos(0.5 * x[k])
        s = math.sin(0.5 * x[k])
        if reduced:
            phase = 0.0 if k == 0 else x[n + k - 1]
        else:
            phase = x[n + k]
        ph = complex(math.cos(phase), math.sin(phase))
        g1[k] = c
        e1[k] = ph * s
        g2[k] = -ph.conjugate() * s
        e2[k] = c
    _pair_products(g1, single1, pair1)
    _pair_products(g2, single2, pair2)
    cross = 0.0j
    for j in range(n):
        row = 0.0j
        for l in range(n):
            row += rho[j, l] * (e2[l] * single2[l])
        cross += (e1[j] * single1[j]).conjugate() * row
    _swapped_expectations(rho, e1, g2, e2, single1, pair1, tmp, q1)
    _swapped_expectations(rho, e2, g1, e1, single2, pair2, tmp, q2)
    penalty = 0.0
    for i in range(n):
        p = q1[i].real * q2[i].real
        if p > 0:
            penalty += math.sqrt(p)
    # shift by a bound on the accumulated rounding error so that states sitting
    # exactly on the zero boundary can never come out positive
    coh = abs(cross)
    return coh - a * penalty - ROUNDING_GUARD * n * (coh + a * penalty)


@numba.njit(cache=True)
def _workspace(n):
    return np.empty((9 + 2 * n, n), np.complex128)


@numba.njit(cache=True)
def _raw(rho, a, x):
    buf = _workspace(rho.shape[0])
    return _raw_core(rho, a, x, False, buf)


@numba.njit(cache=True)
def _raw_batch(rho, a, xs):
    buf = _workspace(rho.shape[0])
    out = np.empty(xs.shape[0])
    for r in range(xs.shape[0]):
        out[r] = _raw_core(rho, a, xs[r], False, buf)
    return out


@numba.njit(cache=True)
def _insert_last(order, fs):
    # restore ascending fs[order] after order[-1] changed value
    pos = order.shape[0] - 1
    v = order[pos]
    while pos > 0 and fs[order[pos - 1]] > fs[v]:
        order[pos] = order[pos - 1]
        pos -= 1
    order[pos] = v


@numba.njit(cache=True)
def _maximize(rho, a, y0, step, tol, max_iters):
    """Adaptive Nelder-Mead on -raw over reduced angles. Returns (y_best, f_best, converged)."""
    dim = y0.shape[0]
    buf = _workspace(rho.shape[0])
    alpha = 1.0
    beta = 1.0 + 2.0 / dim
    gamma = 0.75 - 0.5 / dim
    delta = 1.0 - 1.0 / dim
    sim = np.empty((dim + 1, dim))
    fs = np.empty(dim + 1)
    for i in range(dim + 1):
        sim[i] = y0
        if i > 0:
            sim[i, i - 1] += step
        fs[i] = -_raw_core(rho, a, sim[i], True, buf)
    order = np.argsort(fs)
    total = np.zeros(dim)
    for i in range(dim + 1):
        total += sim[i]
    centroid = np.empty(dim)
    xr = np.empty(dim)
    xe = np.empty(dim)
    xc = np.empty(dim)
    converged = False
    for _ in range(max_iters):
        best = order[0]
        worst = order[dim]
        if fs[worst] - fs[best] <= tol:
            converged = True
            break
        for j in range(dim):
            centroid[j] = (total[j] - sim[worst, j]) / dim
            xr[j] = centroid[j] + alpha * (centroid[j] - sim[worst, j])
        fr = -_raw_core(rho, a, xr, True, buf)
        new_f = fr
        new_x = xr
        shrink = False
        if fr < fs[best]:
            for j in range(dim):
                xe[j] = centroid[j] + beta * (xr[j] - centroid[j])
            fe = -_raw_core(rho, a, xe, True, buf)
            if fe < fr:
                new_f = fe
                new_x = xe
        elif fr >= fs[order[dim - 1]]:
            if fr < fs[worst]:
                for j in range(dim):
                    xc[j] = centroid[j] + gamma * (xr[j] - centroid[j])
                fc = -_raw_core(rho, a, xc, True, buf)
                accept = fc <= fr
            else:
                for j in range(dim):
                    xc[j] = centroid[j] - gamma * (centroid[j] - sim[worst, j])
                fc = -_raw_core(rho, a, xc, True, buf)
                accept = fc < fs[worst]
            new_f = fc
            new_x = xc
            shrink = not accept
        if shrink:
            for r in range(1, dim + 1):
                i = order[r]
                for j in range(dim):
                    sim[i, j] = sim[best, j] + delta * (sim[i, j] - sim[best, j])
                fs[i] = -_raw_core(rho, a, sim[i], True, buf)
            order = np.argsort(fs)
            total[:] = 0.0
            for i in range(dim + 1):
                total += sim[i]
        else:
            for j in range(dim):
                total[j] += new_x[j] - sim[worst, j]
                sim[worst, j] = new_x[j]
            fs[worst] = new_f
            _insert_last(order, fs)
    b = order[0]
    return sim[b].copy(), -fs[b], converged


@numba.njit(cache=True)
def _multistart(rho, a, starts, step, tol, max_iters):
    m = starts.shape[0]
    values = np.empty(m)
    best_x = starts[0].copy()
    best_f = -np.inf
    for r in range(m):
        x, f, _ = _maximize(rho, a, starts[r], step, tol, max_iters)
        values[r] = f
        if f > best_f:
            best_f = f
            best_x = x
    # polish: a fresh, smaller simplex around the winner; its convergence is reported
    x, f, converged = _maximize(rho, a, best_x, 0.1 * step, tol, max_iters)
    if f > best_f:
        best_f = f
        best_x = x
    return best_x, best_f, values, converged


# --- public API ---------------------------------------------------------------

def _as_matrix(rho) -> np.ndarray:
    m = rho.matrix if isinstance(rho, ProjectedState) else rho
    return np.ascontiguousarray(m, dtype=np.complex128)


def pack_params(thetas, phis) -> np.ndarray:
    return np.concatenate([np.asarray(thetas, float), np.asarray(phis, float)])


def witness_raw(rho, params, k: int) -> float:
    """Raw witness value for one parameter vector ``[thetas, phis]``."""
    m = _as_matrix(rho)
    n = m.shape[0]
    x = np.asarray(params, dtype=float)
    if x.shape != (2 * n,):
        raise WitnessError(f"expected {2 * n} angles, got shape {x.shape}")
    return float(_raw(m, prefactor(k, n), x))


def witness_raw_batch(rho, params, k: int) -> np.ndarray:
    m = _as_matrix(rho)
    n = m.shape[0]
    xs = np.ascontiguousarray(params, dtype=float)
    if xs.ndim != 2 or xs.shape[1] != 2 * n:
        raise WitnessError(f"expected (m, {2 * n}) angles, got shape {xs.shape}")
    return _raw_batch(m, prefactor(k, n), xs)


def symmetric_start(n_sites: int) -> np.ndarray:
    return pack_params(np.full(n_sites, math.pi / 2), np.zeros(n_sites))


def expand_params(y: np.ndarray, n_sites: int) -> np.ndarray:
    """Full ``[thetas, phis]`` vector from optimiser coordinates (``phi_1 = 0``)."""
    return np.concatenate([y[:n_sites], [0.0], y[n_sites:]])


def random_starts(n_sites: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` starts in optimiser coordinates; the first is the symmetric point.

    Start ``r`` depends only on ``rng`` and ``r``, so a larger budget extends
    a smaller one.
    """
    starts = np.empty((count, 2 * n_sites - 1))
    starts[0, :n_sites] = math.pi / 2
    starts[0, n_sites:] = 0.0
    for r in range(1, count):
        starts[r, :n_sites] = rng.uniform(0.0, math.pi, n_sites)
        starts[r, n_sites:] = rng.uniform(0.0, 2 * math.pi, n_sites - 1)
    return starts


def aligned_starts(rho) -> np.ndarray:
    """Two starts with all ``theta = pi/2`` and phases following the dominant eigenvector.

    The phases are taken relative to site 1, once with each sign; both starts
    move covariantly with a diagonal unitary rotation of ``rho``.
    """
    m = _as_matrix(rho)
    n = m.shape[0]
    _, vecs = np.linalg.eigh(m)
    rel = np.angle(vecs[:, -1]) - np.angle(vecs[0, -1])
    out = np.empty((2, 2 * n - 1))
    out[:, :n] = math.pi / 2
    out[0, n:] = np.mod(rel[1:], 2 * math.pi)
    out[1, n:] = np.mod(-rel[1:], 2 * math.pi)
    return out


def maximize_raw(rho, k: int, restarts: int, max_iters: int, tol: float,
                 rng: np.random.Generator | None = None):
    """Best raw witness over ``restarts`` simplex searches; ``tol`` is on the raw scale.

    Starts, in order: the symmetric point, the two eigenvector-aligned points,
    then random points from ``rng``. Returns ``(y, f, per_start_values, converged)``.
    """
    m = _as_matrix(rho)
    n = m.shape[0]
    if rng is None:
        rng = np.random.default_rng(0)
    starts = random_starts(n, max(restarts - 2, 1), rng)
    starts = np.vstack([starts[:1], aligned_starts(m), starts[1:]])[:restarts]
    return _multistart(m, prefactor(k, n), np.ascontiguousarray(starts), INITIAL_STEP, tol, max_iters)


def calibrate_b(k: int, n_sites: int, cfg: WitnessConfig | None = None,
                seed: int | None = None) -> float:
    """Normalisation ``b_KN`` making the K-site W state score exactly one.

    Cached in ``cfg.b_cache`` when no explicit ``seed`` is given.
    """
    cfg = cfg or WitnessConfig()
    key = (k, n_sites)
    if seed is None and key in cfg.b_cache:
        return cfg.b_cache[key]
    rng = np.random.default_rng([cfg.calibration_seed if seed is None else seed, k, n_sites])
    best_x, best_f, _, _ = maximize_raw(w_state(k, n_sites), k, cfg.calibration_restarts,
                                        max(cfg.max_iters, 10_000), min(cfg.tol, 1e-12), rng)
    if not best_f > 0:
        raise WitnessError(f"calibration maximum {best_f:.3e} is not positive for K={k}, N={n_sites}")
    b = 1.0 / best_f
    if seed is None:
        cfg.b_cache[key] = b
    return b


def tau(rho, k: int, cfg: WitnessConfig | None = None,
        rng: np.random.Generator | None = None) -> TauResult:
    """Normalised witness maximised over local state pairs.

    The value is a lower bound on the true maximum; a positive value
    certifies K-site coherence. ``converged`` reports whether the final
    polishing search around the best restart met the tolerance.
    """
    cfg = cfg or WitnessConfig()
    m = _as_matrix(rho)
    n = m.shape[0]
    b = calibrate_b(k, n, cfg)
    x, f, values, conv = maximize_raw(m, k, cfg.restarts, cfg.max_iters, cfg.tol / b, rng)
    return TauResult(b * float(f), float(f), expand_params(x, n), bool(conv), b * values)


def w_thresholds(n_sites: int, k_list, cfg: WitnessConfig | None = None) -> dict:
    """``tau_K(W_K')`` for every K in ``k_list`` and every K' in 2..N."""
    cfg = cfg or WitnessConfig()
    out = {}
    for k in k_list:
        for kp in range(2, n_sites + 1):
            out[(k, kp)] = tau(w_state(kp, n_sites), k, cfg).value
    return out
