"""Random network geometries and the dipolar hopping Hamiltonian.

Lengths are measured in units of the input/output pole distance and the
coupling constant is scaled to one, so the Hamiltonian carries entries
``1 / |r_i - r_j|**3`` and time is measured in the matching scaled unit.

Site ``1`` (index 0) sits at ``(0, 0, -1/2)`` and site ``N`` (index N-1) at
``(0, 0, +1/2)``; interior sites are drawn uniformly from the ball of
diameter one whose poles are these two sites.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15

DEFAULT_MIN_SEPARATION = 1e-3
MAX_RESAMPLES = 10_000

# Direct input-to-output transfer time for a unit pole coupling.
T_DIRECT = math.pi / 2


class GeometryError(ValueError):
    """Raised for infeasible or degenerate network geometries."""


def splitmix64(x: int) -> int:
    """SplitMix64 finaliser applied to a 64-bit integer."""
    z = x & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def network_seed(master_seed: int, index: int) -> int:
    """Seed of network ``index`` in a campaign.

    This is the ``(index + 1)``-th output of a SplitMix64 generator whose
    state starts at ``master_seed``, so any single network can be regenerated
    without touching the others.
    """
    if index < 0:
        raise ValueError("index must be non-negative")
    return splitmix64((master_seed + (index + 1) * GOLDEN_GAMMA) & MASK64)


def substream(seed: int, stream: int) -> np.random.Generator:
    """Independent numpy generator for one purpose (geometry, witness, ...) of one network."""
    return np.random.default_rng([seed & MASK64, stream])


STREAM_GEOMETRY = 0
STREAM_WITNESS = 1
STREAM_SUBSAMPLE = 2


@dataclass(frozen=True)
class NetworkGeometry:
    n_sites: int
    positions: np.ndarray
    seed: int = 0
    min_separation: float = 0.0
    resample_count: int = 0

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float)
        if pos.shape != (self.n_sites, 3):
            raise GeometryError(f"positions must have shape ({self.n_sites}, 3), got {pos.shape}")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    def distances(self) -> np.ndarray:
        diff = self.positions[:, None, :] - self.positions[None, :, :]
        return np.sqrt(np.sum(diff * diff, axis=-1))

    def permuted(self, perm) -> "NetworkGeometry":
        """Geometry with sites relabelled as ``new[i] = old[perm[i]]``."""
        return NetworkGeometry(self.n_sites, self.positions[list(perm)], self.seed,
                               self.min_separation, self.resample_count)

    def to_dict(self) -> dict:
        return {
            "n_sites": self.n_sites,
            "seed": self.seed,
            "min_separation": self.min_separation,
            "resample_count": self.resample_count,
            "positions": [[float(c) for c in row] for row in self.positions],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkGeometry":
        return cls(int(d["n_sites"]), np.array(d["positions"], dtype=float), int(d["seed"]),
                   float(d["min_separation"]), int(d["resample_count"]))

    def to_json(self) -> str:
        # json writes floats with repr, which round-trips doubles exactly
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "NetworkGeometry":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class RateSet:
    """Incoherent rates in inverse scaled time."""

    gamma_in: float = 2e-4
    gamma_out: float = 20.0
    gamma_rec: float = 20.0
    gamma_deph: float = 0.0

    def __post_init__(self):
        for name in ("gamma_in", "gamma_out", "gamma_rec", "gamma_deph"):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be a finite non-negative number, got {v}")
        if self.gamma_in > 0 and self.gamma_in >= self.gamma_out:
            warnings.warn("gamma_in >= gamma_out: the single-excitation truncation is "
                          "unlikely to be accurate", stacklevel=3)

    @property
    def recombination_lifetime(self) -> float:
        return math.inf if self.gamma_rec == 0 else 1.0 / self.gamma_rec

    @property
    def coherence_time(self) -> float:
        return math.inf if self.gamma_deph == 0 else 1.0 / self.gamma_deph

    def replace(self, **kw) -> "RateSet":
        d = self.to_dict()
        d.update(kw)
        return RateSet(**d)

    def to_dict(self) -> dict:
        return {"gamma_in": self.gamma_in, "gamma_out": self.gamma_out,
                "gamma_rec": self.gamma_rec, "gamma_deph": self.gamma_deph}


def _poles() -> tuple[np.ndarray, np.ndarray]:
    return np.array([0.0, 0.0, -0.5]), np.array([0.0, 0.0, 0.5])


def _min_pair_distance(pos: np.ndarray) -> float:
    diff = pos[:, None, :] - pos[None, :, :]
    d = np.sqrt(np.sum(diff * diff, axis=-1))
    d[np.diag_indices_from(d)] = np.inf
    return float(d.min())


def sample_geometry(n_sites: int, seed: int, min_separation: float = DEFAULT_MIN_SEPARATION,
                    max_resamples: int = MAX_RESAMPLES) -> NetworkGeometry:
    """Draw one random network.

    Interior sites are rejection-sampled from the cube ``[-1/2, 1/2]**3``
    into the ball of radius 1/2. A configuration with any pair closer than
    ``min_separation`` is discarded as a whole and redrawn.
    """
    if n_sites < 2:
        raise ValueError("n_sites must be >= 2")
    if not 0 <= min_separation < 0.5:
        raise ValueError("min_separation must lie in [0, 0.5)")
    rng = substream(seed, STREAM_GEOMETRY)
    first, last = _poles()
    n_inner = n_sites - 2
    resamples = 0
    while True:
        inner = np.empty((n_inner, 3))
        filled = 0
        while filled < n_inner:
            p = rng.uniform(-0.5, 0.5, size=3)
            if p @ p <= 0.25:
                inner[filled] = p
                filled += 1
        pos = np.vstack([first, inner, last])
        if min_separation == 0 or _min_pair_distance(pos) >= min_separation:
            return NetworkGeometry(n_sites, pos, seed, min_separation, resamples)
        resamples += 1
        if resamples > max_resamples:
            raise GeometryError(
                f"no configuration with min_separation={min_separation} after {max_resamples} resamples")


def coupling_matrix(geom: NetworkGeometry) -> np.ndarray:
    """Real symmetric hopping matrix ``H_ij = 1/|r_i - r_j|**3`` with zero diagonal."""
    d = geom.distances()
    off = ~np.eye(geom.n_sites, dtype=bool)
    if np.any(d[off] <= 0):
        raise GeometryError("coincident sites give a divergent coupling")
    h = np.zeros_like(d)
    h[off] = d[off] ** -3
    return h


def direct_transfer_time() -> float:
    return T_DIRECT


def physical_time(t_scaled: float, xi: float, pole_distance: float) -> float:
    """Convert scaled time to physical time, ``t_r = t * d**3 / xi``."""
    if xi <= 0 or pole_distance <= 0:
        raise ValueError("xi and pole_distance must be positive")
    return t_scaled * pole_distance**3 / xi


def scaled_time(t_physical: float, xi: float, pole_distance: float) -> float:
    if xi <= 0 or pole_distance <= 0:
        raise ValueError("xi and pole_distance must be positive")
    return t_physical * xi / pole_distance**3
