"""Ensemble statistics: correlation, efficiency binning and per-bin moments.

Sums use ``math.fsum`` so results do not depend on accumulation order.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class StatsError(ValueError):
    pass


def _mean(values) -> float:
    return math.fsum(values) / len(values)


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Correlation coefficient with population moments."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise StatsError("pearson needs two 1-d sequences of equal length")
    if len(x) < 2:
        raise StatsError("pearson needs at least two samples")
    dx = x - _mean(x)
    dy = y - _mean(y)
    sxx = math.fsum(dx * dx)
    syy = math.fsum(dy * dy)
    if sxx == 0 or syy == 0:
        raise StatsError("correlation undefined for a constant sequence")
    r = math.fsum(dx * dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


@dataclass(frozen=True)
class BinStats:
    center: float
    width: float
    n: int
    mean_tau: float
    sigma: float
    se_mean: float
    se_sigma: float
    mu4: float
    var_of_var: float
    flags: frozenset = field(default_factory=frozenset)


def bin_stats(values: Sequence[float], center: float = math.nan, width: float = math.nan) -> BinStats:
    """Mean, population standard deviation and their sampling errors.

    ``var_of_var = (mu4 - sigma**4 (n-3)/(n-1)) / n`` is the variance of the
    sample variance; the error on ``sigma`` follows from it by the delta
    method, ``sqrt(var_of_var) / (2 sigma)``.
    """
    v = np.asarray(values, dtype=float)
    n = len(v)
    if n < 2:
        raise StatsError(f"bin_stats needs at least 2 values, got {n}")
    flags = set()
    mean = _mean(v)
    dev = v - mean
    var = math.fsum(dev**2) / n
    sigma = math.sqrt(var)
    mu4 = math.fsum(dev**4) / n
    se_mean = sigma / math.sqrt(n)
    if n < 4:
        var_of_var = math.nan
        se_sigma = math.nan
        flags.add("n_below_4")
    else:
        var_of_var = (mu4 - var * var * (n - 3) / (n - 1)) / n
        if var_of_var < -1e-14 * max(var * var, 1e-300):
            raise StatsError(f"negative variance of variance {var_of_var!r} (mu4={mu4!r}, var={var!r}, n={n})")
        var_of_var = max(var_of_var, 0.0)
        if sigma == 0:
            se_sigma = math.nan
            flags.add("zero_sigma")
        else:
            se_sigma = math.sqrt(var_of_var) / (2 * sigma)
    return BinStats(center, width, n, mean, sigma, se_mean, se_sigma, mu4, var_of_var, frozenset(flags))


@dataclass(frozen=True)
class EfficiencyBin:
    lo: float
    hi: float
    members: tuple  # indices into the binned sequence

    @property
    def center(self) -> float:
        return 0.5 * (self.lo + self.hi)

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def n(self) -> int:
        return len(self.members)


def _efficiency(r) -> float:
    return float(r.e_s if hasattr(r, "e_s") else r)


def bin_by_efficiency(records, width: float = 0.01, min_bin_count: int = 50) -> list[EfficiencyBin]:
    """Group records into windows ``[m*width, (m+1)*width)`` of stationary efficiency.

    Records may be NetworkRecord-like (``.e_s``) or plain numbers. Empty
    windows are dropped. The sparse top end is absorbed into one enlarged
    last bin: windows are merged from the top down until it holds at least
    ``min_bin_count`` members.
    """
    if not width > 0:
        raise StatsError("bin width must be positive")
    effs = np.array([_efficiency(r) for r in records], dtype=float)
    if len(effs) == 0:
        raise StatsError("cannot bin an empty record set")
    if not np.all(np.isfinite(effs)):
        raise StatsError("non-finite efficiencies cannot be binned")
    slot = np.floor(effs / width).astype(np.int64)
    occupied = np.unique(slot)
    groups = [(int(m), tuple(int(i) for i in np.flatnonzero(slot == m))) for m in occupied]
    top_slot, members = groups.pop()
    lo_slot = top_slot
    while len(members) < min_bin_count and groups:
        lo_slot, more = groups.pop()
        members = more + members
    bins = [EfficiencyBin(m * width, (m + 1) * width, mem) for m, mem in groups]
    bins.append(EfficiencyBin(lo_slot * width, (top_slot + 1) * width, members))
    return bins


def increasing_trend(means: Sequence[float], ses: Sequence[float], z: float = 2.0) -> bool:
    """True if bin means rise overall and never drop by more than ``z`` combined errors."""
    m = np.asarray(means, dtype=float)
    s = np.asarray(ses, dtype=float)
    if len(m) < 2:
        return False
    s = np.where(np.isfinite(s), s, 0.0)
    steps = np.diff(m)
    slack = z * np.sqrt(s[1:] ** 2 + s[:-1] ** 2)
    return bool(m[-1] > m[0] and np.all(steps >= -slack))


BIN_TABLE_FIELDS = ("mean_tau", "sigma", "se_mean", "se_sigma")


def binned_tau_table(records, k_list, width: float = 0.01, min_bin_count: int = 50) -> list[dict]:
    """One row per efficiency bin with per-K witness statistics.

    Records without a value for a given K (skipped or failed) are left out of
    that K's statistics.
    """
    records = list(records)
    rows = []
    for b in bin_by_efficiency(records, width, min_bin_count):
        row = {"bin_center": b.center, "width": b.width, "n": b.n}
        for k in k_list:
            vals = [records[i].tau.get(k) for i in b.members]
            vals = [v for v in vals if v is not None and math.isfinite(v)]
            if len(vals) >= 2:
                st = bin_stats(vals, b.center, b.width)
                row.update({f"{f}_{k}": getattr(st, f) for f in BIN_TABLE_FIELDS})
                row[f"n_{k}"] = st.n
            else:
                row.update({f"{f}_{k}": math.nan for f in BIN_TABLE_FIELDS})
                row[f"n_{k}"] = len(vals)
        rows.append(row)
    return rows


def write_table(rows: list[dict], path) -> None:
    if not rows:
        raise StatsError("nothing to write")
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
