"""Campaigns over random networks: per-network pipeline, persistence and sweeps."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .liouvillian import (SteadyStateError, build_jump_operators, build_liouvillian, fluxes,
                          stationary_efficiency, steady_state)
from .network import (DEFAULT_MIN_SEPARATION, STREAM_SUBSAMPLE, STREAM_WITNESS, GeometryError,
                      RateSet, coupling_matrix, network_seed, sample_geometry, substream)
from .stats import pearson
from .transient import transient_efficiency, transient_efficiency_dissipative
from .witness import WitnessConfig, WitnessError, calibrate_b, project_single_excitation, tau

log = logging.getLogger(__name__)

RECORD_FIELDS = ("index", "seed", "e_s", "e_t", "j_in", "j_rec", "j_out",
                 "tau2", "tau3", "tau4", "weight_1exc", "flags")
TAU_COLUMNS = {2: "tau2", 3: "tau3", 4: "tau4"}
FLUX_TOL = 1e-10
RANGE_TOL = 1e-9
MAX_FAILURE_FRACTION = 0.01
FAILURE_FLAGS = frozenset({"geometry_failed", "steady_state_failed"})
TRANSIENT_MODES = ("unitary", "dissipative")


class CampaignError(RuntimeError):
    pass


@dataclass
class CampaignConfig:
    n_sites: int = 7
    n_networks: int = 10_000
    master_seed: int = 0
    rates: RateSet = field(default_factory=RateSet)
    t_weight: float = math.pi / 80
    k_list: tuple = (2, 3, 4)
    witness: WitnessConfig = field(default_factory=WitnessConfig)
    bin_width: float = 0.01
    min_bin_count: int = 50
    min_separation: float = DEFAULT_MIN_SEPARATION
    tau_fraction: float = 1.0
    transient_mode: str = "unitary"
    output_path: str = ""
    workers: int = 1

    def __post_init__(self):
        if isinstance(self.rates, dict):
            self.rates = RateSet(**self.rates)
        if isinstance(self.witness, dict):
            self.witness = WitnessConfig.from_dict(self.witness)
        self.k_list = tuple(sorted(int(k) for k in self.k_list))
        if self.n_networks < 1:
            raise ValueError("n_networks must be >= 1")
        if not self.t_weight > 0:
            raise ValueError("t_weight must be positive")
        if not 2 <= self.n_sites:
            raise ValueError("n_sites must be >= 2")
        bad = [k for k in self.k_list if k not in TAU_COLUMNS or k > self.n_sites]
        if bad:
            raise ValueError(f"k_list entries {bad} outside {{2, 3, 4}} or above n_sites")
        if not 0 <= self.tau_fraction <= 1:
            raise ValueError("tau_fraction must lie in [0, 1]")
        if self.transient_mode not in TRANSIENT_MODES:
            raise ValueError(f"transient_mode must be one of {TRANSIENT_MODES}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        d["rates"] = self.rates.to_dict()
        d["witness"] = self.witness.to_dict()
        d["k_list"] = list(self.k_list)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CampaignConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "witness" in d:
            wkeys = set(d["witness"]) - {"restarts", "max_iters", "tol", "b_cache"}
            if wkeys:
                raise ValueError(f"unknown witness keys: {sorted(wkeys)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "CampaignConfig":
        return cls.from_dict(json.loads(text))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def replace(self, **kw) -> "CampaignConfig":
        d = self.to_dict()
        d.update(kw)
        return CampaignConfig.from_dict(d)

    def physics_hash(self) -> str:
        """Hash of everything that determines the records (not workers or paths)."""
        d = self.to_dict()
        for key in ("output_path", "workers", "bin_width", "min_bin_count"):
            d.pop(key)
        d["witness"].pop("b_cache")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


@dataclass(frozen=True)
class NetworkRecord:
    index: int
    seed: int
    e_s: float
    e_t: float
    j_in: float
    j_rec: float
    j_out: float
    tau: dict
    weight_1exc: float
    flags: frozenset = frozenset()

    @property
    def failed(self) -> bool:
        return bool(self.flags & FAILURE_FLAGS)

    def to_row(self) -> list[str]:
        def fmt(v):
            return "" if v is None else repr(float(v))
        return [str(self.index), str(self.seed), fmt(self.e_s), fmt(self.e_t), fmt(self.j_in),
                fmt(self.j_rec), fmt(self.j_out), *(fmt(self.tau.get(k)) for k in TAU_COLUMNS),
                fmt(self.weight_1exc), ";".join(sorted(self.flags))]

    @classmethod
    def from_row(cls, row: dict) -> "NetworkRecord":
        def num(key):
            return float(row[key]) if row[key] != "" else math.nan
        taus = {k: float(row[c]) for k, c in TAU_COLUMNS.items() if row.get(c, "") != ""}
        flags = frozenset(f for f in row["flags"].split(";") if f)
        return cls(int(row["index"]), int(row["seed"]), num("e_s"), num("e_t"), num("j_in"),
                   num("j_rec"), num("j_out"), taus, num("weight_1exc"), flags)


def records_to_csv(records) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RECORD_FIELDS)
    for r in sorted(records, key=lambda r: r.index):
        writer.writerow(r.to_row())
    return buf.getvalue()


def write_records(records, path) -> None:
    Path(path).write_text(records_to_csv(records))


def read_records(path) -> list[NetworkRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RECORD_FIELDS:
            raise CampaignError(f"unexpected record header {reader.fieldnames}")
        return [NetworkRecord.from_row(row) for row in reader]


# --- per-network pipeline -------------------------------------------------------

def _tau_selected(seed: int, fraction: float) -> bool:
    if fraction >= 1:
        return True
    if fraction <= 0:
        return False
    return bool(substream(seed, STREAM_SUBSAMPLE).random() < fraction)


def evaluate_network(index: int, cfg: CampaignConfig) -> NetworkRecord:
    """Full pipeline for one network; failures end up in ``flags``."""
    seed = network_seed(cfg.master_seed, index)
    nan = math.nan
    flags = set()
    try:
        geom = sample_geometry(cfg.n_sites, seed, cfg.min_separation)
    except GeometryError as exc:
        log.warning("network %d: %s", index, exc)
        return NetworkRecord(index, seed, nan, nan, nan, nan, nan, {}, nan, frozenset({"geometry_failed"}))
    if geom.resample_count:
        flags.add("resampled")
    h = coupling_matrix(geom)
    rates = cfg.rates
    if cfg.transient_mode == "unitary":
        e_t = transient_efficiency(h, cfg.t_weight)
    else:
        e_t = transient_efficiency_dissipative(h, rates, cfg.t_weight)
    try:
        rho = steady_state(build_liouvillian(h, build_jump_operators(rates, cfg.n_sites)))
    except SteadyStateError as exc:
        log.warning("network %d: %s", index, exc)
        flags.add("steady_state_failed")
        return NetworkRecord(index, seed, nan, e_t, nan, nan, nan, {}, nan, frozenset(flags))
    fl = fluxes(rho, rates)
    if rates.gamma_in > 0:
        e_s = stationary_efficiency(rho, rates)
    else:
        e_s = nan
        flags.add("no_injection")
    if abs(fl.imbalance) > FLUX_TOL:
        flags.add("flux_imbalance")
    in_range = [-RANGE_TOL <= v <= 1 + RANGE_TOL for v in (e_s, e_t) if not math.isnan(v)]
    if not all(in_range):
        flags.add("efficiency_out_of_range")
    weight = float(np.real(np.trace(rho[1:, 1:])))
    taus = {}
    if cfg.k_list and _tau_selected(seed, cfg.tau_fraction):
        try:
            proj = project_single_excitation(rho)
        except WitnessError:
            flags.add("no_excitation")
        else:
            for k in cfg.k_list:
                res = tau(proj, k, cfg.witness, np.random.default_rng([seed, STREAM_WITNESS, k]))
                taus[k] = res.value
                if not res.converged:
                    flags.add(f"tau{k}_unconverged")
            if taus.get(3, 0) > 0 and 2 in taus and taus[2] <= 0:
                flags.add("tau_order")
    return NetworkRecord(index, seed, e_s, e_t, fl.j_in, fl.j_rec, fl.j_out, taus, weight, frozenset(flags))


def _evaluate_chunk(indices, cfg_dict):
    cfg = CampaignConfig.from_dict(cfg_dict)
    return [evaluate_network(i, cfg) for i in indices]


def _chunks(n: int, size: int):
    for start in range(0, n, size):
        yield list(range(start, min(n, start + size)))


def calibrate(cfg: CampaignConfig) -> None:
    """Fill the witness normalisation cache for every K the campaign needs."""
    for k in cfg.k_list:
        calibrate_b(k, cfg.n_sites, cfg.witness)


def _map_parallel(fn, chunks, cfg: CampaignConfig, sink=None):
    """Run ``fn(chunk, cfg_dict)`` over chunks; results handed to ``sink`` as they complete."""
    cfg_dict = cfg.to_dict()
    out = []
    if cfg.workers == 1:
        for chunk in chunks:
            res = fn(chunk, cfg_dict)
            if sink:
                sink(res)
            out.extend(res)
        return out
    with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
        futures = [pool.submit(fn, chunk, cfg_dict) for chunk in chunks]
        for fut in as_completed(futures):
            res = fut.result()
            if sink:
                sink(res)
            out.extend(res)
    return out


def run_campaign(cfg: CampaignConfig, chunk_size: int = 16) -> list[NetworkRecord]:
    """Evaluate every network of the campaign.

    With an ``output_path`` records are appended to ``<output_path>.part`` as
    they complete; the finished file is sorted by index and accompanied by
    ``<output_path>.meta.json``. The record file is identical for any worker
    count.
    """
    started = time.time()
    needs_tau = bool(cfg.k_list) and cfg.tau_fraction > 0
    if needs_tau:
        calibrate(cfg)
    calibrated = time.time()
    part = None
    writer = None
    if cfg.output_path:
        Path(cfg.output_path).parent.mkdir(parents=True, exist_ok=True)
        part = open(f"{cfg.output_path}.part", "w", newline="")
        writer = csv.writer(part, lineterminator="\n")
        writer.writerow(RECORD_FIELDS)
    failures = 0

    def sink(batch):
        nonlocal failures
        if writer:
            for r in batch:
                writer.writerow(r.to_row())
            part.flush()
        failures += sum(r.failed for r in batch)
        if failures > MAX_FAILURE_FRACTION * cfg.n_networks:
            raise CampaignError(f"{failures} failed networks exceed {MAX_FAILURE_FRACTION:.0%} of the campaign")

    try:
        records = _map_parallel(_evaluate_chunk, _chunks(cfg.n_networks, chunk_size), cfg, sink)
    finally:
        if part:
            part.close()
    records.sort(key=lambda r: r.index)
    if cfg.output_path:
        write_records(records, cfg.output_path)
        os.remove(f"{cfg.output_path}.part")
        meta = {
            "config": cfg.to_dict(),
            "config_hash": cfg.physics_hash(),
            "code_version": __version__,
            "timings": {"calibration_s": calibrated - started, "total_s": time.time() - started},
            "n_failed": failures,
        }
        Path(f"{cfg.output_path}.meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return records


# --- sweeps and summaries -------------------------------------------------------

def _sweep_chunk(indices, cfg_dict, lifetimes, t_grid):
    cfg = CampaignConfig.from_dict(cfg_dict)
    rows = []
    for i in indices:
        seed = network_seed(cfg.master_seed, i)
        try:
            h = coupling_matrix(sample_geometry(cfg.n_sites, seed, cfg.min_separation))
        except GeometryError as exc:
            log.warning("network %d: %s", i, exc)
            rows.append((i, [math.nan] * len(lifetimes), [math.nan] * len(t_grid)))
            continue
        e_t = [transient_efficiency(h, t) for t in t_grid]
        e_s = []
        for life in lifetimes:
            rates = cfg.rates.replace(gamma_rec=1.0 / life)
            try:
                rho = steady_state(build_liouvillian(h, build_jump_operators(rates, cfg.n_sites)))
                e_s.append(stationary_efficiency(rho, rates))
            except SteadyStateError as exc:
                log.warning("network %d, 1/gamma_rec=%g: %s", i, life, exc)
                e_s.append(math.nan)
        rows.append((i, e_s, e_t))
    return rows


@dataclass(frozen=True)
class SweepTable:
    lifetimes: tuple  # values of 1/gamma_rec
    t_grid: tuple
    kappa: np.ndarray  # shape (len(lifetimes), len(t_grid))
    e_s: np.ndarray  # (n_networks, len(lifetimes))
    e_t: np.ndarray  # (n_networks, len(t_grid))

    def rows(self) -> list[dict]:
        return [{"inv_gamma_rec": life, "t_weight": t, "kappa": float(self.kappa[a, b]),
                 "n": int(self.e_s.shape[0])}
                for a, life in enumerate(self.lifetimes) for b, t in enumerate(self.t_grid)]

    def argmax_lifetime(self, t_index: int) -> float:
        return self.lifetimes[int(np.argmax(self.kappa[:, t_index]))]

    def summary(self) -> dict:
        return {"points": self.rows()}


def sweep_correlation(cfg: CampaignConfig, lifetime_grid, t_grid, chunk_size: int = 64) -> SweepTable:
    """Correlation of transient and stationary efficiency over ``1/gamma_rec`` and ``T`` grids.

    Each network's Hamiltonian is built once and reused for every grid point.
    """
    lifetimes = tuple(float(v) for v in lifetime_grid)
    ts = tuple(float(v) for v in t_grid)
    if not lifetimes or not ts:
        raise ValueError("grids must be non-empty")
    if min(lifetimes) <= 0 or min(ts) <= 0:
        raise ValueError("grid values must be positive")

    rows = _map_parallel(_SweepFn(lifetimes, ts), _chunks(cfg.n_networks, chunk_size), cfg)
    rows.sort(key=lambda r: r[0])
    e_s = np.array([r[1] for r in rows])
    e_t = np.array([r[2] for r in rows])
    failed = ~(np.all(np.isfinite(e_s), axis=1) & np.all(np.isfinite(e_t), axis=1))
    if failed.sum() > MAX_FAILURE_FRACTION * len(rows):
        raise CampaignError(f"{failed.sum()} failed networks exceed {MAX_FAILURE_FRACTION:.0%} of the sweep")
    ok = ~failed
    kappa = np.array([[pearson(e_t[ok, b], e_s[ok, a]) for b in range(len(ts))]
                      for a in range(len(lifetimes))])
    return SweepTable(lifetimes, ts, kappa, e_s, e_t)


@dataclass(frozen=True)
class _SweepFn:
    # picklable stand-in for a closure over the grids
    lifetimes: tuple
    t_grid: tuple

    def __call__(self, chunk, cfg_dict):
        return _sweep_chunk(chunk, cfg_dict, self.lifetimes, self.t_grid)


def correlation(records) -> float:
    ok = [r for r in records if not r.failed]
    return pearson([r.e_t for r in ok], [r.e_s for r in ok])


def coherence_fractions(records, k: int, threshold: float, e_s_cut: float = 0.05,
                        e_s_high: float = 0.15) -> tuple[float, float]:
    """Fraction of networks with ``tau_k >= threshold`` at low and at high efficiency.

    Low: ``e_s <= e_s_cut``; high: ``e_s >= e_s_high``. Networks without a
    ``tau_k`` value are ignored.
    """
    low = [r.tau[k] for r in records if k in r.tau and r.e_s <= e_s_cut]
    high = [r.tau[k] for r in records if k in r.tau and r.e_s >= e_s_high]
    if not low or not high:
        raise CampaignError(f"empty partition: {len(low)} networks with e_s <= {e_s_cut}, "
                            f"{len(high)} with e_s >= {e_s_high}")
    return float(np.mean(np.array(low) >= threshold)), float(np.mean(np.array(high) >= threshold))
