"""Command-line entry point: ``netcoherence <command> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .ensemble import (CampaignConfig, CampaignError, coherence_fractions, correlation, read_records,
                       run_campaign, sweep_correlation)
from .liouvillian import validate_single_excitation
from .network import GeometryError, network_seed, sample_geometry
from .stats import StatsError, binned_tau_table, write_table

log = logging.getLogger("netcoherence")


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global")
    g.add_argument("--config", type=Path, help="campaign config JSON")
    g.add_argument("--seed", type=int, help="master seed")
    g.add_argument("--workers", type=int, help="worker processes")
    g.add_argument("--out", type=Path, help="output file")
    g.add_argument("-v", "--verbose", action="store_true")
    o = p.add_argument_group("config overrides")
    o.add_argument("--n-sites", type=int)
    o.add_argument("--n-networks", type=int)
    o.add_argument("--gamma-in", type=float)
    o.add_argument("--gamma-out", type=float)
    o.add_argument("--gamma-rec", type=float)
    o.add_argument("--gamma-deph", type=float)
    o.add_argument("--t-weight", type=float, help="transient weighting time T")
    o.add_argument("--k-list", type=_ints, help="comma-separated K values, subset of 2,3,4")
    o.add_argument("--bin-width", type=float)
    o.add_argument("--min-bin-count", type=int)
    return p


def load_config(args) -> CampaignConfig:
    cfg = CampaignConfig.from_json(args.config.read_text()) if args.config else CampaignConfig()
    over = {}
    for name in ("n_sites", "n_networks", "t_weight", "k_list", "bin_width", "min_bin_count", "workers"):
        val = getattr(args, name, None)
        if val is not None:
            over[name] = val
    if args.seed is not None:
        over["master_seed"] = args.seed
    rates = {k: getattr(args, k) for k in ("gamma_in", "gamma_out", "gamma_rec", "gamma_deph")
             if getattr(args, k, None) is not None}
    if rates:
        over["rates"] = {**cfg.rates.to_dict(), **rates}
    if getattr(args, "skip_tau", False):
        over["k_list"] = []
    if getattr(args, "tau_subsample", None) is not None:
        over["tau_fraction"] = args.tau_subsample
    if getattr(args, "transient", None):
        over["transient_mode"] = args.transient
    return cfg.replace(**over) if over else cfg


def _emit(text: str, out: Path | None) -> None:
    if out:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)
    else:
        sys.stdout.write(text)


def cmd_gen(args) -> int:
    cfg = load_config(args)
    if args.geometries:
        lines = []
        for i in range(args.geometries):
            lines.append(sample_geometry(cfg.n_sites, network_seed(cfg.master_seed, i),
                                         cfg.min_separation).to_json())
        _emit("\n".join(lines) + "\n", args.out)
    else:
        _emit(cfg.to_json() + "\n", args.out)
    return 0


def cmd_run(args) -> int:
    cfg = load_config(args)
    if not args.out:
        raise SystemExit("run needs --out for the record file")
    cfg = cfg.replace(output_path=str(args.out))
    records = run_campaign(cfg)
    ok = [r for r in records if not r.failed]
    msg = {"networks": len(records), "failed": len(records) - len(ok), "records": str(args.out)}
    if len(ok) >= 2:
        msg["kappa"] = correlation(records)
        msg["max_e_s"] = max(r.e_s for r in ok)
    print(json.dumps(msg, indent=2))
    return 0


def cmd_sweep(args) -> int:
    cfg = load_config(args)
    t_grid = args.t_grid or [cfg.t_weight]
    table = sweep_correlation(cfg, args.lifetimes, t_grid)
    rows = table.rows()
    if args.out:
        write_table(rows, args.out)
        summary = {"config": cfg.to_dict(), **table.summary(),
                   "argmax_inv_gamma_rec": [table.argmax_lifetime(b) for b in range(len(t_grid))]}
        args.out.with_suffix(".summary.json").write_text(json.dumps(summary, indent=2))
    for row in rows:
        print(f"1/gamma_rec={row['inv_gamma_rec']:<8g} T={row['t_weight']:<10.6g} kappa={row['kappa']:.4f}")
    return 0


def cmd_analyze(args) -> int:
    cfg = load_config(args)
    records = read_records(args.records)
    ks = [k for k in cfg.k_list if any(k in r.tau for r in records)]
    good = [r for r in records if not r.failed]
    rows = binned_tau_table(good, ks, cfg.bin_width, cfg.min_bin_count)
    if args.out:
        write_table(rows, args.out)
    print(f"networks={len(records)} usable={len(good)} kappa={correlation(good):.4f} "
          f"max_e_s={max(r.e_s for r in good):.4f}")
    for row in rows:
        cols = " ".join(f"tau{k}={row[f'mean_tau_{k}']:.4f}+-{row[f'se_mean_{k}']:.4f}" for k in ks)
        print(f"e_s~{row['bin_center']:.3f} (w={row['width']:.3f}) n={row['n']:<6d} {cols}")
    return 0


def cmd_fractions(args) -> int:
    records = [r for r in read_records(args.records) if not r.failed]
    low, high = coherence_fractions(records, args.k, args.threshold, args.e_s_cut, args.e_s_high)
    print(json.dumps({"k": args.k, "threshold": args.threshold, "low": low, "high": high}))
    return 0


def cmd_validate2exc(args) -> int:
    cfg = load_config(args)
    ratios = []
    for i in range(args.count):
        geom = sample_geometry(cfg.n_sites, network_seed(cfg.master_seed, i), cfg.min_separation)
        ratios.append(validate_single_excitation(geom, cfg.rates).ratio)
    ratios = np.array(ratios)
    res = {"networks": len(ratios), "max_ratio": float(ratios.max()), "mean_ratio": float(ratios.mean()),
           "below_1e-3": bool(np.all(ratios < 1e-3))}
    print(json.dumps(res, indent=2))
    return 0 if res["below_1e-3"] else 1


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="netcoherence", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="write a config file or sample geometries")
    p.add_argument("--geometries", type=int, default=0, metavar="COUNT",
                   help="write COUNT geometries as JSON lines instead of the config")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("run", parents=[common], help="run a campaign and write the record file")
    p.add_argument("--skip-tau", action="store_true", help="do not evaluate the witness")
    p.add_argument("--tau-subsample", type=float, metavar="P", help="evaluate the witness on a fraction P")
    p.add_argument("--transient", choices=("unitary", "dissipative"))
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", parents=[common], help="correlation over 1/gamma_rec and T grids")
    p.add_argument("--lifetimes", type=_floats, default=[0.03, 0.05, 0.1],
                   help="comma-separated 1/gamma_rec values")
    p.add_argument("--t-grid", type=_floats, help="comma-separated T values (default: config t_weight)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("analyze", parents=[common], help="binned witness table from a record file")
    p.add_argument("records", type=Path)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("fractions", parents=[common], help="coherent fraction at low and high efficiency")
    p.add_argument("records", type=Path)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--e-s-cut", type=float, default=0.05)
    p.add_argument("--e-s-high", type=float, default=0.15)
    p.set_defaults(func=cmd_fractions)

    p = sub.add_parser("validate2exc", parents=[common], help="doubly excited weight on sample networks")
    p.add_argument("--count", type=int, default=100)
    p.set_defaults(func=cmd_validate2exc)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CampaignError, GeometryError, StatsError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
