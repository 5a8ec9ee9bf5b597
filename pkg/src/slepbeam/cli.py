"""Experiment CLI: config-driven runs emitting CSV + JSON (+ figures).

Verbs: dims, conventional, adaptive, streaming, encode, diag.
Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, NumericalError, SlepBeamError
from .experiments import (dims_table, run_adaptive, run_conventional, run_diag,
                          run_encode, run_streaming)
from .simulate import ExperimentConfig, load_config

RUNNERS = {"conventional": run_conventional, "adaptive": run_adaptive,
           "streaming": run_streaming, "encode": run_encode, "diag": run_diag}


def _write_csv(path: Path, rows: list, stamp: str) -> None:
    if not rows:
        path.write_text(f"# generated: {stamp}\n")
        return
    keys = []
    for r in rows:
        for k in r:
            if k not in keys:
                keys.append(k)
    with open(path, "w", newline="") as fh:
        fh.write(f"# generated: {stamp}\n")
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        for r in rows:
            writer.writerow(r)


def _sidecar(path: Path, cfg_dict: dict, agg, extras, seed, stamp) -> None:
    digest = hashlib.sha256(
        json.dumps(cfg_dict, sort_keys=True, default=str).encode()).hexdigest()
    payload = {"config": cfg_dict, "aggregates": agg, "extras": extras,
               "provenance": {"config_sha256": digest, "seed": seed,
                              "version": __version__, "generated": stamp}}
    path.write_text(json.dumps(payload, indent=2, default=_json_default))


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return str(obj)


def _load_cfg(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.trials is not None:
        cfg.trials = args.trials
    return cfg


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="slepbeam",
        description="Slepian-subspace broadband beamforming experiments")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p):
        p.add_argument("--config", help="flat key=value experiment config file")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--trials", type=int, default=None)
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--no-figures", action="store_true",
                       help="skip figure rendering")

    for verb in RUNNERS:
        p = sub.add_parser(verb)
        common(p)
        if verb == "diag":
            p.add_argument("--skip-merge-table", action="store_true",
                           help="omit the packet-merge accuracy grid")
        if verb == "streaming":
            p.add_argument("--dump-packets", action="store_true",
                           help="append per-packet coefficient records and "
                                "synthesized samples to packets.csv")

    p_dims = sub.add_parser("dims")
    common(p_dims)
    p_dims.add_argument("--eps", default="1e-3,1e-4",
                        help="comma-separated tolerance list")
    p_dims.add_argument("--wt", default=None,
                        help="comma-separated WT probes (default: bracket sweep)")

    args = parser.parse_args(argv)
    stamp = time.strftime("%Y-%m-%dT%H:%M:%S")
    out_dir = Path(args.out) if args.out else Path("results") / args.verb
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        if args.verb == "dims":
            return _run_dims(args, out_dir, stamp)
        cfg = _load_cfg(args)
        runner = RUNNERS[args.verb]
        kwargs = {"threads": args.threads}
        if args.verb == "diag":
            kwargs["merge_table"] = not args.skip_merge_table
        if args.verb == "streaming" and args.dump_packets:
            kwargs["dump_path"] = out_dir / "packets.csv"
        rows, agg, extras = runner(cfg, **kwargs)
        _write_csv(out_dir / f"{args.verb}.csv", rows, stamp)
        _sidecar(out_dir / f"{args.verb}.json", cfg.to_dict(), agg, extras,
                 cfg.seed, stamp)
        if not args.no_figures:
            _render(args.verb, rows, agg, extras, out_dir)
        print(f"{args.verb}: {len(rows)} rows -> {out_dir}")
        return 0
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except SlepBeamError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _run_dims(args, out_dir: Path, stamp: str) -> int:
    from .experiments import dims_table
    tols = [float(x) for x in args.eps.split(",") if x.strip()]
    if args.wt:
        probes = [float(x) for x in args.wt.split(",") if x.strip()]
    else:
        probes = list(np.geomspace(1e-3, 0.030, 8)) \
            + list(np.linspace(0.032, 0.268, 8)) \
            + [(round(2 * w - 0.5) + 0.5) / 2 for w in np.geomspace(0.5, 200, 12)]
    rows = []
    for tol in tols:
        if not 0 < tol < 0.5:
            raise ConfigError(f"tolerance {tol} outside (0, 1/2)")
        rows.extend(dims_table(tol, probes))
    _write_csv(out_dir / "dims.csv", rows, stamp)
    _sidecar(out_dir / "dims.json", {"eps": tols, "wt": probes},
             rows, {}, 0, stamp)
    if not args.no_figures:
        from .plotting import plot_dims
        plot_dims(rows, out_dir / "dims.png")
    bad = [r for r in rows if r.get("bracket_ok") is False]
    for r in rows:
        print(f"WT={r['time_bandwidth']:.6g} tol={r['tolerance']:g} "
              f"d={r['dimension']}"
              + ("" if r.get("bracket_ok", True) else "  [bracket mismatch]"))
    if bad:
        print(f"{len(bad)} probes disagree with the tabulated brackets",
              file=sys.stderr)
        return 3
    return 0


def _render(verb, rows, agg, extras, out_dir: Path) -> None:
    from . import plotting
    if verb == "conventional":
        plotting.plot_gain_curves(agg, extras, out_dir / "conventional.png",
                                  "conventional beamforming")
    elif verb == "adaptive":
        snr_rows = [r for r in agg if r["sweep"] == "snr"]
        plotting.plot_gain_curves(snr_rows, extras, out_dir / "adaptive_snr.png",
                                  "adaptive beamforming (fixed SIR)")
        sir_rows = [r for r in agg if r["sweep"] == "sir"]
        if sir_rows:
            plotting.plot_gain_curves(sir_rows, extras,
                                      out_dir / "adaptive_sir.png",
                                      "adaptive beamforming (fixed SNR)",
                                      sweep_key="sir_db")
    elif verb == "streaming":
        plotting.plot_gain_curves(agg, extras, out_dir / "streaming.png",
                                  "streaming reconstruction")
    elif verb == "encode":
        plotting.plot_encode(rows, out_dir / "encode.png")
    elif verb == "diag":
        plotting.plot_diag(rows, out_dir / "diag.png")


if __name__ == "__main__":
    sys.exit(main())
