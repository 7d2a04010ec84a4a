"""Command-line entry point: audit, sweep, simulate, probe, plot-data."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import runner
from .data import encode, split
from .errors import AuditError, ConfigInvalid
from .probe import DEFAULT_MI_THRESHOLD, group_probe, mi_filter
from .simulate import SimConfig, SimParams, simulate


def _dump(obj, path=None):
    text = json.dumps(obj, indent=1, default=str)
    if path is None:
        print(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)
        print(f"wrote {path}")


def _out_dir(cfg, args):
    return Path(args.out or cfg.output or "audit_out")


def cmd_audit(args):
    cfg = runner.load_config(args.config)
    bundle = runner.run_audit(cfg, threads=args.threads)
    out = _out_dir(cfg, args)
    path = bundle.save(out / "bundle.json")
    print(f"wrote {path}")
    for row in bundle.summary:
        if row["mean"] is None:
            continue
        p = "" if row["p_value"] is None else f"  p={row['p_value']:.4g}"
        print(f"{row['explainer']:>14} {row['metric']:>10} {row['stat']:>11} "
              f"{row['mean']:.4f} +/- {row['std']:.4f}{p}")
    failed = [c for c in bundle.cells if c.get("status") != "ok"]
    for c in failed:
        print(f"cell error: seed={c['seed']} explainer={c['explainer']} {c['error']['type']}")
    return 0


def _parse_values(raw: str, param: str):
    out = []
    for tok in raw.split(","):
        tok = tok.strip()
        if not tok:
            continue
        if tok.lower() in ("none", "all"):
            out.append(None)
            continue
        try:
            out.append(float(tok) if param == "sigma" else int(tok))
        except ValueError:
            raise ConfigInvalid(f"bad sweep value {tok!r}") from None
    if not out:
        raise ConfigInvalid("sweep values must be nonempty")
    return out


def cmd_sweep(args):
    cfg = runner.load_config(args.config)
    values = _parse_values(args.values, args.param)
    records = runner.run_sweep(cfg, args.param, values, threads=args.threads)
    path = runner.write_records(records, _out_dir(cfg, args) / f"sweep_{args.param}.csv")
    print(f"wrote {path} ({len(records)} records)")
    return 0


def _load_mapping(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigInvalid(f"config not found: {path}")
    text = path.read_text()
    try:
        if path.suffix.lower() in (".yaml", ".yml"):
            import yaml

            return yaml.safe_load(text) or {}
        return json.loads(text)
    except Exception as exc:
        raise ConfigInvalid(f"cannot parse {path}: {exc}") from exc


def cmd_simulate(args):
    raw = dict(_load_mapping(args.config))
    params = SimParams(**raw.pop("params", {}))
    raw.pop("output", None)
    if raw.get("mode", "parametric") != "parametric":
        raise ConfigInvalid("the command line runs parametric simulations only")
    for key in ("group_accuracy", "deltas"):
        if key in raw:
            raw[key] = tuple(raw[key])
    try:
        cfg = SimConfig(**raw)
        res = simulate(cfg, params)
    except (TypeError, ValueError, AuditError) as exc:
        raise ConfigInvalid(str(exc)) from exc
    report = {"summary": res.summary, "gaps": {str(k): v for k, v in res.gaps.items()}}
    _dump(report, args.out)
    return 0


def cmd_probe(args):
    cfg = runner.load_config(args.config)
    dataset = runner._load_data(cfg)
    seed = cfg.seeds[0]
    sp = split(dataset, seed)
    enc = encode(dataset, sp.blackbox_train)
    X, g = enc.X[sp.explainer_train], enc.g[sp.explainer_train]
    report = {"seed": seed, "probe_auroc": group_probe(X, g, seed=seed)}
    threshold = cfg.mi_threshold if cfg.mi_threshold is not None else DEFAULT_MI_THRESHOLD
    filt = mi_filter(enc.take(sp.blackbox_train), threshold=threshold)
    keep = [enc.columns.index(c) for c in filt.kept]
    report["mi_threshold"] = threshold
    report["mi"] = filt.mi
    report["dropped"] = filt.dropped
    report["filtered_probe_auroc"] = group_probe(X[:, keep], g, seed=seed)
    _dump(report, args.out)
    return 0


def cmd_plot_data(args):
    bundle = runner.ReportBundle.load(args.bundle)
    out = Path(args.out) if args.out else Path(args.bundle).parent
    paths = runner.emit_plot_data(bundle, out)
    for p in paths.values():
        print(f"wrote {p}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fidelity-audit", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("audit", help="run every (seed, explainer) cell of a config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="output directory (default: config 'output')")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("sweep", help="repeat the audit over values of one parameter")
    p.add_argument("--config", required=True)
    p.add_argument("--param", required=True, choices=runner.SWEEP_PARAMS)
    p.add_argument("--values", required=True, help="comma separated; 'none' means all features")
    p.add_argument("--out")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("simulate", help="decision-accuracy simulation")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="write JSON here instead of stdout")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("probe", help="group probe before and after MI filtering")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("plot-data", help="long-format CSVs from a saved bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_plot_data)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigInvalid as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return 2
    except AuditError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
