"""Command line: ``provkd <stage> [--config FILE] [--key value ...]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path
from typing import Sequence

from .errors import DataError, NumericalError, ProvKDError
from .pipeline import (SWEEP_AXES, PipelineConfig, Run, load_scenario, mimicry_curve,
                       parse_kv, sweep, trend, write_rows)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

STAGE_COMMANDS = ("ingest", "build", "embed", "denoise", "train-teacher", "distill", "detect",
                  "reconstruct", "run")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(message)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("pipeline settings (override the config file)")
    g.add_argument("--config", metavar="FILE", help="flat key = value config file")
    g.add_argument("--set", metavar="KEY=VALUE", action="append", default=[],
                   help="override one config key (repeatable)")
    for f in fields(PipelineConfig):
        flag = "--" + f.name.replace("_", "-")
        names = [flag] if f.name.lower() == f.name else [flag, flag.lower()]
        typ = f.type if isinstance(f.type, str) else f.type.__name__
        if typ == "bool":
            g.add_argument(*names, dest=f.name, action=argparse.BooleanOptionalAction, default=None)
        else:
            conv = {"int": int, "float": float}.get(typ, str)
            g.add_argument(*names, dest=f.name, type=conv, default=None, metavar=typ.upper())


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="provkd", description="Provenance-graph threat detection with a distilled student.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    helps = {
        "ingest": "validate an event file and copy it into the run directory",
        "build": "build the provenance graph and export edge/node tables",
        "embed": "train skip-gram token vectors and write raw node signals",
        "denoise": "Laplacian-regularized smoothing of the node signals",
        "train-teacher": "train the GCN/SGC teacher and export soft labels",
        "distill": "distill the teacher into the student",
        "detect": "detection mode: student inference and thresholding",
        "reconstruct": "communities and attack paths over the flagged nodes",
        "run": "all stages end to end",
    }
    for name in STAGE_COMMANDS:
        sp = sub.add_parser(name, help=helps[name])
        if name == "ingest":
            sp.add_argument("input", nargs="?", help="events .jsonl (defaults to the config's events)")
        if name == "detect":
            sp.add_argument("--input", dest="detect_input", metavar="EVENTS",
                            help="detect on another event file with the trained run")
            sp.add_argument("-o", "--output", help="report path (default: inside the run directory)")
        _add_config_flags(sp)

    sp = sub.add_parser("scenario", help="write the synthetic attack scenario (.jsonl + .labels)")
    sp.add_argument("-o", "--output", required=True)
    sp.add_argument("--mimicry", type=int, default=0, metavar="N", help="append N mimicry events")
    _add_config_flags(sp)

    sp = sub.add_parser("sweep", help="hyperparameter sweep, CSV + figure")
    sp.add_argument("--axis", required=True, choices=sorted(SWEEP_AXES))
    sp.add_argument("--values", required=True, help="comma separated values")
    sp.add_argument("--seeds", default="", help="comma separated seeds (default: the config seed)")
    sp.add_argument("-o", "--output", help="CSV path (default: <out_dir>/sweep-<axis>.csv)")
    _add_config_flags(sp)

    sp = sub.add_parser("mimicry", help="anomaly score of the attack under mimicry, CSV + figure")
    sp.add_argument("--counts", default="0,100,200,300,400,500", help="ascending false-event counts")
    sp.add_argument("--compare-denoise", action="store_true",
                    help="also run with denoising disabled")
    sp.add_argument("-o", "--output", help="CSV path (default: <out_dir>/mimicry.csv)")
    _add_config_flags(sp)
    return p


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    cfg = PipelineConfig()
    if args.config:
        cfg = PipelineConfig.load(args.config, cfg)
    overrides: dict[str, str] = {}
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        overrides.update(parse_kv(item))
    flags = {f.name: getattr(args, f.name) for f in fields(PipelineConfig)
             if getattr(args, f.name, None) is not None}
    if getattr(args, "input", None):
        flags["events"] = args.input
    return PipelineConfig.from_mapping({**overrides, **flags}, cfg)


def _print_metrics(metrics: dict | None, prefix: str = "") -> None:
    if not metrics:
        return
    for k in ("ACC", "PR", "RC", "F1"):
        print(f"{prefix}{k}\t{metrics[k]:.6f}")


def _ints(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"expected comma separated integers, got {text!r}") from None


def cmd_stage(args: argparse.Namespace, cfg: PipelineConfig) -> None:
    run = Run(cfg)
    name = args.command
    if name == "ingest":
        s = run.ingest()
        g_keys = {e.subject_id for e in s.events} | {e.object_id for e in s.events}
        print(f"events\t{len(s.events)}\nentities\t{len(g_keys)}\nmalicious\t{len(s.ground_truth)}")
    elif name == "build":
        g = run.build()
        print(f"nodes\t{g.n}\nedges\t{len(g.edges)}")
        for kind, count in sorted(g.kind_counts().items()):
            print(f"{kind.value}\t{count}")
    elif name == "embed":
        x0 = run.embed()
        print(f"signals\t{x0.shape[0]}x{x0.shape[1]}")
    elif name == "denoise":
        x = run.denoise()
        print(f"signals\t{x.shape[0]}x{x.shape[1]}\tdenoise\t{'on' if cfg.denoise else 'off'}")
    elif name == "train-teacher":
        params, soft = run.train_teacher()
        print(f"teacher\t{params.variant}\tfinal_loss\t{params.losses[-1] if params.losses else float('nan'):.6f}")
    elif name == "distill":
        res = run.distill()
        p = res.params
        print(f"objective_initial\t{res.objectives[0]:.6f}\nobjective_best\t{res.best_objective:.6f}")
        print(f"best_epoch\t{res.best_epoch}\nalpha\t{p.alpha:.6f}\nbeta_mean\t{float(p.beta.mean()):.6f}")
    elif name == "detect":
        if args.detect_input:
            det = run.detector()
            s = load_scenario(replace(cfg, events=args.detect_input, labels=""))
            report, _ = det.detect(s)
            out = Path(args.output) if args.output else run.dir / f"report-{Path(args.detect_input).stem}.txt"
            report.write(out)
        else:
            report = run.detect()
            out = run.path("report")
            if args.output:
                out = Path(args.output)
                report.write(out)
        print(f"flagged\t{len(report.flagged)}\nreport\t{out}")
        _print_metrics(report.metrics)
    elif name == "reconstruct":
        rec = run.reconstruct()
        print(f"communities\t{rec.partition.num_communities}\nmap_equation\t{rec.partition.map_equation_value:.6f}")
        print(f"bridges\t{len(rec.bridges)}\npaths\t{len(rec.paths)}")
    elif name == "run":
        report, rec = run.run_all()
        print(f"flagged\t{len(report.flagged)}")
        _print_metrics(report.metrics)
        print(f"communities\t{rec.partition.num_communities}\npaths\t{len(rec.paths)}")
    print(f"run_dir\t{run.dir}")


def cmd_scenario(args: argparse.Namespace, cfg: PipelineConfig) -> None:
    from .ingest import ScenarioConfig, apply_mimicry, generate_cadets_scenario, write_scenario
    s = generate_cadets_scenario(ScenarioConfig(n_benign=cfg.n_benign, event_rate=cfg.event_rate, seed=cfg.seed))
    if args.mimicry:
        s = apply_mimicry(s, args.mimicry, cfg.seed)
    events, labels = write_scenario(s, args.output)
    print(f"events\t{len(s.events)}\nmalicious\t{len(s.ground_truth)}\nwrote\t{events}\nwrote\t{labels}")


def cmd_sweep(args: argparse.Namespace, cfg: PipelineConfig) -> None:
    from .plots import plot_sweep
    values = [v for v in args.values.split(",") if v.strip()]
    if not values:
        raise UsageError("--values is empty")
    try:
        values = [SWEEP_AXES[args.axis](v) for v in values]
    except ValueError:
        raise UsageError(f"bad value in --values {args.values!r}") from None
    rows = sweep(cfg, args.axis, values, _ints(args.seeds) or None)
    out = Path(args.output) if args.output else Path(cfg.out_dir) / f"sweep-{args.axis}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_rows(rows, out)
    print("\t".join(rows[0]))
    for r in rows:
        print("\t".join(f"{v:.6f}" if isinstance(v, float) else str(v) for v in r.values()))
    print(f"trend_ACC\t{trend(rows, args.axis):.6g}")
    print(f"wrote\t{out}")
    if cfg.figures:
        fig = out.with_suffix(".png")
        plot_sweep(rows, args.axis, fig)
        print(f"wrote\t{fig}")


def cmd_mimicry(args: argparse.Namespace, cfg: PipelineConfig) -> None:
    from .detect import write_curve
    from .plots import plot_mimicry
    counts = _ints(args.counts)
    if not counts:
        raise UsageError("--counts is empty")
    curves = {"denoise on" if cfg.denoise else "denoise off": mimicry_curve(cfg, counts)}
    if args.compare_denoise:
        other = replace(cfg, denoise=not cfg.denoise)
        curves["denoise on" if other.denoise else "denoise off"] = mimicry_curve(other, counts)
    out = Path(args.output) if args.output else Path(cfg.out_dir) / "mimicry.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    first = True
    for label, curve in curves.items():
        path = out if first else out.with_name(out.stem + "-" + label.replace(" ", "-") + out.suffix)
        write_curve(curve, path)
        first = False
        print(f"# {label}")
        print("false_events\tmean_score")
        for c, s in curve:
            print(f"{c}\t{s:.6f}")
        print(f"wrote\t{path}")
    if cfg.figures:
        fig = out.with_suffix(".png")
        plot_mimicry(curves, fig)
        print(f"wrote\t{fig}")


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = resolve_config(args)
        if args.command in STAGE_COMMANDS:
            cmd_stage(args, cfg)
        elif args.command == "scenario":
            cmd_scenario(args, cfg)
        elif args.command == "sweep":
            cmd_sweep(args, cfg)
        elif args.command == "mimicry":
            cmd_mimicry(args, cfg)
    except UsageError as exc:
        print(f"provkd: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"provkd: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ProvKDError) as exc:
        print(f"provkd: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (OSError, UnicodeDecodeError) as exc:
        print(f"provkd: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FloatingPointError as exc:
        print(f"provkd: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
