"""Command-line entry point: ``shmvdr {simulate,enhance,evaluate,run,reproduce}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from pydantic import ValidationError

from . import __version__
from . import experiment as ex

log = logging.getLogger("shmvdr")


class ConfigError(ValueError):
    """Invalid configuration; ``str()`` lists one ``file:line: field: message`` per problem."""


def _key_line(text: str, loc) -> int | None:
    """Best-effort line number of the JSON key addressed by ``loc``."""
    pos, line = 0, None
    for part in loc:
        if not isinstance(part, str):
            continue
        hit = text.find(f'"{part}"', pos)
        if hit < 0:
            break
        pos = hit + 1
        line = text.count("\n", 0, hit) + 1
    return line


def load_config(path) -> ex.ExperimentSpec:
    """Parse a JSON experiment config, turning every failure into a :class:`ConfigError`."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ConfigError(f"{path}: {err.strerror}") from err
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}:{err.lineno}:{err.colno}: {err.msg}") from err
    try:
        return ex.ExperimentSpec.model_validate(raw)
    except ValidationError as err:
        lines = []
        for e in err.errors():
            field = ".".join(str(p) for p in e["loc"]) or "<root>"
            ln = _key_line(text, e["loc"])
            where = f"{path}:{ln}" if ln else str(path)
            lines.append(f"{where}: {field}: {e['msg']}")
        raise ConfigError("\n".join(lines)) from err


def build_spec(args) -> ex.ExperimentSpec:
    """Config file (or preset) with command-line overrides applied and re-validated."""
    spec = load_config(args.config) if args.config else ex.preset(args.preset)
    raw = spec.model_dump(mode="json")
    if getattr(args, "seed", None) is not None:
        raw["scene"]["seed"] = args.seed
    if getattr(args, "method", None):
        raw["method"] = args.method
    if getattr(args, "sweep_t60", None):
        raw["sweep"] = {"param": "t60", "values": args.sweep_t60}
    elif getattr(args, "sweep_snr", None):
        raw["sweep"] = {"param": "snr_db", "values": args.sweep_snr}
    if getattr(args, "out", None):
        raw["outputs"] = str(args.out)
    try:
        return ex.ExperimentSpec.model_validate(raw)
    except ValidationError as err:
        raise ConfigError("\n".join(f"{'.'.join(map(str, e['loc']))}: {e['msg']}" for e in err.errors())) from err


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _print_summary(summaries, labels=None) -> None:
    for i, summary in enumerate(summaries):
        head = f"[{labels[i]}] " if labels else ""
        for name, agg in summary.items():
            print(f"{head}{name:24s} Error {agg['error_db']:7.2f} dB  SDR {agg['sdr_db']:7.2f} dB  "
                  f"NR {agg['nr_db']:7.2f} dB")


def cmd_simulate(args) -> int:
    spec = build_spec(args)
    files = ex.stage_simulate(spec, args.out or spec.outputs, args.threads)
    print(f"wrote {len(files)} files to {files[0].parent}")
    return 0


def cmd_enhance(args) -> int:
    spec = ex.load_stage_spec(args.input)
    if args.method:
        spec = spec.model_copy(update={"method": args.method})
    files = ex.stage_enhance(args.input, args.out or args.input, spec)
    print(f"wrote {len(files)} files to {files[0].parent}")
    return 0


def cmd_evaluate(args) -> int:
    reports = ex.stage_evaluate(args.input, args.out or args.input)
    _print_summary([{k: r.aggregate() for k, r in reports.items()}])
    return 0


def cmd_run(args) -> int:
    spec = build_spec(args)
    res = ex.run(spec, args.out or spec.outputs, args.threads, save_tensors_flag=args.save_tensors)
    labels = [f"{spec.sweep.param}={v:g}" for v in spec.sweep.values] if spec.sweep else None
    _print_summary(res.summaries, labels)
    print(f"outputs in {res.outdir}")
    return 0


def cmd_reproduce(args) -> int:
    base = build_spec(args)
    out = Path(args.out or Path(base.outputs) / args.figure)
    res = ex.reproduce(args.figure, out, args.threads, base.model_copy(update={"sweep": None}))
    _print_summary(res.summaries)
    print(f"outputs in {res.outdir}")
    return 0


def _common(p: argparse.ArgumentParser, scene: bool = True) -> None:
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--threads", type=int, default=1, help="worker threads for RIR simulation")
    if scene:
        src = p.add_mutually_exclusive_group()
        src.add_argument("--config", type=Path, help="JSON experiment config")
        src.add_argument("--preset", default="paper-default", choices=["paper-default"])
        p.add_argument("--seed", type=int, help="override the scene seed")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shmvdr", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    methods = ["proposed", "proposed-accurate-rehc", "baseline", "both", "all"]

    p = sub.add_parser("simulate", help="simulate RIRs and array recordings")
    _common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("enhance", help="transform and enhance a simulated scene")
    p.add_argument("input", type=Path, help="directory written by 'simulate'")
    p.add_argument("--method", choices=methods)
    _common(p, scene=False)
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("evaluate", help="metrics for an enhanced scene")
    p.add_argument("input", type=Path, help="directory written by 'enhance'")
    _common(p, scene=False)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("run", help="simulate, enhance and evaluate in one go")
    _common(p)
    p.add_argument("--method", choices=methods)
    sw = p.add_mutually_exclusive_group()
    sw.add_argument("--sweep-t60", type=_floats, metavar="T1,T2,...")
    sw.add_argument("--sweep-snr", type=_floats, metavar="S1,S2,...")
    p.add_argument("--save-tensors", action="store_true", help="also write SH containers of the metric frames")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("reproduce", help="regenerate a reported figure or table")
    p.add_argument("figure", choices=["fig2", "fig3", "table1", "table2"])
    _common(p)
    p.set_defaults(func=cmd_reproduce)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=[logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)],
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error:\n{err}", file=sys.stderr)
        return 2
    except (ValueError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
