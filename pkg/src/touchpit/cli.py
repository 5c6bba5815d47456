"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 precondition failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field

from . import __version__
from .dataset import read_catalog, read_csv, write_csv
from .errors import ConfigError, DataError, InvalidConfig, PreconditionError
from .experiments import (SPEC_KEYS, ResultRecord, Variant, compare_datasets, run,
                          spec_from_flat, spec_to_flat)
from .features import build_store, write_feature_matrix
from .preprocess import SegmentReport
from .protocol import CONFIG_KEYS, config_from_flat, config_to_flat
from .synthgen import SynthConfig, generate

log = logging.getLogger("touchpit")

SUMMARY_HEADER = ("variant", "params", "key", "value")
ROC_HEADER = ("fpr", "tpr_mean", "tpr_ci_low", "tpr_ci_high")
_SKIP_KEYS = {"roc", "per_user_eer", "points", "confusion_matrix", "classes"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


@dataclass
class RunManifest:
    command: str
    argv: list
    config: dict
    seed: int
    input_hashes: dict
    outputs: list
    version: str = __version__
    extra: dict = field(default_factory=dict)

    def write(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")


def sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def read_flat_config(path: str) -> dict:
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for n, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InvalidConfig(f"{path}:{n}: expected key = value")
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def _catalog(args):
    return read_catalog(args.catalog) if getattr(args, "catalog", None) else None


def _load(path, args, strict=True):
    return read_csv(path, _catalog(args), strict=strict)


def _open_out(path):
    if path in (None, "-"):
        return sys.stdout, False
    return open(path, "w", newline="", encoding="utf-8"), True


# --- subcommands -----------------------------------------------------------------

def cmd_ingest(args) -> int:
    d, rep = _load(args.input, args)
    fh, close = _open_out(args.output)
    try:
        write_csv(d, fh)
    finally:
        if close:
            fh.close()
    print(f"ingested {rep.rows} rows, {len(d.users)} users, {d.n_sessions()} sessions, "
          f"{rep.dropped_points} points dropped", file=sys.stderr)
    return 0


def cmd_validate(args) -> int:
    d, rep = _load(args.input, args, strict=False)
    seg = SegmentReport()
    store = build_store(d, seg)
    print(f"rows: {rep.rows}")
    print(f"users: {len(d.users)}")
    print(f"sessions: {d.n_sessions()}")
    print(f"devices: {';'.join(d.devices())}")
    print(f"dropped_points: {rep.dropped_points}")
    print(f"strokes: {seg.strokes}")
    print(f"kept_strokes: {store.n_strokes()}")
    print(f"unterminated_strokes: {seg.unterminated}")
    print(f"errors: {len(rep.errors)}")
    for e in rep.errors[:50]:
        print(f"  {e}")
    return 0 if rep.ok else 2


def _parse_directions(text: str) -> tuple:
    out = []
    for part in text.split(","):
        name, _, w = part.partition(":")
        out.append((name.strip().upper(), float(w) if w else 1.0))
    return tuple(out)


def cmd_synth(args) -> int:
    devs = tuple(x.strip() for x in args.devices.split(";") if x.strip())
    try:
        cfg = SynthConfig(n_users=args.users, sessions_per_user=args.sessions,
                          strokes_per_session=args.strokes, devices=devs,
                          device_offset=args.device_offset, sigma_between=args.sigma_between,
                          sigma_within=args.sigma_within, sigma_session=args.sigma_session,
                          sampling_rate=args.rate, directions=_parse_directions(args.directions),
                          seed=args.seed, catalog=tuple(_catalog(args) or ()))
    except ValueError as exc:
        raise InvalidConfig(str(exc)) from None
    d = generate(cfg)
    fh, close = _open_out(args.output)
    try:
        write_csv(d, fh)
    finally:
        if close:
            fh.close()
    return 0


def cmd_features(args) -> int:
    d, _ = _load(args.input, args)
    store = build_store(d)
    fh, close = _open_out(args.output)
    try:
        write_feature_matrix(store, fh)
    finally:
        if close:
            fh.close()
    return 0


def _resolve(args, variant: Variant):
    """Config file first, then ``--set`` pairs, then dedicated flags."""
    kv = read_flat_config(args.config) if args.config else {}
    for item in args.set or ():
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        kv[k.strip()] = v.strip()
    flag_map = {"reps": args.reps, "n_grid": args.n_grid, "w_grid": args.w_grid,
                "s_grid": args.s_grid, "seed": args.seed, "classifier": args.classifier,
                "split_strategy": args.split, "attacker_mode": args.attacker,
                "window": args.window, "direction_filter": args.direction,
                "n_users": args.n_users}
    kv.update({k: str(v) for k, v in flag_map.items() if v is not None})
    proto = {k: v for k, v in kv.items() if k in CONFIG_KEYS}
    exp = {k: v for k, v in kv.items() if k in SPEC_KEYS}
    unknown = set(kv) - set(proto) - set(exp)
    if unknown:
        raise InvalidConfig(f"unknown config keys: {', '.join(sorted(unknown))}")
    cfg = config_from_flat(proto)
    return spec_from_flat(exp, variant, cfg)


def _flat_spec(spec) -> dict:
    return {**config_to_flat(spec.config), **spec_to_flat(spec)}


def _variant(name: str) -> Variant:
    key = name.upper().replace("-", "_")
    aliases = {"P1": "P1_SAMPLE_SIZE", "P2": "P2_DEVICE_MIXING", "P3": "P3_SPLITS",
               "P4": "P4_ATTACKER", "P5": "P5_AGGREGATION"}
    try:
        return Variant(aliases.get(key, key))
    except ValueError:
        raise UsageError(f"unknown variant {name!r}; choose from "
                         + ", ".join(v.value.lower() for v in Variant)) from None


def _inputs(args, paths) -> dict:
    out = {}
    for p in paths:
        if p and p != "-":
            out[p] = sha256_file(p)
    for extra in (getattr(args, "catalog", None), getattr(args, "config", None)):
        if extra:
            out[extra] = sha256_file(extra)
    return out


def write_results(records, out_dir: str) -> list[str]:
    paths = [os.path.join(out_dir, "results.jsonl"), os.path.join(out_dir, "summary.csv")]
    with open(paths[0], "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")
    write_summary(records, paths[1])
    paths += write_rocs(records, out_dir)
    with open(os.path.join(out_dir, "timings.json"), "w", encoding="utf-8") as fh:
        json.dump([{"variant": r.variant, "params": r.params, "wall_time": r.wall_time}
                   for r in records], fh, indent=2, sort_keys=True)
    return paths


def cmd_run(args) -> int:
    variant = _variant(args.variant)
    spec = _resolve(args, variant)
    if args.print_config:
        for k, v in _flat_spec(spec).items():
            print(f"{k} = {v}")
        return 0
    if not args.data:
        raise UsageError("run: --data is required")
    os.makedirs(args.out, exist_ok=True)
    manifest = RunManifest("run " + variant.value, list(args.argv), _flat_spec(spec), spec.seed,
                           _inputs(args, [args.data]),
                           [os.path.join(args.out, n) for n in
                            ("results.jsonl", "summary.csv", "timings.json")],
                           extra={"jobs": args.jobs})
    manifest.write(os.path.join(args.out, "manifest.json"))
    d, _ = _load(args.data, args)
    records = run(spec, d, jobs=args.jobs)
    write_results(records, args.out)
    print(f"{len(records)} records written to {args.out}", file=sys.stderr)
    return 0


def cmd_compare(args) -> int:
    spec = _resolve(args, Variant.BASELINE)
    os.makedirs(args.out, exist_ok=True)
    RunManifest("compare", list(args.argv), _flat_spec(spec), spec.seed,
                _inputs(args, [args.data_a, args.data_b]),
                [os.path.join(args.out, "results.jsonl")],
                extra={"jobs": args.jobs}).write(os.path.join(args.out, "manifest.json"))
    a, _ = _load(args.data_a, args)
    b, _ = _load(args.data_b, args)
    write_results(compare_datasets(spec, a, b, jobs=args.jobs), args.out)
    return 0


def cmd_rerun(args) -> int:
    with open(args.manifest, encoding="utf-8") as fh:
        m = json.load(fh)
    argv = list(m["argv"])
    if args.out:
        argv += ["--out", args.out]
    return main(argv)


def _flatten(prefix: str, obj, rows: list):
    if isinstance(obj, dict):
        for k in sorted(obj):
            if k in _SKIP_KEYS:
                continue
            _flatten(f"{prefix}.{k}" if prefix else str(k), obj[k], rows)
    elif obj is None or isinstance(obj, (bool, int, float, str)):
        rows.append((prefix, obj))


def _params_text(params: dict) -> str:
    return ";".join(f"{k}={v if not isinstance(v, list) else ','.join(map(str, v))}"
                    for k, v in sorted(params.items()))


def write_summary(records, path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for r in records:
            rows = []
            _flatten("", r.payload, rows)
            for k, v in rows:
                w.writerow((r.variant, _params_text(r.params), k,
                            repr(v) if isinstance(v, float) else ("" if v is None else v)))


def _find_rocs(prefix, obj, out):
    if isinstance(obj, dict):
        if "roc" in obj and isinstance(obj["roc"], dict):
            out.append((prefix, obj["roc"]))
        for k in sorted(obj):
            if k != "roc":
                _find_rocs(f"{prefix}_{k}" if prefix else k, obj[k], out)


def write_rocs(records, out_dir: str) -> list[str]:
    paths = []
    for i, r in enumerate(records):
        found = []
        _find_rocs("", r.payload, found)
        for tag, roc in found:
            name = f"roc_{i:03d}" + (f"_{tag}" if tag else "") + ".csv"
            p = os.path.join(out_dir, name)
            with open(p, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(ROC_HEADER)
                for row in zip(roc["fpr"], roc["tpr_mean"], roc["tpr_ci_low"], roc["tpr_ci_high"]):
                    w.writerow([repr(float(v)) for v in row])
            paths.append(p)
    return paths


def cmd_report(args) -> int:
    with open(args.results, encoding="utf-8") as fh:
        records = [ResultRecord.from_json(line) for line in fh if line.strip()]
    out = args.out or os.path.dirname(os.path.abspath(args.results))
    os.makedirs(out, exist_ok=True)
    write_summary(records, os.path.join(out, "summary.csv"))
    paths = write_rocs(records, out)
    print(f"summary.csv and {len(paths)} ROC tables written to {out}", file=sys.stderr)
    return 0


# --- parser ------------------------------------------------------------------------

def _add_exp_flags(p):
    p.add_argument("--config", help="flat key = value file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--reps", type=int)
    p.add_argument("--n-grid")
    p.add_argument("--w-grid")
    p.add_argument("--s-grid")
    p.add_argument("--n-users", type=int)
    p.add_argument("--classifier")
    p.add_argument("--split")
    p.add_argument("--attacker")
    p.add_argument("--window", type=int)
    p.add_argument("--direction")
    p.add_argument("--catalog", help="device catalog CSV (default: built-in table)")
    p.add_argument("--out", default="results")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="touchpit", description="Touch-dynamics authentication evaluation harness")
    ap.add_argument("--version", action="version", version=f"touchpit {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("ingest", help="parse a touch CSV and write the canonical form")
    p.add_argument("input", help="touch CSV ('-' for stdin)")
    p.add_argument("-o", "--output", help="output CSV (default stdout)")
    p.add_argument("--catalog")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("validate", help="report problems in a touch CSV")
    p.add_argument("input")
    p.add_argument("--catalog")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("synth", help="generate synthetic touch data")
    p.add_argument("--users", type=int, default=60)
    p.add_argument("--sessions", type=int, default=6)
    p.add_argument("--strokes", type=int, default=30)
    p.add_argument("--devices", default="iPhone 7", help="';'-separated model names")
    p.add_argument("--device-offset", type=float, default=0.0)
    p.add_argument("--sigma-between", type=float, default=1.0)
    p.add_argument("--sigma-within", type=float, default=SynthConfig.sigma_within)
    p.add_argument("--sigma-session", type=float, default=0.0)
    p.add_argument("--rate", type=float, default=60.0)
    p.add_argument("--directions", default="LEFT", help="e.g. LEFT:1,RIGHT:1,UP:2")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--catalog")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("features", help="dump the per-stroke feature matrix")
    p.add_argument("input")
    p.add_argument("--catalog")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("run", help="run an experiment variant")
    p.add_argument("variant", help=", ".join(v.value.lower() for v in Variant))
    p.add_argument("--data", help="touch CSV")
    p.add_argument("--print-config", action="store_true", help="print the resolved config and exit")
    _add_exp_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="baseline on two datasets plus a Welch test")
    p.add_argument("data_a")
    p.add_argument("data_b")
    _add_exp_flags(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("report", help="turn results.jsonl into summary and ROC tables")
    p.add_argument("results")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("rerun", help="repeat the run recorded in a manifest")
    p.add_argument("manifest")
    p.add_argument("--out")
    p.set_defaults(func=cmd_rerun)
    return ap


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("touchpit: a subcommand is required (see --help)")
        args.argv = argv
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s: %(message)s")
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except PreconditionError as exc:
        print(f"precondition failed: {exc}", file=sys.stderr)
        return 3
    except DataError as exc:
        print(f"data error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
