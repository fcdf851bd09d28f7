"""oodscore command line: calibrate | score | eval | sweep | synth | report.

Exit codes: 0 success, 2 validation error, 3 I/O error, 4 per-row scoring
failures.  Options may come from a flat key=value config file (--config);
explicit flags override it.  All file outputs are written via temp+rename and
are byte-identical across reruns on identical inputs.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
from pathlib import Path

from .calib import CalibrationError, fit_calibration, load_stats, save_stats
from .datastore import (
    ClassifierHead,
    ContainerError,
    _atomic_write,
    read_container,
    read_dataset,
    write_dataset,
)
from .metrics import CSV_HEADER, MetricError, csv_row, evaluate
from .scores import (
    MethodSpec,
    ScoreBatchError,
    ScoreError,
    read_scores,
    score_batch,
    write_scores,
)
from .synth import OOD_KINDS, SynthConfig, SynthError, make_head, sample_id, sample_ood

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_ROWS = 4

THREADS_ENV = "OODSCORE_THREADS"

DEFAULT_LAMBDA_GRID = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0"
DEFAULT_B_GRID = "0,0.5,1,2"


class CliError(Exception):
    """Bad flags/config/inputs; maps to exit code 2."""


def _float(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise CliError(f"not a number: {text!r}")


def _int(text: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise CliError(f"not an integer: {text!r}")


def _bool(text: str) -> bool:
    lower = text.strip().lower()
    if lower in ("true", "1", "yes"):
        return True
    if lower in ("false", "0", "no"):
        return False
    raise CliError(f"not a boolean: {text!r}")


def _grid(text: str) -> list[float]:
    vals = [v.strip() for v in text.split(",")]
    vals = [v for v in vals if v]
    if not vals:
        raise CliError("empty grid")
    return [_float(v) for v in vals]


def _choice(*options: str):
    def convert(text: str) -> str:
        if text not in options:
            raise CliError(f"must be one of {options}, got {text!r}")
        return text
    return convert


# per-command option registry: dest -> (converter-from-string, default)
# every option is declared with default None so config-file values can fill
# anything the command line left unset.
_OPTIONS: dict[str, dict[str, tuple] ] = {
    "calibrate": {
        "head": (str, None),
        "temperature": (_float, 1.0),
        "grouping": (_choice("auto", "labels", "predicted"), "auto"),
    },
    "score": {
        "method": (str, "gafd_cc"),
        "lambda_": (_float, None),
        "b": (_float, None),
        "temperature": (_float, None),
        "clip_threshold": (_float, None),
        "head": (str, None),
        "threads": (_int, None),
    },
    "eval": {
        "tpr": (_float, 0.95),
        "dataset_id": (str, None),
        "dataset_ood": (str, None),
    },
    "sweep": {
        "lambda_grid": (_grid, _grid(DEFAULT_LAMBDA_GRID)),
        "b_grid": (_grid, _grid(DEFAULT_B_GRID)),
        "tpr": (_float, 0.95),
        "head": (str, None),
        "threads": (_int, None),
        "out": (str, None),
    },
    "synth": {
        "classes": (_int, 10),
        "dim": (_int, 64),
        "n_per_class": (_int, 50),
        "n_ood": (_int, 500),
        "proto_scale": (_float, 4.0),
        "noise_sigma": (_float, 0.5),
        "ood_kind": (_choice(*OOD_KINDS), "prototype_free"),
        "shift_mag": (_float, 0.0),
        "seed": (_int, 1),
    },
    "report": {
        "best_bold": (_bool, False),
    },
}


def _read_config(path: str) -> dict[str, str]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise CliError(f"config file not found: {path}")
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise CliError(f"{path}:{lineno}: expected key=value, got {stripped!r}")
        key, _, value = stripped.partition("=")
        key = key.strip().replace("-", "_")
        if key == "lambda":
            key = "lambda_"
        values[key] = value.strip()
    return values


def _merge_config(args: argparse.Namespace, command: str) -> None:
    table = _OPTIONS[command]
    file_values = _read_config(args.config) if getattr(args, "config", None) else {}
    unknown = set(file_values) - set(table)
    if unknown:
        raise CliError(f"unknown config keys for {command!r}: {sorted(unknown)}")
    for dest, (convert, default) in table.items():
        if getattr(args, dest) is not None:
            continue  # explicit flag wins
        if dest in file_values:
            setattr(args, dest, convert(file_values[dest]))
        else:
            setattr(args, dest, default)


def _resolve_threads(value: int | None) -> int:
    if value is None:
        env = os.environ.get(THREADS_ENV)
        if env is not None:
            value = _int(env)
    if value is None:
        value = os.cpu_count() or 1
    if value < 1:
        raise CliError(f"threads must be >= 1, got {value}")
    return value


def _load_head(directory: str) -> ClassifierHead:
    tensors = read_container(directory)
    if "W" not in tensors or "bias" not in tensors:
        raise CliError(f"container {directory} has no classifier head (W, bias)")
    return ClassifierHead(W=tensors["W"], bias=tensors["bias"])


def _emit(text: str, out_path: str | None) -> None:
    if out_path is None:
        sys.stdout.write(text)
    else:
        _atomic_write(Path(out_path), text.encode("utf-8"))


# ---------------------------------------------------------------- commands


def cmd_calibrate(args) -> None:
    train, head = read_dataset(args.train_dir)
    if args.head is not None:
        head = _load_head(args.head)
    if head is None:
        raise CliError(
            "no classifier head: train container lacks W/bias and --head was not given"
        )
    stats = fit_calibration(train, head, temperature=args.temperature,
                            grouping=args.grouping)
    save_stats(stats, args.out_dir)
    print(f"calibrated {train.n} samples: K={stats.num_classes} d={stats.dim} "
          f"T={stats.temperature:g} grouping={args.grouping} -> {args.out_dir}")


def _build_method(args, stats) -> MethodSpec:
    name = args.method
    if name == "gafd_cc":
        temp = args.temperature if args.temperature is not None else stats.temperature
        return MethodSpec.create(
            "gafd_cc",
            **{"lambda": args.lambda_ if args.lambda_ is not None else 0.5},
            b=args.b if args.b is not None else 1.0,
            temperature=temp,
        )
    for flag, value in (("--lambda", args.lambda_), ("--b", args.b)):
        if value is not None:
            raise CliError(f"{flag} only applies to method gafd_cc")
    if name in ("msp", "maxlogit"):
        if args.temperature is not None:
            raise CliError(f"--temperature does not apply to method {name}")
        if args.clip_threshold is not None:
            raise CliError(f"--clip-threshold does not apply to method {name}")
        return MethodSpec.create(name)
    temp = args.temperature if args.temperature is not None else 1.0
    if name == "energy":
        if args.clip_threshold is not None:
            raise CliError("--clip-threshold does not apply to method energy")
        return MethodSpec.create("energy", temperature=temp)
    if name == "react":
        if args.clip_threshold is None:
            raise CliError("method react requires --clip-threshold")
        return MethodSpec.create("react", clip_threshold=args.clip_threshold,
                                 temperature=temp)
    raise CliError(f"unknown method {name!r}")


def cmd_score(args) -> None:
    dataset, head = read_dataset(args.eval_dir)
    if args.head is not None:
        head = _load_head(args.head)
    stats = load_stats(args.stats_dir)
    method = _build_method(args, stats)
    sv = score_batch(dataset, head, stats, method,
                     n_threads=_resolve_threads(args.threads))
    write_scores(sv, args.out_dir)
    print(f"scored {dataset.n} rows with {method.label()} -> {args.out_dir}")


def cmd_eval(args) -> None:
    sv_id = read_scores(args.id_scores_dir)
    sv_ood = read_scores(args.ood_scores_dir)
    if sv_id.method != sv_ood.method:
        raise CliError(
            f"method mismatch: ID scored with {sv_id.method.label()}, "
            f"OOD with {sv_ood.method.label()}"
        )
    result = evaluate(sv_id.values, sv_ood.values, tpr_target=args.tpr)
    ds_id = args.dataset_id or Path(args.id_scores_dir).name
    ds_ood = args.dataset_ood or Path(args.ood_scores_dir).name
    print(CSV_HEADER)
    print(csv_row(sv_id.method.label(), ds_id, ds_ood, result))


def cmd_sweep(args) -> None:
    ds_id, head_id = read_dataset(args.eval_dir)
    ds_ood, head_ood = read_dataset(args.ood_dir)
    stats = load_stats(args.stats_dir)
    if args.head is not None:
        head_id = head_ood = _load_head(args.head)
    threads = _resolve_threads(args.threads)
    label_id = Path(args.eval_dir).name
    label_ood = Path(args.ood_dir).name

    lines = [CSV_HEADER]
    for lam in args.lambda_grid:
        for b in args.b_grid:
            method = MethodSpec.create(
                "gafd_cc", **{"lambda": lam}, b=b, temperature=stats.temperature
            )
            sv_id = score_batch(ds_id, head_id, stats, method, n_threads=threads)
            sv_ood = score_batch(ds_ood, head_ood, stats, method, n_threads=threads)
            result = evaluate(sv_id.values, sv_ood.values, tpr_target=args.tpr)
            lines.append(csv_row(method.label(), label_id, label_ood, result))
    _emit("\n".join(lines) + "\n", args.out)


def cmd_synth(args) -> None:
    cfg = SynthConfig(
        num_classes=args.classes,
        dim=args.dim,
        n_per_class=args.n_per_class,
        n_ood=args.n_ood,
        proto_scale=args.proto_scale,
        noise_sigma=args.noise_sigma,
        ood_kind=args.ood_kind,
        shift_mag=args.shift_mag,
        seed=args.seed,
    )
    head = make_head(cfg.num_classes, cfg.dim, cfg.seed)
    parts = {
        "train": sample_id(head, cfg, split="train"),
        "test": sample_id(head, cfg, split="test"),
        "ood": sample_ood(head, cfg),
    }
    out_base = Path(args.out_dir)
    for name, dataset in parts.items():
        write_dataset(dataset, head, out_base / name)
        print(f"wrote {name}: N={dataset.n} d={dataset.dim} K={dataset.num_classes} "
              f"-> {out_base / name}")


def _parse_result_csv(paths: list[str]) -> list[dict[str, str]]:
    expected = CSV_HEADER.split(",")
    rows = []
    for path in paths:
        text = Path(path).read_text(encoding="utf-8")
        reader = csv.reader(io.StringIO(text))
        try:
            header = next(reader)
        except StopIteration:
            raise CliError(f"{path}: empty CSV")
        if header != expected:
            raise CliError(f"{path}: unexpected CSV header {header}")
        for record in reader:
            if not record:
                continue
            if len(record) != len(expected):
                raise CliError(f"{path}: malformed row {record}")
            rows.append(dict(zip(expected, record)))
    if not rows:
        raise CliError("no result rows found")
    return rows


def _report_markdown(rows: list[dict[str, str]], best_bold: bool) -> str:
    seen = set()
    for r in rows:
        key = (r["method"], r["dataset_id"], r["dataset_ood"])
        if key in seen:
            raise CliError(f"duplicate key: method={key[0]} id={key[1]} ood={key[2]}")
        seen.add(key)

    id_names = {r["dataset_id"] for r in rows}
    def ds_label(r):
        if len(id_names) == 1:
            return r["dataset_ood"]
        return f"{r['dataset_id']}->{r['dataset_ood']}"

    datasets = sorted({ds_label(r) for r in rows})
    methods = sorted({r["method"] for r in rows})
    cells = {(r["method"], ds_label(r)): (r["auroc"], r["fpr95"]) for r in rows}

    best: dict[tuple[str, str], str] = {}
    if best_bold:
        for ds in datasets:
            aurocs = {m: cells[(m, ds)][0] for m in methods if (m, ds) in cells}
            fprs = {m: cells[(m, ds)][1] for m in methods if (m, ds) in cells}
            if aurocs:
                best[("auroc", ds)] = max(aurocs.values(), key=float)
            if fprs:
                best[("fpr95", ds)] = min(fprs.values(), key=float)

    def fmt(kind: str, ds: str, value: str) -> str:
        if best_bold and best.get((kind, ds)) is not None and float(value) == float(best[(kind, ds)]):
            return f"**{value}**"
        return value

    header = ["method"]
    for ds in datasets:
        header += [f"{ds} AUROC", f"{ds} FPR95"]
    lines = ["| " + " | ".join(header) + " |",
             "|" + "|".join([" --- "] * len(header)) + "|"]
    for m in methods:
        cols = [m]
        for ds in datasets:
            if (m, ds) in cells:
                a, f = cells[(m, ds)]
                cols += [fmt("auroc", ds, a), fmt("fpr95", ds, f)]
            else:
                cols += ["-", "-"]
        lines.append("| " + " | ".join(cols) + " |")
    return "\n".join(lines) + "\n"


def cmd_report(args) -> None:
    rows = _parse_result_csv(args.csv_files)
    sys.stdout.write(_report_markdown(rows, best_bold=bool(args.best_bold)))


# ---------------------------------------------------------------- wiring


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="oodscore",
        description="Post-hoc OOD scoring and evaluation on feature/logit dumps",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config(p):
        p.add_argument("--config", help="flat key=value config file; flags override it")

    p = sub.add_parser("calibrate", help="fit calibration stats from an ID train dump")
    p.add_argument("train_dir")
    p.add_argument("out_dir")
    p.add_argument("--head", help="container to take the classifier head from")
    p.add_argument("--temperature", type=float)
    p.add_argument("--grouping", choices=("auto", "labels", "predicted"))
    add_config(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("score", help="score a feature dump with one method")
    p.add_argument("eval_dir")
    p.add_argument("stats_dir")
    p.add_argument("out_dir")
    p.add_argument("--method", choices=("msp", "maxlogit", "energy", "react", "gafd_cc"))
    p.add_argument("--lambda", dest="lambda_", type=float)
    p.add_argument("--b", type=float)
    p.add_argument("--temperature", type=float)
    p.add_argument("--clip-threshold", type=float)
    p.add_argument("--head")
    p.add_argument("--threads", type=int)
    add_config(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="AUROC/FPR from an ID and an OOD score container")
    p.add_argument("id_scores_dir")
    p.add_argument("ood_scores_dir")
    p.add_argument("--tpr", type=float)
    p.add_argument("--dataset-id")
    p.add_argument("--dataset-ood")
    add_config(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="gafd_cc metrics over a lambda x b grid")
    p.add_argument("eval_dir")
    p.add_argument("ood_dir")
    p.add_argument("stats_dir")
    p.add_argument("--lambda-grid", type=_grid)
    p.add_argument("--b-grid", type=_grid)
    p.add_argument("--tpr", type=float)
    p.add_argument("--head")
    p.add_argument("--threads", type=int)
    p.add_argument("--out", help="write CSV here instead of stdout")
    add_config(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("synth", help="generate synthetic train/test/ood containers")
    p.add_argument("out_dir")
    p.add_argument("--classes", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--n-per-class", type=int)
    p.add_argument("--n-ood", type=int)
    p.add_argument("--proto-scale", type=float)
    p.add_argument("--noise-sigma", type=float)
    p.add_argument("--ood-kind", choices=OOD_KINDS)
    p.add_argument("--shift-mag", type=float)
    p.add_argument("--seed", type=int)
    add_config(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("report", help="merge result CSVs into a markdown table")
    p.add_argument("csv_files", nargs="+")
    p.add_argument("--best-bold", action="store_const", const=True, dest="best_bold")
    add_config(p)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _merge_config(args, args.command)
        args.func(args)
        return EXIT_OK
    except ScoreBatchError as exc:
        for row, msg in exc.failures:
            print(f"row {row}: {msg}", file=sys.stderr)
        print(f"error: {len(exc.failures)} row(s) failed", file=sys.stderr)
        return EXIT_ROWS
    except (CliError, ContainerError, CalibrationError, ScoreError, MetricError,
            SynthError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


def entrypoint() -> None:
    sys.exit(main())
