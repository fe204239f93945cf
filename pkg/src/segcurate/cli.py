"""Command-line front end: ``segcurate <subcommand> ...``.

Exit status is 0 on success, 1 on any error (one diagnostic line on stderr),
2 on bad usage, and 3 when ``evaluate`` had to skip samples without a
prediction.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import io
import json
import logging
import os
import shutil
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import agreement, anova, conditioning, mask_io, metrics, report
from .conditioning import ConditioningKind, StructuringElement
from .fsutil import atomic_path, write_text

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("segcurate")

DEFAULT_SEED = 2019
DEFAULT_FRACTION = 0.8
DEFAULT_SE_WIDTH = 5
MASK_SUFFIXES = {".png", ".bmp", ".gif", ".jpg", ".jpeg", ".tif", ".tiff"}
EXIT_INCOMPLETE = 3


def _percent_list(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("empty percentile list")
    return values


def _kind(text: str) -> ConditioningKind:
    try:
        return ConditioningKind.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML file with default option values")
    common.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="worker processes")
    common.add_argument("--seed", type=int, default=DEFAULT_SEED)
    common.add_argument("--format", choices=("csv", "json"), default="csv", help="report format")
    common.add_argument("-v", "--verbose", action="store_true")

    se_opt = argparse.ArgumentParser(add_help=False)
    se_opt.add_argument("--se", type=int, default=DEFAULT_SE_WIDTH, help="square structuring element width")

    parser = argparse.ArgumentParser(prog="segcurate", description="Curate multi-annotator segmentation masks and analyse factorial experiments.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    subs: dict[str, argparse.ArgumentParser] = {}

    def add(name, help_, parents=(common,)):
        p = sub.add_parser(name, help=help_, parents=list(parents))
        subs[name] = p
        return p

    p = add("stats", "mask-count histogram of a manifest")
    p.add_argument("manifest", type=Path)
    p.add_argument("-o", "--out", type=Path, help="output file (stdout if omitted)")

    p = add("agreement", "average pairwise kappa per sample, for every conditioning", (common, se_opt))
    p.add_argument("manifest", type=Path)
    p.add_argument("-o", "--out", type=Path, required=True)

    p = add("condition", "apply a conditioning to a directory of masks", (common, se_opt))
    p.add_argument("input", type=Path, help="mask file or directory")
    p.add_argument("output", type=Path, help="output directory")
    p.add_argument("--kind", type=_kind, required=True, help="none | opening | convexhull")

    p = add("select", "keep samples whose unconditioned agreement is above a threshold")
    p.add_argument("manifest", type=Path)
    p.add_argument("-o", "--out", type=Path, required=True)
    p.add_argument("--threshold", type=float, default=agreement.DEFAULT_THRESHOLD)
    p.add_argument("--scores", type=Path, help="agreement CSV to reuse instead of recomputing")

    p = add("split", "seeded train/validation split")
    p.add_argument("manifest", type=Path)
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--fraction", type=float, default=DEFAULT_FRACTION)
    p.add_argument(
        "--best", action="store_true",
        help="also derive the best-samples split by filtering each half by agreement",
    )
    p.add_argument("--threshold", type=float, default=agreement.DEFAULT_THRESHOLD)
    p.add_argument("--scores", type=Path, help="agreement CSV to reuse with --best")

    p = add("evaluate", "best-of-annotations Jaccard of a prediction directory", (common, se_opt))
    p.add_argument("predictions", type=Path, help="directory of <sample_id>.png")
    p.add_argument("manifest", type=Path)
    p.add_argument("--kind", type=_kind, default=ConditioningKind.NONE)
    p.add_argument("--name", help="test-set name (default: manifest file stem)")
    p.add_argument("-o", "--out", type=Path, required=True, help="per-sample CSV")
    p.add_argument("--summary", type=Path, help="JSON summary (default: <out>.json)")

    p = add("design", "write the full factorial run table")
    p.add_argument("--replicates", type=int, default=anova.DEFAULT_REPLICATES)
    p.add_argument("-o", "--out", type=Path, required=True)

    p = add("anova", "factorial ANOVA of a filled-in run table")
    p.add_argument("runs", type=Path)
    p.add_argument("-o", "--out", type=Path, required=True)
    p.add_argument("--max-order", type=int, default=anova.DEFAULT_MAX_ORDER)
    p.add_argument("--shares", type=Path, help="write design-only variation shares here")
    p.add_argument(
        "--design-factors",
        help="comma-separated design factors for --shares (default: factors of kind 'design')",
    )
    p.add_argument("--cell-means", type=Path, help="write interaction-plot cell means here")
    p.add_argument("--cell-factors", help="comma-separated factors for --cell-means (default: all)")

    p = add("report", "percentile table and distribution data of agreement scores", (common, se_opt))
    p.add_argument("manifest", type=Path)
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--scores", type=Path, help="agreement CSV to reuse instead of recomputing")
    p.add_argument("--percentiles", type=_percent_list, default=list(agreement.DEFAULT_PERCENTILES))
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--svg", action="store_true", help="also emit simple SVG histograms")

    return parser, subs


def _apply_config(args, subs, argv):
    with open(args.config, "rb") as fh:
        config = tomllib.load(fh)
    sub = subs[args.command]
    known = {a.dest for a in sub._actions}
    clean = {}
    # top-level keys apply wherever they make sense; a [command] table must match exactly
    for key, value in config.items():
        if not isinstance(value, dict) and key.replace("-", "_") in known:
            clean[key.replace("-", "_")] = value
    for key, value in config.get(args.command, {}).items():
        dest = key.replace("-", "_")
        if dest not in known:
            raise ValueError(f"{args.config}: unknown option {key!r} for {args.command}")
        clean[dest] = value
    sub.set_defaults(**clean)
    args = sub.parse_args(argv[argv.index(args.command) + 1:], namespace=argparse.Namespace(command=args.command))
    return args


@contextlib.contextmanager
def _executor(jobs: int):
    if jobs is None or jobs <= 1:
        yield None
        return
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        yield pool


def _write(path: Path | None, text: str) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        write_text(path, text)


def _se(args) -> StructuringElement:
    return StructuringElement.square(args.se)


def _read_scores(path: Path) -> dict[str, float]:
    return {r.sample_id: r.kappas[ConditioningKind.NONE] for r in agreement.read_agreement_csv(path)}


# ---------------------------------------------------------------- commands


def cmd_stats(args) -> int:
    manifest = mask_io.load_manifest(args.manifest)
    hist, total = mask_io.dataset_stats(manifest)
    if args.format == "json":
        text = json.dumps({"histogram": {str(k): v for k, v in hist.items()}, "total": total}, indent=2) + "\n"
    else:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("n_masks", "n_samples"))
        w.writerows(hist.items())
        w.writerow(("total", total))
        text = buf.getvalue()
    _write(args.out, text)
    return 0


def cmd_agreement(args) -> int:
    manifest = mask_io.load_manifest(args.manifest)
    with _executor(args.jobs) as pool:
        rows = agreement.agreement_table(manifest, _se(args), pool)
    log.info("scored %d multi-annotated samples", len(rows))
    write_text(args.out, agreement.agreement_csv(rows))
    return 0


def _condition_file(job):
    src, dst, kind, se = job
    mask = mask_io.load_mask(src)
    if kind is ConditioningKind.NONE:
        # control condition: the file itself, untouched
        with atomic_path(dst) as tmp:
            shutil.copyfile(src, tmp)
    else:
        mask_io.save_mask(conditioning.apply_conditioning(mask, kind, se), dst)
    return dst


def cmd_condition(args) -> int:
    if args.input.is_dir():
        sources = sorted(p for p in args.input.iterdir() if p.is_file() and p.suffix.lower() in MASK_SUFFIXES)
    elif args.input.is_file():
        sources = [args.input]
    else:
        raise FileNotFoundError(f"no such mask file or directory: {args.input}")
    args.output.mkdir(parents=True, exist_ok=True)
    se = _se(args)
    jobs = []
    for src in sources:
        dst = args.output / (src.name if args.kind is ConditioningKind.NONE else src.with_suffix(".png").name)
        if dst.resolve() == src.resolve():
            raise ValueError(f"refusing to overwrite input {src}")
        jobs.append((src, dst, args.kind, se))
    with _executor(args.jobs) as pool:
        done = list(pool.map(_condition_file, jobs)) if pool else [_condition_file(j) for j in jobs]
    log.info("conditioned %d masks (%s)", len(done), args.kind.value)
    return 0


def cmd_select(args) -> int:
    manifest = mask_io.load_manifest(args.manifest)
    if args.scores:
        scores = _read_scores(args.scores)
    else:
        with _executor(args.jobs) as pool:
            scores = agreement.agreement_scores(manifest, ConditioningKind.NONE, executor=pool)
    best = agreement.select_samples(manifest, args.threshold, scores)
    best.records.sort(key=lambda r: r.sample_id)
    mask_io.save_manifest(best, args.out)
    log.info("selected %d samples", len(best))
    return 0


def cmd_split(args) -> int:
    manifest = mask_io.load_manifest(args.manifest)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    if args.best:
        scores = _read_scores(args.scores) if args.scores else None
        sets = agreement.derive_training_sets(manifest, args.fraction, args.seed, args.threshold, scores)
    else:
        train, val = mask_io.split_dataset(manifest, args.fraction, args.seed)
        sets = {"train": train, "val": val}
    for name, part in sets.items():
        mask_io.save_manifest(part, args.out_dir / f"{name}.csv")
        log.info("%s: %d samples", name, len(part))
    return 0


def cmd_evaluate(args) -> int:
    manifest = mask_io.load_manifest(args.manifest)
    with _executor(args.jobs) as pool:
        rep = metrics.evaluate_predictions(args.predictions, manifest, args.kind, _se(args), args.name, pool)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("sample_id", "jaccard"))
    w.writerows((sid, repr(j)) for sid, j in rep.per_sample)
    write_text(args.out, buf.getvalue())
    summary = args.summary or args.out.with_suffix(".json")
    write_text(summary, json.dumps(rep.summary(), indent=2) + "\n")
    if rep.skipped:
        print(
            f"segcurate: {len(rep.skipped)} sample(s) without prediction: {', '.join(rep.skipped)}",
            file=sys.stderr,
        )
        return EXIT_INCOMPLETE
    return 0


def cmd_design(args) -> int:
    factors = anova.study_factors(args.replicates)
    runs = anova.build_design(factors, args.replicates)
    write_text(args.out, anova.runs_to_csv(runs, factors))
    log.info("wrote %d runs", len(runs))
    return 0


def cmd_anova(args) -> int:
    runs, factors = anova.load_runs(args.runs)
    table = anova.anova_table(runs, factors, args.max_order)
    _write(args.out, table.to_json() if args.format == "json" else table.to_csv())
    if args.shares:
        names = (
            [s.strip() for s in args.design_factors.split(",")]
            if args.design_factors
            else anova.factor_kinds(factors)["design"]
        )
        shares = anova.designable_shares(table, names)
        if args.format == "json":
            text = json.dumps(shares, indent=2) + "\n"
        else:
            text = "term,share\n" + "".join(f"{t},{s!r}\n" for t, s in shares.items())
        write_text(args.shares, text)
    if args.cell_means:
        names = (
            [s.strip() for s in args.cell_factors.split(",")]
            if args.cell_factors
            else [f.name for f in factors if f.kind != "replicate"]
        )
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([*names, "mean", "n"])
        for key, mean, n in anova.cell_means(runs, names):
            w.writerow([*key, repr(mean), n])
        write_text(args.cell_means, buf.getvalue())
    return 0


def cmd_report(args) -> int:
    if args.scores:
        rows = agreement.read_agreement_csv(args.scores)
    else:
        manifest = mask_io.load_manifest(args.manifest)
        with _executor(args.jobs) as pool:
            rows = agreement.agreement_table(manifest, _se(args), pool)
    rep = report.build_report(rows, args.percentiles, args.bins)
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    if not args.scores:
        write_text(out / "agreement.csv", agreement.agreement_csv(rows))
    if args.format == "json":
        write_text(out / "report.json", rep.to_json())
    else:
        write_text(out / "percentiles.csv", rep.percentile_csv())
        for kind in ConditioningKind:
            write_text(out / f"histogram_{kind.value}.csv", rep.histogram_csv(kind))
            write_text(out / f"density_{kind.value}.csv", rep.density_csv(kind))
    if args.svg:
        for kind in ConditioningKind:
            write_text(out / f"distribution_{kind.value}.svg", report.distribution_svg(rep.distributions[kind], kind.value))
    return 0


COMMANDS = {
    "stats": cmd_stats,
    "agreement": cmd_agreement,
    "condition": cmd_condition,
    "select": cmd_select,
    "split": cmd_split,
    "evaluate": cmd_evaluate,
    "design": cmd_design,
    "anova": cmd_anova,
    "report": cmd_report,
}


def run_cli(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.config:
            args = _apply_config(args, subs, argv)
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING,
            format="%(name)s: %(message)s",
        )
        return COMMANDS[args.command](args)
    except (OSError, ValueError, KeyError, ArithmeticError, tomllib.TOMLDecodeError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"segcurate {args.command}: error: {msg}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
