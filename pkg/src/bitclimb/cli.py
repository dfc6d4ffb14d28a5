"""Command-line interface.

Every option can also come from a ``key=value`` config file (``--config``);
flags given on the command line win over the file, the file wins over the
built-in defaults.  ``BITCLIMB_OUTPUT_DIR`` sets the default output
directory.

Exit status: 0 on success, 1 for usage or parameter errors, 2 for I/O and
file-format errors.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

from PIL import Image

from . import bitgen, dataset, evaluation, retrieval, selection

logger = logging.getLogger("bitclimb")

OUTPUT_ENV = "BITCLIMB_OUTPUT_DIR"
METHODS = ("hillclimb", "boost", "corr", "random")

EXIT_OK, EXIT_USAGE, EXIT_IO = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


DEFAULTS = {
    "seed": 1,
    "threads": os.cpu_count() or 1,
    "kind": None,
    "B": None,
    "margin": bitgen.DEFAULT_MARGIN,
    "sigma": bitgen.DEFAULT_SIGMA,
    "n": 256,
    "lbp_threshold": 0.01,
    "output": None,
    "classes": 100,
    "per_class": 4,
    "noise": 0.3,
    "groups": 10,
    "per_group": 4,
    "size": 160,
    "image_noise": 6,
    "pool": None,
    "train": None,
    "train_pairs": None,
    "test": None,
    "test_pairs": None,
    "method": "hillclimb",
    "b": 256,
    "N": None,
    "shrinkage": 0.5,
    "tau": 0.2,
    "runs": 1,
    "descriptor": None,
    "manifest": None,
    "k": 3,
    "threshold": None,
    "tune": False,
    "fast_threshold": retrieval.DEFAULT_FAST_THRESHOLD,
    "max_keypoints": retrieval.DEFAULT_MAX_KEYPOINTS,
    "pairs": 10000,
    "target_tpr": 0.95,
}

_TYPES = {k: type(v) for k, v in DEFAULTS.items() if v is not None and not isinstance(v, bool)}
_TYPES.update({"B": int, "N": int, "threshold": int})


@dataclass
class RunConfig:
    """Resolved options of one command invocation."""

    command: str
    out: Path
    values: dict = field(default_factory=dict)

    def __getattr__(self, name):
        try:
            return self.values[name]
        except KeyError:
            raise AttributeError(name) from None


def read_config_file(path) -> dict:
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except FileNotFoundError:
        raise OSError(f"missing config file: {path}") from None
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in DEFAULTS and key != "out":
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = value
    return out


def _coerce(key: str, value):
    if value is None or not isinstance(value, str):
        return value
    if key == "tune":
        return value.lower() in ("1", "true", "yes", "on")
    if key == "descriptor":
        return value.split(",")
    kind = _TYPES.get(key, str)
    try:
        return kind(value)
    except ValueError:
        raise UsageError(f"bad value for {key}: {value!r}") from None


def resolve(args: argparse.Namespace) -> RunConfig:
    file_values = read_config_file(args.config) if args.config else {}
    values = {}
    for key, default in DEFAULTS.items():
        cli = getattr(args, key, None)
        if cli is not None and cli is not False:
            values[key] = cli
        elif key in file_values:
            values[key] = _coerce(key, file_values[key])
        else:
            values[key] = default
    out = args.out or file_values.get("out") or os.environ.get(OUTPUT_ENV) or "."
    if values["threads"] < 1:
        raise UsageError("--threads must be >= 1")
    return RunConfig(args.command, Path(out), values)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bitclimb", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="key=value file; command-line flags take precedence")
        p.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or .)")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int, help="worker cap; results do not depend on it")

    def data(p, role):
        p.add_argument(f"--{role}", help="PAIRSET file or Brown subset directory")
        p.add_argument(f"--{role}-pairs", help="pair file name inside a Brown directory")

    p = sub.add_parser("gen-pool", help="sample a candidate bit pool")
    common(p)
    p.add_argument("--kind", choices=(bitgen.BRIEF, bitgen.LBP))
    p.add_argument("--B", type=int, help="pool size (1024 for brief, 4096 for lbp)")
    p.add_argument("--margin", type=int)
    p.add_argument("--sigma", type=float)
    p.add_argument("--n", type=int, help="LBP vector length")
    p.add_argument("--lbp-threshold", type=float)
    p.add_argument("--output", help="pool file name")

    p = sub.add_parser("gen-synth", help="write a synthetic pair set or image database")
    common(p)
    p.add_argument("--kind", choices=("pairs", "images"))
    p.add_argument("--classes", type=int)
    p.add_argument("--per-class", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--groups", type=int)
    p.add_argument("--per-group", type=int)
    p.add_argument("--size", type=int)
    p.add_argument("--image-noise", type=int)
    p.add_argument("--output", help="pair set file name or image folder name")

    p = sub.add_parser("select", help="select b bits from a pool")
    common(p)
    p.add_argument("--pool")
    data(p, "train")
    data(p, "test")
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--b", type=int)
    p.add_argument("--N", type=int, help="hill-climb iterations (default 4*B)")
    p.add_argument("--shrinkage", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--runs", type=int)

    p = sub.add_parser("eval", help="ROC report of stored descriptors")
    common(p)
    p.add_argument("--pool")
    p.add_argument("--descriptor", nargs="+")
    data(p, "test")
    p.add_argument("--train", help="training set label for the report")
    p.add_argument("--target-tpr", type=float)

    p = sub.add_parser("retrieve", help="keypoint retrieval on an image database")
    common(p)
    p.add_argument("--manifest")
    p.add_argument("--pool")
    p.add_argument("--descriptor", nargs=1)
    p.add_argument("--k", type=int)
    p.add_argument("--threshold", type=int)
    p.add_argument("--tune", action="store_true")
    p.add_argument("--fast-threshold", type=int)
    p.add_argument("--max-keypoints", type=int)

    p = sub.add_parser("bench", help="time selection on a synthetic problem")
    common(p)
    p.add_argument("--pairs", type=int)
    p.add_argument("--B", type=int)
    p.add_argument("--b", type=int)
    p.add_argument("--N", type=int)
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--shrinkage", type=float)
    p.add_argument("--tau", type=float)
    return parser


# -- helpers -----------------------------------------------------------------

def _require(cfg: RunConfig, *keys):
    for key in keys:
        if cfg.values.get(key) in (None, []):
            raise UsageError(f"--{key.replace('_', '-')} is required for {cfg.command}")


def _selection_problem(pool, pairset, threads):
    pairset.require_both_classes()
    responses = bitgen.build_response_matrix(pool, pairset.patches, threads=threads)
    table = bitgen.build_disagreement_table(responses, pairset.pairs, threads=threads)
    return responses, table


def _run_selector(method, cfg, responses, table, labels, seed, pool_ref):
    b = cfg.b
    if method == "hillclimb":
        return selection.select_hill_climb(table, labels, b, cfg.N, seed, pool_ref=pool_ref)
    if method == "boost":
        d = selection.select_boosting(table, labels, b, cfg.shrinkage, pool_ref=pool_ref)
    elif method == "corr":
        d = selection.select_correlation(table, labels, b, cfg.tau, responses, pool_ref=pool_ref)
    else:
        d = selection.select_random(table.rows, b, seed, pool_ref=pool_ref)
    dist = selection.pair_distances(table, d.selected)
    mh, nh = selection.distance_histograms(dist, labels, b)
    return d, [selection.TraceEntry(0, selection.auc(mh, nh), True)]


def _check_selection_params(cfg, pool_size):
    if cfg.b < 1 or cfg.b > pool_size:
        raise UsageError(f"--b must lie in [1, {pool_size}]")
    if cfg.N is not None and cfg.N < 0:
        raise UsageError("--N must be >= 0")
    if not 0 < cfg.shrinkage <= 1:
        raise UsageError("--shrinkage must lie in (0, 1]")
    if not 0 < cfg.tau <= 1:
        raise UsageError("--tau must lie in (0, 1]")
    if cfg.runs < 1:
        raise UsageError("--runs must be >= 1")


# -- commands ----------------------------------------------------------------

def cmd_gen_pool(cfg: RunConfig) -> int:
    kind = cfg.kind or bitgen.BRIEF
    B = cfg.B if cfg.B is not None else (
        bitgen.DEFAULT_BRIEF_POOL if kind == bitgen.BRIEF else bitgen.DEFAULT_LBP_POOL)
    try:
        if kind == bitgen.BRIEF:
            pool = bitgen.sample_brief_pool(cfg.seed, B, cfg.margin, cfg.sigma)
        else:
            pool = bitgen.sample_lbp_pool(cfg.seed, B, cfg.n, cfg.lbp_threshold)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    cfg.out.mkdir(parents=True, exist_ok=True)
    path = cfg.out / (cfg.output or f"pool_{kind}.txt")
    bitgen.write_pool(pool, path)
    print(f"wrote {len(pool)} {kind} bits to {path}")
    return EXIT_OK


def cmd_gen_synth(cfg: RunConfig) -> int:
    cfg.out.mkdir(parents=True, exist_ok=True)
    if (cfg.kind or "pairs") == "pairs":
        try:
            ps = dataset.generate_synthetic_pairset(cfg.seed, cfg.classes, cfg.per_class, cfg.noise)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        path = cfg.out / (cfg.output or "synth.pairs")
        dataset.write_pairset(ps, path)
        print(f"wrote {ps.num_pairs} pairs over {ps.num_patches} patches to {path}")
        return EXIT_OK
    try:
        images, groups = retrieval.generate_synthetic_images(
            cfg.seed, cfg.groups, cfg.per_group, cfg.size, cfg.image_noise)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    folder = cfg.out / (cfg.output or "images")
    folder.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, (img, g) in enumerate(zip(images, groups)):
        name = f"img{i:04d}.png"
        Image.fromarray(img).save(folder / name)
        lines.append(f"{name} {g}")
    (folder / "manifest.txt").write_text("\n".join(lines) + "\n")
    print(f"wrote {len(images)} images and {folder / 'manifest.txt'}")
    return EXIT_OK


def cmd_select(cfg: RunConfig) -> int:
    _require(cfg, "pool", "train")
    pool = bitgen.read_pool(cfg.pool)
    _check_selection_params(cfg, len(pool))
    train = dataset.load_pairset(cfg.train, cfg.train_pairs)
    test = dataset.load_pairset(cfg.test, cfg.test_pairs) if cfg.test else train
    t0 = time.perf_counter()
    responses, table = _selection_problem(pool, train, cfg.threads)
    logger.info("cache construction: %.3f s", time.perf_counter() - t0)
    cfg.out.mkdir(parents=True, exist_ok=True)
    pool_ref = Path(cfg.pool).name
    rows = []
    for run in range(cfg.runs):
        seed = cfg.seed + run
        d, trace = _run_selector(cfg.method, cfg, responses, table, train.labels, seed, pool_ref)
        stem = f"{cfg.method}_run{run}"
        selection.write_descriptor(d, cfg.out / f"descriptor_{stem}.txt")
        selection.write_trace(trace, cfg.out / f"trace_{stem}.csv")
        rep = evaluation.evaluate_descriptor(d, pool, test, cfg.target_tpr)
        rows.append(evaluation.ReportRow(cfg.method, train.name, test.name, run, rep.auc, rep.fpr95))
        print(f"{cfg.method} run {run}: train AUC {max(e.auc for e in trace if e.accepted):.6f}, "
              f"{test.name} AUC {rep.auc:.6f}, FPR@95 {100 * rep.fpr95:.2f}%")
    evaluation.write_report(rows, cfg.out / f"report_{cfg.method}.csv")
    if cfg.runs > 1:
        for method, (am, asd, fm, fsd) in evaluation.summarize(rows).items():
            print(f"{method}: AUC {am:.6f} +- {asd:.6f}, FPR@95 {100 * fm:.2f} +- {100 * fsd:.2f}%")
    return EXIT_OK


def _descriptor_label(path: Path) -> tuple[str, int]:
    stem = path.stem
    if stem.startswith("descriptor_") and "_run" in stem:
        method, _, run = stem[len("descriptor_"):].rpartition("_run")
        if run.isdigit():
            return method, int(run)
    return stem, 0


def cmd_eval(cfg: RunConfig) -> int:
    _require(cfg, "pool", "descriptor", "test")
    if not 0 < cfg.target_tpr <= 1:
        raise UsageError("--target-tpr must lie in (0, 1]")
    pool = bitgen.read_pool(cfg.pool)
    test = dataset.load_pairset(cfg.test, cfg.test_pairs)
    cfg.out.mkdir(parents=True, exist_ok=True)
    rows = []
    for name in cfg.descriptor:
        path = Path(name)
        d = selection.read_descriptor(path)
        try:
            d.check_pool(pool)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        rep = evaluation.evaluate_descriptor(d, pool, test, cfg.target_tpr)
        method, run = _descriptor_label(path)
        rows.append(evaluation.ReportRow(method, cfg.train or "-", test.name, run, rep.auc, rep.fpr95))
        evaluation.write_curve(rep.curve, cfg.out / f"curve_{path.stem}.csv")
        print(f"{path.name}: AUC {rep.auc:.6f}, FPR@95 {100 * rep.fpr95:.2f}%")
    evaluation.write_report(rows, cfg.out / "report.csv")
    return EXIT_OK


def cmd_retrieve(cfg: RunConfig) -> int:
    _require(cfg, "manifest", "pool", "descriptor")
    if cfg.k < 1:
        raise UsageError("--k must be >= 1")
    entries = retrieval.read_manifest(cfg.manifest)
    if not entries:
        raise UsageError("manifest lists no images")
    pool = bitgen.read_pool(cfg.pool)
    d = selection.read_descriptor(cfg.descriptor[0])
    try:
        d.check_pool(pool)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    images = [retrieval.load_image(p) for p, _ in entries]
    try:
        index = retrieval.index_images(images, [g for _, g in entries], d, pool, cfg.fast_threshold,
                                       cfg.max_keypoints, names=[str(p) for p, _ in entries],
                                       threads=cfg.threads)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    counts = retrieval.match_count_table(index)
    if cfg.tune or cfg.threshold is None:
        threshold, precision = retrieval.tune_threshold(index, cfg.k, counts)
    else:
        if not 0 <= cfg.threshold <= d.b:
            raise UsageError(f"--threshold must lie in [0, {d.b}]")
        threshold = cfg.threshold
        precision = retrieval.precision_at_k(index, cfg.k, threshold, counts)
    cfg.out.mkdir(parents=True, exist_ok=True)
    lines = retrieval.format_results(index, cfg.k, threshold, counts)
    (cfg.out / "results.csv").write_text("\n".join(lines) + "\n")
    summary = retrieval.summary_line(cfg.k, precision, threshold)
    (cfg.out / "summary.txt").write_text(summary + "\n")
    print(summary)
    return EXIT_OK


def cmd_bench(cfg: RunConfig) -> int:
    """Selection timing on a synthetic problem, cache construction timed apart."""
    B = cfg.B if cfg.B is not None else bitgen.DEFAULT_BRIEF_POOL
    _check_selection_params(cfg, B)
    per_class = 4
    classes = max(2, -(-cfg.pairs // (2 * per_class * (per_class - 1) // 2)))
    t0 = time.perf_counter()
    ps = dataset.generate_synthetic_pairset(cfg.seed, classes, per_class, cfg.noise)
    pool = bitgen.sample_brief_pool(cfg.seed, B)
    t1 = time.perf_counter()
    responses, table = _selection_problem(pool, ps, cfg.threads)
    t2 = time.perf_counter()
    d, trace = _run_selector(cfg.method, cfg, responses, table, ps.labels, cfg.seed, "bench")
    t3 = time.perf_counter()
    final = max(e.auc for e in trace if e.accepted)
    print(f"problem: {ps.num_pairs} pairs, {ps.num_patches} patches, select {cfg.b} of {B} "
          f"({cfg.method}, N={cfg.N if cfg.N is not None else 4 * B})")
    print(f"data_generation_seconds {t1 - t0:.3f}")
    print(f"cache_construction_seconds {t2 - t1:.3f}")
    print(f"selection_seconds {t3 - t2:.3f}")
    print(f"final_train_auc {final:.6f}")
    return EXIT_OK


COMMANDS = {
    "gen-pool": cmd_gen_pool,
    "gen-synth": cmd_gen_synth,
    "select": cmd_select,
    "eval": cmd_eval,
    "retrieve": cmd_retrieve,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = resolve(args)
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"bitclimb: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (dataset.DatasetError, bitgen.PoolFormatError, selection.DescriptorFormatError,
            retrieval.ManifestError, OSError) as exc:
        print(f"bitclimb: error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"bitclimb: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
