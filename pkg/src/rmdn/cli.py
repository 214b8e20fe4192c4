"""Command-line entry point: ``rmdn {gen,train,sweep,converge,report}``.

Exit codes: 0 success, 2 usage or config error, 3 numerical failure,
4 I/O or file-format error.

CSV files start with a header row; floats use the shortest round-trip
representation and undefined values are left empty. Outputs carry no
timestamps, so a rerun with the same config and seeds is byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, datagen, harness
from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .container import read_container, write_container
from .errors import FormatError, ParameterError
from .svgplot import line_chart

log = logging.getLogger("rmdn")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


class UsageError(Exception):
    pass


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    f = float(v)
    return "" if np.isnan(f) else repr(f)


def write_csv(path: Path, header: list[str], rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    path.write_text(buf.getvalue(), encoding="utf-8")


def _float_list(text: str) -> list[float]:
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


# -- gen ---------------------------------------------------------------------

def cmd_gen(args) -> int:
    ds = datagen.generate(args.schedule, args.n, args.seed, args.stages, noise_std=args.noise_std)
    out = Path(args.out)
    write_container(out, datagen.dataset_to_tensors(ds))
    if args.format == "csv":
        k = ds.confounders.shape[1]
        write_csv(
            out.with_name(out.name + ".csv"),
            ["index", "stage", "label", *[f"confounder_{j}" for j in range(k)]],
            ([i, ds.stage_ids[i], ds.labels[i], *ds.confounders[i]] for i in range(len(ds))),
        )
    print(f"rmdn {__version__}: {ds.schedule} dataset, {len(ds)} images, seed {ds.seed} -> {out}")
    for spec in ds.stages:
        (a1, a2), (b1, b2) = spec.main_ranges, spec.conf_ranges
        print(
            f"  stage {spec.stage_id}: n={spec.n_images} main {a1} / {a2} conf {b1} / {b2} "
            f"at {spec.conf_position} max_acc={datagen.theoretical_max(a1, a2)!r}"
        )
    return EXIT_OK


# -- train -------------------------------------------------------------------

def _config_tensor(cfg: ExperimentConfig) -> np.ndarray:
    return np.frombuffer(cfg.to_text().encode("utf-8"), dtype=np.uint8).astype(np.int64)


def _config_from_tensor(t: np.ndarray) -> ExperimentConfig:
    return parse_config(bytes(t.astype(np.uint8).tolist()).decode("utf-8"))


def checkpoint_tensors(cfg: ExperimentConfig, results: list[harness.RunResult]) -> dict[str, np.ndarray]:
    out = {
        "meta.config": _config_tensor(cfg),
        "meta.seeds": np.array([r.seed for r in results], dtype=np.int64),
        "meta.epochs": np.array([cfg.epochs], dtype=np.int64),
    }
    for res in results:
        for i, snap in enumerate(res.snapshots):
            for name, arr in snap.items():
                out[f"seed{res.seed}.stage{i}.{name}"] = arr
        for name, arr in res.optimizer_state.items():
            out[f"seed{res.seed}.{name}"] = arr
    return out


def load_checkpoint(path) -> tuple[ExperimentConfig, dict[int, list[dict[str, np.ndarray]]]]:
    t = read_container(path)
    if "meta.config" not in t or "meta.seeds" not in t:
        raise FormatError("checkpoint lacks meta.config / meta.seeds records", 0)
    try:
        cfg = _config_from_tensor(t["meta.config"])
    except (ConfigError, UnicodeDecodeError) as exc:
        raise FormatError(f"embedded config is unreadable: {exc}", 0) from None
    snaps: dict[int, list[dict[str, np.ndarray]]] = {}
    for seed in t["meta.seeds"].tolist():
        stages: dict[int, dict[str, np.ndarray]] = {}
        prefix = f"seed{seed}.stage"
        for name, arr in t.items():
            if name.startswith(prefix):
                stage_txt, _, rest = name[len(prefix):].partition(".")
                stages.setdefault(int(stage_txt), {})[rest] = arr
        if not stages:
            raise FormatError(f"checkpoint has no snapshots for seed {seed}", 0)
        snaps[int(seed)] = [stages[i] for i in sorted(stages)]
    return cfg, snaps


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds = harness.load_dataset(cfg)
    h = cfg.config_hash()
    print(f"rmdn {__version__} config {h}: {cfg.schedule}, placement {cfg.placement}, seeds {list(cfg.seeds)}")
    results = harness.multi_seed(cfg, ds=ds)
    s = ds.n_stages

    r_rows, d_rows, m_rows, l_rows = [], [], [], []
    for res in results:
        for i in range(s):
            for j in range(s):
                r_rows.append([res.seed, i, j, res.r[i, j], res.balanced[i, j]])
                for g in (0, 1):
                    d_rows.append([res.seed, i, j, g, res.dcor[i, j, g]])
        m = res.metrics()
        m_rows.append([res.seed, *(m.get(k) for k in ("accd", "bwtd", "fwtd", "acc", "bwt", "fwt"))])
        l_rows.extend([res.seed, *row] for row in res.losses)
    write_csv(out / "r_matrix.csv", ["seed", "stage_trained", "stage_eval", "accuracy", "balanced_accuracy"], r_rows)
    write_csv(out / "metrics.csv", ["seed", "accd", "bwtd", "fwtd", "acc", "bwt", "fwt"], m_rows)
    write_csv(out / "dcor.csv", ["seed", "stage_trained", "stage_eval", "group", "dcor2"], d_rows)
    write_csv(out / "losses.csv", ["seed", "stage", "epoch", "loss"], l_rows)
    write_csv(out / "run_info.csv", ["key", "value"],
              [["version", __version__], ["config_hash", h], ["maxima", " ".join(repr(float(a)) for a in results[0].a)]])
    (out / "config.txt").write_text(cfg.to_text(), encoding="utf-8")
    write_container(out / "checkpoint.rmdn", checkpoint_tensors(cfg, results))
    for res in results:
        last = res.r[-1]
        print(f"  seed {res.seed}: final-row accuracy {np.round(last, 4).tolist()} {res.metrics() or ''}")
    return EXIT_OK


# -- sweep -------------------------------------------------------------------

def cmd_sweep(args) -> int:
    cfg, snaps = load_checkpoint(args.checkpoint)
    deltas = args.deltas if args.deltas is not None else list(cfg.deltas)
    if any(not 0.0 <= d <= 1.0 for d in deltas):
        raise UsageError(f"deltas must lie in [0, 1], got {deltas}")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds = harness.load_dataset(cfg)
    rows, tables = [], []
    for seed, snapshots in snaps.items():
        table = harness.sweep_snapshots(snapshots, cfg, ds, deltas)
        tables.append(table)
        for i in range(table.shape[0]):
            for j in range(table.shape[1]):
                for k, d in enumerate(deltas):
                    rows.append([seed, i, j, d, table[i, j, k]])
    write_csv(out / "sweep.csv", ["seed", "stage_trained", "stage_eval", "delta", "accuracy"], rows)
    mean = np.mean(tables, axis=0)
    final = mean[-1]
    series = [(f"stage {j}", deltas, final[j]) for j in range(final.shape[0])]
    (out / "sweep.svg").write_text(
        line_chart(series, f"accuracy vs confounder intensity ({cfg.placement})", "delta", "accuracy"),
        encoding="utf-8",
    )
    spread = final.max(axis=1) - final.min(axis=1)
    print(f"rmdn {__version__} config {cfg.config_hash()}: accuracy spread over delta per stage {np.round(spread, 4).tolist()}")
    return EXIT_OK


# -- converge ----------------------------------------------------------------

def cmd_converge(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    curves = harness.estimator_convergence(args.n, args.p, args.eps, args.seed, noise_std=args.noise_std)
    rows = []
    for eps, gaps in curves.items():
        rows.extend([eps, t + 1, g] for t, g in enumerate(gaps))
    write_csv(out / "converge.csv", ["eps", "samples_seen", "l2_gap"], rows)
    t = np.arange(1, args.n + 1)
    series = [(f"eps={e:g}", t, g) for e, g in curves.items()]
    (out / "converge.svg").write_text(
        line_chart(series, "streaming estimate vs full-data fit", "samples seen", "l2 gap", logy=True),
        encoding="utf-8",
    )
    for eps, gaps in curves.items():
        print(f"eps={eps!r}: final gap {float(gaps[-1])!r}")
    return EXIT_OK


# -- report ------------------------------------------------------------------

def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    with open(run_dir / "metrics.csv", encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise UsageError(f"{run_dir / 'metrics.csv'} has no rows")
    keys = [k for k in rows[0] if k != "seed"]
    summary = []
    for k in keys:
        vals = np.array([float(r[k]) for r in rows if r[k] != ""])
        if vals.size == 0:
            summary.append([k, None, None, 0])
            continue
        std = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
        summary.append([k, float(vals.mean()), std, vals.size])
    write_csv(run_dir / "summary.csv", ["metric", "mean", "std", "n"], summary)
    for k, mean, std, n in summary:
        if mean is None:
            print(f"{k:>5}: n/a")
        else:
            print(f"{k:>5}: {mean:.4f} +/- {std:.4f} (n={n})")
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rmdn", description="Recursive metadata normalization experiments.")
    p.add_argument("--version", action="version", version=f"rmdn {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-stage progress")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic dataset container")
    g.add_argument("--schedule", required=True, choices=datagen.SCHEDULES)
    g.add_argument("--n", type=int, default=1024, help="images in total (static) or per stage")
    g.add_argument("--stages", type=int, default=None)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--noise-std", type=float, default=datagen.NOISE_STD)
    g.add_argument("--out", required=True)
    g.add_argument("--format", choices=("container", "csv"), default="container",
                   help="csv also writes <out>.csv with per-image metadata")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train through every stage for each seed")
    t.add_argument("--config", required=True)
    t.add_argument("--out-dir", required=True)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sweep", help="re-evaluate a checkpoint over confounder intensities")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--deltas", type=_float_list, default=None, help="default: the config's eval.deltas")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_sweep)

    c = sub.add_parser("converge", help="streaming estimator vs full-data OLS")
    c.add_argument("--eps", type=_float_list, default=[10.0, 100.0, 1000.0])
    c.add_argument("--n", type=int, default=2048)
    c.add_argument("--p", type=int, default=3)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--noise-std", type=float, default=0.0)
    c.add_argument("--out", required=True, help="output directory")
    c.set_defaults(func=cmd_converge)

    r = sub.add_parser("report", help="mean and std of the transfer metrics of a train run")
    r.add_argument("--run-dir", required=True)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError, ParameterError) as exc:
        print(f"rmdn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except harness.MultiSeedError as exc:
        print(f"rmdn: error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ArithmeticError as exc:
        print(f"rmdn: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, FormatError) as exc:
        print(f"rmdn: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
