"""Experiment orchestration: staged training, evaluation, sweeps."""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import datagen, rls
from .autonet import Adam, Network, build_synth_cnn, step_decay
from .config import ExperimentConfig
from .container import read_container
from .errors import DivergenceError, ParameterError, RmdnError
from .metrics import TransferRecord, dcor2, rates, transfer_distance, transfer_gem

log = logging.getLogger(__name__)

EVAL_BATCH = 256


@dataclass
class RunResult:
    seed: int
    config_hash: str
    record: TransferRecord | None  # None for single-stage runs
    r: np.ndarray  # S x S accuracies
    balanced: np.ndarray  # S x S balanced accuracies
    a: np.ndarray  # per-stage theoretical maxima
    untrained: np.ndarray  # accuracy of the initial model per stage
    dcor: np.ndarray  # S x S x 2, NaN when disabled
    losses: list[tuple[int, int, float]]  # (stage, epoch, mean loss)
    train_reads: list[int]  # training examples read per stage
    rmdn_seen: list[list[int]]  # n_seen of each rmdn layer after each stage
    snapshots: list[dict[str, np.ndarray]]  # model state after each stage
    optimizer_state: dict[str, np.ndarray]
    wall_clock: float

    def metrics(self) -> dict[str, float]:
        if self.record is None:
            return {}
        out = transfer_distance(self.record)
        out.update(transfer_gem(self.record, self.untrained))
        return out


class MultiSeedError(RmdnError, RuntimeError):
    def __init__(self, failed: dict[int, str], partial: list[RunResult]):
        super().__init__(f"runs failed for seeds {sorted(failed)}: {failed}")
        self.failed = failed
        self.partial = partial


def load_dataset(cfg: ExperimentConfig) -> datagen.SynthDataset:
    if cfg.dataset_path:
        return datagen.dataset_from_tensors(read_container(cfg.dataset_path))
    return datagen.generate(cfg.schedule, cfg.n, cfg.data_seed, cfg.stages, noise_std=cfg.noise_std)


def make_network(cfg: ExperimentConfig, seed: int) -> Network:
    return Network(build_synth_cnn(cfg.placement, cfg.epsilon, cfg.lam), seed=seed)


def evaluate(net: Network, ds: datagen.SynthDataset, idx: np.ndarray, with_features: bool = False):
    """Predictions (and optionally pre-logits features) for ``idx`` with frozen state."""
    preds, feats = [], []
    for start in range(0, idx.size, EVAL_BATCH):
        sel = idx[start : start + EVAL_BATCH]
        logits, _ = net.forward(ds.images[sel], ds.design(sel), train_mode=False)
        preds.append(logits.argmax(axis=1))
        if with_features:
            feats.append(net.prelogits.reshape(sel.size, -1).copy())
    p = np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)
    f = np.concatenate(feats) if with_features and feats else None
    return p, f


def group_dcor(features: np.ndarray, confounders: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """dcor^2 between features and confounder within each label group."""
    out = np.full(2, np.nan)
    for g in (0, 1):
        sel = labels == g
        if sel.sum() >= 2:
            out[g] = dcor2(features[sel], confounders[sel])
    return out


def _eval_row(net: Network, ds: datagen.SynthDataset, with_dcor: bool, dcor_split: str = "test"):
    s = ds.n_stages
    acc, bacc = np.zeros(s), np.full(s, np.nan)
    dc = np.full((s, 2), np.nan)
    for j in range(s):
        idx = ds.indices(j, "test")
        preds, feats = evaluate(net, ds, idx, with_features=with_dcor and dcor_split == "test")
        rt = rates(preds, ds.labels[idx])
        acc[j] = rt["accuracy"]
        if rt["balanced_accuracy"] is not None:
            bacc[j] = rt["balanced_accuracy"]
        if with_dcor:
            if dcor_split != "test":
                idx = ds.indices(j, dcor_split)
                _, feats = evaluate(net, ds, idx, with_features=True)
            dc[j] = group_dcor(feats, ds.confounders[idx], ds.labels[idx])
    return acc, bacc, dc


def run_continual(cfg: ExperimentConfig, seed: int | None = None, ds: datagen.SynthDataset | None = None) -> RunResult:
    """Train through the stages in order and fill the accuracy matrix.

    Only the current stage's training split is read while training on it.
    Residualization state is carried across stages and never reset. The
    learning-rate schedule restarts at every stage; Adam moments persist.
    """
    cfg.validate()
    seed = cfg.seeds[0] if seed is None else seed
    ds = load_dataset(cfg) if ds is None else ds
    t0 = time.perf_counter()
    net = make_network(cfg, seed)
    opt = Adam(net.parameters(), lr=cfg.lr)
    s = ds.n_stages
    a = datagen.stage_maxima(ds)

    untrained, _, _ = _eval_row(net, ds, with_dcor=False)
    r = np.zeros((s, s))
    bal = np.zeros((s, s))
    dc = np.full((s, s, 2), np.nan)
    losses: list[tuple[int, int, float]] = []
    reads: list[int] = []
    seen: list[list[int]] = []
    snapshots: list[dict[str, np.ndarray]] = []

    for stage in range(s):
        train_idx = ds.indices(stage, "train")
        shuffle = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(stage, 2))))
        n_read = 0
        for epoch in range(cfg.epochs):
            opt.lr = step_decay(cfg.lr, epoch, cfg.gamma, cfg.decay_every)
            order = train_idx[shuffle.permutation(train_idx.size)]
            total = 0.0
            for start in range(0, order.size, cfg.batch_size):
                sel = order[start : start + cfg.batch_size]
                n_read += sel.size
                net.zero_grad()
                try:
                    _, loss = net.forward(ds.images[sel], ds.design(sel), train_mode=True)
                except ArithmeticError as exc:
                    raise DivergenceError(f"numerical failure in forward pass: {exc}", stage=stage, epoch=epoch) from exc
                if not np.isfinite(loss):
                    raise DivergenceError("non-finite training loss", stage=stage, epoch=epoch)
                net.backward()
                opt.step()
                total += loss * sel.size
            losses.append((stage, epoch, total / max(order.size, 1)))
        reads.append(n_read)
        seen.append([layer.state.n_seen if layer.state else 0 for _, layer in net.rmdn_layers()])
        r[stage], bal[stage], dc[stage] = _eval_row(net, ds, cfg.dcor, cfg.dcor_split)
        snapshots.append(net.state_dict())
        log.info("seed %d stage %d: acc %s", seed, stage, np.round(r[stage], 3))

    record = TransferRecord(r, a) if s >= 2 else None
    return RunResult(
        seed=seed,
        config_hash=cfg.config_hash(),
        record=record,
        r=r,
        balanced=bal,
        a=a,
        untrained=untrained,
        dcor=dc,
        losses=losses,
        train_reads=reads,
        rmdn_seen=seen,
        snapshots=snapshots,
        optimizer_state=opt.state_dict(),
        wall_clock=time.perf_counter() - t0,
    )


def delta_sweep(run: RunResult, cfg: ExperimentConfig, ds: datagen.SynthDataset, deltas) -> np.ndarray:
    """Accuracy table ``[stage_trained, stage_eval, delta]`` on re-rendered test sets.

    The confounder value handed to residualization is the delta-scaled one.
    """
    return sweep_snapshots(run.snapshots, cfg, ds, deltas)


def sweep_snapshots(snapshots: list[dict[str, np.ndarray]], cfg: ExperimentConfig,
                    ds: datagen.SynthDataset, deltas) -> np.ndarray:
    deltas = [float(d) for d in deltas]
    if not deltas or any(not 0.0 <= d <= 1.0 for d in deltas):
        raise ParameterError(f"deltas must be a nonempty subset of [0, 1], got {deltas}")
    s = ds.n_stages
    out = np.zeros((len(snapshots), s, len(deltas)))
    net = make_network(cfg, 0)
    for k, d in enumerate(deltas):
        shown = ds if d == ds.delta else datagen.rerender(ds, d)
        for i, snap in enumerate(snapshots):
            net.load_state_dict(snap)
            for j in range(s):
                idx = shown.indices(j, "test")
                preds, _ = evaluate(net, shown, idx)
                out[i, j, k] = float((preds == shown.labels[idx]).mean())
    return out


def linear_design(n: int, seed: int, p: int = 3):
    """Confounder/label/bias design of the static dataset with extra N(0,1) columns if p > 3."""
    if p < 3:
        raise ParameterError(f"p must be >= 3, got {p}")
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n)
    conf = np.where(y == 0, rng.uniform(1.0, 4.0, n), rng.uniform(3.0, 6.0, n))
    extra = rng.standard_normal((n, p - 3))
    return np.column_stack([conf, extra, y, np.ones(n)]), rng


def estimator_convergence(n: int = 2048, p: int = 3, eps_grid=(10.0, 100.0, 1000.0), seed: int = 0,
                          h: int = 4, noise_std: float = 0.0) -> dict[float, np.ndarray]:
    """l2 gap between the streaming estimate and the full-data OLS fit.

    Features are ``z = X beta_true + noise``; the returned arrays hold the
    gap after each of the ``n`` samples.
    """
    x, rng = linear_design(n, seed, p)
    beta_true = rng.standard_normal((p, h))
    z = x @ beta_true + noise_std * rng.standard_normal((n, h))
    beta_ols = rls.ols_fit(x, z)
    curves = {}
    for eps in eps_grid:
        state = rls.init_state(p, h, eps, 0.0)
        gaps = np.empty(n)
        for t in range(n):
            state = rls.update_sample(state, x[t], z[t])
            gaps[t] = np.linalg.norm(state.beta - beta_ols)
        curves[float(eps)] = gaps
    return curves


def _run_one(args):
    cfg, seed, ds = args
    try:
        return seed, run_continual(cfg, seed, ds), None
    except Exception as exc:  # reported per seed by multi_seed
        return seed, None, f"{type(exc).__name__}: {exc}"


def multi_seed(cfg: ExperimentConfig, seeds=None, threads: int | None = None,
               ds: datagen.SynthDataset | None = None) -> list[RunResult]:
    """Run every seed (model init only; the dataset seed is shared).

    ``RMDN_THREADS`` caps the number of worker processes (default: all cores).
    Results come back in seed order regardless of completion order.
    """
    seeds = list(cfg.seeds if seeds is None else seeds)
    if not seeds:
        raise ParameterError("need at least one seed")
    if threads is None:
        threads = int(os.environ.get("RMDN_THREADS", os.cpu_count() or 1))
    ds = load_dataset(cfg) if ds is None else ds
    jobs = [(cfg, s, ds) for s in seeds]
    if threads > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=min(threads, len(seeds))) as pool:
            outcomes = list(pool.map(_run_one, jobs))
    else:
        outcomes = [_run_one(j) for j in jobs]
    failed = {s: err for s, _, err in outcomes if err is not None}
    results = [res for _, res, err in outcomes if err is None]
    if failed:
        raise MultiSeedError(failed, results)
    return results


def aggregate(results: list[RunResult]) -> dict[str, tuple[float, float]]:
    """Mean and sample std of each transfer metric; std is 0 for a single run."""
    rows = [r.metrics() for r in results]
    out = {}
    for key in rows[0] if rows else ():
        vals = np.array([row[key] for row in rows])
        std = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
        out[key] = (float(vals.mean()), std)
    return out
