"""Experiment orchestration: instance building, attacks, sweeps, reports.

`run_attack` is the workhorse: it builds (or loads) an instance, picks an
informative row subsample, dispatches one of the three attacks with
held-out-row validation, and scores the result against the planted ground
truth.  Success is exact: the recovered integer matrix must match the
planted one up to a row permutation (MSE identically zero).

Timing covers the attack only; instance construction is excluded, matching
how the reference running-time curves are reported.
"""

from __future__ import annotations

import json
import random
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .errors import GradleakError, RankDeficientMask, SystemUnderdetermined
from .flsim import (
    Batch,
    Encoding,
    binary_regime_instance,
    default_encoding,
    first_layer_grads,
    mlp_init,
    secure_aggregate_instance,
)
from .hssp import (
    ATTACKS,
    AttackReport,
    HsspInstance,
    PlantedInstance,
    instance_from_json,
    rank_and_critical_rows,
    match_up_to_permutation,
    verify_solution,
)
from .intmat import IntMatrix

HEURISTIC_SUBSAMPLE = {
    "ns": lambda m, b: min(m, 2 * b),
    "mv": lambda m, b: min(m, b * b + b),
    "stat": lambda m, b: min(m, b * b),
}


@dataclass
class ExperimentConfig:
    """Everything one attack run (or sweep trial) needs."""

    dataset: str = "synthetic"  # synthetic | path.csv | path.idx | path.json
    layer_sizes: tuple[int, ...] = (20, 500, 100, 10)
    batch: int = 10
    clients: int = 1
    method: str = "ns"
    subsample: int | None = None  # None -> per-method heuristic
    trials: int = 10
    seed: int = 0
    q_bits: int | None = None
    scale: int = 256
    loss: str = "cross_entropy"
    classes: int = 10
    labeled: bool = False  # csv has a trailing label column
    single_label: int | None = None  # force every sample to one class
    attack_attempts: int = 3
    output: str | None = None
    figure: str | None = None

    def __post_init__(self) -> None:
        if self.method not in ATTACKS:
            raise ValueError(f"method must be one of {sorted(ATTACKS)}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")

    def heuristic_m(self, m_rows: int, hidden: int) -> int:
        if self.subsample is not None:
            return self.subsample
        return HEURISTIC_SUBSAMPLE[self.method](m_rows, hidden)

    @staticmethod
    def from_json(path: str | Path) -> "ExperimentConfig":
        doc = json.loads(Path(path).read_text())
        doc["layer_sizes"] = tuple(doc.get("layer_sizes", (20, 500, 100, 10)))
        return ExperimentConfig(**doc)


@dataclass
class SweepResult:
    """Rows of (parameter value, mean runtime ms, success rate, trials)."""

    param_name: str
    rows: list[tuple[float, float, float, int]] = field(default_factory=list)

    def to_csv(self, path: str | Path) -> None:
        lines = ["param,mean_runtime_ms,success_rate,trials"]
        for param, ms, rate, trials in self.rows:
            lines.append(f"{param:g},{ms:.3f},{rate:.4f},{trials}")
        Path(path).write_text("\n".join(lines) + "\n")


def subsample_rows(h: IntMatrix, m: int, rng_seed: int = 0) -> tuple[IntMatrix, list[int]]:
    """Uniformly sampled distinct rows of h with their indices."""
    if m > h.rows:
        raise ValueError(f"cannot sample {m} of {h.rows} rows")
    idx = random.Random(rng_seed).sample(range(h.rows), m)
    return IntMatrix.from_rows([list(h.data[i]) for i in idx]), idx


def _select_attack_rows(
    inst: HsspInstance, m: int, rng_seed: int, max_tries: int = 60
) -> list[int]:
    """Row indices whose submatrix is as informative as the sample allows.

    Preference order, all judged from the observable H mod q: pairwise
    distinct nonzero rows, full hidden rank, and (at small m) rank that
    survives deleting any single row.  Duplicated or constant neuron rows
    collapse the candidate lattice and flood it with spurious binary
    vectors, so they are avoided whenever enough distinct rows exist.
    """
    mm = inst.m_rows
    target = min(inst.batch, inst.dim)
    first_idx: dict[tuple, int] = {}
    for i in range(mm):
        row = inst.h.data[i]
        if any(row) and row not in first_idx:
            first_idx[row] = i
    distinct = sorted(first_idx.values())
    fallback: list[int] | None = None
    for t in range(max_tries):
        rng = random.Random(rng_seed + 9973 * t)
        if len(distinct) >= m:
            idx = sorted(rng.sample(distinct, m))
        else:
            idx = sorted(rng.sample(range(mm), m))
        sub_rows = [list(inst.h.data[i]) for i in idx]
        rank, critical = rank_and_critical_rows(sub_rows, inst.q.q)
        if rank != target:
            continue
        fallback = fallback or idx
        if m <= 4 * inst.batch and critical:
            continue
        return idx
    if fallback is None:
        # let the attack raise RankMismatch on the plain subsample
        return subsample_rows(inst.h, m, rng_seed)[1]
    return fallback


@dataclass
class BuiltInstance:
    instance: HsspInstance
    planted: PlantedInstance | None
    encoding: Encoding | None


def build_instance(cfg: ExperimentConfig, trial_seed: int, m_attack: int | None = None) -> BuiltInstance:
    """Instance for one trial: simulate FL clients or load a serialized one."""
    if cfg.dataset.endswith(".json"):
        loaded = instance_from_json(Path(cfg.dataset).read_text())
        if isinstance(loaded, PlantedInstance):
            return BuiltInstance(loaded.instance, loaded, None)
        return BuiltInstance(loaded, None, None)
    hidden = cfg.batch * cfg.clients
    m_rows = cfg.layer_sizes[1]
    dim = cfg.layer_sizes[0]
    m_for_q = m_attack if m_attack is not None else cfg.heuristic_m(m_rows, hidden)
    data = _load_features(cfg, trial_seed)
    n_classes = min(cfg.classes, cfg.layer_sizes[-1])
    for attempt in range(20):
        model = mlp_init(cfg.layer_sizes, rng_seed=trial_seed * 31 + attempt)
        rng = np.random.default_rng(trial_seed * 7 + attempt)
        batches = []
        for _ in range(cfg.clients):
            sel = rng.choice(data.shape[0], size=cfg.batch, replace=False)
            labels = (
                tuple([min(cfg.single_label, n_classes - 1)] * cfg.batch)
                if cfg.single_label is not None
                else tuple(int(v) for v in rng.integers(0, n_classes, cfg.batch))
            )
            batches.append(Batch(data[sel], labels))
        enc = default_encoding(
            max(m_for_q, hidden + 1),
            hidden,
            dim,
            scale=cfg.scale,
            rng_seed=trial_seed,
            q_bits=cfg.q_bits,
        )
        try:
            if cfg.clients == 1:
                bundle = first_layer_grads(model, batches[0], cfg.loss)
                inst, planted = binary_regime_instance(bundle, enc)
            else:
                bundles = [first_layer_grads(model, b, cfg.loss) for b in batches]
                inst, planted = secure_aggregate_instance(bundles, enc)
            return BuiltInstance(inst, planted, enc)
        except RankDeficientMask:
            continue
    raise RankDeficientMask("no full-rank activation mask in 20 model resamples")


def _load_features(cfg: ExperimentConfig, trial_seed: int) -> np.ndarray:
    dim = cfg.layer_sizes[0]
    if cfg.dataset == "synthetic":
        rng = np.random.default_rng(trial_seed)
        n = max(4 * cfg.batch * cfg.clients, 64)
        # 8-bit grid in [0, 1): encoding at scale 256 is exact
        return np.floor(rng.uniform(0.0, 1.0, (n, dim)) * 256.0) / 256.0
    from . import datasets

    if cfg.dataset.endswith(".csv"):
        feats, _ = datasets.load_csv(cfg.dataset, labeled=cfg.labeled)
    elif cfg.dataset.endswith(".idx"):
        feats = datasets.load_idx(cfg.dataset)
    else:
        raise ValueError(f"unrecognized dataset {cfg.dataset!r}")
    if feats.shape[1] != dim:
        raise ValueError(
            f"dataset dimension {feats.shape[1]} disagrees with the model input {dim}"
        )
    mx = float(np.abs(feats).max())
    if mx > 1.0:
        # integer-valued sources (8-bit pixels) map onto the encoding grid
        div = 2 ** int(np.ceil(np.log2(mx + 1)))
        feats = feats / div
    return feats


def run_attack(cfg: ExperimentConfig, trial_seed: int | None = None) -> AttackReport:
    """One full attack run; never raises on attack failure."""
    seed = cfg.seed if trial_seed is None else trial_seed
    report = AttackReport(method=cfg.method, success=False)
    try:
        built = build_instance(cfg, seed)
    except GradleakError as exc:
        report.failure = f"{type(exc).__name__}: {exc}"
        report.params = {"seed": seed, "method": cfg.method}
        return report
    inst = built.instance
    hidden = inst.batch
    m_attack = min(cfg.heuristic_m(inst.m_rows, hidden), inst.m_rows)
    x_bound = None
    if built.encoding is not None:
        x_bound = built.encoding.scale
    report.params = {
        "m_rows": inst.m_rows,
        "batch": hidden,
        "dim": inst.dim,
        "subsample": m_attack,
        "q_bits": inst.q.q.bit_length(),
        "seed": seed,
        "clients": cfg.clients,
        "method": cfg.method,
    }
    attack = ATTACKS[cfg.method]
    t_start = time.perf_counter()
    last_error: str | None = None
    for attempt in range(max(1, cfg.attack_attempts)):
        t0 = time.perf_counter()
        idx = _select_attack_rows(inst, m_attack, rng_seed=seed + 5555 * attempt)
        sub = HsspInstance.build(
            inst.q.q, [list(inst.h.data[i]) for i in idx], hidden
        )
        rest = [i for i in range(inst.m_rows) if i not in set(idx)]
        vrng = random.Random(seed + 13 * attempt)
        vcount = min(4 * hidden, len(rest))
        vrows = [list(inst.h.data[i]) for i in vrng.sample(rest, vcount)] if vcount else None
        t_sample = time.perf_counter() - t0
        try:
            t1 = time.perf_counter()
            a, x = attack(sub, x_bound=x_bound, validate_rows=vrows)
            t_attack = time.perf_counter() - t1
        except SystemUnderdetermined as exc:
            # spurious solutions inflate the linearized system; the
            # documented remedy is a larger subsample
            last_error = f"{type(exc).__name__}: {exc}"
            m_attack = min(inst.m_rows, max(m_attack + hidden, (3 * m_attack) // 2))
            report.params["subsample"] = m_attack
            continue
        except GradleakError as exc:
            last_error = f"{type(exc).__name__}: {exc}"
            continue
        t2 = time.perf_counter()
        ok = verify_solution(sub, a, x)
        perm = None
        mse = None
        if built.planted is not None:
            perm = match_up_to_permutation(x, built.planted.x)
            if perm is not None:
                mse = 0.0
            else:
                mse = _integer_mse(x, built.planted.x)
        report.timings = {
            "sample_s": t_sample,
            "attack_s": t_attack,
            "verify_s": time.perf_counter() - t2,
            "total_s": time.perf_counter() - t_start,
            "attempts": attempt + 1,
        }
        report.recovered_a = a
        report.recovered_x = x
        report.permutation = perm
        report.mse = mse
        report.success = bool(
            ok and (built.planted is None or (perm is not None and mse == 0.0))
        )
        if report.success:
            return report
        last_error = "solution failed verification or ground-truth match"
    report.timings.setdefault("total_s", time.perf_counter() - t_start)
    report.timings["attempts"] = cfg.attack_attempts
    report.failure = last_error
    return report


def _integer_mse(x_rec: IntMatrix, x_true: IntMatrix) -> float:
    if (x_rec.rows, x_rec.cols) != (x_true.rows, x_true.cols):
        return float("inf")
    # best-effort row assignment: exact matches first, remainder greedy
    rec_rows = list(x_rec.data)
    total = 0.0
    for row in x_true.data:
        if row in rec_rows:
            rec_rows.remove(row)
            continue
        best = min(
            rec_rows,
            key=lambda r: sum((a - b) ** 2 for a, b in zip(r, row)),
            default=None,
        )
        if best is None:
            return float("inf")
        rec_rows.remove(best)
        total += sum(float(a - b) ** 2 for a, b in zip(best, row))
    return total / (x_true.rows * x_true.cols)


def _sweep_trial(args) -> tuple[float, bool]:
    cfg, trial_seed = args
    rep = run_attack(cfg, trial_seed)
    return rep.timings.get("total_s", 0.0), rep.success


def _run_trials(cfg: ExperimentConfig, workers: int = 1) -> tuple[float, float]:
    """Mean runtime (ms) and success rate over cfg.trials seeded runs."""
    jobs = [(cfg, cfg.seed + 1 + i) for i in range(cfg.trials)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = sorted(zip((j[1] for j in jobs), pool.map(_sweep_trial, jobs)))
            results = [r for _, r in results]
    else:
        results = [_sweep_trial(j) for j in jobs]
    mean_ms = 1000.0 * sum(t for t, _ in results) / len(results)
    rate = sum(1 for _, ok in results if ok) / len(results)
    return mean_ms, rate


def bench_subsample_sweep(
    cfg: ExperimentConfig, m_values: list[int], workers: int = 1
) -> SweepResult:
    """Runtime and success rate as a function of the subsample size."""
    res = SweepResult("m")
    for m in m_values:
        point = ExperimentConfig(**{**asdict(cfg), "layer_sizes": cfg.layer_sizes, "subsample": m})
        ms, rate = _run_trials(point, workers)
        res.rows.append((float(m), ms, rate, point.trials))
    return res


def bench_batch_sweep(
    cfg: ExperimentConfig, b_values: list[int], workers: int = 1
) -> SweepResult:
    """Runtime and success rate as a function of the batch size."""
    res = SweepResult("B")
    for b in b_values:
        point = ExperimentConfig(
            **{**asdict(cfg), "layer_sizes": cfg.layer_sizes, "batch": b, "subsample": None}
        )
        ms, rate = _run_trials(point, workers)
        res.rows.append((float(b), ms, rate, point.trials))
    return res


def bench_defense(
    cfg: ExperimentConfig, n_values: list[int], workers: int = 1
) -> SweepResult:
    """Attack cost against secure aggregation as the client count grows."""
    res = SweepResult("N")
    for n in n_values:
        point = ExperimentConfig(
            **{**asdict(cfg), "layer_sizes": cfg.layer_sizes, "clients": n, "subsample": None}
        )
        ms, rate = _run_trials(point, workers)
        res.rows.append((float(n), ms, rate, point.trials))
    return res


def save_report(report: AttackReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=2))
