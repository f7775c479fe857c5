"""Dual-backbone training: ideal pretraining, corrected fine-tuning, baseline.

The static model is trained on clean scenes and then frozen.  A second
model trains on the degraded twins of the same scenes with

    loss = detection(x') + lambda_fs * pyramid_discrepancy(F(x'), F_static(x))

where the discrepancy is attenuated by training progress ``epoch/epochs``.
The baseline is the same loop with ``lambda_fs = 0``.
"""

from __future__ import annotations

import csv
import dataclasses
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .degrade import DegradeSpec, Kind, degrade_image, make_rng
from .loss import EansdlParams, attenuation, eansdl_arrays
from .tensor import DomainError
from .toynet import (
    N_LEVELS,
    ToyNetParams,
    backward,
    detection_loss,
    detection_loss_grad,
    forward,
    sgd_step,
    synthesize_scene,
)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    lr: float = 0.2
    batch_size: int = 8
    lambda_fs: float = 0.1
    eansdl: EansdlParams = EansdlParams(r0=4)
    seed: int = 0
    dataset_size: int = 200
    size: int = 64
    degrade: DegradeSpec = DegradeSpec(Kind.FOG, 0.6, 0)
    eval_fraction: float = 0.2

    def __post_init__(self):
        if self.epochs < 0:
            raise DomainError(f"epochs must be >= 0, got {self.epochs}")
        if not self.lr >= 0:
            raise DomainError(f"lr must be >= 0, got {self.lr}")
        if self.batch_size < 1:
            raise DomainError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lambda_fs < 0:
            raise DomainError(f"lambda_fs must be >= 0, got {self.lambda_fs}")
        if not 0.0 < self.eval_fraction < 1.0:
            raise DomainError(f"eval_fraction must lie in (0, 1), got {self.eval_fraction}")
        if self.size not in (64, 128):
            raise DomainError(f"size must be 64 or 128, got {self.size}")
        n_eval = self.n_eval
        if n_eval < 1 or n_eval >= self.dataset_size:
            raise DomainError(f"dataset_size {self.dataset_size} too small for a train/eval split")

    @property
    def n_eval(self) -> int:
        return int(math.floor(self.eval_fraction * self.dataset_size + 0.5))

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


# ---------------------------------------------------------------------------
# data


@dataclass(frozen=True)
class Dataset:
    ids: np.ndarray           # scene id per row
    clean: np.ndarray         # (N, 3, S, S)
    masks: tuple              # per level (N, S_k, S_k)
    train_idx: np.ndarray
    eval_idx: np.ndarray


_DATA_CACHE: dict = {}
_DEGRADED_CACHE: dict = {}


def scene_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1, np.uint64)[0])


def build_dataset(cfg: TrainConfig) -> Dataset:
    """Scenes, masks and the train/eval split; memoized per (seed, size, count, split)."""
    key = (cfg.seed, cfg.dataset_size, cfg.size, cfg.n_eval)
    if key not in _DATA_CACHE:
        scenes = [synthesize_scene(scene_seed(cfg.seed, i), cfg.size) for i in range(cfg.dataset_size)]
        order = make_rng(cfg.seed, 0x5B17).permutation(cfg.dataset_size)
        n_train = cfg.dataset_size - cfg.n_eval
        _DATA_CACHE[key] = Dataset(
            ids=np.arange(cfg.dataset_size),
            clean=np.stack([s.image.pixels for s in scenes]),
            masks=tuple(np.stack([s.gt_mask[k] for s in scenes]) for k in range(N_LEVELS)),
            train_idx=np.sort(order[:n_train]),
            eval_idx=np.sort(order[n_train:]),
        )
    return _DATA_CACHE[key]


def degraded_images(cfg: TrainConfig, spec: Optional[DegradeSpec]) -> np.ndarray:
    """All dataset images under ``spec`` (clean when None), one random stream per scene."""
    data = build_dataset(cfg)
    if spec is None:
        return data.clean
    key = (cfg.seed, cfg.dataset_size, cfg.size, cfg.n_eval, spec)
    if key not in _DEGRADED_CACHE:
        from .tensor import ImageRGB

        _DEGRADED_CACHE[key] = np.stack(
            [degrade_image(ImageRGB(img), spec, index=i).pixels for i, img in enumerate(data.clean)]
        )
    return _DEGRADED_CACHE[key]


def clear_caches():
    _DATA_CACHE.clear()
    _DEGRADED_CACHE.clear()
    _IDEAL_CACHE.clear()


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class CurveRow:
    epoch: int
    det_loss: float
    eansdl_term: float      # unattenuated pyramid discrepancy, mean over steps
    attenuation: float


@dataclass(frozen=True)
class StepInfo:
    epoch: int
    step: int
    delta: float
    nonideal_ids: tuple
    ideal_ids: tuple        # empty when no correction branch runs


def write_curve_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "det_loss", "eansdl_term", "attenuation"])
        for r in rows:
            w.writerow([r.epoch, repr(r.det_loss), repr(r.eansdl_term), repr(r.attenuation)])


def _run(cfg, init, inputs, teacher_pyramids=None, curve=None, hook=None) -> ToyNetParams:
    data = build_dataset(cfg)
    params = init
    correct = teacher_pyramids is not None and cfg.lambda_fs > 0
    for epoch in range(cfg.epochs):
        delta = epoch / cfg.epochs
        eparams = dataclasses.replace(cfg.eansdl, delta=delta)
        order = make_rng(cfg.seed, 0x0E9, epoch).permutation(data.train_idx)
        det_sum, fs_sum, n_steps = 0.0, 0.0, 0
        for step, start in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            out = forward(params, inputs[idx])
            masks = [m[idx] for m in data.masks]
            det_sum += detection_loss(out.logits, masks)
            d_logits = detection_loss_grad(out.logits, masks)
            d_pyr = None
            ideal_ids = ()
            if correct:
                ideal, ideal_ids = teacher_pyramids(idx)
                d_pyr = []
                for k in range(N_LEVELS):
                    res, g = eansdl_arrays(out.pyramid[k], ideal[k], eparams, k)
                    fs_sum += (res.local_term + eparams.lambda_consistency * res.consistency_term) / N_LEVELS
                    d_pyr.append(g * (cfg.lambda_fs / N_LEVELS))
            grads = backward(params, out.cache, d_logits, d_pyr)
            params = sgd_step(params, grads, cfg.lr)
            n_steps += 1
            if hook is not None:
                hook(StepInfo(epoch, step, delta, tuple(int(i) for i in data.ids[idx]), ideal_ids))
        if curve is not None:
            curve.append(
                CurveRow(epoch, det_sum / n_steps, fs_sum / n_steps, attenuation(delta, eparams.alpha, eparams.beta))
            )
    return params


_IDEAL_CACHE: dict = {}


def train_ideal(cfg: TrainConfig, curve=None, hook=None) -> ToyNetParams:
    """Detection-only training on clean scenes; the future static backbone."""
    data = build_dataset(cfg)
    return _run(cfg, ToyNetParams.init(cfg.seed), data.clean, curve=curve, hook=hook)


def train_baseline(cfg: TrainConfig, curve=None, hook=None) -> ToyNetParams:
    """Plain fine-tuning: detection-only training on degraded scenes.

    Starts, like the corrected model, from a copy of the clean-trained
    weights for the same config.
    """
    inputs = degraded_images(cfg, cfg.degrade)
    return _run(cfg, _ideal_for(cfg).copy(), inputs, curve=curve, hook=hook)


@dataclass(frozen=True)
class TeacherFeatures:
    """Frozen-model pyramids of the clean scenes, with the scene id of each row."""

    ids: np.ndarray
    levels: list

    def __call__(self, idx):
        return [f[idx] for f in self.levels], tuple(int(i) for i in self.ids[idx])


def teacher_features(theta_ideal: ToyNetParams, cfg: TrainConfig) -> TeacherFeatures:
    """Run the static model once over every clean scene."""
    data = build_dataset(cfg)
    levels = [[] for _ in range(N_LEVELS)]
    for start in range(0, len(data.clean), 32):
        out = forward(theta_ideal, data.clean[start : start + 32])
        for k in range(N_LEVELS):
            levels[k].append(out.pyramid[k])
    return TeacherFeatures(data.ids.copy(), [np.concatenate(lv) for lv in levels])


def train_fctl(theta_ideal: ToyNetParams, cfg: TrainConfig, curve=None, hook=None) -> ToyNetParams:
    """Train on degraded scenes while pulling the pyramid toward the frozen model's.

    The dynamic model starts as a copy of ``theta_ideal``, which itself is
    only read.
    """
    inputs = degraded_images(cfg, cfg.degrade)
    teacher = teacher_features(theta_ideal, cfg) if cfg.lambda_fs > 0 else None
    return _run(cfg, theta_ideal.copy(), inputs, teacher, curve=curve, hook=hook)


# ---------------------------------------------------------------------------
# evaluation


@dataclass(frozen=True)
class Metrics:
    det_loss: float
    f1: float
    precision: float
    recall: float


def objectness_counts(logits, masks) -> tuple[int, int, int]:
    tp = fp = fn = 0
    for z, y in zip(logits, masks):
        pred = np.asarray(z) > 0.0      # sigmoid(z) > 0.5
        truth = np.asarray(y) > 0.5
        tp += int(np.sum(pred & truth))
        fp += int(np.sum(pred & ~truth))
        fn += int(np.sum(~pred & truth))
    return tp, fp, fn


def f1_from_counts(tp, fp, fn) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * tp / (2 * tp + fp + fn) if tp else 0.0
    return f1, precision, recall


def objectness_f1(logits, masks) -> float:
    return f1_from_counts(*objectness_counts(logits, masks))[0]


def evaluate(params: ToyNetParams, degrade: Optional[DegradeSpec], cfg: TrainConfig) -> Metrics:
    """Detection loss and objectness F1 on the held-out scenes."""
    data = build_dataset(cfg)
    images = degraded_images(cfg, degrade)[data.eval_idx]
    masks = [m[data.eval_idx] for m in data.masks]
    out = forward(params, images)
    f1, precision, recall = f1_from_counts(*objectness_counts(out.logits, masks))
    return Metrics(detection_loss(out.logits, masks), f1, precision, recall)


# ---------------------------------------------------------------------------
# experiment


ROLES = ("ideal_on_ideal", "ideal_on_nonideal", "baseline_on_nonideal", "fctl_on_nonideal")


@dataclass
class SeedRow:
    seed: int
    metrics: dict            # role -> Metrics
    fctl_curve: list = field(default_factory=list)


@dataclass
class ExperimentReport:
    """Per-seed metrics and their medians.

    Relative improvements: for F1, (fctl - baseline) / baseline; for the
    detection loss, (baseline - fctl) / baseline.  Positive means FCTL is
    better in both cases.  Both use the medians across seeds.
    """

    degrade: str
    config: TrainConfig
    rows: list = field(default_factory=list)

    def median(self, role: str, metric: str) -> float:
        return float(statistics.median(getattr(r.metrics[role], metric) for r in self.rows))

    @property
    def relative_improvement_f1(self) -> float:
        base = self.median("baseline_on_nonideal", "f1")
        fctl = self.median("fctl_on_nonideal", "f1")
        return (fctl - base) / base if base else (math.inf if fctl > base else 0.0)

    @property
    def relative_improvement_loss(self) -> float:
        base = self.median("baseline_on_nonideal", "det_loss")
        return (base - self.median("fctl_on_nonideal", "det_loss")) / base

    def summary(self) -> dict:
        out = {"degrade": self.degrade, "seeds": ",".join(str(r.seed) for r in self.rows)}
        for role in ROLES:
            for metric in ("f1", "det_loss"):
                out[f"median.{role}.{metric}"] = self.median(role, metric)
        out["relative_improvement.f1"] = self.relative_improvement_f1
        out["relative_improvement.det_loss"] = self.relative_improvement_loss
        return out

    def to_text(self) -> str:
        lines = [f"experiment degrade={self.degrade} epochs={self.config.epochs} scenes={self.config.dataset_size}"]
        lines.append(f"{'seed':>6} {'role':<22} {'det_loss':>10} {'f1':>7} {'prec':>7} {'recall':>7}")
        for r in self.rows:
            for role in ROLES:
                m = r.metrics[role]
                lines.append(f"{r.seed:>6} {role:<22} {m.det_loss:>10.5f} {m.f1:>7.4f} {m.precision:>7.4f} {m.recall:>7.4f}")
        lines.append("")
        lines.append("[results]")
        for k, v in self.summary().items():
            lines.append(f"{k}={v!r}" if isinstance(v, float) else f"{k}={v}")
        for r in self.rows:
            for role in ROLES:
                m = r.metrics[role]
                lines.append(f"seed.{r.seed}.{role}.f1={m.f1!r}")
                lines.append(f"seed.{r.seed}.{role}.det_loss={m.det_loss!r}")
        return "\n".join(lines) + "\n"


def parse_results_block(text: str) -> dict:
    """The key=value pairs after the ``[results]`` marker, values as strings."""
    _, _, block = text.partition("[results]")
    return dict(line.split("=", 1) for line in block.splitlines() if "=" in line)


def _ideal_for(cfg: TrainConfig) -> ToyNetParams:
    # the static model does not depend on the degradation
    key = dataclasses.replace(cfg, degrade=DegradeSpec(Kind.BAYER), lambda_fs=0.0, eansdl=EansdlParams())
    if key not in _IDEAL_CACHE:
        _IDEAL_CACHE[key] = train_ideal(cfg)
    return _IDEAL_CACHE[key]


def run_seed(cfg: TrainConfig, progress: Callable | None = None) -> SeedRow:
    theta_ideal = _ideal_for(cfg)
    baseline = train_baseline(cfg)
    curve = []
    fctl = train_fctl(theta_ideal, cfg, curve)
    metrics = {
        "ideal_on_ideal": evaluate(theta_ideal, None, cfg),
        "ideal_on_nonideal": evaluate(theta_ideal, cfg.degrade, cfg),
        "baseline_on_nonideal": evaluate(baseline, cfg.degrade, cfg),
        "fctl_on_nonideal": evaluate(fctl, cfg.degrade, cfg),
    }
    if progress:
        progress(cfg.seed, metrics)
    return SeedRow(cfg.seed, metrics, curve)


def run_experiment(cfg: TrainConfig, seeds, report_path=None, progress=None, workers: int = 1) -> ExperimentReport:
    """Run every seed and aggregate; rows keep the order of ``seeds``.

    With ``workers > 1`` seeds run in separate processes.  Each seed is a
    deterministic job, so the report does not depend on the worker count.
    """
    seeds = [int(s) for s in seeds]
    if len(seeds) < 3:
        raise DomainError(f"an experiment needs at least 3 seeds, got {len(seeds)}")
    report = ExperimentReport(str(cfg.degrade), cfg)
    configs = [cfg.replace(seed=s) for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(configs))) as pool:
            futures = [pool.submit(run_seed, c) for c in configs]
            for fut in futures:
                row = fut.result()
                if progress:
                    progress(row.seed, row.metrics)
                report.rows.append(row)
    else:
        for c in configs:
            report.rows.append(run_seed(c, progress))
    if report_path is not None:
        Path(report_path).write_text(report.to_text())
    return report
