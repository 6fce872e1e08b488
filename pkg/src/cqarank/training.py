"""Training loop with rmsprop, dev-loss early stopping (joint or per-task),
parameter snapshots, per-epoch history reporting, and a deterministic binary
checkpoint format.

Early stopping counts epochs since the dev loss last improved (strictly
decreased) and halts once the count reaches the patience, so the stop epoch is
always ``last_improvement + patience``.  Joint mode watches the summed dev
loss and keeps one snapshot; per-task mode watches each task's dev loss
separately, keeps one snapshot per task, and halts when every task has
stalled.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import nn_core as nn
from .dataset import BinaryLabels, Triple, binarize, make_batches
from .evaluation import build_rows, evaluate_scores
from .model import TASKS, MtlModel, PairModel
from .text_pipeline import Vocabulary


class CheckpointError(ValueError):
    """Raised for malformed checkpoint files or dimension mismatches."""


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    lr: float = 0.001
    rho: float = 0.9
    eps: float = 1e-6
    dropout_input: float = 0.4
    dropout_hidden: float = 0.7
    patience: int = 10
    stopping: str = "global"  # "global" | "per_task"
    seed: int = 0
    tasks: tuple[str, ...] = TASKS

    def __post_init__(self):
        if self.stopping not in ("global", "per_task"):
            raise ValueError(f"stopping must be 'global' or 'per_task', got {self.stopping!r}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")
        unknown = set(self.tasks) - set(TASKS)
        if unknown:
            raise ValueError(f"unknown tasks: {sorted(unknown)}")
        if not self.tasks:
            raise ValueError("at least one task required")


def joint_loss(preds: dict[str, nn.Tensor], labels: BinaryLabels, tasks: Sequence[str]) -> nn.Tensor:
    """Sum of the per-task cross-entropies for the active tasks."""
    gold = {"A": labels.yA, "B": labels.yB, "C": labels.yC}
    return nn.add_n([nn.bce_loss(preds[t], gold[t]) for t in tasks])


class EarlyStopper:
    """Stops once ``patience`` consecutive epochs pass without the watched
    value strictly improving."""

    def __init__(self, patience: int):
        if patience < 1:
            raise ValueError(f"patience must be >= 1, got {patience}")
        self.patience = patience
        self.best: float = math.inf
        self.best_epoch: int = 0
        self.counter: int = 0

    def update(self, value: float, epoch: int) -> bool:
        """Record this epoch's value; returns True when it improved."""
        if value < self.best:
            self.best = value
            self.best_epoch = epoch
            self.counter = 0
            return True
        self.counter += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.counter >= self.patience


@dataclass
class EpochStats:
    epoch: int
    loss_train: float
    loss_dev: float
    task_loss: dict[str, float]
    task_map: dict[str, float]


@dataclass
class TrainReport:
    history: list[EpochStats] = field(default_factory=list)
    stop_epoch: int = 0
    stopped_early: bool = False
    best_epoch: dict[str, int] = field(default_factory=dict)  # per_task; key "joint" in global mode
    snapshots: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)


def snapshot(model) -> dict[str, np.ndarray]:
    """Copy every parameter array, keyed by parameter name."""
    snap = {}
    for p in model.parameters():
        if p.name in snap:
            raise ValueError(f"duplicate parameter name {p.name!r}")
        snap[p.name] = p.data.copy()
    return snap


def restore(model, snap: dict[str, np.ndarray]) -> None:
    """Load a snapshot back into the model in place."""
    for p in model.parameters():
        if p.name not in snap:
            raise CheckpointError(f"snapshot missing parameter {p.name!r}")
        if snap[p.name].shape != p.data.shape:
            raise CheckpointError(
                f"parameter {p.name!r}: snapshot shape {snap[p.name].shape} "
                f"!= model shape {p.data.shape}"
            )
        np.copyto(p.data, snap[p.name])


@dataclass
class DevStats:
    total: float
    task_loss: dict[str, float]
    task_map: dict[str, float]


def _dev_pass(model, dev: Sequence[Triple], tasks: Sequence[str]) -> DevStats:
    """One inference pass over the dev set: mean per-task loss, their sum over
    active tasks, and per-task MAP percentage (nan when no dev group has a
    positive)."""
    loss_sums = {t: 0.0 for t in tasks}
    scores: dict[str, list[float]] = {t: [] for t in tasks}
    for triple in dev:
        preds = model.predict(model.featurize(triple), training=False)
        labels = binarize(triple)
        gold = {"A": labels.yA, "B": labels.yB, "C": labels.yC}
        for t in tasks:
            p = float(preds[t].data[0])
            scores[t].append(p)
            pc = min(max(p, nn.BCE_CLAMP), 1.0 - nn.BCE_CLAMP)
            loss_sums[t] += -(gold[t] * math.log(pc) + (1 - gold[t]) * math.log(1.0 - pc))
    n = max(len(dev), 1)
    task_loss = {t: loss_sums[t] / n for t in tasks}
    task_map = {}
    for t in tasks:
        try:
            task_map[t] = evaluate_scores(build_rows(dev, scores[t], t)).map
        except ValueError:
            task_map[t] = math.nan
    return DevStats(total=sum(task_loss.values()), task_loss=task_loss, task_map=task_map)


def train(
    model,
    train_data: Sequence[Triple],
    dev_data: Sequence[Triple],
    config: TrainConfig,
    log: Optional[Callable[[str], None]] = None,
) -> TrainReport:
    """Fit the model with rmsprop and early stopping; on return the model
    holds the best joint snapshot (global mode) or the last epoch's weights
    (per-task mode, with the per-task snapshots in the report)."""
    tasks = [t for t in config.tasks if t in model.tasks]
    if not tasks:
        raise ValueError(f"model scores {model.tasks}, none of the configured tasks {config.tasks}")
    if not train_data:
        raise ValueError("empty training set")
    if not dev_data:
        raise ValueError("empty dev set")

    optimizer = nn.RmsProp(model.parameters(), lr=config.lr, rho=config.rho, eps=config.eps)
    report = TrainReport()
    if config.stopping == "global":
        stoppers = {"joint": EarlyStopper(config.patience)}
    else:
        stoppers = {t: EarlyStopper(config.patience) for t in tasks}

    features = [model.featurize(t) for t in train_data]
    gold = [binarize(t) for t in train_data]

    epoch = 0
    for epoch in range(1, config.epochs + 1):
        order = make_batches(list(range(len(train_data))), config.batch_size, seed=[config.seed, epoch, 0])
        drop_rng = np.random.default_rng([config.seed, epoch, 1])
        loss_total = 0.0
        for batch_no, batch in enumerate(order):
            optimizer.zero_grads()
            losses = []
            for idx in batch:
                preds = model.predict(
                    features[idx],
                    training=True,
                    rng=drop_rng,
                    dropout_input=config.dropout_input,
                    dropout_hidden=config.dropout_hidden,
                )
                losses.append(joint_loss(preds, gold[idx], tasks))
            batch_loss = nn.scale(nn.add_n(losses), 1.0 / len(batch))
            value = float(batch_loss.data[0])
            if not math.isfinite(value):
                raise nn.NumericError(
                    f"non-finite training loss {value} in epoch {epoch}, batch {batch_no}"
                )
            batch_loss.backward()
            optimizer.step()
            loss_total += value * len(batch)
        loss_train = loss_total / len(train_data)

        dev = _dev_pass(model, dev_data, tasks)
        report.history.append(
            EpochStats(
                epoch=epoch,
                loss_train=loss_train,
                loss_dev=dev.total,
                task_loss=dict(dev.task_loss),
                task_map=dict(dev.task_map),
            )
        )
        if log is not None:
            maps = " ".join(f"map{t}={dev.task_map[t]:.2f}" for t in tasks)
            log(
                f"epoch {epoch}: loss_train={loss_train:.6f} loss_dev={dev.total:.6f} {maps}"
            )

        if config.stopping == "global":
            if stoppers["joint"].update(dev.total, epoch):
                report.snapshots["joint"] = snapshot(model)
        else:
            for t in tasks:
                if stoppers[t].update(dev.task_loss[t], epoch):
                    report.snapshots[t] = snapshot(model)
        if all(s.should_stop for s in stoppers.values()):
            report.stopped_early = True
            break

    report.stop_epoch = epoch
    report.best_epoch = {k: s.best_epoch for k, s in stoppers.items()}
    if config.stopping == "global" and "joint" in report.snapshots:
        restore(model, report.snapshots["joint"])
    return report


_CSV_HEADER = "epoch,loss_train,loss_dev,lossA_dev,lossB_dev,lossC_dev,mapA_dev,mapB_dev,mapC_dev"


def write_history_csv(path: str, history: Sequence[EpochStats]) -> None:
    """Per-epoch training curve; tasks the run did not train are written as
    nan.  Atomic (temp file + rename)."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".history-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(_CSV_HEADER + "\n")
            for row in history:
                cells = [str(row.epoch)]
                cells += [f"{row.loss_train:.6f}", f"{row.loss_dev:.6f}"]
                cells += [f"{row.task_loss.get(t, math.nan):.6f}" for t in TASKS]
                cells += [f"{row.task_map.get(t, math.nan):.6f}" for t in TASKS]
                fh.write(",".join(cells) + "\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


_MAGIC = b"CQRK0001"


def _meta_for(model) -> dict:
    meta = {
        "kind": model.kind,
        "m": model.m,
        "d_w": model.d_w,
        "d_feat": model.d_feat,
        "filter_width": model.filter_width,
        "max_len": model.max_len,
        "dtype": model.dtype.name,
    }
    if isinstance(model, PairModel):
        meta["task"] = model.task
    return meta


def save_checkpoint(path: str, model, params: Optional[dict[str, np.ndarray]] = None) -> None:
    """Serialize the model to a deterministic binary container: magic, JSON
    index (meta, vocab, parameter table), then raw little-endian arrays in
    sorted name order.  Saving the same weights twice yields identical bytes.

    ``params`` substitutes a snapshot for the model's live arrays."""
    if params is None:
        params = snapshot(model)
    entries = []
    blobs = []
    offset = 0
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name])
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        blob = arr.tobytes()
        entries.append(
            {
                "name": name,
                "dtype": arr.dtype.str,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(blob),
            }
        )
        blobs.append(blob)
        offset += len(blob)
    index = {
        "meta": _meta_for(model),
        "params": entries,
        "vocab": list(model.vocab.tokens[2:]),
    }
    head = json.dumps(index, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = _MAGIC + len(head).to_bytes(8, "little") + head + b"".join(blobs)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)) or ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_checkpoint(path: str) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[: len(_MAGIC)] != _MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    pos = len(_MAGIC)
    head_len = int.from_bytes(data[pos : pos + 8], "little")
    pos += 8
    try:
        index = json.loads(data[pos : pos + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt index: {exc}") from exc
    pos += head_len
    params = {}
    for entry in index["params"]:
        start = pos + entry["offset"]
        blob = data[start : start + entry["nbytes"]]
        if len(blob) != entry["nbytes"]:
            raise CheckpointError(f"{path}: truncated array {entry['name']!r}")
        arr = np.frombuffer(blob, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"])
        params[entry["name"]] = arr.copy()
    return index, params


def load_checkpoint(path: str):
    """Rebuild the model (architecture, vocabulary, weights) from a file
    written by :func:`save_checkpoint`."""
    index, params = _read_checkpoint(path)
    meta = index["meta"]
    vocab = Vocabulary(index["vocab"])
    common = dict(
        m=meta["m"],
        d_w=meta["d_w"],
        d_feat=meta["d_feat"],
        filter_width=meta["filter_width"],
        max_len=meta["max_len"],
        dtype=np.dtype(meta["dtype"]),
    )
    if meta["kind"] == "mtl":
        model = MtlModel(vocab, **common)
    elif meta["kind"] == "pair":
        model = PairModel(vocab, task=meta["task"], **common)
    else:
        raise CheckpointError(f"{path}: unknown model kind {meta['kind']!r}")
    restore(model, params)
    return model
