"""Training and evaluation harness: deterministic epoch loop with Adam,
per-epoch loss logging, checkpointing, and confusion-matrix evaluation.

Everything downstream of (config, seed) is bit-reproducible: parameter
init, per-epoch shuffles, and the sequential update order are all fixed,
so repeated runs produce byte-identical loss CSVs and checkpoints.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import save_params
from .data import Dataset, batches
from .loss import (
    ClassWeights,
    class_frequencies,
    enet_weights,
    ial_loss_and_grad,
    wce_loss_and_grad,
)
from .metrics import ConfusionMatrix, GroupReport, group_report, predictions_from_prob
from .net import NetConfig, build_network
from .optim import Adam, OptimConfig, lr_at

__all__ = [
    "LossConfig",
    "EpochStats",
    "TrainResult",
    "train_model",
    "history_to_csv",
    "evaluate_model",
    "evaluate_report",
]


@dataclass(frozen=True)
class LossConfig:
    """Which objective to train with and its hyper-parameters.

    ``a`` shapes the static class weights 1/ln(a + f_c); ``lam`` offsets
    the dynamic weight; ``alpha`` offsets the group coefficients.
    """

    kind: str = "ial"
    a: float = 1.02
    lam: float = 0.5
    alpha: float = 1.0

    def __post_init__(self):
        if self.kind not in ("ial", "wce"):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.a <= 1.0:
            raise ValueError("weight hyper-parameter a must exceed 1")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")

    def to_dict(self) -> dict:
        return {
            "loss": self.kind,
            "a": self.a,
            "lambda": self.lam,
            "alpha": self.alpha,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LossConfig":
        known = {"loss", "a", "lambda", "alpha"}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown loss config keys: {sorted(extra)}")
        out = {}
        if "loss" in d:
            out["kind"] = d["loss"]
        if "a" in d:
            out["a"] = float(d["a"])
        if "lambda" in d:
            out["lam"] = float(d["lambda"])
        if "alpha" in d:
            out["alpha"] = float(d["alpha"])
        return cls(**out)


@dataclass(frozen=True)
class EpochStats:
    """Per-batch means over one epoch."""

    epoch: int
    lr: float
    group_terms: tuple[float, ...]       # I_1 .. I_G
    dynamic_weights: tuple[float, ...]   # f_2 .. f_G, zeros for plain WCE
    total: float


@dataclass
class TrainResult:
    net: object
    history: list[EpochStats]
    weights: ClassWeights
    loss_config: LossConfig
    optim_config: OptimConfig
    net_config: NetConfig
    seed: int
    batch_size: int
    final_checkpoint: str | None = None
    loss_csv: str | None = None
    epoch_checkpoints: list[str] = field(default_factory=list)


def _csv_num(v: float) -> str:
    # repr of a Python float is the shortest round-trip form, so equal
    # doubles always format to equal bytes
    return repr(float(v))


def history_to_csv(history: list[EpochStats], num_groups: int) -> str:
    cols = ["epoch", "lr"]
    cols += [f"I_{g}" for g in range(1, num_groups + 1)]
    cols += [f"f_{g}" for g in range(2, num_groups + 1)]
    cols.append("total")
    lines = [",".join(cols)]
    for row in history:
        if len(row.group_terms) != num_groups:
            raise ValueError("history rows disagree with num_groups")
        fields = [str(row.epoch), _csv_num(row.lr)]
        fields += [_csv_num(v) for v in row.group_terms]
        fields += [_csv_num(v) for v in row.dynamic_weights]
        fields.append(_csv_num(row.total))
        lines.append(",".join(fields))
    return "\n".join(lines) + "\n"


def train_model(
    dataset: Dataset,
    net_config: NetConfig,
    loss_config: LossConfig,
    optim_config: OptimConfig,
    seed: int,
    batch_size: int = 8,
    out_dir=None,
    weights: ClassWeights | None = None,
    checkpoint_every: int | None = None,
    progress=None,
) -> TrainResult:
    """Train a fresh network on ``dataset`` and optionally write artifacts.

    With ``out_dir`` set, writes ``loss.csv`` and ``final.ckpt`` there, plus
    ``checkpoints/epoch_NNN.ckpt`` every ``checkpoint_every`` epochs.
    ``progress`` is called with each EpochStats row as it completes.
    """
    if batch_size < 1:
        raise ValueError("batch size must be at least 1")
    hierarchy = dataset.hierarchy
    G = hierarchy.num_groups
    if weights is None:
        freqs = class_frequencies(iter(dataset.labels), hierarchy)
        weights = enet_weights(freqs, a=loss_config.a)
    net = build_network(net_config, seed)
    adam = Adam(net.store, optim_config)
    result = TrainResult(
        net=net,
        history=[],
        weights=weights,
        loss_config=loss_config,
        optim_config=optim_config,
        net_config=net_config,
        seed=seed,
        batch_size=batch_size,
    )
    ckpt_dir = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        if checkpoint_every is not None:
            ckpt_dir = os.path.join(out_dir, "checkpoints")
            os.makedirs(ckpt_dir, exist_ok=True)

    for epoch in range(optim_config.epochs):
        lr = lr_at(epoch, optim_config)
        term_sums = np.zeros(G, dtype=np.float64)
        weight_sums = np.zeros(max(G - 1, 0), dtype=np.float64)
        total_sum = 0.0
        n_batches = 0
        for images, labels in batches(dataset, batch_size, [seed, 1, epoch]):
            logits = net.forward(images)
            if loss_config.kind == "ial":
                breakdown, grad = ial_loss_and_grad(
                    logits, labels, hierarchy, weights,
                    alpha=loss_config.alpha, lam=loss_config.lam,
                )
                weight_sums += breakdown.dynamic_weights
            else:
                breakdown, grad = wce_loss_and_grad(logits, labels, hierarchy, weights)
            net.store.zero_grads()
            net.backward(grad)
            adam.step(lr)
            term_sums += breakdown.per_group
            total_sum += breakdown.total
            n_batches += 1
        row = EpochStats(
            epoch=epoch,
            lr=lr,
            group_terms=tuple(term_sums / n_batches),
            dynamic_weights=tuple(weight_sums / n_batches),
            total=total_sum / n_batches,
        )
        result.history.append(row)
        if ckpt_dir is not None and (epoch + 1) % checkpoint_every == 0:
            path = os.path.join(ckpt_dir, f"epoch_{epoch + 1:03d}.ckpt")
            save_params(path, net.store)
            result.epoch_checkpoints.append(path)
        if progress is not None:
            progress(row)

    if out_dir is not None:
        csv_path = os.path.join(out_dir, "loss.csv")
        with open(csv_path, "w", newline="") as fh:
            fh.write(history_to_csv(result.history, G))
        final_path = os.path.join(out_dir, "final.ckpt")
        save_params(final_path, net.store)
        result.loss_csv = csv_path
        result.final_checkpoint = final_path
    return result


def evaluate_model(net, dataset: Dataset, batch_size: int = 8) -> ConfusionMatrix:
    """Confusion matrix of argmax predictions over the whole dataset."""
    hierarchy = dataset.hierarchy
    cm = ConfusionMatrix(hierarchy.num_classes, ignore_id=hierarchy.ignore_id)
    n = len(dataset)
    for start in range(0, n, batch_size):
        images = dataset.images[start:start + batch_size]
        labels = dataset.labels[start:start + batch_size]
        logits = net.forward(images)
        cm.accumulate(labels, predictions_from_prob(logits))
    return cm


def evaluate_report(
    net, dataset: Dataset, baseline: GroupReport | None = None, batch_size: int = 8
) -> GroupReport:
    cm = evaluate_model(net, dataset, batch_size=batch_size)
    return group_report(cm, dataset.hierarchy, baseline=baseline)
