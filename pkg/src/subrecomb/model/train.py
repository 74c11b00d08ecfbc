"""Mini-batch training with recombination, deformation and mirroring augmentations."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..recombine import SCHEME_OF_VARIANT, original_entries, plan_epoch
from .network import HEADS, Adam, EncoderConfig, Network, bce_with_logits, parameter_digest

log = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    """Training diverged (non-finite loss or parameters)."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-5
    batch_size: int = 6
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    early_stop_patience: int = 100
    max_epochs: int = 1000
    seed: int = 0
    recombine: bool = False  # R
    deform: bool = False  # D
    mirror: bool = False  # M (whole_head only)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)

    def __post_init__(self):
        for name in ("learning_rate", "batch_size", "early_stop_patience", "max_epochs"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ValueError("invalid Adam coefficients")

    @property
    def flags(self):
        return "".join(f for f, on in zip("RDM", (self.recombine, self.deform, self.mirror)) if on) or "none"

    def with_flags(self, flags):
        flags = "" if flags in ("none", "") else flags.upper()
        unknown = set(flags) - set("RDM")
        if unknown:
            raise ValueError(f"unknown augmentation flag(s) {sorted(unknown)}")
        from dataclasses import replace
        return replace(self, recombine="R" in flags, deform="D" in flags, mirror="M" in flags)

    def to_dict(self):
        d = asdict(self)
        d["encoder"]["conv_blocks"] = [list(b) for b in self.encoder.conv_blocks]
        return d


@dataclass
class TrainResult:
    network: Network
    history: list  # dicts: epoch, train_loss, val_auc_global, val_auc_ica, val_auc_mca
    best_epoch: int
    best_auc: float

    def digest(self):
        return parameter_digest(self.network)


HISTORY_FIELDS = ("epoch", "train_loss", "val_auc_global", "val_auc_ica", "val_auc_mca")


def write_history(path, history):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, HISTORY_FIELDS, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for row in history:
            w.writerow({k: (f"{row[k]:.6f}" if isinstance(row[k], float) else row[k]) for k in HISTORY_FIELDS})


def predict_entries(net, bank, variant, entries, batch_size=16):
    """Inference-mode logits (N, 9) for plan entries."""
    out = []
    for s in range(0, len(entries), batch_size):
        inputs, _ = bank.assemble(variant, entries[s : s + batch_size])
        out.append(net.predict(inputs))
    return np.concatenate(out) if out else np.zeros((0, 9))


def validation_aucs(net, bank, variant, patients):
    """Class AUC per head on the original (unrecombined, undeformed) patients."""
    from ..eval import metrics_row

    entries = original_entries(patients, SCHEME_OF_VARIANT[variant])
    logits = predict_entries(net, bank, variant, entries)
    targets = bank.assemble(variant, entries)[1]
    row = metrics_row(logits, targets)
    return {h: row[f"{h}_auc"] for h in HEADS}


def epoch_entries(variant, bank, patients, config, epoch, rng):
    """Training entries, per-member repetition indices and mirror flags for one epoch."""
    scheme = SCHEME_OF_VARIANT[variant]
    if config.recombine:
        entries = list(plan_epoch(bank.manifest, scheme, config.seed * 1_000_003 + epoch, patients).samples)
    else:
        entries = original_entries(patients, scheme)
        entries = [entries[k] for k in rng.permutation(len(entries))]
    width = len(entries[0]) if entries else 0
    if config.deform and bank.online:
        # fresh field per use; the original keeps its 1 / (repetitions + 1) share
        keep = rng.random((len(entries), width)) < 1.0 / (bank.repetitions + 1)
        reps = np.where(keep, -1, rng.integers(0, 2**31 - 1, (len(entries), width))).tolist()
    elif config.deform and bank.repetitions > 0:
        # -1 keeps the undeformed original among the choices
        reps = rng.integers(-1, bank.repetitions, (len(entries), width)).tolist()
    else:
        reps = [[-1] * width for _ in entries]
    if config.mirror and variant == "whole_head":
        mirror = (rng.random(len(entries)) < 0.5).tolist()
    else:
        mirror = [False] * len(entries)
    return entries, reps, mirror


def train(variant, bank, train_patients, val_patients, config=TrainConfig(), history_path=None):
    """Train ``variant`` on ``train_patients``; early-stop on validation global AUC.

    Validation always uses the original, unaugmented patients. The returned
    network holds the parameters of the best validation epoch.
    """
    train_patients, val_patients = list(train_patients), list(val_patients)
    if set(train_patients) & set(val_patients):
        raise ValueError("train and validation patients overlap")
    if not train_patients:
        raise ValueError("no training patients")
    enc = EncoderConfig(config.encoder.conv_blocks, config.encoder.feature_len,
                        config.encoder.input_channels, config.seed)
    net = Network(variant, enc)
    opt = Adam(net.parameters(), config.learning_rate, config.beta1, config.beta2, config.eps)
    history = []
    best_auc, best_epoch, best_state = -math.inf, 0, net.state()
    for epoch in range(1, config.max_epochs + 1):
        rng = np.random.default_rng([config.seed, epoch])
        entries, reps, mirror = epoch_entries(variant, bank, train_patients, config, epoch, rng)
        net.train()
        losses = []
        for s in range(0, len(entries), config.batch_size):
            sl = slice(s, s + config.batch_size)
            if len(entries[sl]) < 2:
                continue  # batch statistics need at least two samples
            inputs, targets = bank.assemble(variant, entries[sl], reps[sl], mirror[sl])
            net.zero_grad()
            logits = net.forward(inputs)
            loss, grad = bce_with_logits(logits, targets)
            if not np.isfinite(loss):
                raise NumericalError(f"{variant} epoch {epoch}: non-finite loss {loss}")
            net.backward(grad.astype(net.dtype))
            opt.step(net.gradients())
            losses.append(loss)
        aucs = validation_aucs(net, bank, variant, val_patients) if val_patients else {h: math.nan for h in HEADS}
        row = {"epoch": epoch, "train_loss": float(np.mean(losses)) if losses else math.nan}
        row.update({f"val_auc_{h}": float(aucs[h]) for h in HEADS})
        history.append(row)
        score = aucs["global"]
        if not np.isnan(score) and score > best_auc:
            best_auc, best_epoch, best_state = score, epoch, net.state()
        elif np.isnan(score) and best_epoch == 0:
            best_state = net.state()  # undefined validation AUC: keep the latest
        log.debug("%s %s epoch %d loss %.4f val auc %.3f", variant, config.flags, epoch, row["train_loss"], score)
        if best_epoch and epoch - best_epoch >= config.early_stop_patience:
            break
    net.load_state(best_state)
    net.eval()
    if history_path is not None:
        write_history(history_path, history)
    return TrainResult(net, history, best_epoch, best_auc)
