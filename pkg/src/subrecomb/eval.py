"""Class AUC, side accuracy, cross-validation folds and the ablation matrix."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

log = logging.getLogger(__name__)

TARGETS = ("global", "ica", "mca")
RESULT_FIELDS = ("method", "flags", "fold", "global_auc", "global_side", "ica_auc", "ica_side", "mca_auc", "mca_side")


class MetricError(ValueError):
    """A metric is undefined for the given input (e.g. no positives)."""


def class_auc(scores, is_lvo):
    """ROC AUC of LVO-positive vs negative cases from the rank statistic (ties count 1/2).

    ``scores`` is the positive-class probability, typically
    sigmoid(left logit) + sigmoid(right logit).
    """
    s = np.asarray(scores, np.float64).ravel()
    y = np.asarray(is_lvo, bool).ravel()
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError(f"class AUC undefined with {n_pos} positive / {n_neg} negative cases")
    ranks = rankdata(s)  # average ranks for ties
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def lvo_score(logits):
    """Positive-class probability from (N, 3) logits ordered (no LVO, left, right)."""
    z = np.asarray(logits, np.float64)
    return 0.5 * (1 + np.tanh(0.5 * z[:, 1])) + 0.5 * (1 + np.tanh(0.5 * z[:, 2]))


def side_accuracy(logits, truths, gate=True):
    """Fraction of truly positive cases whose side is predicted correctly.

    ``logits`` and ``truths`` are (N, 3) arrays ordered (no LVO, left, right);
    truths are one-hot. A case counts as correct when argmax(left, right)
    matches the true side (ties go left) and, with ``gate``, the three-way
    argmax is not "no LVO". Predicted-negative positives therefore count
    as errors. ``gate=False`` reads the side from the two side logits only.
    """
    z = np.asarray(logits, np.float64)
    t = np.asarray(truths)
    pos = t[:, 0] == 0
    n = int(pos.sum())
    if n == 0:
        raise MetricError("side accuracy undefined without positive cases")
    z, t = z[pos], t[pos]
    pred_right = z[:, 2] > z[:, 1]
    true_right = t[:, 2] == 1
    ok = pred_right == true_right
    if gate:
        ok &= np.argmax(z, axis=1) != 0
    return float(ok.sum() / n)


@dataclass(frozen=True)
class FoldSplit:
    fold_id: int
    train: tuple
    val: tuple
    test: tuple


def make_folds(classes, k=5, seed=0, stratify=True):
    """k folds with a 3-1-1 style split: test = group f, validation = group f+1.

    ``classes`` holds each patient's global class index (0 no LVO, 1 left,
    2 right); folds hold patient indices. With ``stratify`` the classes are
    dealt round-robin so every group gets a near-equal share of each.
    """
    classes = np.asarray(classes, int)
    P = classes.size
    if k < 3:
        raise ValueError("need k >= 3 for separate train/val/test groups")
    if P < max(10, k):
        raise ValueError(f"cohort of {P} patients is too small for {k}-fold cross-validation")
    rng = np.random.default_rng(seed)
    group = np.empty(P, int)
    if stratify:
        offset = 0
        for c in np.unique(classes):
            idx = np.flatnonzero(classes == c)
            idx = idx[rng.permutation(idx.size)]
            group[idx] = (offset + np.arange(idx.size)) % k
            offset += idx.size
    else:
        group[rng.permutation(P)] = np.arange(P) % k
    folds = []
    for f in range(k):
        test = tuple(int(i) for i in np.flatnonzero(group == f))
        val = tuple(int(i) for i in np.flatnonzero(group == (f + 1) % k))
        train = tuple(int(i) for i in np.flatnonzero((group != f) & (group != (f + 1) % k)))
        folds.append(FoldSplit(f, train, val, test))
    return folds


def metrics_row(logits, targets, gate=True):
    """Per-target class AUC and side accuracy; undefined metrics become NaN."""
    logits, targets = np.asarray(logits), np.asarray(targets)
    out = {}
    for k, name in enumerate(TARGETS):
        z, t = logits[:, 3 * k : 3 * k + 3], targets[:, 3 * k : 3 * k + 3]
        try:
            out[f"{name}_auc"] = class_auc(lvo_score(z), t[:, 0] == 0)
        except MetricError:
            out[f"{name}_auc"] = math.nan
        try:
            out[f"{name}_side"] = side_accuracy(z, t, gate)
        except MetricError:
            out[f"{name}_side"] = math.nan
    return out


def format_value(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.6f}"
    return str(v)


def write_rows(path, rows, fields=RESULT_FIELDS):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for r in rows:
            w.writerow([format_value(r.get(f, "")) for f in fields])
    return Path(path)


def aggregate(rows):
    """Fold means per (method, flags), in first-seen order; NaN folds are skipped."""
    groups = {}
    for r in rows:
        groups.setdefault((r["method"], r["flags"]), []).append(r)
    out = []
    for (method, flags), rs in groups.items():
        agg = {"method": method, "flags": flags, "fold": "mean"}
        for f in RESULT_FIELDS[3:]:
            vals = [r[f] for r in rs if not (isinstance(r[f], float) and math.isnan(r[f]))]
            agg[f] = float(np.mean(vals)) if vals else math.nan
        agg["n_folds"] = len(rs)
        if any("error" in r for r in rs):
            agg["error"] = "; ".join(sorted({r["error"] for r in rs if "error" in r}))
        out.append(agg)
    return out


FOLD_EXTRA_FIELDS = ("best_epoch", "epochs", "train_seconds")
ERROR_FIELDS = ("method", "flags", "fold", "error")

_WORKER_STATE = {}  # bank and fold splits shared with forked workers


def _evaluate_fold(variant, flags, fold, config, gate, history_dir):
    """Train one (variant, flags) row on one fold and score its test patients."""
    from .model.train import predict_entries, train
    from .recombine import SCHEME_OF_VARIANT, original_entries

    bank, folds = _WORKER_STATE["bank"], _WORKER_STATE["folds"]
    split = folds[fold]
    cfg = config.with_flags(flags)
    row = {"method": variant, "flags": cfg.flags, "fold": fold}
    hist_path = None
    if history_dir is not None:
        hist_path = Path(history_dir) / f"{variant}_{cfg.flags}_fold{fold}.csv"
    t0 = time.perf_counter()
    try:
        result = train(variant, bank, split.train, split.val, cfg, history_path=hist_path)
        entries = original_entries(split.test, SCHEME_OF_VARIANT[variant])
        logits = predict_entries(result.network, bank, variant, entries)
        targets = bank.assemble(variant, entries)[1]
        row.update(metrics_row(logits, targets, gate))
        row["best_epoch"], row["epochs"] = result.best_epoch, len(result.history)
        if math.isnan(row["global_auc"]):
            raise MetricError("global class AUC undefined on the test fold (single class)")
    except Exception as exc:  # reported per row; other rows continue
        for f in RESULT_FIELDS[3:]:
            row.setdefault(f, math.nan)
        row["error"] = f"{type(exc).__name__}: {exc}"
        log.warning("%s %s fold %d failed: %s", variant, cfg.flags, fold, row["error"])
    row["train_seconds"] = round(time.perf_counter() - t0, 1)
    return row


def _run_task(task):
    return _evaluate_fold(*task)


def run_ablation(manifest, source, variants, flags, config, k=5, fold_seed=None, stratify=True,
                 repetitions=10, factor=4, cache_dir=None, out_dir=None, gate=True, jobs=1,
                 bank_seed=0, figures=True, anchors=(6, 4), max_displacement=20.0, online_deform=False):
    """Cross-validated ablation over ``variants`` x ``flags``.

    Every (variant, flags) row is trained on each of the ``k`` folds with
    ``config`` (its augmentation switches replaced by the row's flags) and
    scored on the fold's test patients. Returns ``(fold_rows, aggregated)``.

    Failures (undefined metrics, divergence, infeasible plans) are recorded
    on the affected fold rows and in ``errors.csv``; they never abort other
    rows. With ``out_dir`` the per-fold table, the aggregated table, training
    histories and figures are written there.
    """
    from .dataset import bank_for
    from .recombine import VARIANTS

    variants, flags = list(variants), [f if f else "none" for f in flags]
    for v in variants:
        if v not in VARIANTS:
            raise ValueError(f"unknown variant {v!r}")
    for f in flags:
        config.with_flags(f)  # validates
    fold_seed = config.seed if fold_seed is None else fold_seed
    classes = [p.global_class().index() for p in manifest.patients]
    folds = make_folds(classes, k, fold_seed, stratify)
    uses_deform = any("D" in f.upper() for f in flags)
    bank = bank_for(manifest, source, variants, factor, repetitions if uses_deform else 0, cache_dir, bank_seed,
                    online_deform and uses_deform, anchors, max_displacement)

    history_dir = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        history_dir = out_dir / "histories"
        history_dir.mkdir(parents=True, exist_ok=True)
    tasks = [(v, f, fold.fold_id, config, gate, history_dir) for v in variants for f in flags for fold in folds]
    _WORKER_STATE.update(bank=bank, folds=folds)
    try:
        if jobs > 1 and len(tasks) > 1:
            import multiprocessing as mp
            from concurrent.futures import ProcessPoolExecutor

            with ProcessPoolExecutor(min(jobs, len(tasks)), mp_context=mp.get_context("fork")) as pool:
                rows = list(pool.map(_run_task, tasks))
        else:
            rows = [_run_task(t) for t in tasks]
    finally:
        _WORKER_STATE.clear()
    summary = aggregate(rows)
    errors = [r for r in rows if "error" in r]
    if out_dir is not None:
        write_rows(out_dir / "results_folds.csv", rows, RESULT_FIELDS + FOLD_EXTRA_FIELDS[:2])
        write_rows(out_dir / "results.csv", summary, RESULT_FIELDS + ("n_folds", "error"))
        write_rows(out_dir / "errors.csv", errors, ERROR_FIELDS)
        with open(out_dir / "folds.json", "w") as fh:
            json.dump({"k": k, "seed": fold_seed, "stratify": stratify,
                       "folds": [{"fold": f.fold_id, "train": list(f.train), "val": list(f.val),
                                  "test": list(f.test)} for f in folds]}, fh, indent=1)
        if figures:
            write_figures(out_dir, rows, summary)
    return rows, summary


def write_figures(out_dir, rows, summary):
    """Bar charts, fold scatter and training curves next to the CSV tables."""
    from . import plotting

    fig_dir = Path(out_dir) / "figures"
    fig_dir.mkdir(parents=True, exist_ok=True)
    paths = [plotting.plot_ablation_bars(summary, fig_dir / "class_auc.png", "auc"),
             plotting.plot_ablation_bars(summary, fig_dir / "side_accuracy.png", "side"),
             plotting.plot_fold_scatter(rows, fig_dir / "fold_auc.png")]
    hist_dir = Path(out_dir) / "histories"
    for r in summary:
        files = sorted(hist_dir.glob(f"{r['method']}_{r['flags']}_fold*.csv"))
        if files:
            curves = [(p.stem.rsplit("_", 1)[-1], read_history(p)) for p in files]
            paths.append(plotting.plot_histories(curves, fig_dir / f"curves_{r['method']}_{r['flags']}.png",
                                                 plotting.row_label(r["method"], r["flags"])))
    return paths


def read_history(path):
    with open(path, newline="") as fh:
        return [{k: (int(v) if k == "epoch" else float(v)) for k, v in row.items()} for row in csv.DictReader(fh)]


def read_rows(path):
    """Inverse of :func:`write_rows` for result tables (metrics back to floats)."""
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            r = {}
            for k, v in row.items():
                if k in RESULT_FIELDS[3:]:
                    r[k] = float(v)
                elif k in ("fold", "n_folds", "best_epoch", "epochs") and v.lstrip("-").isdigit():
                    r[k] = int(v)
                elif k == "error" and not v:
                    continue
                else:
                    r[k] = v
            out.append(r)
    return out
