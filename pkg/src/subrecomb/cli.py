"""Command-line entry point.

Subcommands: ``phantom gen``, ``count``, ``recombine``, ``deform``,
``train``, ``ablate`` and ``report``. Every run writes ``config.json``
(the effective options) into its output directory; passing that file back
with ``--config`` reproduces the run. Precedence: flags > config file >
defaults. Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__

log = logging.getLogger("subrecomb")

OUT_ENV = "SUBRECOMB_OUT"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- value parsers ---------------------------------------------------------

def csv_list(value):
    if isinstance(value, (list, tuple)):
        return [str(v).strip() for v in value]
    return [v.strip() for v in str(value).split(",") if v.strip()]


def float_list(value):
    return [float(v) for v in csv_list(value)]


def int_list(value):
    return [int(v) for v in csv_list(value)]


def conv_blocks(value):
    """"8:2,16:2,32:2" -> ((8, 2), (16, 2), (32, 2)); also accepts nested lists."""
    if isinstance(value, (list, tuple)):
        return tuple(tuple(int(x) for x in b) for b in value)
    blocks = []
    for item in csv_list(value):
        ch, _, pool = item.partition(":")
        blocks.append((int(ch), int(pool or 2)))
    return tuple(blocks)


def boolean(value):
    if isinstance(value, bool):
        return value
    v = str(value).lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


# -- option tables: dest -> (flag kwargs, default) -------------------------

COMMON = {
    "out": (dict(type=str, help=f"output directory (default: ${OUT_ENV}/<subcommand>)"), None),
    "log_level": (dict(type=str, choices=["debug", "info", "warning", "error"]), "info"),
}

PHANTOM = {
    "patients": (dict(type=int, help="cohort size"), 60),
    "lvo_fraction": (dict(type=float, help="fraction of LVO-positive patients"), 2 / 3),
    "region_mix": (dict(type=float_list, help="P(ICA only),P(MCA only),P(both) given positive"), [0.11, 0.64, 0.25]),
    "asymmetry_jitter": (dict(type=float, help="left/right geometry jitter in voxels"), 0.1),
    "seed": (dict(type=int), 0),
    "left_fraction": (dict(type=float, help="share of positives occluded on the left"), 0.44),
    "side_vessels": (dict(type=int_list, help="min,max small extra vessels per hemisphere"), [2, 5]),
    "preview": (dict(type=int, help="render projections of the first N patients"), 2),
}

COUNT = {
    "patients": (dict(type=int, help="cohort size P"), None),
    "positive_ratio": (dict(type=float, help="fraction r of LVO-positive patients"), None),
    "cohort": (dict(type=str, help="read P and r from a cohort manifest instead"), None),
    "scheme": (dict(choices=["hemi", "subvol", "both"]), "both"),
    "enumerate_cap": (dict(type=int, help="skip enumeration above this many candidate stacks"), 10**7),
}

COHORT = {
    "cohort": (dict(type=str, help="cohort manifest (cohort.json)"), None),
}

RECOMBINE = {
    **COHORT,
    "variant": (dict(choices=["whole_head", "h_stack", "im_stack"]), "h_stack"),
    "seed": (dict(type=int), 0),
    "epochs": (dict(type=int, help="number of consecutive epochs to export"), 1),
    "limit": (dict(type=int, help="export at most N samples per epoch (0 = all)"), 0),
}

DEFORM = {
    **COHORT,
    "patient": (dict(type=str, help="patient index or id"), "0"),
    "side": (dict(choices=["left", "right"]), "right"),
    "kind": (dict(choices=["hemi", "ica", "mca"]), "hemi"),
    "anchors": (dict(type=int, help="anchors per axis (default 6 for hemispheres, 4 for subvolumes)"), None),
    "max_displacement": (dict(type=float, help="maximum displacement in voxels"), 20.0),
    "repetitions": (dict(type=int), 10),
    "seed": (dict(type=int), 0),
    "export_fields": (dict(type=boolean, help="also write the dense fields (VMF1 + float32 raw)"), False),
}

TRAINING = {
    **COHORT,
    "learning_rate": (dict(type=float), 1e-5),
    "batch_size": (dict(type=int), 6),
    "beta1": (dict(type=float), 0.9),
    "beta2": (dict(type=float), 0.999),
    "eps": (dict(type=float), 1e-8),
    "patience": (dict(type=int, help="early-stopping patience in epochs"), 100),
    "max_epochs": (dict(type=int), 1000),
    "seed": (dict(type=int, help="master seed: folds, initialisation, sampling"), 0),
    "conv_blocks": (dict(type=conv_blocks, help='encoder blocks "channels:pool,..."'), ((8, 2), (16, 2), (32, 2))),
    "feature_len": (dict(type=int), 64),
    "factor": (dict(type=int, help="max-pool downsampling factor of the inputs"), 4),
    "repetitions": (dict(type=int, help="deformed copies per hemisphere/subvolume"), 10),
    "anchors_hemi": (dict(type=int), 6),
    "anchors_sub": (dict(type=int), 4),
    "max_displacement": (dict(type=float), 20.0),
    "deform_mode": (dict(choices=["precomputed", "online"]), "precomputed"),
    "bank_seed": (dict(type=int, help="seed of the deformation fields"), 0),
    "cache_dir": (dict(type=str, help="bank cache (default: $SUBRECOMB_OUT/bank_cache; 'none' disables)"), None),
    "k": (dict(type=int, help="number of cross-validation folds"), 5),
    "fold_seed": (dict(type=int, help="fold assignment seed (default: --seed)"), None),
    "stratify": (dict(type=boolean, help="stratify folds by global class"), True),
    "gate": (dict(type=boolean, help="side accuracy counts predicted negatives as errors"), True),
}

TRAIN = {
    **TRAINING,
    "variant": (dict(choices=["whole_head", "h_stack", "im_stack"]), "h_stack"),
    "flags": (dict(type=str, help="augmentations: any of R, D, M or 'none'"), "none"),
    "fold": (dict(type=int), 0),
}

ABLATE = {
    **TRAINING,
    "variants": (dict(type=csv_list), ["whole_head", "h_stack", "im_stack"]),
    "flags": (dict(type=csv_list, help="comma-separated flag sets, e.g. none,R,D,RD"), ["none", "R", "D", "RD"]),
    "jobs": (dict(type=int, help="parallel fold trainings"), 1),
    "figures": (dict(type=boolean), True),
}

REPORT = {
    "results": (dict(type=str, help="directory written by 'ablate'"), None),
}

COMMANDS = {
    "phantom": PHANTOM,
    "count": COUNT,
    "recombine": RECOMBINE,
    "deform": DEFORM,
    "train": TRAIN,
    "ablate": ABLATE,
    "report": REPORT,
}

HELP = {
    "phantom": "generate a synthetic vessel cohort ('phantom gen')",
    "count": "closed-form and enumerated recombination counts",
    "recombine": "materialise recombined epochs as VMV1 volumes",
    "deform": "elastically deform one hemisphere or subvolume",
    "train": "train one variant on one fold",
    "ablate": "cross-validated ablation over variants x augmentation flags",
    "report": "re-render figures of an ablation directory",
}


def build_parser():
    p = _Parser(prog="subrecomb", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=f"subrecomb {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    for name, table in COMMANDS.items():
        sp = sub.add_parser(name, help=HELP[name], argument_default=argparse.SUPPRESS)
        if name == "phantom":
            sp.add_argument("action", choices=["gen"])
        sp.add_argument("--config", type=str, help="JSON file of option values (flags override it)")
        for dest, (kw, default) in {**table, **COMMON}.items():
            kw = dict(kw)
            if default is not None:
                kw["help"] = (kw.get("help", "") + f" (default: {default})").strip()
            sp.add_argument("--" + dest.replace("_", "-"), dest=dest, **kw)
            if kw.get("type") is boolean:
                sp.add_argument("--no-" + dest.replace("_", "-"), dest=dest, action="store_const", const=False,
                                help=f"same as --{dest.replace('_', '-')} false")
    return p


def _coerce(table, dest, value):
    kw = table[dest][0]
    conv = kw.get("type", str)
    try:
        value = conv(value) if value is not None else None
    except (TypeError, ValueError) as exc:
        raise UsageError(f"config value for {dest!r}: {exc}") from exc
    if value is not None and "choices" in kw and value not in kw["choices"]:
        raise UsageError(f"config value for {dest!r} must be one of {kw['choices']}")
    return value


def resolve_options(command, explicit):
    """defaults < config file < flags."""
    table = {**COMMANDS[command], **COMMON}
    opts = {dest: default for dest, (_, default) in table.items()}
    if "config" in explicit:
        path = Path(explicit["config"])
        try:
            cfg = json.loads(path.read_text())
        except OSError as exc:
            raise UsageError(f"cannot read config file {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(cfg, dict):
            raise UsageError("config file must hold a JSON object")
        if cfg.get("subcommand", command) != command:
            raise UsageError(f"config file is for '{cfg['subcommand']}', not '{command}'")
        options = cfg.get("options", cfg)
        for key, value in options.items():
            if key in ("subcommand", "version", "options"):
                continue
            if key not in table:
                raise UsageError(f"unknown option {key!r} in config file")
            opts[key] = _coerce(table, key, value)
    for key, value in explicit.items():
        if key in table:
            opts[key] = value
    if opts["out"] is None:
        opts["out"] = str(Path(os.environ.get(OUT_ENV, "subrecomb_out")) / command)
    return opts


def _jsonable(v):
    if isinstance(v, tuple):
        return [_jsonable(x) for x in v]
    if isinstance(v, list):
        return [_jsonable(x) for x in v]
    return v


def write_echo(command, opts):
    out = Path(opts["out"])
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"output directory {out} is not writable: {exc}") from exc
    echo = {"subcommand": command, "version": __version__,
            "options": {k: _jsonable(v) for k, v in sorted(opts.items())}}
    path = out / "config.json"
    path.write_text(json.dumps(echo, indent=1, sort_keys=True) + "\n")
    log.info("effective config written to %s", path)
    for k, v in sorted(opts.items()):
        log.info("  %s = %s", k, v)
    return path


# -- shared helpers --------------------------------------------------------

def _load_cohort(opts):
    from .cohort import CohortManifest, CohortVolumes

    if not opts.get("cohort"):
        raise UsageError("--cohort is required")
    path = Path(opts["cohort"])
    if path.is_dir():
        path = path / "cohort.json"
    manifest = CohortManifest.load(path)
    if not manifest.patients:
        from .cohort import DataError

        raise DataError(f"cohort {path} has no patients")
    return manifest, CohortVolumes(manifest)


def _cache_dir(opts):
    c = opts.get("cache_dir")
    if c is None:
        return Path(os.environ.get(OUT_ENV, "subrecomb_out")) / "bank_cache"
    return None if str(c).lower() == "none" else Path(c)


def _train_config(opts):
    from .model.network import EncoderConfig
    from .model.train import TrainConfig

    try:
        enc = EncoderConfig(tuple(opts["conv_blocks"]), opts["feature_len"])
        return TrainConfig(learning_rate=opts["learning_rate"], batch_size=opts["batch_size"], beta1=opts["beta1"],
                           beta2=opts["beta2"], eps=opts["eps"], early_stop_patience=opts["patience"],
                           max_epochs=opts["max_epochs"], seed=opts["seed"], encoder=enc)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _fmt_count(x):
    if abs(x - round(x)) < 1e-6 * max(1.0, abs(x)):
        return str(int(round(x)))
    return f"{x:.1f}"


# -- subcommands -----------------------------------------------------------

def cmd_phantom(opts):
    from . import plotting
    from .phantom import PhantomSpec, generate_cohort

    try:
        spec = PhantomSpec(patients=opts["patients"], lvo_fraction=opts["lvo_fraction"],
                           region_mix=tuple(opts["region_mix"]), asymmetry_jitter=opts["asymmetry_jitter"],
                           seed=opts["seed"], left_fraction=opts["left_fraction"],
                           side_vessels=tuple(opts["side_vessels"]))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = Path(opts["out"])
    manifest, volumes = generate_cohort(spec, out)
    rows = [{"id": p.id, "global_class": p.global_class().index(), **p.labels} for p in manifest.patients]
    with open(out / "labels.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    if opts["preview"] > 0:
        (out / "figures").mkdir(exist_ok=True)
        for i in range(min(opts["preview"], len(volumes))):
            p = manifest.patients[i]
            plotting.plot_volume_projection(volumes[i].data, out / "figures" / f"{p.id}.png",
                                            f"{p.id}  " + " ".join(f"{k}={v}" for k, v in p.labels.items()))
    n_pos = sum(r["global_class"] > 0 for r in rows)
    print(f"wrote {len(rows)} patients ({n_pos} LVO-positive) to {out / 'cohort.json'}")
    return EXIT_OK


def cmd_count(opts):
    from .labels import (CohortStats, count_hemi_recombinations, count_subvol_recombinations,
                         enumerate_admissible)

    if opts.get("cohort"):
        from .cohort import CohortManifest, cohort_stats

        path = Path(opts["cohort"])
        stats = cohort_stats(CohortManifest.load(path / "cohort.json" if path.is_dir() else path))
    else:
        if opts["patients"] is None or opts["positive_ratio"] is None:
            raise UsageError("count needs --patients and --positive-ratio (or --cohort)")
        try:
            stats = CohortStats(opts["patients"], opts["positive_ratio"])
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    schemes = ["hemi", "subvol"] if opts["scheme"] == "both" else [opts["scheme"]]
    closed = {"hemi": count_hemi_recombinations, "subvol": count_subvol_recombinations}
    positives = stats.positive_ratio * stats.patients
    rows = []
    for scheme in schemes:
        value = closed[scheme](stats)
        enumerated, note = "", ""
        if abs(positives - round(positives)) > 1e-9:
            note = "enumeration needs an integral number of positives"
        else:
            try:
                enumerated = enumerate_admissible(stats.patients, int(round(positives)), scheme,
                                                  cap=opts["enumerate_cap"])
            except OverflowError:
                note = f"enumeration skipped (more than {opts['enumerate_cap']} candidates)"
        print(f"{scheme}: {_fmt_count(value)} (~{value:.2e})")
        if enumerated != "":
            print(f"{scheme} enumerated: {enumerated}")
        elif note:
            log.info("%s: %s", scheme, note)
        rows.append({"scheme": scheme, "patients": stats.patients, "positive_ratio": stats.positive_ratio,
                     "closed_form": f"{value:.6f}", "enumerated": enumerated})
    with open(Path(opts["out"]) / "counts.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return EXIT_OK


def cmd_recombine(opts):
    from .recombine import SCHEME_OF_VARIANT, export_epoch, plan_epoch

    manifest, source = _load_cohort(opts)
    out = Path(opts["out"])
    rows = []
    for e in range(opts["epochs"]):
        seed = opts["seed"] + e
        plan = plan_epoch(manifest, SCHEME_OF_VARIANT[opts["variant"]], seed)
        full = plan
        if opts["limit"] > 0:
            plan = replace(plan, samples=plan.samples[: opts["limit"]])
        export_epoch(plan, source, manifest, opts["variant"], out / f"epoch_{e:03d}")
        rows.append({"epoch": e, "seed": seed, "samples": len(full.samples), "exported": len(plan.samples),
                     "no_lvo": full.class_histogram[0], "left": full.class_histogram[1],
                     "right": full.class_histogram[2]})
        print(f"epoch {e}: {len(full.samples)} samples, class histogram {tuple(full.class_histogram)}")
    with open(out / "epochs.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return EXIT_OK


def _patient_index(manifest, key):
    ids = manifest.ids()
    if key in ids:
        return ids.index(key)
    try:
        i = int(key)
    except ValueError:
        raise UsageError(f"unknown patient {key!r}") from None
    if not 0 <= i < len(ids):
        raise UsageError(f"patient index {i} out of range (cohort has {len(ids)})")
    return i


def cmd_deform(opts):
    from . import plotting
    from . import volume as vol
    from .dataset import KIND_INDEX
    from .deform import DeformSpec, sample_field, save_field, warp

    manifest, source = _load_cohort(opts)
    p = _patient_index(manifest, opts["patient"])
    kind, side = opts["kind"], opts["side"]
    anchors = opts["anchors"] or (6 if kind == "hemi" else 4)
    try:
        spec = DeformSpec(anchors, opts["max_displacement"], opts["repetitions"], opts["seed"])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    v = source.hemisphere(p, side) if kind == "hemi" else source.region(p, side, kind.upper())
    out = Path(opts["out"])
    vol.save_vmv(out / "original.vmv", v)
    rows = []
    first = None
    for r in range(spec.repetitions):
        # same seeding as the training bank, so files match what training sees
        field = sample_field(spec, v.shape, seed=[spec.seed, p, KIND_INDEX[kind], int(side == "right"), r])
        w = warp(v, field)
        first = first if first is not None else w
        vol.save_vmv(out / f"deformed_{r:02d}.vmv", w)
        if opts["export_fields"]:
            save_field(out / f"field_{r:02d}.vmf", field)
        rows.append({"repetition": r, "max_abs_displacement": f"{float(abs(field.dense).max()):.4f}",
                     "voxels": w.count(), "changed_voxels": int((w.data != v.data).sum())})
    with open(out / "deformations.csv", "w", newline="") as fh:
        wr = csv.DictWriter(fh, list(rows[0]), lineterminator="\n")
        wr.writeheader()
        wr.writerows(rows)
    (out / "figures").mkdir(exist_ok=True)
    plotting.plot_volume_projection(v.data, out / "figures" / "original.png", "original")
    plotting.plot_volume_projection(first.data, out / "figures" / "deformed_00.png", "repetition 0")
    print(f"wrote {spec.repetitions} deformations of patient {manifest.patients[p].id} {side} {kind} to {out}")
    return EXIT_OK


def cmd_train(opts):
    from . import plotting
    from .dataset import bank_for
    from .eval import RESULT_FIELDS, make_folds, metrics_row, write_rows
    from .model.network import save_checkpoint
    from .model.train import predict_entries, train
    from .recombine import SCHEME_OF_VARIANT, original_entries

    manifest, source = _load_cohort(opts)
    try:
        config = _train_config(opts).with_flags(opts["flags"])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    classes = [p.global_class().index() for p in manifest.patients]
    fold_seed = opts["seed"] if opts["fold_seed"] is None else opts["fold_seed"]
    try:
        folds = make_folds(classes, opts["k"], fold_seed, opts["stratify"])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if not 0 <= opts["fold"] < len(folds):
        raise UsageError(f"--fold must lie in [0, {len(folds) - 1}]")
    split = folds[opts["fold"]]
    variant = opts["variant"]
    bank = bank_for(manifest, source, [variant], opts["factor"], opts["repetitions"] if config.deform else 0,
                    _cache_dir(opts), opts["bank_seed"], opts["deform_mode"] == "online",
                    (opts["anchors_hemi"], opts["anchors_sub"]), opts["max_displacement"])
    out = Path(opts["out"])
    result = train(variant, bank, split.train, split.val, config, history_path=out / "history.csv")
    save_checkpoint(result.network, out / "checkpoint",
                    extra={"variant": variant, "flags": config.flags, "fold": split.fold_id,
                           "best_epoch": result.best_epoch})
    entries = original_entries(split.test, SCHEME_OF_VARIANT[variant])
    row = {"method": variant, "flags": config.flags, "fold": split.fold_id}
    row.update(metrics_row(predict_entries(result.network, bank, variant, entries),
                           bank.assemble(variant, entries)[1], opts["gate"]))
    write_rows(out / "results_folds.csv", [row], RESULT_FIELDS)
    (out / "figures").mkdir(exist_ok=True)
    plotting.plot_histories([(f"fold{split.fold_id}", result.history)], out / "figures" / "curves.png",
                            plotting.row_label(variant, config.flags))
    print(f"{variant} {config.flags} fold {split.fold_id}: best epoch {result.best_epoch}, "
          f"test global AUC {row['global_auc']:.3f}, side accuracy {row['global_side']:.3f}")
    return EXIT_OK


def cmd_ablate(opts):
    from .eval import run_ablation

    manifest, source = _load_cohort(opts)
    config = _train_config(opts)
    for f in opts["flags"]:
        try:
            config.with_flags(f)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    from .recombine import VARIANTS

    bad = [v for v in opts["variants"] if v not in VARIANTS]
    if bad:
        raise UsageError(f"unknown variant(s) {bad}; choose from {list(VARIANTS)}")
    if opts["jobs"] < 1:
        raise UsageError("--jobs must be >= 1")
    try:
        rows, summary = run_ablation(
            manifest, source, opts["variants"], opts["flags"], config, k=opts["k"], fold_seed=opts["fold_seed"],
            stratify=opts["stratify"], repetitions=opts["repetitions"], factor=opts["factor"],
            cache_dir=_cache_dir(opts), out_dir=opts["out"], gate=opts["gate"], jobs=opts["jobs"],
            bank_seed=opts["bank_seed"], figures=opts["figures"],
            anchors=(opts["anchors_hemi"], opts["anchors_sub"]), max_displacement=opts["max_displacement"],
            online_deform=opts["deform_mode"] == "online")
    except ValueError as exc:
        if "too small" in str(exc) or "k >=" in str(exc):
            raise UsageError(str(exc)) from exc
        raise
    print(f"{'method':<11} {'flags':<5} {'global_auc':>10} {'global_side':>11} {'ica_auc':>8} {'ica_side':>8} "
          f"{'mca_auc':>8} {'mca_side':>8}")
    for r in summary:
        vals = " ".join(f"{r[k]:>{w}.3f}" for k, w in (("global_auc", 10), ("global_side", 11), ("ica_auc", 8),
                                                      ("ica_side", 8), ("mca_auc", 8), ("mca_side", 8)))
        print(f"{r['method']:<11} {r['flags']:<5} {vals}" + ("  (errors)" if "error" in r else ""))
    failed = [r for r in rows if "error" in r]
    if failed:
        print(f"{len(failed)} of {len(rows)} fold trainings failed; see {Path(opts['out']) / 'errors.csv'}",
              file=sys.stderr)
    if len(failed) == len(rows):
        numerical = all(r["error"].startswith("NumericalError") for r in rows)
        return EXIT_NUMERICAL if numerical else EXIT_DATA
    return EXIT_OK


def cmd_report(opts):
    from .cohort import DataError
    from .eval import read_rows, write_figures

    if not opts.get("results"):
        raise UsageError("--results is required")
    src = Path(opts["results"])
    try:
        rows = read_rows(src / "results_folds.csv")
        summary = read_rows(src / "results.csv")
    except OSError as exc:
        raise DataError(f"cannot read ablation results in {src}: {exc}") from exc
    out = Path(opts["out"])
    if (src / "histories").is_dir() and out.resolve() != src.resolve():
        import shutil

        shutil.copytree(src / "histories", out / "histories", dirs_exist_ok=True)
    paths = write_figures(out, rows, summary)
    print(f"wrote {len(paths)} figures to {out / 'figures'}")
    return EXIT_OK


HANDLERS = {"phantom": cmd_phantom, "count": cmd_count, "recombine": cmd_recombine, "deform": cmd_deform,
            "train": cmd_train, "ablate": cmd_ablate, "report": cmd_report}


def main(argv=None):
    from .cohort import DataError
    from .eval import MetricError
    from .labels import ExclusionError
    from .model.train import NumericalError
    from .recombine import PlanningError
    from .runtime import retain_freed_memory
    from .volume import FrameError

    retain_freed_memory()
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required (see --help)")
        explicit = {k: v for k, v in vars(args).items() if k not in ("command", "action")}
        opts = resolve_options(args.command, explicit)
        logging.basicConfig(level=opts["log_level"].upper(), stream=sys.stderr,
                            format="%(levelname)s %(name)s: %(message)s")
        write_echo(args.command, opts)
        return HANDLERS[args.command](opts)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DataError, FrameError, PlanningError, ExclusionError, MetricError, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
