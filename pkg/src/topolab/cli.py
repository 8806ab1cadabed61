"""Experiment orchestration: train sweeps, analysis passes, comparisons,
and stimulus export.

Subcommands
-----------
train           run a (constraint, lambda, seed) sweep; idempotent per cell
analyze         compute metric families over a sweep's checkpoints
compare         aggregate metric tables into per-group mean/sd summaries
stimuli-export  write the wedge/ring stimulus images for inspection

Configuration comes from an optional JSON file (--config) with CLI flags
taking precedence. The dataset root defaults to $TOPOLAB_DATA. Exit codes:
0 success, 1 internal failure, 2 user error.

Output layout: <out>/checkpoints/*.ckpt, <out>/logs/*.csv,
<out>/manifest.json, <out>/provenance.json, <out>/analysis/<family>.{csv,json}.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import traceback
from dataclasses import asdict
from pathlib import Path

import numpy as np

import topolab.tensor as T
from topolab import __version__
from topolab.analysis import (
    COLOCALIZATION_ALPHAS,
    activation_correlations,
    calibration,
    colocalization_distance,
    effective_dimensionality,
    morans_i_batch,
    neighbor_weight_correlation,
    unit_entropy,
    poz,
    weight_perturbation_rows,
)
from topolab.data import (
    Dataset,
    load_cifar10,
    load_mnist,
    normalize,
    train_normalization_stats,
)
from topolab.models import fc1_activations, load_checkpoint, model_logits, read_checkpoint_meta
from topolab.noise import NOISE_KINDS, noise_accuracy_curve
from topolab.retino import gen_rings, gen_wedges, tuning_report
from topolab.table import (
    MetricTable,
    compare_tables,
    rank_constraints,
    write_summary_csv,
)
from topolab.train import sweep

ANALYSIS_FAMILIES = ("rsm", "noise", "entropy", "topo", "retino", "calib", "ed")
CONSTRAINT_NAMES = {"control": "none", "ws": "ws", "as": "as", "as-global": "as_global"}


class UserError(Exception):
    """Invalid input from the operator; exits with code 2."""


# ---------------------------------------------------------------------------
# config plumbing
# ---------------------------------------------------------------------------


def load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise UserError(f"config file not found: {p}")
    try:
        blob = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise UserError(f"config {p} is not valid JSON: line {e.lineno}, column {e.colno}: {e.msg}")
    if not isinstance(blob, dict):
        raise UserError(f"config {p} must hold a JSON object")
    return blob


def merged_option(args, config: dict, name: str, default=None):
    """CLI flag wins over config file value wins over default."""
    val = getattr(args, name.replace("-", "_"), None)
    if val is not None:
        return val
    if name in config:
        return config[name]
    return default


def resolve_data_dir(args, config) -> Path:
    raw = merged_option(args, config, "data_dir") or os.environ.get("TOPOLAB_DATA")
    if raw is None:
        raise UserError("no dataset directory: pass --data-dir, set it in --config, "
                        "or export TOPOLAB_DATA")
    p = Path(raw)
    if not p.is_dir():
        raise UserError(f"dataset directory does not exist: {p}")
    return p


def write_provenance(out_dir: Path, command: str, options: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    canon = json.dumps(options, sort_keys=True, default=str)
    blob = {
        "command": command,
        "code_version": __version__,
        "config_hash": hashlib.sha256(canon.encode()).hexdigest()[:16],
        "options": json.loads(canon),
    }
    path = out_dir / "provenance.json"
    history = []
    if path.exists():
        try:
            history = json.loads(path.read_text()).get("runs", [])
        except (json.JSONDecodeError, AttributeError):
            history = []
    history.append(blob)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps({"runs": history}, indent=1, sort_keys=True))
    tmp.replace(path)


def load_datasets(arch: str, data_dir: Path, out_dir: Path):
    """Raw train/test plus normalized variants, with cached train stats."""
    loader = load_mnist if arch == "mnist" else load_cifar10
    try:
        train_raw = loader(data_dir, "train")
        test_raw = loader(data_dir, "test")
    except FileNotFoundError as e:
        raise UserError(str(e))
    cache = out_dir / f"normalization_{arch}.json"
    mean, std = train_normalization_stats(train_raw, cache_path=cache)
    return (
        normalize(train_raw, mean, std),
        normalize(test_raw, mean, std),
        test_raw,
        (mean, std),
    )


def scan_manifest(out_dir: Path) -> dict:
    """Rebuild the manifest by scanning the checkpoints directory."""
    ckpt_dir = out_dir / "checkpoints"
    entries = []
    if ckpt_dir.is_dir():
        for path in sorted(ckpt_dir.glob("*.ckpt")):
            meta = read_checkpoint_meta(path)
            entries.append({
                "model_id": meta.spec.model_id,
                "path": str(path.relative_to(out_dir)),
                "spec": asdict(meta.spec),
                "spec_hash": meta.spec.spec_hash(),
                "epoch": meta.epoch,
                "train_acc": meta.train_acc,
                "test_acc": meta.test_acc,
                "extra": meta.extra,
            })
    return {"experiment": out_dir.name, "checkpoints": entries}


def write_manifest(out_dir: Path) -> dict:
    manifest = scan_manifest(out_dir)
    path = out_dir / "manifest.json"
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    tmp.replace(path)
    return manifest


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def parse_float_list(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    try:
        return [float(tok) for tok in str(text).split(",") if tok != ""]
    except ValueError:
        raise UserError(f"expected a comma-separated number list, got {text!r}")


def parse_seeds(value) -> list[int]:
    """Either a count ('10') or an explicit list ('0,3,7')."""
    if isinstance(value, int):
        return list(range(value))
    text = str(value)
    if "," in text:
        return [int(tok) for tok in text.split(",") if tok != ""]
    return list(range(int(text)))


def cmd_train(args) -> int:
    config = load_config_file(args.config)
    arch = merged_option(args, config, "arch")
    if arch not in ("mnist", "cifar"):
        raise UserError(f"--arch must be mnist or cifar, got {arch!r}")
    constraint_name = merged_option(args, config, "constraint", "control")
    if constraint_name not in CONSTRAINT_NAMES:
        raise UserError(f"--constraint must be one of {sorted(CONSTRAINT_NAMES)}")
    constraint = CONSTRAINT_NAMES[constraint_name]
    lambdas = parse_float_list(merged_option(args, config, "lambdas", "0.1,0.3,0.5,1,2,3"))
    seeds = parse_seeds(merged_option(args, config, "seeds", 10))
    out_dir = Path(merged_option(args, config, "out", "out/experiment"))
    data_dir = resolve_data_dir(args, config)
    epochs = merged_option(args, config, "epochs")
    batch_size = int(merged_option(args, config, "batch_size", 128))
    reduced = bool(merged_option(args, config, "reduced", False))

    train_ds, test_ds, _, _ = load_datasets(arch, data_dir, out_dir)
    write_provenance(out_dir, "train", {
        "arch": arch, "constraint": constraint, "lambdas": lambdas, "seeds": seeds,
        "epochs": epochs, "batch_size": batch_size, "reduced": reduced,
    })

    result = sweep(
        arch, constraint, lambdas, seeds, train_ds, test_ds, out_dir,
        epochs=int(epochs) if epochs is not None else None,
        batch_size=batch_size, reduced=reduced,
        progress=lambda mid: print(f"  trained {mid}", flush=True),
    )
    write_manifest(out_dir)
    print(f"{len(result.trained)} cells trained, {len(result.skipped)} skipped")
    if result.failed:
        for mid, err in result.failed:
            print(f"FAILED {mid}: {err}", file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------
# analyze
# ---------------------------------------------------------------------------


def _base(meta):
    s = meta.spec
    return dict(model_id=s.model_id, constraint=s.constraint, lam=s.lam, seed=s.seed)


def analyze_rsm(model, meta, ctx) -> MetricTable:
    t = MetricTable()
    rows = weight_perturbation_rows(
        model, ctx["test_images"], ctx["test_labels"],
        n_reps=ctx["weight_reps"], base_seed=meta.spec.seed,
    )
    base = _base(meta)
    if rows:
        t.append(**base, metric="clean_accuracy", value=rows[0]["baseline_accuracy"])
    for r in rows:
        p = dict(param1=f"{r['sigma_scale']:g}", param2=str(r["rep"]))
        t.append(**base, metric="soi", value=r["soi"], **p)
        t.append(**base, metric="perturbed_accuracy", value=r["accuracy"], **p)
        t.append(**base, metric="perturbed_accuracy_drop_pp", value=r["drop_pp"], **p)
        t.append(**base, metric="perturbed_accuracy_drop_rel", value=r["drop_rel"], **p)
    return t


def analyze_noise(model, meta, ctx) -> MetricTable:
    t = MetricTable()
    base = _base(meta)
    for kind in NOISE_KINDS:
        rows = noise_accuracy_curve(
            model, ctx["raw_test_images"], ctx["test_labels"],
            ctx["norm"][0], ctx["norm"][1], kind=kind,
            n_reps=ctx["noise_reps"], base_seed=meta.spec.seed,
        )
        for r in rows:
            p = dict(param1=kind, param2=f"{r['intensity']:g}")
            t.append(**base, metric="noise_accuracy", value=r["accuracy"], **p)
            t.append(**base, metric="noise_normalized_accuracy",
                     value=r["normalized_accuracy"], **p)
    return t


def analyze_entropy(model, meta, ctx) -> MetricTable:
    t = MetricTable()
    base = _base(meta)
    pre = fc1_activations(model, ctx["test_images"], "pre_relu")
    post = np.maximum(pre, 0.0)
    ent_units, ent_mean = unit_entropy(pre)
    poz_units, poz_mean = poz(post)
    t.append(**base, metric="entropy_grid_mean", value=ent_mean)
    t.append(**base, metric="poz_grid_mean", value=poz_mean)
    # bin-count sensitivity of the discretized entropy, reported alongside
    for bins in (15, 60):
        _, sens = unit_entropy(pre, bins=bins)
        t.append(**base, metric="entropy_grid_mean_sensitivity", value=sens,
                 param1=f"bins{bins}")
    for u in range(len(ent_units)):
        t.append(**base, metric="unit_entropy", value=ent_units[u], param1=str(u))
        t.append(**base, metric="unit_poz", value=poz_units[u], param1=str(u))
    return t


def _histogram_rows(t, base, metric, values, bins, lo, hi):
    counts, edges = np.histogram(values, bins=bins, range=(lo, hi))
    centers = (edges[:-1] + edges[1:]) / 2
    for c, n in zip(centers, counts):
        t.append(**base, metric=metric, value=float(n), param1=f"{c:.4f}")


def analyze_topo(model, meta, ctx) -> MetricTable:
    t = MetricTable()
    base = _base(meta)
    grid = model.grid
    pre = fc1_activations(model, ctx["test_images"], "pre_relu")

    morans = morans_i_batch(pre, grid)
    t.append(**base, metric="morans_i", value=float(morans.mean()))
    t.append(**base, metric="morans_i_sd", value=float(morans.std()))

    for alpha in ctx["alphas"]:
        res = colocalization_distance(pre, grid, alpha,
                                      n_control_permutations=ctx["control_perms"])
        p = dict(param1=f"{alpha:g}")
        t.append(**base, metric="colocalization_pair_count", value=res.pair_count, **p)
        if res.mean_distance is not None:
            t.append(**base, metric="colocalization_distance", value=res.mean_distance, **p)
            t.append(**base, metric="colocalization_control", value=res.control_mean, **p)

    wfield = neighbor_weight_correlation(model.fc1_grid_weights(), grid)
    afield = activation_correlations(pre, grid)
    for field, tag in ((wfield, "weight"), (afield, "activation")):
        _histogram_rows(t, base, f"{tag}_neighbor_corr_hist", field.neighbor_mean,
                        bins=40, lo=-1.0, hi=1.0)
        _histogram_rows(t, base, f"{tag}_pair_corr_hist", field.all_pairs,
                        bins=40, lo=-1.0, hi=1.0)
        t.append(**base, metric=f"{tag}_corr_tail_095",
                 value=float((field.all_pairs >= 0.95).mean()), param1="0.95")
        t.append(**base, metric=f"{tag}_neighbor_corr_mean",
                 value=float(field.neighbor_mean.mean()))
    return t


def analyze_retino(model, meta, ctx) -> MetricTable:
    t = MetricTable()
    base = _base(meta)
    report = tuning_report(model, ctx["norm"][0], ctx["norm"][1])
    t.append(**base, metric="agreement_mean", value=report.agreement_mean)
    t.append(**base, metric="agreement_sd", value=report.agreement_sd)
    for cycle, frac in sorted(report.cycle_proportions.items()):
        t.append(**base, metric="cycle_proportion", value=frac, param1=str(cycle))
    for u, cyc in enumerate(report.dominant):
        t.append(**base, metric="dominant_cycle", value=float(cyc), param1=str(u))
    for cycle, counts in report.phase_classes.items():
        for label, n in sorted(counts.items()):
            t.append(**base, metric="phase_class_count", value=float(n),
                     param1=str(cycle), param2=label)
    for label, frac in sorted(report.ecc_proportions.items()):
        t.append(**base, metric="ecc_proportion", value=frac, param1=label)
    for center in report.bandpass_centers:
        t.append(**base, metric="bandpass_center", value=center)
    return t


def analyze_calib(model, meta, ctx) -> MetricTable:
    t = MetricTable()
    base = _base(meta)
    logits = model_logits(model, ctx["test_images"])
    ece, gap = calibration(logits, ctx["test_labels"])
    t.append(**base, metric="ece", value=ece)
    t.append(**base, metric="logit_gap", value=gap)
    return t


def analyze_ed(model, meta, ctx) -> MetricTable:
    t = MetricTable()
    base = _base(meta)
    t.append(**base, metric="effective_dimensionality",
             value=effective_dimensionality(model.fc1_grid_weights()), param1="fc1_weights")
    pre = fc1_activations(model, ctx["test_images"], "pre_relu")
    t.append(**base, metric="effective_dimensionality",
             value=effective_dimensionality(pre), param1="activations")
    return t


FAMILY_RUNNERS = {
    "rsm": analyze_rsm,
    "noise": analyze_noise,
    "entropy": analyze_entropy,
    "topo": analyze_topo,
    "retino": analyze_retino,
    "calib": analyze_calib,
    "ed": analyze_ed,
}


def cmd_analyze(args) -> int:
    config = load_config_file(args.config)
    out_dir = Path(merged_option(args, config, "exp", "out/experiment"))
    manifest_path = out_dir / "manifest.json"
    if not manifest_path.exists():
        raise UserError(f"no manifest at {manifest_path}; run `topolab train` first")
    manifest = json.loads(manifest_path.read_text())
    if not manifest.get("checkpoints"):
        raise UserError(f"manifest {manifest_path} lists no checkpoints")

    which = merged_option(args, config, "which", "all")
    families = list(ANALYSIS_FAMILIES) if which == "all" else [which]
    for fam in families:
        if fam not in FAMILY_RUNNERS:
            raise UserError(f"--which must be all or one of {ANALYSIS_FAMILIES}")

    data_dir = resolve_data_dir(args, config)
    limit = merged_option(args, config, "limit")
    arches = {e["spec"]["arch"] for e in manifest["checkpoints"]}
    if len(arches) != 1:
        raise UserError(f"manifest mixes architectures {sorted(arches)}")
    arch = arches.pop()
    _, test_ds, test_raw, norm = load_datasets(arch, data_dir, out_dir)

    test_images, test_labels = test_ds.images, test_ds.labels
    raw_images = test_raw.images
    if limit is not None:
        limit = int(limit)
        test_images, test_labels = test_images[:limit], test_labels[:limit]
        raw_images = raw_images[:limit]

    ctx = {
        "test_images": test_images,
        "test_labels": test_labels,
        "raw_test_images": raw_images,
        "norm": norm,
        "weight_reps": int(merged_option(args, config, "weight_reps", 100)),
        "noise_reps": int(merged_option(args, config, "noise_reps", 3)),
        "alphas": parse_float_list(merged_option(args, config, "alphas",
                                                 ",".join(str(a) for a in COLOCALIZATION_ALPHAS))),
        "control_perms": int(merged_option(args, config, "control_perms", 1000)),
    }
    write_provenance(out_dir, "analyze", {
        "which": families, "limit": limit,
        "weight_reps": ctx["weight_reps"], "noise_reps": ctx["noise_reps"],
    })

    T.tune_allocator()
    analysis_dir = out_dir / "analysis"
    for fam in families:
        table = MetricTable()
        for entry in manifest["checkpoints"]:
            path = out_dir / entry["path"]
            model, meta = load_checkpoint(path)
            if meta.spec.spec_hash() != entry["spec_hash"]:
                raise UserError(
                    f"checkpoint {path.name}: spec hash {meta.spec.spec_hash()} does not "
                    f"match manifest {entry['spec_hash']}; refusing to analyze"
                )
            table.extend(FAMILY_RUNNERS[fam](model, meta, ctx))
        table.write_csv(analysis_dir / f"{fam}.csv")
        table.write_json(analysis_dir / f"{fam}.json")
        print(f"{fam}: {len(table)} rows over {len(manifest['checkpoints'])} models")
    return 0


# ---------------------------------------------------------------------------
# compare
# ---------------------------------------------------------------------------


def cmd_compare(args) -> int:
    paths = []
    for raw in args.tables:
        p = Path(raw)
        if p.is_dir():
            paths.extend(sorted(p.glob("*.csv")))
        elif p.exists():
            paths.append(p)
        else:
            raise UserError(f"no such table: {p}")
    if not paths:
        raise UserError("no metric tables found to compare")
    try:
        tables = [MetricTable.read_csv(p) for p in paths]
    except ValueError as e:
        raise UserError(str(e))
    summaries = compare_tables(tables)
    out = Path(args.out) if args.out else None
    if out:
        write_summary_csv(summaries, out)
        write_provenance(out.parent, "compare", {"tables": [str(p) for p in paths]})
        print(f"wrote {len(summaries)} group summaries to {out}")
    for line in rank_constraints(summaries):
        print(line)
    return 0


# ---------------------------------------------------------------------------
# stimuli export
# ---------------------------------------------------------------------------


def write_pgm(path: Path, mask: np.ndarray) -> None:
    h, w = mask.shape
    data = (np.clip(mask, 0, 1) * 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode())
        f.write(data.tobytes())


def cmd_stimuli_export(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    size = args.img_size
    if size not in (28, 32):
        raise UserError(f"--img-size must be 28 or 32, got {size}")
    wedges = gen_wedges(size)
    rings = gen_rings(size)
    count = 0
    for k in range(wedges.masks.shape[0]):
        write_pgm(out / f"wedge_{k:02d}.pgm", wedges.masks[k])
        count += 1
    for k in range(rings.masks.shape[0]):
        write_pgm(out / f"ring_{k:02d}.pgm", rings.masks[k])
        count += 1
    write_provenance(out, "stimuli-export", {"img_size": size})
    print(f"wrote {count} stimulus images to {out}")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="topolab",
                                     description="topographic CNN training lab")
    parser.add_argument("--version", action="version", version=f"topolab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run a training sweep")
    p_train.add_argument("--config")
    p_train.add_argument("--arch", choices=("mnist", "cifar"))
    p_train.add_argument("--constraint", choices=tuple(CONSTRAINT_NAMES))
    p_train.add_argument("--lambdas")
    p_train.add_argument("--seeds")
    p_train.add_argument("--epochs", type=int)
    p_train.add_argument("--batch-size", type=int, dest="batch_size")
    p_train.add_argument("--data-dir", dest="data_dir")
    p_train.add_argument("--out")
    p_train.add_argument("--reduced", action="store_const", const=True)
    p_train.set_defaults(fn=cmd_train)

    p_an = sub.add_parser("analyze", help="run analysis families over a sweep")
    p_an.add_argument("--config")
    p_an.add_argument("--exp", help="experiment output directory (with manifest.json)")
    p_an.add_argument("--which", choices=("all",) + ANALYSIS_FAMILIES)
    p_an.add_argument("--data-dir", dest="data_dir")
    p_an.add_argument("--limit", type=int, help="cap test images (desk-scale runs)")
    p_an.add_argument("--weight-reps", type=int, dest="weight_reps")
    p_an.add_argument("--noise-reps", type=int, dest="noise_reps")
    p_an.add_argument("--control-perms", type=int, dest="control_perms")
    p_an.add_argument("--alphas")
    p_an.set_defaults(fn=cmd_analyze)

    p_cmp = sub.add_parser("compare", help="aggregate metric tables over seeds")
    p_cmp.add_argument("tables", nargs="+", help="metric CSVs or analysis directories")
    p_cmp.add_argument("--out", help="summary CSV path")
    p_cmp.set_defaults(fn=cmd_compare)

    p_st = sub.add_parser("stimuli-export", help="write wedge/ring stimuli as PGM")
    p_st.add_argument("--img-size", type=int, default=28, dest="img_size")
    p_st.add_argument("--out", required=True)
    p_st.set_defaults(fn=cmd_stimuli_export)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except UserError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception:
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
