"""Command-line pipeline: generate corpora, refine annotations, evaluate, sweep.

Slides live one per directory (grid.txt, tissue.pgm, gt.pgm, coarse.pgm,
manifest.json). Every command is reproducible: outputs are pure functions
of the flags plus seed, except for wall-clock timing fields in result
JSON. `--config FILE` loads a flat JSON dict whose entries override the
corresponding flags.
"""

import argparse
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import fileio
from .baselines import DkNNConfig, RankPruningConfig, dknn_refine, rank_pruning_refine
from .errors import (
    DegenerateAnnotationError,
    DegenerateHistogramError,
    NumericError,
    ValidationError,
)
from .grids import AnnotationMask, PatchGrid
from .metrics import METRIC_NAMES, aggregate, report
from .mil import TrainConfig, infer_singletons, multi_slide_train
from .postproc import PostprocConfig, binarize, morphology_clean
from .synth import S1Noise, S2Noise, SynthSpec, apply_noise, generate_synthetic_slide, lesion_ratio

MANIFEST_VERSION = 1
RESULT_VERSION = 1
SWEEP_VERSION = 1
METHODS = ("lc_mil_atten", "lc_mil_minet", "dknn", "rank_pruning")
SWEEP_KINDS = ("bag_count", "bag_size", "k_slides")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_DEGENERATE = 3
EXIT_NUMERIC = 4


# ---------------------------------------------------------------- corpus

def generate_corpus(
    out_dir,
    count,
    seed,
    width=64,
    height=64,
    feature_dim=8,
    n_lesions=2,
    lesion_scale=8.0,
    class_separation=3.0,
    feature_noise=1.0,
    noise="s1",
    rho0=0.3,
    rho1=0.3,
    rho=None,
    dilation_radius=3.0,
    cut_in_half=False,
):
    """Write ``count`` synthetic slides with coarse annotations.

    Slide i uses derived seed ``seed + i`` for geometry, features and
    noise. With ``rho="random"`` each slide draws its own flip rates
    uniformly from (0, 0.5). Returns the slide directories.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if noise not in ("s1", "s2"):
        raise ValidationError("noise must be 's1' or 's2'")
    dirs = []
    for i in range(count):
        slide_seed = seed + i
        spec = SynthSpec(
            width=width,
            height=height,
            feature_dim=feature_dim,
            n_lesions=n_lesions,
            lesion_scale=lesion_scale,
            class_separation=class_separation,
            feature_noise=feature_noise,
            seed=slide_seed,
        )
        grid, gt = generate_synthetic_slide(spec)
        if noise == "s1":
            if rho == "random":
                r0, r1 = np.random.default_rng([slide_seed, 7]).uniform(0.0, 0.5, 2)
            else:
                r0, r1 = rho0, rho1
            nspec = S1Noise(float(r0), float(r1), slide_seed)
            noise_doc = {"kind": "s1", **asdict(nspec)}
        else:
            nspec = S2Noise(float(dilation_radius), bool(cut_in_half), slide_seed)
            noise_doc = {"kind": "s2", **asdict(nspec)}
        coarse = apply_noise(gt, nspec, tissue=grid.tissue)
        sdir = out / ("slide_%04d" % i)
        sdir.mkdir(exist_ok=True)
        fileio.write_grid(sdir / "grid.txt", grid)
        fileio.write_mask(sdir / "tissue.pgm", grid.tissue)
        fileio.write_mask(sdir / "gt.pgm", gt.cells)
        fileio.write_mask(sdir / "coarse.pgm", coarse.cells)
        manifest = {
            "version": MANIFEST_VERSION,
            "spec": asdict(spec),
            "noise": noise_doc,
            "lesion_ratio": lesion_ratio(gt, grid.tissue),
            "files": {
                "grid": "grid.txt",
                "tissue": "tissue.pgm",
                "gt": "gt.pgm",
                "coarse": "coarse.pgm",
            },
            "cli": {
                "count": 1,
                "seed": slide_seed,
                "width": width,
                "height": height,
                "feature_dim": feature_dim,
                "n_lesions": n_lesions,
                "lesion_scale": lesion_scale,
                "class_separation": class_separation,
                "feature_noise": feature_noise,
                "noise": noise,
                "rho0": float(r0) if noise == "s1" else rho0,
                "rho1": float(r1) if noise == "s1" else rho1,
                "dilation_radius": dilation_radius,
                "cut_in_half": cut_in_half,
            },
        }
        fileio.write_json(sdir / "manifest.json", manifest)
        dirs.append(sdir)
    return dirs


def load_slide(slide_dir):
    """(PatchGrid, ground truth or None, coarse) from a slide directory."""
    sdir = Path(slide_dir)
    if not (sdir / "grid.txt").exists():
        raise ValidationError("no grid.txt under %s" % sdir)
    features = fileio.read_grid(sdir / "grid.txt")
    tissue = fileio.read_mask(sdir / "tissue.pgm")
    if tissue.shape != features.shape[:2]:
        raise ValidationError("tissue mask shape does not match the grid")
    grid = PatchGrid(features=features, tissue=tissue)
    coarse_cells = fileio.read_mask(sdir / "coarse.pgm")
    if coarse_cells.shape != tissue.shape:
        raise ValidationError("coarse mask shape does not match the grid")
    coarse = AnnotationMask(coarse_cells, role="coarse")
    gt = None
    if (sdir / "gt.pgm").exists():
        gt_cells = fileio.read_mask(sdir / "gt.pgm")
        if gt_cells.shape != tissue.shape:
            raise ValidationError("ground-truth mask shape does not match the grid")
        gt = AnnotationMask(gt_cells, role="ground_truth")
    return grid, gt, coarse


# ---------------------------------------------------------------- refine

def _metrics_doc(rep):
    doc = {"tp": rep.tp, "fp": rep.fp, "tn": rep.tn, "fn": rep.fn}
    for name in METRIC_NAMES:
        doc[name] = float(getattr(rep, name))
    doc["degenerate"] = list(rep.degenerate)
    return doc


def refine_with_model(model, grid, coarse, post_cfg):
    """Heatmap -> Otsu binarization -> morphology for one slide."""
    heatmap = infer_singletons(model, grid)
    binres = binarize(heatmap, coarse, post_cfg)
    refined = morphology_clean(binres.mask, post_cfg)
    return heatmap, refined, binres.v0, binres.used_fallback


def refine_slides(
    slide_dirs,
    out_dir,
    method,
    train_cfg,
    dknn_cfg=None,
    rp_cfg=None,
    post_cfg=None,
):
    """Run one cleaning method over the given slides and write results.

    The MIL methods train a single model on all slides pooled (per-slide
    bag seeds derived from the master seed) and refine each slide with
    it; the baselines run per slide with derived seeds. MIL and rank
    pruning heatmaps go through Otsu binarization plus morphology; the
    nearest-neighbor cleaner outputs a mask directly and receives the
    morphology step only. Returns the per-slide result documents.
    """
    if method not in METHODS:
        raise ValidationError("method must be one of %s" % (METHODS,))
    dknn_cfg = dknn_cfg or DkNNConfig()
    rp_cfg = rp_cfg or RankPruningConfig()
    post_cfg = post_cfg or PostprocConfig()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    slides = [(Path(d), *load_slide(d)) for d in slide_dirs]
    if not slides:
        raise ValidationError("no slides given")

    model = None
    train_seconds = None
    if method in ("lc_mil_atten", "lc_mil_minet"):
        kind = "attention" if method == "lc_mil_atten" else "minet"
        t0 = time.perf_counter()
        model, trace = multi_slide_train(
            [(grid, coarse) for _, grid, _, coarse in slides], train_cfg, kind
        )
        train_seconds = time.perf_counter() - t0
        fileio.write_loss_trace(out / "trace.csv", trace)

    results = []
    for i, (sdir, grid, gt, coarse) in enumerate(slides):
        odir = out / sdir.name
        odir.mkdir(exist_ok=True)
        timings = {}
        if train_seconds is not None:
            timings["train"] = train_seconds
        heatmap = None
        v0 = None
        used_fallback = None
        t0 = time.perf_counter()
        if model is not None:
            heatmap = infer_singletons(model, grid)
        elif method == "rank_pruning":
            heatmap, _ = rank_pruning_refine(grid, coarse, replace(rp_cfg, seed=rp_cfg.seed + i))
            timings["train"] = time.perf_counter() - t0
        else:
            direct = dknn_refine(grid, coarse, replace(dknn_cfg, seed=dknn_cfg.seed + i))
        timings["infer"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        if heatmap is not None:
            binres = binarize(heatmap, coarse, post_cfg)
            v0 = binres.v0
            used_fallback = binres.used_fallback
            refined = morphology_clean(binres.mask, post_cfg)
        else:
            refined = morphology_clean(direct, post_cfg)
        timings["postproc"] = time.perf_counter() - t0

        if heatmap is not None:
            fileio.write_heatmap(odir / "heatmap.csv", heatmap)
        fileio.write_mask(odir / "refined.pgm", refined.cells)
        doc = {
            "version": RESULT_VERSION,
            "method": method,
            "slide": sdir.name,
            "v0": v0,
            "used_fallback": used_fallback,
            "coarse_metrics": _metrics_doc(report(coarse, gt, grid.tissue)) if gt else None,
            "refined_metrics": _metrics_doc(report(refined, gt, grid.tissue)) if gt else None,
            "timings": timings,
        }
        fileio.write_json(odir / "result.json", doc)
        results.append(doc)

    run_doc = {
        "version": RESULT_VERSION,
        "method": method,
        "train": asdict(train_cfg),
        "dknn": asdict(dknn_cfg),
        "rank_pruning": asdict(rp_cfg),
        "post": asdict(post_cfg),
        "slides": [Path(d).name for d in slide_dirs],
    }
    fileio.write_json(out / "run.json", run_doc)
    return results


# ---------------------------------------------------------------- evaluate

def evaluate_masks(pred_paths, gt_paths, tissue_paths, coarse_paths=None, out_dir=None):
    """Per-slide metric rows plus a mean/std summary.

    When coarse masks are supplied each row gains the coarse F1 and rows
    sort by it ascending, which is the layout noise-condition plots are
    made from. Written as metrics.csv and summary.json when ``out_dir``
    is given.
    """
    if not (len(pred_paths) == len(gt_paths) == len(tissue_paths)):
        raise ValidationError("need matching counts of --pred, --gt and --tissue")
    if coarse_paths and len(coarse_paths) != len(pred_paths):
        raise ValidationError("need one --coarse per --pred when coarse masks are given")
    rows = []
    reports = []
    for i, (pp, gp, tp) in enumerate(zip(pred_paths, gt_paths, tissue_paths)):
        pred = AnnotationMask(fileio.read_mask(pp), role="refined")
        gt = AnnotationMask(fileio.read_mask(gp), role="ground_truth")
        tissue = fileio.read_mask(tp)
        rep = report(pred, gt, tissue)
        reports.append(rep)
        row = {"slide": Path(pp).parent.name or str(i), **_metrics_doc(rep)}
        if coarse_paths:
            coarse = AnnotationMask(fileio.read_mask(coarse_paths[i]), role="coarse")
            row["coarse_f1"] = float(report(coarse, gt, tissue).f1)
        rows.append(row)
    if coarse_paths:
        rows.sort(key=lambda r: r["coarse_f1"])
    summary = {
        "version": RESULT_VERSION,
        "n_slides": len(rows),
        "metrics": {
            name: {"mean": m, "std": s} for name, (m, s) in aggregate(reports).items()
        },
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        header = ["slide", "tp", "fp", "tn", "fn", *METRIC_NAMES]
        if coarse_paths:
            header.append("coarse_f1")
        lines = [",".join(header)]
        for row in rows:
            lines.append(",".join(str(row[h]) if h in ("slide", "tp", "fp", "tn", "fn")
                                  else fileio.FLOAT_FMT % row[h] for h in header))
        with open(out / "metrics.csv", "w") as fh:
            fh.write("\n".join(lines) + "\n")
        fileio.write_json(out / "summary.json", summary)
    return rows, summary


# ---------------------------------------------------------------- sweep

def run_sweep(
    kind,
    values,
    slide_dirs,
    seed,
    repeats=5,
    method="lc_mil_atten",
    train_cfg=None,
    post_cfg=None,
    out_dir=None,
):
    """Repeat refinement across a hyperparameter grid and report mean F1.

    ``bag_count`` and ``bag_size`` refine each slide on itself, repeats
    varying the training seed. ``k_slides`` trains on the first k slides
    and scores the slides beyond the largest k as a held-out set, so all
    k values share the same evaluation slides.
    """
    if kind not in SWEEP_KINDS:
        raise ValidationError("sweep kind must be one of %s" % (SWEEP_KINDS,))
    if len(values) < 2:
        raise ValidationError("need at least two sweep values")
    if method not in ("lc_mil_atten", "lc_mil_minet"):
        raise ValidationError("sweeps cover the MIL methods only")
    model_kind = "attention" if method == "lc_mil_atten" else "minet"
    train_cfg = train_cfg or TrainConfig()
    post_cfg = post_cfg or PostprocConfig()
    slides = [load_slide(d) for d in slide_dirs]
    for grid, gt, _ in slides:
        if gt is None:
            raise ValidationError("sweeps need ground-truth masks for every slide")

    trial_rows = []
    stats = {}
    if kind == "k_slides":
        ks = sorted(int(v) for v in values)
        if ks[0] < 1:
            raise ValidationError("k_slides values must be >= 1")
        if len(slides) <= ks[-1]:
            raise ValidationError(
                "need more slides than the largest k for a held-out set"
            )
        held_out = slides[ks[-1]:]
        for k in ks:
            trial_f1 = []
            for r in range(repeats):
                cfg = replace(train_cfg, seed=seed + r)
                model, _ = multi_slide_train(
                    [(grid, coarse) for grid, _, coarse in slides[:k]], cfg, model_kind
                )
                f1s = []
                for grid, gt, coarse in held_out:
                    _, refined, _, _ = refine_with_model(model, grid, coarse, post_cfg)
                    f1s.append(report(refined, gt, grid.tissue).f1)
                trial_f1.append(float(np.mean(f1s)))
                trial_rows.append({"value": k, "repeat": r, "f1": trial_f1[-1]})
            stats[str(k)] = _trial_stats(trial_f1)
    else:
        field = "num_bags" if kind == "bag_count" else "bag_size"
        for v in values:
            trial_f1 = []
            for si, (grid, gt, coarse) in enumerate(slides):
                for r in range(repeats):
                    cfg = replace(train_cfg, **{field: int(v), "seed": seed + r})
                    model, _ = multi_slide_train([(grid, coarse)], cfg, model_kind)
                    _, refined, _, _ = refine_with_model(model, grid, coarse, post_cfg)
                    f1 = float(report(refined, gt, grid.tissue).f1)
                    trial_f1.append(f1)
                    trial_rows.append(
                        {"value": int(v), "slide": si, "repeat": r, "f1": f1}
                    )
            stats[str(int(v))] = _trial_stats(trial_f1)

    doc = {
        "version": SWEEP_VERSION,
        "kind": kind,
        "method": method,
        "values": [int(v) for v in values],
        "repeats": repeats,
        "seed": seed,
        "stats": stats,
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        fileio.write_json(out / "sweep.json", doc)
        header = sorted({key for row in trial_rows for key in row})
        lines = [",".join(header)]
        for row in trial_rows:
            lines.append(",".join(
                (fileio.FLOAT_FMT % row[h]) if h == "f1" else str(row.get(h, ""))
                for h in header
            ))
        with open(out / "sweep.csv", "w") as fh:
            fh.write("\n".join(lines) + "\n")
    return doc


def _trial_stats(f1s):
    arr = np.asarray(f1s, dtype=np.float64)
    std = 0.0 if len(arr) == 1 else float(np.std(arr, ddof=1))
    return {"mean_f1": float(arr.mean()), "std_f1": std, "trials": [float(v) for v in arr]}


# ---------------------------------------------------------------- parsing

def _add_train_flags(p):
    p.add_argument("--num-bags", type=int, default=1000)
    p.add_argument("--bag-size", type=int, default=10)
    p.add_argument("--lr0", type=float, default=5e-5)
    p.add_argument("--lr-halving-period", type=int, default=100)
    p.add_argument("--gamma-lo", type=float, default=5.0)
    p.add_argument("--gamma-hi", type=float, default=3.0)
    p.add_argument("--gamma-break", type=float, default=0.2)
    p.add_argument("--hidden", type=int, default=128)
    p.add_argument("--embed-dim", type=int, default=128)
    p.add_argument("--attn-dim", type=int, default=16)


def _add_post_flags(p):
    p.add_argument("--bins", type=int, default=256)
    p.add_argument("--min-hole-px", type=int, default=100)
    p.add_argument("--min-object-px", type=int, default=100)


def _train_cfg(args):
    return TrainConfig(
        num_bags=args.num_bags,
        bag_size=args.bag_size,
        lr0=args.lr0,
        lr_halving_period=args.lr_halving_period,
        gamma_lo=args.gamma_lo,
        gamma_hi=args.gamma_hi,
        gamma_break=args.gamma_break,
        hidden=args.hidden,
        embed_dim=args.embed_dim,
        attn_dim=args.attn_dim,
        seed=args.seed,
    )


def _post_cfg(args):
    return PostprocConfig(
        bins=args.bins, min_hole_px=args.min_hole_px, min_object_px=args.min_object_px
    )


def build_parser():
    parser = argparse.ArgumentParser(
        prog="milclean",
        description="Refine coarse slide annotations by MIL-based label cleaning.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic slide corpus")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--count", type=int, default=1)
    g.add_argument("--width", type=int, default=64)
    g.add_argument("--height", type=int, default=64)
    g.add_argument("--feature-dim", type=int, default=8)
    g.add_argument("--n-lesions", type=int, default=2)
    g.add_argument("--lesion-scale", type=float, default=8.0)
    g.add_argument("--class-separation", type=float, default=3.0)
    g.add_argument("--feature-noise", type=float, default=1.0)
    g.add_argument("--noise", choices=("s1", "s2"), default="s1")
    g.add_argument("--rho0", type=float, default=0.3)
    g.add_argument("--rho1", type=float, default=0.3)
    g.add_argument("--rho", choices=("random",), default=None,
                   help="draw rho0/rho1 uniformly from (0, 0.5) per slide")
    g.add_argument("--dilation-radius", type=float, default=3.0)
    g.add_argument("--cut-in-half", action="store_true")
    g.add_argument("--config", default=None)
    g.set_defaults(func=_cmd_generate)

    r = sub.add_parser("refine", help="clean coarse annotations on slides")
    r.add_argument("--slide", action="append", required=True,
                   help="slide directory; repeat to pool slides for MIL training")
    r.add_argument("--out", required=True)
    r.add_argument("--method", choices=METHODS, default="lc_mil_atten")
    r.add_argument("--seed", type=int, required=True)
    _add_train_flags(r)
    _add_post_flags(r)
    r.add_argument("--dknn-k", type=int, default=10)
    r.add_argument("--dknn-embedding", choices=("raw_features", "trained_penultimate"),
                   default="trained_penultimate")
    r.add_argument("--rp-folds", type=int, default=5)
    r.add_argument("--rp-epochs", type=int, default=1)
    r.add_argument("--baseline-lr", type=float, default=1e-3)
    r.add_argument("--config", default=None)
    r.set_defaults(func=_cmd_refine)

    e = sub.add_parser("evaluate", help="score predicted masks against ground truth")
    e.add_argument("--pred", action="append", required=True)
    e.add_argument("--gt", action="append", required=True)
    e.add_argument("--tissue", action="append", required=True)
    e.add_argument("--coarse", action="append", default=None)
    e.add_argument("--out", default=None)
    e.add_argument("--config", default=None)
    e.set_defaults(func=_cmd_evaluate)

    s = sub.add_parser("sweep", help="repeat refinement across a hyperparameter grid")
    s.add_argument("--kind", choices=SWEEP_KINDS, required=True)
    s.add_argument("--values", required=True, help="comma-separated integers")
    s.add_argument("--data", required=True, help="corpus directory from `generate`")
    s.add_argument("--out", required=True)
    s.add_argument("--repeats", type=int, default=5)
    s.add_argument("--method", choices=("lc_mil_atten", "lc_mil_minet"),
                   default="lc_mil_atten")
    s.add_argument("--seed", type=int, default=0)
    _add_train_flags(s)
    _add_post_flags(s)
    s.add_argument("--config", default=None)
    s.set_defaults(func=_cmd_sweep)
    return parser


def _apply_config(args):
    if getattr(args, "config", None) is None:
        return
    doc = fileio.read_json(args.config)
    if not isinstance(doc, dict):
        raise ValidationError("--config must hold a JSON object")
    if "cli" in doc and isinstance(doc["cli"], dict):
        doc = doc["cli"]  # slide manifests embed their flat flag dict here
    for key, value in doc.items():
        attr = key.replace("-", "_")
        if not hasattr(args, attr):
            raise ValidationError("unknown config key: %s" % key)
        setattr(args, attr, value)


def _cmd_generate(args):
    generate_corpus(
        args.out,
        args.count,
        args.seed,
        width=args.width,
        height=args.height,
        feature_dim=args.feature_dim,
        n_lesions=args.n_lesions,
        lesion_scale=args.lesion_scale,
        class_separation=args.class_separation,
        feature_noise=args.feature_noise,
        noise=args.noise,
        rho0=args.rho0,
        rho1=args.rho1,
        rho=args.rho,
        dilation_radius=args.dilation_radius,
        cut_in_half=args.cut_in_half,
    )
    return EXIT_OK


def _cmd_refine(args):
    base_lr = args.baseline_lr
    refine_slides(
        args.slide,
        args.out,
        args.method,
        _train_cfg(args),
        dknn_cfg=DkNNConfig(k=args.dknn_k, embedding=args.dknn_embedding,
                            lr=base_lr, seed=args.seed),
        rp_cfg=RankPruningConfig(folds=args.rp_folds, epochs=args.rp_epochs,
                                 lr=base_lr, seed=args.seed),
        post_cfg=_post_cfg(args),
    )
    return EXIT_OK


def _cmd_evaluate(args):
    rows, summary = evaluate_masks(
        args.pred, args.gt, args.tissue, coarse_paths=args.coarse, out_dir=args.out
    )
    if args.out is None:
        for row in rows:
            print(",".join("%s=%s" % (k, v) for k, v in row.items()))
        for name, stat in summary["metrics"].items():
            print("%s: mean=%.6f std=%.6f" % (name, stat["mean"], stat["std"]))
    return EXIT_OK


def _cmd_sweep(args):
    try:
        values = [int(v) for v in args.values.split(",") if v.strip()]
    except ValueError:
        raise ValidationError("--values must be comma-separated integers")
    data = Path(args.data)
    slide_dirs = sorted(p for p in data.iterdir() if (p / "grid.txt").exists())
    if not slide_dirs:
        raise ValidationError("no slides under %s" % data)
    run_sweep(
        args.kind,
        values,
        slide_dirs,
        args.seed,
        repeats=args.repeats,
        method=args.method,
        train_cfg=_train_cfg(args),
        post_cfg=_post_cfg(args),
        out_dir=args.out,
    )
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_config(args)
        return args.func(args)
    except DegenerateAnnotationError as exc:
        print("degenerate annotation: %s" % exc, file=sys.stderr)
        return EXIT_DEGENERATE
    except NumericError as exc:
        print("numeric failure: %s" % exc, file=sys.stderr)
        return EXIT_NUMERIC
    except (ValidationError, DegenerateHistogramError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
