"""Command-line pipeline: prep, generate, train, infer, eval, stats (+ phantom).

Exit codes: 0 ok, 2 missing input, 3 missing/bad checkpoint, 4 geometry or
shape mismatch, 5 malformed data or config, 1 anything else.
"""
import argparse
import csv
import hashlib
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, backend_name, labelprep, phantom
from . import taxonomy as tx
from .config import load_config
from .errors import (ConfigError, DataError, FormatError, GeometryError, HypsegError, LabelError,
                     MaskError, RangeError, ShapeError, UnsupportedDtype)
from .evalstats import read_group_csv, region_metrics, region_volumes, stats_report, write_report
from .evalstats.tables import GroupTable, write_group_csv
from .inference import InferenceContext, run_inference
from .neural.checkpoint import load_checkpoint, save_checkpoint
from .neural.train import EarlyStopper, read_loss_log, train_hyp, train_sub, write_loss_log
from .neural.unet import build_unet
from .synthgen import SampleSource
from .volume import LabelMap, Volume, load_labelmap, load_volume, resample, save_volume

EXIT_OK, EXIT_FAIL, EXIT_MISSING, EXIT_CHECKPOINT, EXIT_GEOMETRY, EXIT_DATA = 0, 1, 2, 3, 4, 5
# validation samples come from a separate index range of the same stream
VALIDATION_OFFSET = 2 ** 40


class CliError(Exception):
    def __init__(self, code, msg):
        super().__init__(msg)
        self.code = code


def exit_code(exc):
    if isinstance(exc, CliError):
        return exc.code
    if isinstance(exc, FileNotFoundError):
        return EXIT_MISSING
    if isinstance(exc, (GeometryError, ShapeError, MaskError)):
        return EXIT_GEOMETRY
    if isinstance(exc, (DataError, ConfigError, FormatError, LabelError, RangeError, UnsupportedDtype)):
        return EXIT_DATA
    return EXIT_FAIL


# ------------------------------------------------------------------ helpers

def need(*paths):
    for p in paths:
        if p is not None and not Path(p).exists():
            raise CliError(EXIT_MISSING, f"input not found: {p}")


def sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_provenance(path, command, args, cfg, outputs):
    """JSON sidecar: command, arguments, resolved config and output hashes."""
    argd = {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items())
            if k not in ("func",)}
    doc = {
        "command": command,
        "version": __version__,
        "backend": backend_name(),
        "args": argd,
        "config": cfg.to_dict(),
        "outputs": {Path(p).name: sha256(p) for p in sorted(map(str, outputs))},
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_affine(path):
    """4x4 matrix from a text file of 16 numbers (row-major)."""
    need(path)
    try:
        vals = [float(t) for t in Path(path).read_text().replace(",", " ").split()]
    except ValueError:
        raise DataError(f"{path}: affine file must hold 16 numbers") from None
    if len(vals) != 16:
        raise DataError(f"{path}: expected 16 numbers, found {len(vals)}")
    return np.array(vals).reshape(4, 4)


def write_affine(path, affine):
    Path(path).write_text("\n".join(" ".join(repr(float(v)) for v in row) for row in affine) + "\n")


def load_model(path, what):
    if path is None or not Path(path).exists():
        raise CliError(EXIT_CHECKPOINT, f"{what} checkpoint not found: {path}")
    try:
        return load_checkpoint(path)
    except (FormatError, ConfigError, ValueError, KeyError) as exc:
        raise CliError(EXIT_CHECKPOINT, f"{what} checkpoint unreadable: {exc}") from None


def load_pairs(prep_dirs):
    pairs = []
    for d in prep_dirs:
        d = Path(d)
        need(d / "L_crop.nii.gz", d / "C_crop.nii.gz")
        L = load_labelmap(d / "L_crop.nii.gz")
        C = load_volume(d / "C_crop.nii.gz")
        pairs.append((L, C))
    return pairs


def to_working_grid(vol, spacing, interp):
    """Resample onto an axis-aligned grid of ``spacing`` covering the same box."""
    sp = vol.spacing
    if np.allclose(sp, spacing, rtol=0, atol=1e-6) and np.count_nonzero(
            vol.affine[:3, :3] - np.diag(np.diag(vol.affine[:3, :3]))) == 0:
        return vol
    corners = np.array([[i, j, k] for i in (0, vol.dims[0] - 1) for j in (0, vol.dims[1] - 1)
                        for k in (0, vol.dims[2] - 1)], dtype=np.float64)
    world = corners @ vol.affine[:3, :3].T + vol.affine[:3, 3]
    lo, hi = world.min(axis=0), world.max(axis=0)
    dims = tuple(int(n) for n in np.floor((hi - lo) / spacing + 1e-9) + 1)
    aff = np.diag([spacing] * 3 + [1.0])
    aff[:3, 3] = lo
    return resample(vol, dims, aff, interp)


# ---------------------------------------------------------------- commands

def cmd_phantom(args, cfg):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    geom = phantom.PhantomGeometry(dims=(args.size,) * 3, spacing=args.spacing)
    img, mask, hypo = phantom.hemisphere(geom, shift_vox=args.shift, seed=args.seed)
    full = phantom.training_labels(geom)
    truth = full.with_ids(np.where(np.isin(full.ids, tx.SUBREGION_IDS), full.ids, 0))
    files = {
        "hemisphere_intensity.nii.gz": (img, "f32"),
        "hemisphere_mask.nii.gz": (mask, "u8"),
        "hemisphere_hypo.nii.gz": (hypo, "u8"),
        "image.nii.gz": (phantom.render(full, seed=args.seed), "f32"),
        "wholebrain.nii.gz": (phantom.wholebrain_fs(geom), "u8"),
        "truth.nii.gz": (truth, "u8"),
    }
    written = []
    for name, (vol, dt) in files.items():
        save_volume(vol, out / name, dt)
        written.append(out / name)
    write_affine(out / "mni_affine.txt", np.eye(4))
    written.append(out / "mni_affine.txt")
    if args.cohort:
        path = out / "cohort.csv"
        write_group_csv(path, phantom_cohort(args.cohort, args.seed, args.shrink))
        written.append(path)
    write_provenance(out / "phantom.provenance.json", "phantom", args, cfg, written)
    return EXIT_OK


def phantom_cohort(n_per_group, seed, shrink=0.8):
    """GroupTable of analytic phantoms: n controls and n patients."""
    rng = np.random.default_rng([int(seed), 7])
    regions = [tx.SUBREGION_NAMES[i] for i in tx.SUBREGION_IDS] + ["whole"]
    subjects, cohorts, vols, tiv = [], [], [], []
    for g, cohort in enumerate(("control", "patient")):
        for i in range(n_per_group):
            geom = phantom.cohort_geometry(rng, cohort == "patient", shrink=shrink)
            lm = phantom.training_labels(geom)
            v = region_volumes(lm, tx.SUBREGION_IDS)
            row = [v[r] for r in tx.SUBREGION_IDS]
            vols.append(row + [sum(row)])
            tiv.append(phantom.brain_volume_mm3(geom))
            subjects.append(f"{cohort[:3]}{i:03d}")
            cohorts.append(cohort)
    return GroupTable(tuple(subjects), tuple(cohorts), tuple(regions), np.array(vols), np.array(tiv))


def cmd_prep(args, cfg):
    need(args.intensity, args.mask, args.hypo, args.mni_affine)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sp = cfg.grid.spacing_mm
    img = to_working_grid(load_volume(args.intensity), sp, "trilinear")
    mask = to_working_grid(load_volume(args.mask), sp, "nearest")
    hypo = to_working_grid(load_labelmap(args.hypo), sp, "nearest")
    lab = cfg.labels
    rng = np.random.default_rng([int(args.seed), 1])
    k = int(rng.integers(lab.k_min, lab.k_max + 1))
    auto = labelprep.kmeans_segment(img, mask, k, seed=args.seed).labels
    if lab.fornix_close_radius_vox > 0:
        hypo = labelprep.delineate_fornix(hypo, lab.fornix_close_radius_vox)
    merged = labelprep.merge_labels(auto, hypo)
    mirrored = labelprep.mirror_hemisphere(merged, lab.mirror_halfwidth_vox)
    mni = read_affine(args.mni_affine) if args.mni_affine else np.eye(4)
    C = labelprep.attach_coords(mirrored.labels, mni)
    Lc, Cc = labelprep.crop_training_pair(mirrored.labels, C, size=cfg.grid.dims)
    save_volume(Lc, out / "L_crop.nii.gz", "u8")
    save_volume(Cc, out / "C_crop.nii.gz", "f64")
    (out / "labels.json").write_text(json.dumps({str(i): n for i, n in Lc.labels.items()}, indent=1) + "\n")
    info = {"k": k, "mirror_offset_vox": mirrored.offset}
    (out / "prep.json").write_text(json.dumps(info, indent=1, sort_keys=True) + "\n")
    written = [out / "L_crop.nii.gz", out / "C_crop.nii.gz", out / "labels.json", out / "prep.json"]
    write_provenance(out / "prep.provenance.json", "prep", args, cfg, written)
    return EXIT_OK


def cmd_generate(args, cfg):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    src = SampleSource(load_pairs(args.prep), cfg.synthgen, args.seed, workers=args.jobs)
    written = []
    for i, s in enumerate(src.batch(0, args.n)):
        for tag, vol, dt in (("input", s.input, "f32"), ("target", s.target, "u8"), ("dist", s.distmap, "f32")):
            p = out / f"sample_{i:03d}_{tag}.nii.gz"
            save_volume(vol, p, dt)
            written.append(p)
    write_provenance(out / "generate.provenance.json", "generate", args, cfg, written)
    return EXIT_OK


def cmd_train(args, cfg):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stage = args.stage
    tc = cfg.train.for_stage(stage)
    if args.steps is not None:
        tc = type(tc)(**{**tc.to_dict(), "max_steps": args.steps})
    ckpt = out / f"{stage}.ckpt"
    log_path = out / f"{stage}_loss.csv"
    hyp = None
    if stage == "sub":
        hyp, _ = load_model(args.hyp_ckpt, "whole-structure")
    pairs = load_pairs(args.prep)
    unet_cfg = cfg.unet_hyp if stage == "hyp" else cfg.unet_sub
    prior_log, extra = [], {}
    if args.resume and ckpt.exists():
        model, extra = load_model(ckpt, stage)
        if model.cfg != unet_cfg:
            raise CliError(EXIT_GEOMETRY, f"{ckpt} was trained with a different network config")
        if log_path.exists():
            prior_log = [r for r in read_loss_log(log_path) if r[0] <= model.adam.step]
    else:
        model = build_unet(unet_cfg, seed=args.seed)
    src = SampleSource(pairs, cfg.synthgen, args.seed, workers=args.jobs)
    state = {}

    def checkpoint(m, step, report):
        save_checkpoint(ckpt, m, extra={"stage": stage, "seed": args.seed, **state.get("extra", {})})
        write_loss_log(log_path, report.log)

    if stage == "hyp":
        report = train_hyp(model, src, tc, checkpoint=checkpoint, log=prior_log)
        summary = {"steps": model.adam.step}
    else:
        val = [src.sample(VALIDATION_OFFSET + i) for i in range(cfg.train.validation_samples)]
        val = [(s.input, s.target) for s in val]
        stopper = EarlyStopper(tc.delta_min, tc.patience)
        if extra.get("stopper"):
            stopper.restore(extra["stopper"])
        state["extra"] = {"stopper": stopper.state()}

        def checkpoint_sub(m, step, report):
            state["extra"] = {"stopper": stopper.state()}
            checkpoint(m, step, report)

        report = train_sub(model, hyp, src, val, tc, checkpoint=checkpoint_sub, stopper=stopper, log=prior_log)
        state["extra"] = {"stopper": stopper.state()}
        summary = {"steps": model.adam.step, "stopped_early": report.stopped_early,
                   "best_val_dice": report.best_val, "best_step": report.best_step,
                   "val_history": report.val_history}
    save_checkpoint(ckpt, model, extra={"stage": stage, "seed": args.seed, **state.get("extra", {})})
    write_loss_log(log_path, report.log)
    (out / f"{stage}_train.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    write_provenance(out / f"{stage}.provenance.json", f"train-{stage}", args, cfg,
                     [ckpt, log_path, out / f"{stage}_train.json"])
    return EXIT_OK


def cmd_infer(args, cfg):
    need(args.image, args.mni_affine, args.wholebrain)
    m_hyp, _ = load_model(args.hyp_ckpt, "whole-structure")
    m_sub, _ = load_model(args.sub_ckpt, "subregion")
    img = load_volume(args.image)
    wb = load_labelmap(args.wholebrain) if args.wholebrain else None
    inf = cfg.inference
    ctx = InferenceContext(img, read_affine(args.mni_affine), wb, cfg.grid.dims, cfg.grid.spacing_mm,
                           inf.anchor_mm, inf.vdc_ids, inf.ventricle_ids)
    res = run_inference(ctx, m_hyp, m_sub, use_vdc=inf.use_vdc)
    out = Path(args.out)
    save_volume(res.labelmap, out, "u8")
    vols = region_volumes(res.labelmap, tx.SUBREGION_IDS)
    side = out.with_name(out.name.split(".nii")[0] + ".json")
    side.write_text(json.dumps({
        "volumes_mm3": {tx.SUBREGION_NAMES[i]: v for i, v in vols.items()},
        "warnings": res.warnings,
        "config": cfg.to_dict(),
    }, indent=1, sort_keys=True) + "\n")
    write_provenance(out.with_name(out.name.split(".nii")[0] + ".provenance.json"), "infer", args, cfg,
                     [out, side])
    return EXIT_OK


def _eval_one(pair):
    pred_path, ref_path = pair
    pred, ref = load_labelmap(pred_path), load_labelmap(ref_path)
    return region_metrics(pred, ref)


def cmd_eval(args, cfg):
    if len(args.pred) != len(args.ref):
        raise CliError(EXIT_DATA, "--pred and --ref need the same number of files")
    need(*args.pred, *args.ref)
    pairs = list(zip(args.pred, args.ref))
    if args.jobs > 1:
        with ThreadPoolExecutor(args.jobs) as pool:
            results = list(pool.map(_eval_one, pairs))
    else:
        results = [_eval_one(p) for p in pairs]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject", "region", "dice", "avd_mm", "volume_mm3"])
        for (p, _), rows in zip(pairs, results):
            name = Path(p).name.split(".nii")[0]
            for r in rows:
                w.writerow([name, r["region"], repr(r["dice"]), repr(r["avd_mm"]), repr(r["volume_mm3"])])
        for i, r in enumerate(results[0]):
            col = lambda k: np.array([res[i][k] for res in results], dtype=float)  # noqa: E731
            avd_vals = col("avd_mm")
            med_avd = float(np.median(avd_vals[~np.isnan(avd_vals)])) if np.any(~np.isnan(avd_vals)) else float("nan")
            w.writerow(["median", r["region"], repr(float(np.median(col("dice")))), repr(med_avd),
                        repr(float(np.median(col("volume_mm3"))))])
    write_provenance(out.with_name(out.stem + ".provenance.json"), "eval", args, cfg, [out])
    return EXIT_OK


def cmd_stats(args, cfg):
    need(args.table, args.paired_against)
    table = read_group_csv(args.table)
    paired = read_group_csv(args.paired_against) if args.paired_against else None
    rows = stats_report(table, paired, mode=args.mode)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    csv_path, json_path = out.with_suffix(".csv"), out.with_suffix(".json")
    write_report(rows, csv_path, json_path, extra={"normalization": "tiv", "test_mode": args.mode})
    write_provenance(out.with_suffix(".provenance.json"), "stats", args, cfg, [csv_path, json_path])
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser():
    p = argparse.ArgumentParser(prog="hypseg", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="run configuration JSON")
    p.add_argument("--seed", type=int, default=0, help="global seed (u64)")
    p.add_argument("--jobs", type=int, default=1, help="worker threads")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("phantom", help="write the bundled synthetic phantom")
    s.add_argument("--out", required=True)
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--spacing", type=float, default=0.75)
    s.add_argument("--shift", type=int, default=0, help="hemisphere offset from the midline (voxels)")
    s.add_argument("--cohort", type=int, default=0, help="also write a control/patient volume table of N+N")
    s.add_argument("--shrink", type=float, default=0.8, help="patient hypothalamus volume factor")
    s.set_defaults(func=cmd_phantom)

    s = sub.add_parser("prep", help="hemisphere -> cropped training label map + coordinates")
    s.add_argument("--intensity", required=True)
    s.add_argument("--mask", required=True)
    s.add_argument("--hypo", required=True)
    s.add_argument("--mni-affine", help="native->MNI affine (16 numbers); identity if omitted")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_prep)

    s = sub.add_parser("generate", help="dump synthetic samples as NIfTI triplets")
    s.add_argument("--prep", nargs="+", required=True, help="prep output directories")
    s.add_argument("--n", type=int, default=3)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("train", help="train the whole-structure (hyp) or subregion (sub) model")
    s.add_argument("--stage", choices=("hyp", "sub"), required=True)
    s.add_argument("--prep", nargs="+", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--hyp-ckpt", help="trained whole-structure checkpoint (stage sub)")
    s.add_argument("--steps", type=int, help="override the configured step budget")
    s.add_argument("--resume", action="store_true", help="continue from <out>/<stage>.ckpt")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("infer", help="segment a native-space image")
    s.add_argument("--image", required=True)
    s.add_argument("--mni-affine", required=True)
    s.add_argument("--hyp-ckpt", required=True)
    s.add_argument("--sub-ckpt", required=True)
    s.add_argument("--wholebrain", help="FreeSurfer-convention whole-brain labels")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("eval", help="per-region Dice / AVD / volume against references")
    s.add_argument("--pred", nargs="+", required=True)
    s.add_argument("--ref", nargs="+", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("stats", help="group statistics on a volume table")
    s.add_argument("--table", required=True)
    s.add_argument("--paired-against")
    s.add_argument("--mode", choices=("auto", "exact", "approx"), default="auto")
    s.add_argument("--out", required=True, help="report path prefix (.csv and .json are written)")
    s.set_defaults(func=cmd_stats)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if not 0 <= args.seed < 2 ** 64:
        print("hypseg: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_DATA
    try:
        if args.config:
            need(args.config)
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except (HypsegError, CliError, FileNotFoundError) as exc:
        print(f"hypseg {args.command}: {exc}", file=sys.stderr)
        return exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
