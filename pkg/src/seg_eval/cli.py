"""Command line interface.

Exit codes: 0 on success, 1 on any hard error (bad input files, bad
usage, impossible requests), 2 on success where some metric was
undefined and reported as missing. Output is a pure function of the
input files and flags; there are no timestamps or hidden state.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .analysis import fn_fp_maps, summarize_cohort
from .errors import SegEvalError
from .fusion import StapleParams, staple_fuse
from .metrics import EvalConfig, evaluate_pair
from .nifti import read_nifti, write_nifti, write_nifti_real
from .ranking import (BootstrapConfig, SubjectResult, final_rank,
                      interscanner_rank, rank_with_ci)
from .reportio import (dump_json, metric_report, rank_report, read_manifest,
                       read_result_csv, write_rank_csv, write_result_csv,
                       _envelope)
from .synth import PerturbOps, PhantomSpec, generate_phantom, perturb_mask
from .volume import BinaryMask, LabelVolume, binarize_challenge


class CliUsageError(SegEvalError):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on usage errors; 2 is taken, so
    # route them through the normal error path instead
    def error(self, message):
        raise CliUsageError(message)


def _default_jobs() -> int:
    raw = os.environ.get("SEG_EVAL_JOBS", "1")
    try:
        jobs = int(raw)
    except ValueError:
        raise CliUsageError(f"SEG_EVAL_JOBS={raw!r} is not an integer")
    if jobs < 1:
        raise CliUsageError(f"SEG_EVAL_JOBS={raw!r} must be >= 1")
    return jobs


def _add_eval_config(p: argparse.ArgumentParser) -> None:
    p.add_argument("--connectivity", type=int, choices=(6, 18, 26),
                   default=26, help="lesion component neighbourhood")
    p.add_argument("--h95-mode", choices=("directed", "pooled"),
                   default="directed")
    p.add_argument("--ignore-mode", choices=("exclude", "background"),
                   default="exclude",
                   help="handling of reference label 2 voxels")


def _eval_config(args) -> EvalConfig:
    return EvalConfig(connectivity=args.connectivity,
                      h95_mode=args.h95_mode, ignore_mode=args.ignore_mode)


def _config_echo(args, keys) -> dict:
    return {k: getattr(args, k) for k in keys}


def cmd_evaluate(args) -> int:
    config = _eval_config(args)
    ref = read_nifti(args.reference)
    pred = read_nifti(args.prediction)
    vec = evaluate_pair(ref, pred, config)
    body = metric_report(vec, _config_echo(
        args, ("connectivity", "h95_mode", "ignore_mode")))
    text = dump_json(body, args.output)
    if args.output is None:
        print(text)
    return 2 if vec.has_missing else 0


def _batch_worker(task):
    ref_path, pred_path, cfg = task
    config = EvalConfig(*cfg)
    return evaluate_pair(read_nifti(ref_path), read_nifti(pred_path), config)


def cmd_evaluate_batch(args) -> int:
    config = _eval_config(args)
    rows = read_manifest(args.manifest)
    jobs = args.jobs if args.jobs is not None else _default_jobs()
    if jobs < 1:
        raise CliUsageError("--jobs must be >= 1")
    cfg = (config.connectivity, config.h95_mode, config.ignore_mode)
    tasks = [(str(r.reference_path), str(r.prediction_path), cfg)
             for r in rows]
    if jobs == 1:
        vectors = [_batch_worker(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            vectors = list(pool.map(_batch_worker, tasks))
    records = [SubjectResult(r.method_id, r.subject_id, r.scanner_id, v)
               for r, v in zip(rows, vectors)]
    write_result_csv(records, args.output)
    n_missing = sum(1 for v in vectors if v.has_missing)
    if n_missing:
        print(f"{n_missing} of {len(vectors)} pairs have undefined metrics",
              file=sys.stderr)
        return 2
    return 0


def cmd_rank(args) -> int:
    table = read_result_csv(args.results)
    if args.bootstrap > 0:
        rank = rank_with_ci(table, args.volume_metric,
                            BootstrapConfig(replicates=args.bootstrap,
                                            seed=args.seed,
                                            confidence=args.confidence))
    else:
        rank = final_rank(table, args.volume_metric)
    inter = None
    if args.interscanner:
        inter = interscanner_rank(table, args.volume_metric,
                                  args.interscanner_normalization)
    body = rank_report(rank, _config_echo(
        args, ("volume_metric", "bootstrap", "seed", "confidence",
               "interscanner", "interscanner_normalization")), inter)
    text = dump_json(body, args.output)
    if args.output is None:
        print(text)
    if args.csv:
        write_rank_csv(rank, args.csv)
    return 0


def cmd_staple(args) -> int:
    if args.prior.upper() == "AUTO":
        prior = None
    else:
        try:
            prior = float(args.prior)
        except ValueError:
            raise CliUsageError(f"--prior must be AUTO or a number, "
                                f"got {args.prior!r}")
    params = StapleParams(max_iter=args.max_iter, tol=args.tol,
                          threshold=args.threshold, prior=prior,
                          restrict_bbox=not args.no_bbox)
    masks = []
    for path in args.inputs:
        vol = read_nifti(path)
        masks.append(BinaryMask(vol.data != 0, vol.spacing))
    result = staple_fuse(masks, params)
    write_nifti(result.consensus, args.output)
    if args.weights_out:
        write_nifti_real(result.weights, masks[0].spacing, args.weights_out)
    print(f"prior {result.prior:.6f}  iterations {result.iterations}  "
          f"converged {result.converged}")
    print("rater  sensitivity  specificity  path")
    for j, path in enumerate(args.inputs):
        print(f"{j:5d}  {result.sensitivity[j]:11.6f}  "
              f"{result.specificity[j]:11.6f}  {path}")
    return 0


def cmd_maps(args) -> int:
    rows = read_manifest(args.manifest)
    pairs = []
    subject_ids = []
    for r in rows:
        ref_wmh, _ = binarize_challenge(read_nifti(r.reference_path))
        pred_wmh, _ = binarize_challenge(read_nifti(r.prediction_path))
        pairs.append((ref_wmh, pred_wmh))
        subject_ids.append(r.subject_id)
    fn, fp = fn_fp_maps(pairs, subject_ids, args.fp_denominator)
    write_nifti_real(fn.rate, fn.spacing, args.fn_out)
    write_nifti_real(fp.rate, fp.spacing, args.fp_out)
    if args.lesion_count_out:
        write_nifti_real(fn.lesion_count.astype(np.float64), fn.spacing,
                         args.lesion_count_out)
    return 0


def cmd_cohort(args) -> int:
    rows = read_manifest(args.manifest)
    seen = set()
    masks = []
    for r in rows:
        if r.subject_id in seen:
            continue
        seen.add(r.subject_id)
        wmh, _ = binarize_challenge(read_nifti(r.reference_path))
        masks.append(wmh)
    summary = summarize_cohort(masks, volume_bin_ml=args.volume_bin_ml,
                               count_bin=args.count_bin,
                               connectivity=args.connectivity)
    body = _envelope(_config_echo(
        args, ("volume_bin_ml", "count_bin", "connectivity")))
    body["n"] = summary.n

    def stats(s):
        return {"mean": s.mean, "sd": s.sd, "min": s.minimum, "q1": s.q1,
                "median": s.median, "q3": s.q3, "max": s.maximum, "n": s.n,
                "sd_degenerate": s.sd_degenerate}

    body["volume_ml"] = stats(summary.volume)
    body["volume_ml"]["values"] = [float(v) for v in summary.volumes_ml]
    body["volume_ml"]["histogram"] = {
        "edges": [float(e) for e in summary.volume_hist[0]],
        "counts": [int(c) for c in summary.volume_hist[1]]}
    body["lesion_count"] = stats(summary.count)
    body["lesion_count"]["values"] = [float(v) for v in summary.lesion_counts]
    body["lesion_count"]["histogram"] = {
        "edges": [float(e) for e in summary.count_hist[0]],
        "counts": [int(c) for c in summary.count_hist[1]]}
    text = dump_json(body, args.output)
    if args.output is None:
        print(text)
    return 0


def _method_ops(index: int, seed: int) -> PerturbOps:
    """A graded degradation recipe: method 0 reproduces the reference,
    higher indices drift further from it."""
    if index == 0:
        return PerturbOps(seed=seed)
    return PerturbOps(
        dilate=1 if index % 3 == 2 else 0,
        erode=1 if index % 3 == 0 else 0,
        add_blobs=index,
        blob_size=7,
        translate=(index % 2, 0, 0),
        seed=seed + index)


def cmd_synth(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lo, hi = args.size_range
    manifest_rows = []
    for si in range(args.subjects):
        spec = PhantomSpec(dims=tuple(args.dims),
                           spacing=tuple(args.spacing),
                           n_lesions=args.lesions, size_range=(lo, hi),
                           seed=args.seed + si,
                           ignore_fraction=args.ignore_fraction)
        ref = generate_phantom(spec)
        subject = f"sub-{si:03d}"
        scanner = f"scanner_{si % args.scanners}"
        ref_name = f"{subject}_ref.nii.gz"
        write_nifti(ref, out / ref_name)
        wmh, _ = binarize_challenge(ref)
        for mi in range(args.methods):
            method = f"method_{mi:02d}"
            pred = perturb_mask(wmh, _method_ops(mi, args.seed + si))
            pred_name = f"{subject}_{method}.nii.gz"
            write_nifti(LabelVolume(pred.data.astype(np.int32),
                                    pred.spacing), out / pred_name)
            manifest_rows.append((method, subject, scanner,
                                  ref_name, pred_name))
    manifest = out / "manifest.csv"
    with open(manifest, "w", newline="") as fh:
        fh.write(",".join(("method_id", "subject_id", "scanner_id",
                           "reference_path", "prediction_path")) + "\n")
        for row in manifest_rows:
            fh.write(",".join(row) + "\n")
    print(f"wrote {args.subjects} subjects x {args.methods} methods "
          f"to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="seg-eval",
                     description="WMH segmentation evaluation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("evaluate", parents=[], help="score one pair")
    p.add_argument("reference")
    p.add_argument("prediction")
    _add_eval_config(p)
    p.add_argument("-o", "--output", default=None, help="JSON path "
                   "(default: stdout)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("evaluate-batch", help="score a manifest of pairs")
    p.add_argument("manifest")
    _add_eval_config(p)
    p.add_argument("-o", "--output", required=True, help="result CSV path")
    p.add_argument("--jobs", type=int, default=None,
                   help="worker processes (default: SEG_EVAL_JOBS or 1)")
    p.set_defaults(func=cmd_evaluate_batch)

    p = sub.add_parser("rank", help="rank methods from a result CSV")
    p.add_argument("results")
    p.add_argument("--volume-metric", choices=("lavd", "avd"),
                   default="lavd")
    p.add_argument("--bootstrap", type=int, default=2000,
                   help="bootstrap replicates; 0 disables CIs")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--confidence", type=float, default=0.95)
    p.add_argument("--interscanner", action="store_true",
                   help="also rank inter-scanner robustness")
    p.add_argument("--interscanner-normalization",
                   choices=("minmax", "ordinal"), default="minmax")
    p.add_argument("-o", "--output", default=None, help="JSON path "
                   "(default: stdout)")
    p.add_argument("--csv", default=None, help="also write a rank CSV here")
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("staple", help="fuse segmentations with STAPLE")
    p.add_argument("inputs", nargs="+")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--prior", default="AUTO",
                   help="foreground prior, AUTO = mean vote rate")
    p.add_argument("--no-bbox", action="store_true",
                   help="run on the full grid instead of the vote "
                        "bounding box")
    p.add_argument("--weights-out", default=None,
                   help="write per-voxel foreground probability here")
    p.set_defaults(func=cmd_staple)

    p = sub.add_parser("maps", help="voxelwise FN/FP rate maps")
    p.add_argument("manifest")
    p.add_argument("--fn-out", required=True)
    p.add_argument("--fp-out", required=True)
    p.add_argument("--lesion-count-out", default=None)
    p.add_argument("--fp-denominator", choices=("ref_negative", "pairs"),
                   default="ref_negative")
    p.set_defaults(func=cmd_maps)

    p = sub.add_parser("cohort", help="reference cohort summary")
    p.add_argument("manifest")
    p.add_argument("--volume-bin-ml", type=float, default=10.0)
    p.add_argument("--count-bin", type=float, default=10.0)
    p.add_argument("--connectivity", type=int, choices=(6, 18, 26),
                   default=26)
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=cmd_cohort)

    p = sub.add_parser("synth", help="generate phantom pairs + manifest")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--subjects", type=int, default=5)
    p.add_argument("--methods", type=int, default=2)
    p.add_argument("--scanners", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dims", type=int, nargs=3, default=(32, 32, 32))
    p.add_argument("--spacing", type=float, nargs=3, default=(1.0, 1.0, 1.0))
    p.add_argument("--lesions", type=int, default=5)
    p.add_argument("--size-range", type=int, nargs=2, default=(3, 40))
    p.add_argument("--ignore-fraction", type=float, default=0.0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except CliUsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SegEvalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
