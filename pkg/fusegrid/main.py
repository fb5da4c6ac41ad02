"""
Fusegrid command line.

    gen-data    synthetic (image, mask, label) dataset as VOL1 files + manifest.csv
    preprocess  ROI crop / resample / HU-normalize one (image, mask) pair
    train       train one fused spec or single-branch baseline, write a checkpoint
    search      k-fold CV over the (alpha, beta) grid plus baselines, ranked leaderboard
    eval        metrics + ROC from a score CSV, or naive fusion / GT bound from two
    analyze     closed-form parameter and FLOP counts

Exit codes: 0 ok, 1 invalid input or usage, 2 I/O or file format error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

from analysis import base_cost_report, cost_grid, cost_report, cost_table
from checkpoint import save_checkpoint, sidecar_path
from config import VERSION, Config, RunConfig, default_run_config, load_run_config, setup_logging
from errors import ConfigError, ValidationError
from metrics import Score, evaluate, gt_upper_bound_report, naive_fusion
from model import BaseConfig, BaseInput, Beta, FusionSpec, build_base, build_fused, enumerate_space, predict
from preprocess import PreprocessConfig, prepare_case
from report_builder import ReportBuilder
from run_storage import RunManifest, RunStorage, load_scores, utc_now
from search import baseline_costs, check_claims, run_cv
from synthdata import GenConfig, generate, load_dataset, write_dataset
from train import make_folds, prepare_samples, stack_arrays, train_model
from volume_io import read_volume, write_volume

logger = logging.getLogger("fusegrid")

OUT_HELP = "output directory (default: $FUSEGRID_OUT_DIR/<command>)"


class UsageParser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; this CLI reserves 2 for I/O."""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> UsageParser:
    parser = UsageParser(prog="fusegrid", description="Dual-branch 3D fusion classifier toolkit")
    parser.add_argument("--version", action="version", version=f"fusegrid {VERSION}")
    parser.add_argument("--show-config", action="store_true", help="print the environment configuration")
    sub = parser.add_subparsers(dest="command")

    gen = sub.add_parser("gen-data", help="generate a synthetic dataset")
    gen.add_argument("--config", type=Path, help="JSON file with GenConfig fields")
    gen.add_argument("--side", type=int)
    gen.add_argument("--n-normal", type=int)
    gen.add_argument("--n-abnormal", type=int)
    gen.add_argument("--shape-signal", type=float)
    gen.add_argument("--texture-signal", type=float)
    gen.add_argument("--seg-noise", type=float)
    gen.add_argument("--seed", type=int)
    gen.add_argument("--out", type=Path, help=OUT_HELP)

    pre = sub.add_parser("preprocess", help="prepare one (image, mask) pair")
    pre.add_argument("--image", type=Path, required=True)
    pre.add_argument("--mask", type=Path, required=True)
    pre.add_argument("--out-side", type=int, default=32)
    pre.add_argument("--pad", type=int, default=PreprocessConfig.pad)
    pre.add_argument("--lo-hu", type=float, default=PreprocessConfig.lo_hu)
    pre.add_argument("--hi-hu", type=float, default=PreprocessConfig.hi_hu)
    pre.add_argument("--out", type=Path, help=OUT_HELP)

    tr = sub.add_parser("train", help="train one model")
    tr.add_argument("--config", type=Path)
    tr.add_argument("--data", type=Path, required=True, help="dataset manifest.csv")
    tr.add_argument("--alpha", type=int)
    tr.add_argument("--beta", choices=[b.value for b in Beta])
    tr.add_argument("--base", choices=[s.value for s in BaseInput])
    tr.add_argument("--folds-exclude", type=int, help="hold out this fold and score it")
    tr.add_argument("--out", type=Path, help=OUT_HELP)

    se = sub.add_parser("search", help="cross-validated grid search over (alpha, beta)")
    se.add_argument("--config", type=Path)
    se.add_argument("--data", type=Path, required=True, help="dataset manifest.csv")
    se.add_argument("--jobs", type=int)
    se.add_argument("--out", type=Path, help=OUT_HELP)

    ev = sub.add_parser("eval", help="metrics from score CSV file(s)")
    ev.add_argument("--scores", type=Path)
    ev.add_argument("--mask-scores", type=Path)
    ev.add_argument("--image-scores", type=Path)
    ev.add_argument("--threshold", type=float, default=0.5)
    ev.add_argument("--out", type=Path, help=OUT_HELP)

    an = sub.add_parser("analyze", help="parameter and FLOP counts")
    an.add_argument("--all", action="store_true", help="every spec of the search space")
    an.add_argument("--alpha", type=int)
    an.add_argument("--beta", choices=[b.value for b in Beta])
    an.add_argument("--config", type=Path)
    an.add_argument("--out", type=Path)
    return parser


def _run_config(path: Optional[Path], cfg: Config) -> RunConfig:
    return load_run_config(path, cfg) if path is not None else default_run_config(cfg)


def _finish(storage: RunStorage, command: str, config: Dict[str, Any], seed: int, inputs: Dict[str, Any], started: float, started_at: str) -> None:
    manifest = RunManifest(
        command=command,
        config=config,
        seed=seed,
        inputs={k: str(v) for k, v in inputs.items() if v is not None},
        started_at=started_at,
        duration_s=round(time.perf_counter() - started, 3),
    )
    storage.save_manifest(manifest)


# ---- commands ----
def cmd_gen_data(args: argparse.Namespace, cfg: Config) -> int:
    data: Dict[str, Any] = {}
    if args.config is not None:
        data = json.loads(args.config.read_text(encoding="utf-8"))
        if not isinstance(data, dict):
            raise ConfigError(f"{args.config}: gen-data config must be a JSON object")
    overrides = {
        "side": args.side,
        "n_normal": args.n_normal,
        "n_abnormal": args.n_abnormal,
        "shape_signal": args.shape_signal,
        "texture_signal": args.texture_signal,
        "seg_noise": args.seg_noise,
        "seed": args.seed,
    }
    data.update({k: v for k, v in overrides.items() if v is not None})
    data.setdefault("seed", cfg.SEED)
    gen_cfg = GenConfig.from_dict(data)

    started, started_at = time.perf_counter(), utc_now()
    storage = RunStorage(args.out, cfg)
    manifest_csv = write_dataset(generate(gen_cfg), args.out)
    storage.track(manifest_csv)
    _finish(storage, "gen-data", gen_cfg.to_dict(), gen_cfg.seed, {"config": args.config}, started, started_at)
    print(f"✅ dataset written: {manifest_csv}")
    return 0


def cmd_preprocess(args: argparse.Namespace, cfg: Config) -> int:
    pre_cfg = PreprocessConfig(pad=args.pad, lo_hu=args.lo_hu, hi_hu=args.hi_hu).validate()
    started, started_at = time.perf_counter(), utc_now()
    image, mask = prepare_case(read_volume(args.image), read_volume(args.mask), args.out_side, pre_cfg, case_id=args.image.stem)
    storage = RunStorage(args.out, cfg)
    storage.ensure_directories()
    storage.track(write_volume(args.out / "image.vol", image))
    storage.track(write_volume(args.out / "mask.vol", mask))
    config = {**pre_cfg.to_dict(), "out_side": args.out_side}
    _finish(storage, "preprocess", config, cfg.SEED, {"image": args.image, "mask": args.mask}, started, started_at)
    print(f"✅ prepared volumes written to {args.out}")
    return 0


def cmd_train(args: argparse.Namespace, cfg: Config) -> int:
    run_cfg = _run_config(args.config, cfg)
    if (args.base is None) == (args.alpha is None and args.beta is None):
        raise ConfigError("train needs either --alpha and --beta, or --base")
    if args.base is None and (args.alpha is None or args.beta is None):
        raise ConfigError("--alpha and --beta must be given together")

    started, started_at = time.perf_counter(), utc_now()
    samples = prepare_samples(load_dataset(args.data), run_cfg.base.input_side, run_cfg.preprocess)
    seed = run_cfg.train.seed
    if args.base is not None:
        source = BaseInput(args.base)
        model = build_base(run_cfg.base, 2 if source is BaseInput.EARLY else 1, source, seed=seed)
    else:
        model = build_fused(FusionSpec(args.alpha, Beta.parse(args.beta), run_cfg.base), seed=seed)

    train_set, test_set = samples, []
    if args.folds_exclude is not None:
        split = make_folds(samples, run_cfg.cv.folds, seed)
        if not 0 <= args.folds_exclude < split.k:
            raise ConfigError(f"--folds-exclude must lie in [0, {split.k}), got {args.folds_exclude}")
        train_set = [samples[i] for i in split.train_indices(args.folds_exclude)]
        test_set = [samples[i] for i in split.test_indices(args.folds_exclude)]

    result = train_model(model, train_set, run_cfg.train)
    storage = RunStorage(args.out, cfg)
    storage.ensure_directories()
    checkpoint = save_checkpoint(result.model, args.out / "model.ckpt")
    storage.track(checkpoint)
    storage.track(sidecar_path(checkpoint))
    storage.save_loss_trace("loss_trace.csv", result.losses, result.lrs)

    if test_set:
        masks, images, z = stack_arrays(test_set)
        probs = predict(result.model, masks, images, run_cfg.cv.eval_batch)
        scores = [Score(s.case_id, float(p), int(label)) for s, p, label in zip(test_set, probs, z)]
        report = evaluate(scores, run_cfg.cv.threshold, name=model.name)
        storage.save_scores(model.name, scores)
        storage.save_json("report.json", ReportBuilder(run_cfg.cv.threshold).eval_payload(report))
        print(ReportBuilder(run_cfg.cv.threshold).eval_summary(report))

    config = {**run_cfg.to_dict(), "model": model.name, "folds_exclude": args.folds_exclude}
    _finish(storage, "train", config, seed, {"config": args.config, "data": args.data}, started, started_at)
    print(f"✅ {model.name} trained for {run_cfg.train.iterations} iterations -> {checkpoint}")
    return 0


def cmd_search(args: argparse.Namespace, cfg: Config) -> int:
    run_cfg = _run_config(args.config, cfg)
    jobs = args.jobs if args.jobs is not None else cfg.JOBS
    started, started_at = time.perf_counter(), utc_now()
    samples = prepare_samples(load_dataset(args.data), run_cfg.base.input_side, run_cfg.preprocess)
    space = enumerate_space(run_cfg.base)
    result = run_cv(space, samples, run_cfg, jobs=jobs)

    builder = ReportBuilder(run_cfg.cv.threshold)
    storage = RunStorage(args.out, cfg)
    storage.save_leaderboard([row.to_dict() for row in result.leaderboard])
    storage.save_json("reports.json", builder.search_payload(result, baseline_costs(run_cfg, run_cfg.cv)))
    for name, report in {**result.pooled, **result.baselines}.items():
        if report.scores:
            storage.save_scores(name, report.scores)
        if report.roc:
            storage.save_roc(name, report.roc)
    if result.leaderboard and {"Mask", "Image"} <= set(result.baselines):
        claims = check_claims(result)
        storage.save_json("claims.json", claims.to_dict())
        status = "✅" if claims.passed else "⚠️"
        print(f"{status} complementarity checks: {claims.to_dict()}")

    _finish(storage, "search", {**run_cfg.to_dict(), "jobs": jobs}, run_cfg.train.seed, {"config": args.config, "data": args.data}, started, started_at)
    print(builder.leaderboard_table(result.leaderboard))
    print()
    print(builder.baseline_table(result.baselines, result.winner))
    if result.winner is not None:
        print(f"\n🏆 winner: {result.winner.name}")
    return 0


def cmd_eval(args: argparse.Namespace, cfg: Config) -> int:
    pair = args.mask_scores is not None or args.image_scores is not None
    if (args.scores is None) == (not pair) or (pair and (args.mask_scores is None or args.image_scores is None)):
        raise ConfigError("eval needs --scores, or both --mask-scores and --image-scores")

    started, started_at = time.perf_counter(), utc_now()
    builder = ReportBuilder(args.threshold)
    storage = RunStorage(args.out, cfg)
    if args.scores is not None:
        report = evaluate(load_scores(args.scores), args.threshold, name=args.scores.stem)
        storage.save_json("report.json", builder.eval_payload(report))
        storage.save_roc("roc", report.roc, directory=args.out)
        print(builder.eval_summary(report))
    else:
        mask_scores, image_scores = load_scores(args.mask_scores), load_scores(args.image_scores)
        reports = {
            "Mask": evaluate(mask_scores, args.threshold, name="Mask"),
            "Image": evaluate(image_scores, args.threshold, name="Image"),
            "Naive Fusion": evaluate(naive_fusion(mask_scores, image_scores), args.threshold, name="Naive Fusion"),
            "Mask+Image GT": gt_upper_bound_report(mask_scores, image_scores, args.threshold),
        }
        storage.save_json("report.json", {name: builder.eval_payload(r) for name, r in reports.items()})
        for name, r in reports.items():
            if r.roc:
                storage.save_roc(name, r.roc)
        print(builder.baseline_table(reports))

    inputs = {"scores": args.scores, "mask_scores": args.mask_scores, "image_scores": args.image_scores}
    _finish(storage, "eval", {"threshold": args.threshold}, cfg.SEED, inputs, started, started_at)
    return 0


def cmd_analyze(args: argparse.Namespace, cfg: Config) -> int:
    base = _run_config(args.config, cfg).base if args.config is not None else BaseConfig()
    if args.all == (args.alpha is not None or args.beta is not None):
        raise ConfigError("analyze needs either --all, or --alpha and --beta")
    if args.all:
        specs = enumerate_space(base)
    elif args.alpha is None or args.beta is None:
        raise ConfigError("--alpha and --beta must be given together")
    else:
        specs = [FusionSpec(args.alpha, Beta.parse(args.beta), base).validate()]

    reports = [cost_report(spec) for spec in specs]
    print(cost_table(reports))
    if args.all:
        print()
        print(cost_grid(reports))
        baselines = [base_cost_report(base, 1, BaseInput.MASK), base_cost_report(base, 1, BaseInput.IMAGE)]
        print()
        print(cost_table(baselines))
    if args.out is not None:
        started, started_at = time.perf_counter(), utc_now()
        storage = RunStorage(args.out, cfg)
        storage.save_json("costs.json", [r.to_dict() for r in reports])
        _finish(storage, "analyze", {"base": base.to_dict(), "all": args.all}, cfg.SEED, {"config": args.config}, started, started_at)
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "search": cmd_search,
    "eval": cmd_eval,
    "analyze": cmd_analyze,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return 1
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None and not args.show_config:
        parser.print_usage(sys.stderr)
        return 1

    try:
        cfg = Config()
        Config.validate(cfg)
        if args.command is None:
            cfg.print_config()
            return 0
        setup_logging(cfg)
        if args.show_config or cfg.DEBUG:
            cfg.print_config()
        # analyze only writes files when --out is given
        if args.command != "analyze" and args.out is None:
            args.out = Path(cfg.OUT_DIR) / args.command
        return COMMANDS[args.command](args, cfg)
    except ValidationError as exc:
        logger.error(f"[fusegrid] ❌ {exc}")
        return 1
    except OSError as exc:
        logger.error(f"[fusegrid] ❌ {exc}")
        return 2
    except json.JSONDecodeError as exc:
        logger.error(f"[fusegrid] ❌ invalid JSON: {exc}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
