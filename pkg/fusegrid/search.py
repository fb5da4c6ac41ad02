"""
Grid search over the fusion space with k-fold cross-validation.

Every (model, fold) pair is an independent job: train on the other folds,
score the held-out fold. Held-out scores are pooled across folds per model.
The single-branch baselines run on the same folds, and naive fusion / the
ground-truth upper bound are derived from their scores.

Job seeds come from SeedSequence([run seed, model index, fold]), so results do
not depend on how many worker processes run them.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from analysis import base_cost_report, cost_report
from config import RunConfig
from errors import ConfigError, ShapeError
from metrics import EvalReport, Score, evaluate, gt_upper_bound_report, naive_fusion
from model import BaseInput, Beta, FusionSpec, Model, build_base, build_fused, predict
from train import FoldSplit, Sample, make_folds, stack_arrays, train_model

logger = logging.getLogger(__name__)

NAIVE_FUSION = "Naive Fusion"
GT_BOUND = "Mask+Image GT"
_BETA_ORDER = {beta: i for i, beta in enumerate(Beta)}


@dataclass(frozen=True)
class CvConfig:
    folds: int = 4
    include_baselines: bool = True
    include_early_fusion: bool = False
    threshold: float = 0.5
    eval_batch: int = 8

    def validate(self) -> "CvConfig":
        if self.folds < 2:
            raise ConfigError(f"folds must be >= 2, got {self.folds}")
        if not 0 < self.threshold < 1:
            raise ConfigError(f"threshold must lie in (0, 1), got {self.threshold}")
        if self.eval_batch < 1:
            raise ConfigError(f"eval_batch must be >= 1, got {self.eval_batch}")
        return self

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class CvJob:
    model_index: int
    fold: int
    spec: Optional[FusionSpec] = None
    source: Optional[BaseInput] = None

    @property
    def name(self) -> str:
        return self.spec.name if self.spec is not None else self.source.display_name

    def seeds(self, run_seed: int) -> Tuple[int, int]:
        """(weight init seed, batch order seed)"""
        state = np.random.SeedSequence([run_seed, self.model_index, self.fold]).generate_state(2)
        return int(state[0]), int(state[1])

    def build(self, run_config: RunConfig, seed: int) -> Model:
        if self.spec is not None:
            return build_fused(self.spec, seed=seed)
        in_channels = 2 if self.source is BaseInput.EARLY else 1
        return build_base(run_config.base, in_channels, self.source, seed=seed)


@dataclass
class JobOutcome:
    job: CvJob
    scores: List[Score]
    losses: List[float]


@dataclass(frozen=True)
class LeaderboardRow:
    name: str
    alpha: int
    beta: Beta
    sen: float
    spec: float
    f1: float
    auc: float
    params: int
    flops: int
    rank: int = 0

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["beta"] = self.beta.symbol
        return data


@dataclass
class CvResult:
    split: FoldSplit
    fold_reports: Dict[Tuple[str, int], EvalReport]
    pooled: Dict[str, EvalReport]
    leaderboard: List[LeaderboardRow]
    baselines: Dict[str, EvalReport] = field(default_factory=dict)
    losses: Dict[Tuple[str, int], List[float]] = field(default_factory=dict)

    @property
    def winner(self) -> Optional[LeaderboardRow]:
        return self.leaderboard[0] if self.leaderboard else None


@dataclass(frozen=True)
class ClaimCheck:
    fused_beats_branches: bool
    fused_beats_naive: bool
    gt_dominates: bool
    best_fused_f1: float
    best_branch_f1: float
    naive_f1: float
    margin: float

    @property
    def passed(self) -> bool:
        return self.fused_beats_branches and self.fused_beats_naive and self.gt_dominates

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["passed"] = self.passed
        return data


# ---- worker side ----
_DATASET: List[Sample] = []


def _install_dataset(samples: Sequence[Sample]) -> None:
    global _DATASET
    _DATASET = list(samples)


def _run_job(job: CvJob, run_config: RunConfig, split: FoldSplit) -> JobOutcome:
    init_seed, order_seed = job.seeds(run_config.train.seed)
    model = job.build(run_config, init_seed)
    train_set = [_DATASET[i] for i in split.train_indices(job.fold)]
    test_set = [_DATASET[i] for i in split.test_indices(job.fold)]

    train_cfg = replace(run_config.train, seed=order_seed)
    result = train_model(model, train_set, train_cfg, tag=f"{job.name}/fold{job.fold}")

    masks, images, z = stack_arrays(test_set)
    probs = predict(result.model, masks, images, batch_size=run_config.cv.eval_batch)
    scores = [Score(s.case_id, float(p), int(label)) for s, p, label in zip(test_set, probs, z)]
    return JobOutcome(job=job, scores=scores, losses=result.losses)


# ---- driver side ----
def plan_jobs(space: Sequence[FusionSpec], cv: CvConfig) -> List[CvJob]:
    """Baselines first (Mask, Image, optionally Early), then the fusion specs."""
    models: List[Tuple[Optional[FusionSpec], Optional[BaseInput]]] = []
    if cv.include_baselines:
        models += [(None, BaseInput.MASK), (None, BaseInput.IMAGE)]
    if cv.include_early_fusion:
        models.append((None, BaseInput.EARLY))
    models += [(spec, None) for spec in space]
    return [
        CvJob(model_index=i, fold=fold, spec=spec, source=source)
        for i, (spec, source) in enumerate(models)
        for fold in range(cv.folds)
    ]


def _check_samples(samples: Sequence[Sample], side: int) -> None:
    for s in samples:
        if s.image.dims != (side, side, side):
            raise ShapeError(f"{s.case_id}: volume {s.image.dims} does not match input side {side}")


def rank_leaderboard(rows: Sequence[LeaderboardRow]) -> List[LeaderboardRow]:
    """F1 descending, then AUC descending, then (alpha, beta) order."""
    ordered = sorted(rows, key=lambda r: (-r.f1, -r.auc, r.alpha, _BETA_ORDER[r.beta]))
    return [replace(r, rank=i + 1) for i, r in enumerate(ordered)]


def run_cv(
    space: Sequence[FusionSpec],
    samples: Sequence[Sample],
    run_config: RunConfig,
    jobs: int = 1,
    split: Optional[FoldSplit] = None,
) -> CvResult:
    cv = run_config.cv.validate()
    if jobs < 1:
        raise ConfigError(f"jobs must be >= 1, got {jobs}")
    _check_samples(samples, run_config.base.input_side)
    split = split or make_folds(samples, cv.folds, run_config.train.seed)
    planned = plan_jobs(space, cv)
    logger.info(f"[search] {len(planned)} jobs ({len(planned) // cv.folds} models x {cv.folds} folds), workers={jobs}")

    outcomes: List[JobOutcome] = []
    if jobs == 1:
        _install_dataset(samples)
        for n, job in enumerate(planned, start=1):
            outcomes.append(_run_job(job, run_config, split))
            logger.info(f"[search] ✅ {n}/{len(planned)} {job.name} fold {job.fold}")
    else:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_install_dataset, initargs=(list(samples),)) as pool:
            futures = [pool.submit(_run_job, job, run_config, split) for job in planned]
            for n, future in enumerate(futures, start=1):
                outcome = future.result()
                outcomes.append(outcome)
                logger.info(f"[search] ✅ {n}/{len(planned)} {outcome.job.name} fold {outcome.job.fold}")

    return summarize(outcomes, split, cv)


def summarize(outcomes: Sequence[JobOutcome], split: FoldSplit, cv: CvConfig) -> CvResult:
    fold_reports: Dict[Tuple[str, int], EvalReport] = {}
    pooled_scores: Dict[str, List[Score]] = {}
    specs: Dict[str, FusionSpec] = {}
    losses: Dict[Tuple[str, int], List[float]] = {}
    for outcome in outcomes:
        job = outcome.job
        fold_reports[(job.name, job.fold)] = evaluate(outcome.scores, cv.threshold, name=job.name)
        pooled_scores.setdefault(job.name, []).extend(outcome.scores)
        losses[(job.name, job.fold)] = outcome.losses
        if job.spec is not None:
            specs[job.name] = job.spec

    pooled = {name: evaluate(scores, cv.threshold, name=name) for name, scores in pooled_scores.items()}

    rows = []
    for name, spec in specs.items():
        report, cost = pooled[name], cost_report(spec)
        rows.append(
            LeaderboardRow(name, spec.alpha, spec.beta, report.sen, report.spec, report.f1, report.auc, cost.param_count, cost.flops)
        )

    baselines = {name: report for name, report in pooled.items() if name not in specs}
    mask_name, image_name = BaseInput.MASK.display_name, BaseInput.IMAGE.display_name
    if mask_name in pooled_scores and image_name in pooled_scores:
        mask_scores, image_scores = pooled_scores[mask_name], pooled_scores[image_name]
        baselines[NAIVE_FUSION] = evaluate(naive_fusion(mask_scores, image_scores), cv.threshold, name=NAIVE_FUSION)
        baselines[GT_BOUND] = gt_upper_bound_report(mask_scores, image_scores, cv.threshold, name=GT_BOUND)

    return CvResult(split, fold_reports, pooled, rank_leaderboard(rows), baselines, losses)


def baseline_costs(run_config: RunConfig, cv: CvConfig) -> Dict[str, int]:
    """Parameter counts of the single-branch baselines, for report tables."""
    out = {}
    for source in (BaseInput.MASK, BaseInput.IMAGE, BaseInput.EARLY):
        if source is BaseInput.EARLY and not cv.include_early_fusion:
            continue
        in_channels = 2 if source is BaseInput.EARLY else 1
        out[source.display_name] = base_cost_report(run_config.base, in_channels, source).param_count
    return out


def check_claims(result: CvResult, margin: float = 0.03) -> ClaimCheck:
    """
    The complementarity checks for one seed:
    - the best fused spec beats both single branches on F1 by `margin`
    - it is at least as good as naive fusion on F1
    - the GT bound's SEN and SPEC dominate every other row
    """
    mask_name, image_name = BaseInput.MASK.display_name, BaseInput.IMAGE.display_name
    missing = [n for n in (mask_name, image_name, NAIVE_FUSION, GT_BOUND) if n not in result.baselines]
    if missing or not result.leaderboard:
        raise ConfigError(f"claims need baselines and fused specs; missing {missing or ['fused specs']}")

    best = result.winner.f1
    branch = max(result.baselines[mask_name].f1, result.baselines[image_name].f1)
    naive = result.baselines[NAIVE_FUSION].f1
    gt = result.baselines[GT_BOUND]
    rows = list(result.pooled.values()) + [result.baselines[NAIVE_FUSION]]
    dominates = all(gt.sen >= r.sen and gt.spec >= r.spec for r in rows)
    return ClaimCheck(
        fused_beats_branches=best - branch >= margin,
        fused_beats_naive=best >= naive,
        gt_dominates=dominates,
        best_fused_f1=best,
        best_branch_f1=branch,
        naive_f1=naive,
        margin=margin,
    )
