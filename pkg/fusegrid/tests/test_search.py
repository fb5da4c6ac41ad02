import numpy as np
import pytest

from conftest import make_toy_samples
from config import RunConfig
from errors import ConfigError, ShapeError
from metrics import EvalReport
from model import BaseInput, Beta, FusionSpec, enumerate_space
from preprocess import PreprocessConfig
from search import (
    GT_BOUND,
    NAIVE_FUSION,
    CvConfig,
    CvJob,
    CvResult,
    LeaderboardRow,
    baseline_costs,
    check_claims,
    plan_jobs,
    rank_leaderboard,
    run_cv,
)
from train import TrainConfig, make_folds


def row(name, alpha, beta, f1, auc):
    return LeaderboardRow(name, alpha, beta, sen=0.5, spec=0.5, f1=f1, auc=auc, params=1, flops=1)


def report(name, sen, spec, f1):
    return EvalReport([], 0.5, 0, 0, 0, 0, sen, spec, f1, None, [], name)


@pytest.fixture
def tiny_run(tiny_base):
    return RunConfig(
        base=tiny_base,
        train=TrainConfig(batch_size=2, iterations=2, augment=False, seed=11),
        preprocess=PreprocessConfig(),
        cv=CvConfig(folds=2),
    ).validate()


class TestPlanning:
    def test_job_counts(self, tiny_base):
        space = enumerate_space(tiny_base)
        assert len(plan_jobs(space, CvConfig())) == (len(space) + 2) * 4
        assert len(plan_jobs(space, CvConfig(include_early_fusion=True))) == (len(space) + 3) * 4
        assert len(plan_jobs(space, CvConfig(include_baselines=False, folds=3))) == len(space) * 3

    def test_baselines_come_first(self, tiny_base):
        jobs = plan_jobs(enumerate_space(tiny_base), CvConfig(folds=2))
        assert [j.source for j in jobs[:4]] == [BaseInput.MASK] * 2 + [BaseInput.IMAGE] * 2
        assert jobs[4].spec is not None

    def test_job_seeds_depend_on_job_not_order(self):
        a = CvJob(model_index=3, fold=1, source=BaseInput.MASK)
        assert a.seeds(0) == CvJob(model_index=3, fold=1, source=BaseInput.MASK).seeds(0)
        assert a.seeds(0) != CvJob(model_index=3, fold=2, source=BaseInput.MASK).seeds(0)
        assert a.seeds(0) != a.seeds(1)

    def test_invalid_cv_config(self):
        with pytest.raises(ConfigError):
            CvConfig(folds=1).validate()


class TestLeaderboard:
    def test_ranking_order(self):
        rows = [
            row("FusionNet2+", 2, Beta.ADD, 0.8, 0.90),
            row("FusionNet1*", 1, Beta.MUL, 0.9, 0.85),
            row("FusionNet1+", 1, Beta.ADD, 0.8, 0.90),
            row("FusionNet3⊕", 3, Beta.CONCAT, 0.8, 0.95),
        ]
        ranked = rank_leaderboard(rows)
        assert [r.name for r in ranked] == ["FusionNet1*", "FusionNet3⊕", "FusionNet1+", "FusionNet2+"]
        assert [r.rank for r in ranked] == [1, 2, 3, 4]

    def test_row_dict_uses_symbol(self):
        assert row("FusionNet1⊕", 1, Beta.CONCAT, 0.5, 0.5).to_dict()["beta"] == "⊕"

    def test_baseline_costs(self, tiny_run):
        costs = baseline_costs(tiny_run, tiny_run.cv)
        assert set(costs) == {"Mask", "Image"}
        assert costs["Mask"] == costs["Image"]


class TestClaims:
    def _result(self, fused_f1, mask_f1, image_f1, naive_f1, gt=(1.0, 1.0)):
        baselines = {
            "Mask": report("Mask", 0.7, 0.8, mask_f1),
            "Image": report("Image", 0.6, 0.9, image_f1),
            NAIVE_FUSION: report(NAIVE_FUSION, 0.7, 0.9, naive_f1),
            GT_BOUND: report(GT_BOUND, *gt, 0.95),
        }
        pooled = {"Mask": baselines["Mask"], "Image": baselines["Image"], "FusionNet1+": report("FusionNet1+", 0.8, 0.9, fused_f1)}
        leaderboard = rank_leaderboard([row("FusionNet1+", 1, Beta.ADD, fused_f1, 0.9)])
        return CvResult(make_folds([0, 1, 0, 1], 2), {}, pooled, leaderboard, baselines)

    def test_all_claims_hold(self):
        check = check_claims(self._result(0.85, 0.75, 0.70, 0.80))
        assert check.passed
        assert check.to_dict()["passed"] is True

    def test_margin_is_required(self):
        check = check_claims(self._result(0.77, 0.75, 0.70, 0.70))
        assert not check.fused_beats_branches
        assert not check.passed

    def test_naive_fusion_can_win(self):
        assert not check_claims(self._result(0.85, 0.75, 0.70, 0.90)).fused_beats_naive

    def test_gt_bound_must_dominate(self):
        assert not check_claims(self._result(0.85, 0.75, 0.70, 0.80, gt=(0.75, 1.0))).gt_dominates

    def test_needs_baselines(self):
        result = self._result(0.85, 0.75, 0.70, 0.80)
        del result.baselines[NAIVE_FUSION]
        with pytest.raises(ConfigError):
            check_claims(result)


class TestRunCv:
    def test_tiny_search(self, tiny_base, tiny_run):
        samples = make_toy_samples(n=8, side=8)
        space = [FusionSpec(1, Beta.ADD, tiny_base), FusionSpec(2, Beta.CONCAT, tiny_base)]
        result = run_cv(space, samples, tiny_run)

        assert len(result.leaderboard) == 2
        assert [r.rank for r in result.leaderboard] == [1, 2]
        assert set(result.baselines) == {"Mask", "Image", NAIVE_FUSION, GT_BOUND}
        assert len(result.fold_reports) == 4 * 2
        for name in ("FusionNet1+", "FusionNet2⊕", "Mask", "Image"):
            pooled = result.pooled[name]
            assert len(pooled.scores) == 8
            assert sorted(s.case_id for s in pooled.scores) == sorted(s.case_id for s in samples)
        assert all(len(trace) == 2 for trace in result.losses.values())

    def test_wrong_side_rejected(self, tiny_base, tiny_run):
        with pytest.raises(ShapeError):
            run_cv([FusionSpec(1, Beta.ADD, tiny_base)], make_toy_samples(n=8, side=12), tiny_run)

    def test_repeatable(self, tiny_base, tiny_run):
        samples = make_toy_samples(n=8, side=8)
        space = [FusionSpec(1, Beta.MUL, tiny_base)]
        a, b = run_cv(space, samples, tiny_run), run_cv(space, samples, tiny_run)
        assert [s.p for s in a.pooled["FusionNet1*"].scores] == [s.p for s in b.pooled["FusionNet1*"].scores]

    @pytest.mark.slow
    def test_worker_count_does_not_change_results(self, tiny_base, tiny_run):
        samples = make_toy_samples(n=8, side=8)
        space = [FusionSpec(1, Beta.ADD, tiny_base), FusionSpec(1, Beta.MUL, tiny_base)]
        serial = run_cv(space, samples, tiny_run, jobs=1)
        parallel = run_cv(space, samples, tiny_run, jobs=2)
        for name, rep in serial.pooled.items():
            np.testing.assert_array_equal([s.p for s in rep.scores], [s.p for s in parallel.pooled[name].scores])
        assert [r.name for r in serial.leaderboard] == [r.name for r in parallel.leaderboard]
