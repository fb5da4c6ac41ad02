"""
Report payloads and console tables for search / eval / analyze.

reports.json layout:
{
    "winner": "FusionNet3*",
    "leaderboard": [{"rank": 1, "name": "FusionNet3*", "alpha": 3, "beta": "*", ...}],
    "baselines": {"Mask": {...}, "Image": {...}, "Naive Fusion": {...}, "Mask+Image GT": {...}},
    "baseline_params": {"Mask": 1234, "Image": 1234},
    "pooled": {"FusionNet1+": {...}, ...},
    "folds": [{"name": "FusionNet1+", "fold": 0, "sen": ..., ...}],
    "split": {"folds": [[...], ...]}
}
"""

from __future__ import annotations

from typing import Any, Dict, List, Optional, Sequence

from metrics import EvalReport
from search import GT_BOUND, NAIVE_FUSION, CvResult, LeaderboardRow

# Display order of the baseline rows
BASELINE_ORDER = ["Mask", "Image", "Early", NAIVE_FUSION, GT_BOUND]


def _pct(value: Optional[float]) -> str:
    return "-" if value is None else f"{100.0 * value:6.2f}"


class ReportBuilder:
    """Builds JSON payloads and text tables from evaluation results."""

    def __init__(self, threshold: float = 0.5):
        self.threshold = threshold

    def eval_payload(self, report: EvalReport) -> Dict[str, Any]:
        payload = report.to_dict()
        payload["roc_points"] = len(report.roc)
        return payload

    def search_payload(self, result: CvResult, baseline_params: Optional[Dict[str, int]] = None) -> Dict[str, Any]:
        winner = result.winner
        return {
            "winner": winner.name if winner else None,
            "threshold": self.threshold,
            "leaderboard": [row.to_dict() for row in result.leaderboard],
            "baselines": {name: self.eval_payload(r) for name, r in self._ordered(result.baselines)},
            "baseline_params": dict(baseline_params or {}),
            "pooled": {name: self.eval_payload(r) for name, r in sorted(result.pooled.items())},
            "folds": [
                {"fold": fold, **report.to_dict()}
                for (name, fold), report in sorted(result.fold_reports.items())
            ],
            "split": result.split.to_dict(),
        }

    def _ordered(self, baselines: Dict[str, EvalReport]) -> List:
        ranked = [(n, baselines[n]) for n in BASELINE_ORDER if n in baselines]
        return ranked + sorted((n, r) for n, r in baselines.items() if n not in BASELINE_ORDER)

    def leaderboard_table(self, rows: Sequence[LeaderboardRow]) -> str:
        header = f"{'#':>3} {'model':<14} {'SEN':>7} {'SPEC':>7} {'AUC':>7} {'F1':>7} {'# Para':>12}"
        lines = [header, "-" * len(header)]
        for r in rows:
            lines.append(
                f"{r.rank:>3} {r.name:<14} {_pct(r.sen):>7} {_pct(r.spec):>7} {_pct(r.auc):>7} {_pct(r.f1):>7} {r.params:>12,d}"
            )
        return "\n".join(lines)

    def baseline_table(self, baselines: Dict[str, EvalReport], winner: Optional[LeaderboardRow] = None) -> str:
        header = f"{'method':<16} {'SEN':>7} {'SPEC':>7} {'AUC':>7} {'F1':>7}"
        lines = [header, "-" * len(header)]
        for name, r in self._ordered(baselines):
            lines.append(f"{name:<16} {_pct(r.sen):>7} {_pct(r.spec):>7} {_pct(r.auc):>7} {_pct(r.f1):>7}")
        if winner is not None:
            lines.append(
                f"{winner.name:<16} {_pct(winner.sen):>7} {_pct(winner.spec):>7} {_pct(winner.auc):>7} {_pct(winner.f1):>7}"
            )
        return "\n".join(lines)

    def eval_summary(self, report: EvalReport) -> str:
        return (
            f"{report.name or 'scores'}: n={len(report.scores)} threshold={report.threshold} "
            f"tp={report.tp} fp={report.fp} tn={report.tn} fn={report.fn} | "
            f"SEN={_pct(report.sen).strip()} SPEC={_pct(report.spec).strip()} "
            f"AUC={_pct(report.auc).strip()} F1={_pct(report.f1).strip()}"
        )
