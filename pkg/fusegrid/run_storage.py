"""
File-based artifact storage for one run directory:

- <out>/run_manifest.json   - RunManifest of the producing command
- <out>/*.json              - reports, configs, claims
- <out>/*.csv               - leaderboard, loss traces
- <out>/scores/<model>.csv  - held-out scores (case_id, p, z)
- <out>/roc/<model>.csv     - ROC points (fpr, tpr)

OSError propagates to the caller; the CLI turns it into exit code 2.
"""

from __future__ import annotations

import csv
import json
import logging
import re
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

from config import VERSION, Config
from errors import FormatError
from metrics import Score

logger = logging.getLogger(__name__)

MANIFEST_NAME = "run_manifest.json"


@dataclass
class RunManifest:
    command: str
    config: Dict[str, Any]
    seed: int
    version: str = VERSION
    inputs: Dict[str, str] = field(default_factory=dict)
    outputs: List[str] = field(default_factory=list)
    started_at: str = ""
    duration_s: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunManifest":
        try:
            return cls(**data)
        except TypeError as exc:
            raise FormatError(f"invalid run manifest: {exc}") from exc


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat().replace("+00:00", "Z")


def safe_name(name: str) -> str:
    """File-system friendly model name: FusionNet3* -> FusionNet3_mul."""
    name = name.replace("+", "_add").replace("*", "_mul").replace("⊕", "_concat")
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name)


class RunStorage:
    """Writes the artifacts of one command into its output directory."""

    def __init__(self, out_dir: Union[str, Path], cfg: Optional[Config] = None):
        self.cfg = cfg or Config()
        self.base_path = Path(out_dir)
        self.scores_dir = self.base_path / "scores"
        self.roc_dir = self.base_path / "roc"
        self.written: List[str] = []

    def ensure_directories(self, *extra: Path) -> None:
        for dir_path in [self.base_path, *extra]:
            dir_path.mkdir(parents=True, exist_ok=True)

    def track(self, path: Path) -> Path:
        self.written.append(str(path.relative_to(self.base_path)))
        return path

    def save_json(self, name: str, data: Any) -> Path:
        self.ensure_directories()
        path = self.base_path / name
        with open(path, "w", encoding="utf-8") as f:
            json.dump(data, f, indent=2, sort_keys=True, ensure_ascii=False)
        logger.debug(f"[storage] saved {path}")
        return self.track(path)

    def _save_rows(self, path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
        self.ensure_directories(path.parent)
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(header)
            writer.writerows(rows)
        return self.track(path)

    def save_loss_trace(self, name: str, losses: Sequence[float], lrs: Sequence[float]) -> Path:
        rows = ((i, repr(float(lr)), repr(float(loss))) for i, (lr, loss) in enumerate(zip(lrs, losses)))
        return self._save_rows(self.base_path / name, ["iteration", "lr", "loss"], rows)

    def save_leaderboard(self, rows: Sequence[Dict[str, Any]], name: str = "leaderboard.csv") -> Path:
        header = ["rank", "name", "alpha", "beta", "sen", "spec", "f1", "auc", "params", "flops"]
        return self._save_rows(self.base_path / name, header, ([row[h] for h in header] for row in rows))

    def save_scores(self, model_name: str, scores: Sequence[Score]) -> Path:
        path = self.scores_dir / f"{safe_name(model_name)}.csv"
        return self._save_rows(path, ["case_id", "p", "z"], ((s.case_id, repr(s.p), s.z) for s in scores))

    def save_roc(self, model_name: str, roc: Sequence[Tuple[float, float]], directory: Optional[Path] = None) -> Path:
        path = (directory or self.roc_dir) / f"{safe_name(model_name)}.csv"
        return self._save_rows(path, ["fpr", "tpr"], ((repr(fpr), repr(tpr)) for fpr, tpr in roc))

    def save_manifest(self, manifest: RunManifest) -> Optional[Path]:
        if not self.cfg.WRITE_MANIFEST:
            return None
        manifest.outputs = sorted(set(manifest.outputs) | set(self.written))
        path = self.save_json(MANIFEST_NAME, manifest.to_dict())
        logger.info(f"[storage] 📄 manifest saved: {path}")
        return path


def load_scores(path: Union[str, Path]) -> List[Score]:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        missing = {"case_id", "p", "z"} - set(reader.fieldnames or [])
        if missing:
            raise FormatError(f"{path}: missing column(s) {sorted(missing)}")
        scores = []
        for line, row in enumerate(reader, start=2):
            try:
                scores.append(Score(row["case_id"], float(row["p"]), int(row["z"])))
            except (TypeError, ValueError) as exc:
                raise FormatError(f"{path}:{line}: {exc}") from exc
    return scores


def load_manifest(path: Union[str, Path]) -> RunManifest:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from exc
    return RunManifest.from_dict(data)
