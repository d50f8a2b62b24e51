"""Euclidean-distance retrieval between query and gallery descriptors,
with Recall@K and average-precision evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

REPORT_KS = (1, 5, 10)


@dataclass
class GalleryIndex:
    descriptors: np.ndarray          # (M, D)
    ids: np.ndarray                  # (M,) class labels
    views: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.descriptors = np.asarray(self.descriptors, dtype=np.float64)
        self.ids = np.asarray(self.ids)
        if self.descriptors.ndim != 2 or self.descriptors.shape[0] < 1:
            raise ValueError("gallery must hold at least one descriptor")
        if len(self.ids) != self.descriptors.shape[0]:
            raise ValueError("ids and descriptors disagree in length")


@dataclass
class RetrievalReport:
    direction: str
    ranks: list[int]                 # per-query rank of first true match, 1-based
    recall_at: dict[str, float]
    ap_mean: float
    n_queries: int
    n_excluded: int = 0

    def to_text(self) -> str:
        lines = [f"direction: {self.direction}",
                 f"queries: {self.n_queries}  excluded: {self.n_excluded}"]
        width = max(len(k) for k in list(self.recall_at) + ["ap"])
        for key, value in self.recall_at.items():
            lines.append(f"{key:<{width}}  {value:.4f}")
        lines.append(f"{'ap':<{width}}  {self.ap_mean:.4f}")
        return "\n".join(lines) + "\n"

    def to_kv(self) -> str:
        pairs = list(self.recall_at.items()) + [("ap", self.ap_mean)]
        return "".join(f"{k}={v:.6f}\n" for k, v in pairs)

    def save(self, out_dir: str | Path):
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.txt").write_text(self.to_text())
        (out_dir / "report.kv").write_text(self.to_kv())


def euclidean_distances(query: np.ndarray, descriptors: np.ndarray) -> np.ndarray:
    query = np.asarray(query, dtype=np.float64)
    descriptors = np.asarray(descriptors, dtype=np.float64)
    if query.shape[-1] != descriptors.shape[-1]:
        raise ValueError("descriptor dimension mismatch")
    return np.sqrt(((descriptors - query) ** 2).sum(axis=1))


def rank_gallery(query: np.ndarray, index: GalleryIndex) -> np.ndarray:
    """Gallery ids ordered by ascending distance; ties keep original order."""
    order = np.argsort(euclidean_distances(query, index.descriptors), kind="stable")
    return index.ids[order]


def recall_at_k(ranks, k: int) -> float:
    """Fraction of queries whose first true match lands in the top k."""
    if k < 1:
        raise ValueError("k must be >= 1")
    ranks = np.asarray(ranks)
    if ranks.size == 0:
        raise ValueError("no queries")
    return float((ranks <= k).sum() / ranks.size)


def average_precision(flags) -> float:
    """Mean over true matches of precision at each true match's rank."""
    hits = 0
    total = 0.0
    for rank, flag in enumerate(flags, start=1):
        if flag:
            hits += 1
            total += hits / rank
    if hits == 0:
        raise ValueError("no ground truth in gallery")
    return total / hits


def evaluate(query_descriptors, query_ids, gallery: GalleryIndex,
             direction: str = "drone2satellite") -> RetrievalReport:
    """Rank the gallery for every query and aggregate Recall@K and mean AP.

    Queries whose class never appears in the gallery are excluded and counted.
    """
    query_descriptors = np.asarray(query_descriptors, dtype=np.float64)
    query_ids = np.asarray(query_ids)
    if query_descriptors.ndim != 2 or query_descriptors.shape[0] == 0:
        raise ValueError("no queries")

    gallery_size = gallery.descriptors.shape[0]
    ranks: list[int] = []
    aps: list[float] = []
    excluded = 0
    for desc, qid in zip(query_descriptors, query_ids):
        ordered = rank_gallery(desc, gallery)
        flags = ordered == qid
        if not flags.any():
            excluded += 1
            continue
        ranks.append(int(np.argmax(flags)) + 1)
        aps.append(average_precision(flags))
    if not ranks:
        raise ValueError("no ground truth in gallery")

    recall = {f"recall@{k}": recall_at_k(ranks, k) for k in REPORT_KS}
    top1pct = max(1, round(gallery_size / 100))
    recall["recall@top1percent"] = recall_at_k(ranks, top1pct)
    return RetrievalReport(
        direction=direction,
        ranks=ranks,
        recall_at=recall,
        ap_mean=float(sum(aps) / len(aps)),
        n_queries=len(ranks),
        n_excluded=excluded,
    )
