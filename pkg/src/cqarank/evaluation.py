"""Reranking evaluation: mean average precision and mean reciprocal rank over
per-query candidate lists, plus the score/search-rank interpolation used at
prediction time.

Candidates are grouped into queries, sorted by model score (ties broken by
original search rank, then id), and queries without any relevant candidate are
skipped.  MAP and MRR are reported as percentages in [0, 100]; the per-query
average precisions they summarize are kept as fractions in [0, 1].
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass
from typing import Optional, Sequence

from .dataset import Triple, binarize

GroupedRow = tuple[str, str, float, int, int]  # group_key, doc_id, score, google_rank, relevance


def average_precision(relevances: Sequence[int]) -> float:
    """AP of one ranked list of 0/1 relevance judgements."""
    total = sum(relevances)
    if total == 0:
        raise ValueError("average_precision: no relevant items in ranking")
    hits = 0
    acc = 0.0
    for i, rel in enumerate(relevances, start=1):
        if rel:
            hits += 1
            acc += hits / i
    return acc / total


def reciprocal_rank(relevances: Sequence[int]) -> float:
    """1/rank of the first relevant item in one ranked list."""
    for i, rel in enumerate(relevances, start=1):
        if rel:
            return 1.0 / i
    raise ValueError("reciprocal_rank: no relevant items in ranking")


@dataclass(frozen=True)
class EvalResult:
    """MAP and MRR as percentages, with the per-query APs behind the mean."""

    map: float
    mrr: float
    per_query_ap: tuple[float, ...]
    query_count: int
    skipped: int


def rank_rows(rows: Sequence[GroupedRow]) -> dict[str, list[GroupedRow]]:
    """Group rows by query key and sort each group by descending score,
    breaking ties by search rank then id."""
    groups: dict[str, list[GroupedRow]] = {}
    for row in rows:
        groups.setdefault(row[0], []).append(row)
    for key in groups:
        groups[key].sort(key=lambda r: (-r[2], r[3], r[1]))
    return groups


def evaluate_scores(rows: Sequence[GroupedRow]) -> EvalResult:
    """MAP and MRR (percentages) over grouped candidate rows; groups with no
    relevant candidate are skipped (not averaged as zero)."""
    groups = rank_rows(rows)
    aps: list[float] = []
    rr_sum = 0.0
    skipped = 0
    for key in sorted(groups):
        ranked = [r[4] for r in groups[key]]
        if sum(ranked) == 0:
            skipped += 1
            continue
        aps.append(average_precision(ranked))
        rr_sum += reciprocal_rank(ranked)
    if not aps:
        raise ValueError("evaluate_scores: every group lacks relevant candidates")
    scored = len(aps)
    return EvalResult(
        map=100.0 * sum(aps) / scored,
        mrr=100.0 * rr_sum / scored,
        per_query_ap=tuple(aps),
        query_count=scored,
        skipped=skipped,
    )


def task_group_key(triple: Triple, task: str) -> str:
    """Query identity for ranking: comments rank within their thread (task A),
    threads rank within the new question's result list (tasks B and C)."""
    if task == "A":
        return triple.q_rel_key
    if task in ("B", "C"):
        return triple.group
    raise ValueError(f"unknown task {task!r}")


def task_relevance(triple: Triple, task: str) -> int:
    labels = binarize(triple)
    return {"A": labels.yA, "B": labels.yB, "C": labels.yC}[task]


def score_triples(model, triples: Sequence[Triple]) -> dict[str, list[float]]:
    """Forward every triple through the model in inference mode; returns one
    score list per task the model produces, aligned with ``triples``."""
    scores: dict[str, list[float]] = {t: [] for t in model.tasks}
    for triple in triples:
        preds = model.predict(model.featurize(triple), training=False)
        for task, tensor in preds.items():
            scores[task].append(float(tensor.data[0]))
    return scores


def build_rows(
    triples: Sequence[Triple], scores: Sequence[float], task: str
) -> list[GroupedRow]:
    if len(scores) != len(triples):
        raise ValueError("build_rows: scores and triples differ in length")
    return [
        (task_group_key(t, task), t.id, s, t.google_rank, task_relevance(t, task))
        for t, s in zip(triples, scores)
    ]


def evaluate(model, triples: Sequence[Triple], task: str) -> EvalResult:
    """Rerank the dev/test triples with the model and measure MAP/MRR for one
    task."""
    if not triples:
        raise ValueError("evaluate: no triples to evaluate")
    scores = score_triples(model, triples)
    if task not in scores:
        raise ValueError(f"model does not score task {task!r}")
    return evaluate_scores(build_rows(triples, scores[task], task))


def evaluate_tasks(
    model, triples: Sequence[Triple], tasks: Optional[Sequence[str]] = None
) -> dict[str, EvalResult]:
    """``evaluate`` over several tasks, scoring each triple only once."""
    if not triples:
        raise ValueError("evaluate_tasks: no triples to evaluate")
    scores = score_triples(model, triples)
    wanted = tuple(tasks) if tasks is not None else tuple(model.tasks)
    results = {}
    for task in wanted:
        if task not in scores:
            raise ValueError(f"model does not score task {task!r}")
        results[task] = evaluate_scores(build_rows(triples, scores[task], task))
    return results


def weighted_combine(score: float, google_rank: int, alpha: float) -> float:
    """Interpolate the model score with the reciprocal search-engine rank."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    return alpha * score + (1.0 - alpha) * (1.0 / google_rank)


def tune_alpha(
    model,
    triples: Sequence[Triple],
    task: str,
    scores: Optional[Sequence[float]] = None,
) -> tuple[float, float]:
    """Grid-search alpha over 0.00..1.00 in steps of 0.01, maximizing MAP of
    the combined score on the given triples; ties go to the smallest alpha.

    ``scores`` may carry precomputed model scores for the task (aligned with
    ``triples``) to avoid re-running the forward pass.
    """
    if scores is None:
        scores = score_triples(model, triples)[task]
    best_alpha = 0.0
    best_map = -1.0
    for step in range(101):
        alpha = step / 100.0
        combined = [weighted_combine(s, t.google_rank, alpha) for s, t in zip(scores, triples)]
        result = evaluate_scores(build_rows(triples, combined, task))
        if result.map > best_map:
            best_alpha, best_map = alpha, result.map
    return best_alpha, best_map


def write_predictions(path: str, triples: Sequence[Triple], scores: Sequence[float], task: str) -> None:
    """Write one TSV row per candidate: query key, candidate id, final rank
    within the query, score, and gold 0/1 relevance.  Atomic (temp file +
    rename)."""
    groups = rank_rows(build_rows(triples, scores, task))
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".preds-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write("group_key\tdoc_id\tfinal_rank\tscore\ttrue_label\n")
            for key in sorted(groups):
                for rank, row in enumerate(groups[key], start=1):
                    fh.write(f"{row[0]}\t{row[1]}\t{rank}\t{row[2]:.6f}\t{row[4]}\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
