"""
Evaluation

Classification metrics use scaled confusion fractions, so that positives
and negatives weigh the same whatever their counts:

    TP = count(pred=1, truth=1) / (2 * count(truth=1))
    FN = count(pred=0, truth=1) / (2 * count(truth=1))
    TN = count(pred=0, truth=0) / (2 * count(truth=0))
    FP = count(pred=1, truth=0) / (2 * count(truth=0))

Precision, recall and F1 follow from these; accuracy is TP + TN.
Ranking quality is P@K: the fraction of mentions whose gold entity appears
among the top K ranked candidates.
"""

import csv
import json
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, NamedTuple, Optional, Sequence, Set, Tuple

from kbstore import KnowledgeBase, get_entity
from logger_setup import logger
from textprep import DegenerateInputError, normalize_name

PREDICTION_COLUMNS = ['mention_id', 'entity_id', 'method', 'score', 'predicted', 'rank', 'd_syx', 'd_smc', 'd_w']
ROUND = 4


class ConfusionError(ValueError):
    """Truth labels hold only one class."""


class ScaledConfusion(NamedTuple):
    tp: float
    tn: float
    fp: float
    fn: float


class PRF(NamedTuple):
    precision: float
    recall: float
    f1: float
    accuracy: float


def scaled_confusion(predictions: Iterable[Tuple[int, int]]) -> ScaledConfusion:
    """
    Scaled fractions from (predicted, truth) pairs.

    Raises:
        ConfusionError: If truth holds a single class.
    """
    counts = {(1, 1): 0, (0, 1): 0, (0, 0): 0, (1, 0): 0}
    for predicted, truth in predictions:
        counts[(int(predicted), int(truth))] += 1
    positives = counts[(1, 1)] + counts[(0, 1)]
    negatives = counts[(0, 0)] + counts[(1, 0)]
    if positives == 0 or negatives == 0:
        raise ConfusionError(f"Need both classes in truth, got {positives} positive and {negatives} negative")
    return ScaledConfusion(
        tp=counts[(1, 1)] / (2 * positives),
        tn=counts[(0, 0)] / (2 * negatives),
        fp=counts[(1, 0)] / (2 * negatives),
        fn=counts[(0, 1)] / (2 * positives),
    )


def prf_metrics(c: ScaledConfusion) -> PRF:
    """Zero denominators give 0."""
    precision = c.tp / (c.tp + c.fp) if c.tp + c.fp else 0.0
    recall = c.tp / (c.tp + c.fn) if c.tp + c.fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return PRF(precision, recall, f1, c.tp + c.tn)


def precision_at_k(ranked: Mapping[str, Sequence[str]], gold: Mapping[str, str], k: int,
                   allow_empty: bool = False) -> float:
    """
    Fraction of gold mentions whose gold entity is within the top ``k`` of
    their ranking.

    With ``allow_empty`` a mention without a ranking (nothing survived
    blocking) counts as a miss; otherwise it is an error.
    """
    if k <= 0:
        raise ValueError(f"K must be positive, got {k}")
    if not gold:
        return 0.0
    hits = 0
    for mention_id, gold_id in gold.items():
        ranking = ranked.get(mention_id)
        if not ranking:
            if not allow_empty:
                raise ValueError(f"Mention {mention_id!r} has no ranked candidates")
            continue
        if gold_id in list(ranking)[:k]:
            hits += 1
    return hits / len(gold)


def evaluate_predictions(predicted: Mapping[Tuple[str, str], int],
                         truth: Iterable[Tuple[str, str, int]]) -> ScaledConfusion:
    """
    Confusion over labeled (mention_id, entity_id, label) triples. Pairs the
    method never scored count as predicted 0.
    """
    return scaled_confusion((predicted.get((mention_id, entity_id), 0), label)
                            for mention_id, entity_id, label in truth)


def ambiguous_mention_ids(gold: Mapping[str, str], kb: KnowledgeBase) -> Set[str]:
    """Mentions whose gold entity shares its normalized name with another entity."""
    ambiguous = set()
    for mention_id, entity_id in gold.items():
        entity = get_entity(kb, entity_id)
        if entity is None:
            continue
        try:
            joined = normalize_name(entity.name).joined
        except DegenerateInputError:
            continue
        if len(kb.by_normalized_name(joined)) > 1:
            ambiguous.add(mention_id)
    return ambiguous


@dataclass
class PredictionRecord:
    mention_id: str
    entity_id: str
    method: str
    score: float
    predicted: int
    rank: int
    d_syx: Optional[float] = None
    d_smc: Optional[float] = None
    d_w: Optional[float] = None


def _cell(value) -> str:
    if value is None:
        return ''
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_predictions(records: Iterable[PredictionRecord], path) -> None:
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, delimiter='\t', lineterminator='\n')
        writer.writerow(PREDICTION_COLUMNS)
        for r in records:
            writer.writerow([_cell(getattr(r, column)) for column in PREDICTION_COLUMNS])


def read_predictions(path) -> List[PredictionRecord]:
    def optional(text):
        return float(text) if text else None

    records = []
    with open(path, 'r', encoding='utf-8', newline='') as f:
        reader = csv.DictReader(f, delimiter='\t')
        missing = set(PREDICTION_COLUMNS[:6]) - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            records.append(PredictionRecord(
                mention_id=row['mention_id'], entity_id=row['entity_id'], method=row['method'],
                score=float(row['score']), predicted=int(row['predicted']), rank=int(row['rank']),
                d_syx=optional(row.get('d_syx')), d_smc=optional(row.get('d_smc')), d_w=optional(row.get('d_w')),
            ))
    return records


def rankings_from_predictions(records: Iterable[PredictionRecord]) -> Dict[str, List[str]]:
    by_mention: Dict[str, List[Tuple[int, str]]] = {}
    for r in records:
        by_mention.setdefault(r.mention_id, []).append((r.rank, r.entity_id))
    return {mention_id: [entity_id for _, entity_id in sorted(rows)] for mention_id, rows in by_mention.items()}


@dataclass
class MetricsReport:
    method: str
    confusion: Optional[ScaledConfusion]
    prf: Optional[PRF]
    p_at_k: Dict[int, float]
    p_at_k_ambiguous: Dict[int, float]
    n_pairs: int
    n_mentions: int
    n_ambiguous: int


def build_report(method: str, records: Sequence[PredictionRecord],
                 truth: Sequence[Tuple[str, str, int]], gold: Mapping[str, str],
                 k_values: Sequence[int], kb: Optional[KnowledgeBase] = None) -> MetricsReport:
    """
    Classification metrics over ``truth`` pairs (skipped with a warning when
    truth holds one class) and P@K over ``gold``, on every mention and on
    the ambiguous-name subset when ``kb`` is given.
    """
    predicted = {(r.mention_id, r.entity_id): r.predicted for r in records}
    confusion = prf = None
    if truth:
        try:
            confusion = evaluate_predictions(predicted, truth)
            prf = prf_metrics(confusion)
        except ConfusionError as e:
            logger.warning(f"No classification metrics for {method}: {e}")

    rankings = rankings_from_predictions(records)
    p_at_k = {k: precision_at_k(rankings, gold, k, allow_empty=True) for k in k_values}
    ambiguous_gold: Dict[str, str] = {}
    if kb is not None:
        ambiguous = ambiguous_mention_ids(gold, kb)
        ambiguous_gold = {m: e for m, e in gold.items() if m in ambiguous}
    p_at_k_ambiguous = {k: precision_at_k(rankings, ambiguous_gold, k, allow_empty=True)
                        for k in k_values} if ambiguous_gold else {}
    return MetricsReport(method=method, confusion=confusion, prf=prf, p_at_k=p_at_k,
                         p_at_k_ambiguous=p_at_k_ambiguous, n_pairs=len(truth),
                         n_mentions=len(gold), n_ambiguous=len(ambiguous_gold))


def write_metrics_report(reports: Sequence[MetricsReport], path, config: Optional[Mapping] = None) -> None:
    """
    One table row per method (TP, TN, FP, FN, precision, recall, F1,
    accuracy), then a P@K block, values rounded to 4 decimals.
    """
    with open(path, 'w', encoding='utf-8', newline='') as f:
        if config is not None:
            f.write(f"# config {json.dumps(config, sort_keys=True, default=str)}\n")
        writer = csv.writer(f, delimiter='\t', lineterminator='\n')
        writer.writerow(['method', 'tp', 'tn', 'fp', 'fn', 'precision', 'recall', 'f1', 'accuracy', 'pairs'])
        for report in reports:
            if report.confusion is None:
                writer.writerow([report.method] + [''] * 8 + [report.n_pairs])
                continue
            values = list(report.confusion) + list(report.prf)
            writer.writerow([report.method] + [round(v, ROUND) for v in values] + [report.n_pairs])

        f.write('\n')
        k_values = sorted({k for report in reports for k in report.p_at_k})
        writer.writerow(['method', 'subset', 'mentions'] + [f"p@{k}" for k in k_values])
        for report in reports:
            writer.writerow([report.method, 'all', report.n_mentions]
                            + [round(report.p_at_k.get(k, 0.0), ROUND) for k in k_values])
            if report.p_at_k_ambiguous:
                writer.writerow([report.method, 'ambiguous', report.n_ambiguous]
                                + [round(report.p_at_k_ambiguous.get(k, 0.0), ROUND) for k in k_values])
    logger.info(f"Wrote metrics for {len(reports)} methods to {path}")
