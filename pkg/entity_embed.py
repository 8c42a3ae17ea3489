"""
Entity Embedding

Learns one vector per KB entity from its short description with a triplet
margin loss. For every entity the top tf-idf description words that have a
word vector are positives; each is paired with one sampled word that does not
occur in the description. Word vectors stay frozen; only the entity vectors
(the anchors) are trained:

    loss = sum over triplets of max(0, |f_a - f_p|^2 - |f_a - f_n|^2 + alpha)
"""

import json
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

import autodiff as ad
from kbstore import KnowledgeBase
from logger_setup import logger
from textprep import TfIdfModel, tfidf_scores, tokenize, top_k_words
from vectors import EmbeddingTable, lookup


@dataclass(frozen=True)
class Triplet:
    entity_id: str
    positive_word: str
    negative_word: str


@dataclass
class TripletConfig:
    margin: float = 2.0
    positives_per_entity: int = 10
    negatives_per_entity: int = 10
    epochs: int = 200
    learning_rate: float = 0.05
    resample_negatives: bool = False
    seed: int = 7

    def __post_init__(self):
        if self.margin <= 0:
            raise ValueError(f"embedding.margin must be positive, got {self.margin}")
        if self.positives_per_entity <= 0 or self.negatives_per_entity <= 0:
            raise ValueError("embedding.positives_per_entity and negatives_per_entity must be positive")

    @classmethod
    def from_config(cls, config: dict) -> "TripletConfig":
        section = config.get('embedding', {})
        return cls(
            margin=float(section.get('margin', 2.0)),
            positives_per_entity=int(section.get('positives_per_entity', 10)),
            negatives_per_entity=int(section.get('negatives_per_entity', 10)),
            epochs=int(section.get('epochs', 200)),
            learning_rate=float(section.get('learning_rate', 0.05)),
            resample_negatives=bool(section.get('resample_negatives', False)),
            seed=int(config.get('seed', 7)),
        )


@dataclass
class EmbeddingReport:
    loss_trace: List[float] = field(default_factory=list)
    excluded: List[str] = field(default_factory=list)
    n_triplets: int = 0


class NegativeSampler:
    """Draws words from the word table that are absent from an entity's description."""

    def __init__(self, words: EmbeddingTable, descriptions: Dict[str, Sequence[str]]):
        self.words = words
        self.descriptions = {entity_id: set(tokens) for entity_id, tokens in descriptions.items()}

    def sample(self, entity_id: str, count: int, rng: np.random.Generator) -> List[str]:
        forbidden = self.descriptions.get(entity_id, set())
        vocabulary = self.words.keys
        available = len(vocabulary) - sum(1 for w in forbidden if w in self.words)
        count = min(count, available)
        chosen: List[str] = []
        taken = set()
        while len(chosen) < count:
            word = vocabulary[int(rng.integers(len(vocabulary)))]
            if word in forbidden or word in taken:
                continue
            taken.add(word)
            chosen.append(word)
        return chosen


def build_triplets(kb: KnowledgeBase, words: EmbeddingTable, tfidf: TfIdfModel,
                   cfg: TripletConfig, seed: Optional[int] = None) -> List[Triplet]:
    """
    Up to ``positives_per_entity`` triplets per entity: the top tf-idf
    description words that have a word vector, each paired 1:1 with a sampled
    negative. Entities with empty descriptions get no triplets.
    """
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    descriptions = {entity.id: tokenize(entity.description) for entity in kb.entities}
    sampler = NegativeSampler(words, descriptions)

    triplets: List[Triplet] = []
    empty = 0
    for entity in kb.entities:
        tokens = descriptions[entity.id]
        if not tokens:
            empty += 1
            logger.debug(f"Entity {entity.id!r} has an empty description; no triplets")
            continue
        scored = [(w, s) for w, s in tfidf_scores(tokens, tfidf) if w in words]
        positives = top_k_words(scored, cfg.positives_per_entity)
        count = min(len(positives), cfg.negatives_per_entity)
        negatives = sampler.sample(entity.id, count, rng)
        triplets.extend(Triplet(entity.id, p, n) for p, n in zip(positives, negatives))

    if empty:
        logger.warning(f"{empty} entities have empty descriptions and produced no triplets")
    logger.info(f"Built {len(triplets)} triplets for {len(kb) - empty} entities")
    return triplets


def batch_triplet_loss(anchor, positives, negatives, alpha: float) -> ad.Tensor:
    """Summed hinge over the rows of ``positives``/``negatives`` against one anchor."""
    pos = ad.sum_squares(ad.sub(anchor, positives), axis=1)
    neg = ad.sum_squares(ad.sub(anchor, negatives), axis=1)
    return ad.total(ad.relu(ad.add(ad.sub(pos, neg), alpha)))


def triplet_loss(f_a, f_p, f_n, alpha: float) -> float:
    """max(0, |f_a - f_p|^2 - |f_a - f_n|^2 + alpha)."""
    f_p = np.asarray(f_p, dtype=np.float64)[None, :]
    f_n = np.asarray(f_n, dtype=np.float64)[None, :]
    return batch_triplet_loss(np.asarray(f_a, dtype=np.float64), f_p, f_n, alpha).item()


def _group(triplets: Iterable[Triplet]) -> Dict[str, List[Triplet]]:
    grouped: Dict[str, List[Triplet]] = {}
    for t in triplets:
        grouped.setdefault(t.entity_id, []).append(t)
    return grouped


def train_entity_embeddings(triplets: Sequence[Triplet], words: EmbeddingTable, cfg: TripletConfig,
                            entity_ids: Optional[Sequence[str]] = None,
                            sampler: Optional[NegativeSampler] = None) -> Tuple[EmbeddingTable, EmbeddingReport]:
    """
    Gradient descent on the summed triplet loss, one step per entity batch.

    Anchors start at the mean of their positive word vectors. Entities from
    ``entity_ids`` without triplets are left out of the table and listed in
    the report. With ``cfg.resample_negatives`` and a sampler, negatives are
    re-drawn every epoch.
    """
    rng = np.random.default_rng(cfg.seed)
    grouped = _group(triplets)
    report = EmbeddingReport(n_triplets=len(triplets))
    if entity_ids is not None:
        report.excluded = [eid for eid in entity_ids if eid not in grouped]
        if report.excluded:
            logger.warning(f"{len(report.excluded)} entities have no triplets and get no vector")

    order = list(grouped)
    positives = {eid: np.vstack([lookup(words, t.positive_word) for t in ts]) for eid, ts in grouped.items()}
    negatives = {eid: np.vstack([lookup(words, t.negative_word) for t in ts]) for eid, ts in grouped.items()}
    anchors = {eid: ad.Param(f"entity.{eid}", positives[eid].mean(axis=0)) for eid in order}

    for epoch in tqdm(range(cfg.epochs), desc="entity embeddings", disable=None):
        if cfg.resample_negatives and sampler is not None and epoch > 0:
            for eid in order:
                drawn = sampler.sample(eid, len(grouped[eid]), rng)
                if len(drawn) == len(grouped[eid]):
                    negatives[eid] = np.vstack([lookup(words, w) for w in drawn])
        epoch_loss = 0.0
        for position in rng.permutation(len(order)):
            eid = order[position]
            anchor = anchors[eid]
            loss = batch_triplet_loss(anchor, positives[eid], negatives[eid], cfg.margin)
            epoch_loss += loss.item()
            loss.backward()
            ad.sgd_step([anchor], cfg.learning_rate)
        report.loss_trace.append(epoch_loss / max(len(triplets), 1))

    table = EmbeddingTable(dim=words.dim)
    for eid in order:
        table.insert(eid, anchors[eid].value)
    if report.loss_trace:
        logger.info(f"Trained {len(table)} entity vectors; final mean triplet loss {report.loss_trace[-1]:.4f}")
    return table, report


def write_loss_trace(path, loss_trace: Sequence[float], config: Optional[dict] = None,
                     excluded: Optional[Sequence[str]] = None) -> None:
    """
    Delimited (epoch, mean_loss) report with a config echo header. Entities
    left without a vector are listed on an "# excluded" header line.
    """
    with open(path, 'w', encoding='utf-8') as f:
        if config is not None:
            f.write(f"# config {json.dumps(config, sort_keys=True, default=str)}\n")
        if excluded:
            f.write(f"# excluded {','.join(excluded)}\n")
        f.write("epoch\tmean_loss\n")
        for epoch, value in enumerate(loss_trace, start=1):
            f.write(f"{epoch}\t{value!r}\n")