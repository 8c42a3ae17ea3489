"""
Weak Labeling and Synthetic Corpora

Turns pre-extracted mentions into labeled (mention, entity) pairs without a
hand-labeled gold set, using bigram cosine between the mention surface and
each entity name:

    sim <  0.5          -> labeled 0
    0.5 <= sim <= 0.75  -> discarded
    0.75 < sim < 1.0    -> review queue (no label until a reviewer decides)
    sim == 1.0          -> labeled 1, or review queue when the normalized
                           name is carried by several entities

The review queue is a file a human labels; apply_review_labels folds the
decisions back in. On synthetic corpora resolve_queue_from_gold plays the
reviewer.

The synthetic generator builds a KB with industry-specific descriptions, a
controlled share of names carried by two entities in different industries,
mentions whose context words come from the gold entity's industry, and word
vectors clustered by industry.
"""

import csv
import json
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from baselines import ngram_cosine
from blocking import OverlapBlocker
from kbstore import Entity, KnowledgeBase, build_kb, get_entity
from linker import MentionContext, build_context
from logger_setup import logger
from textprep import DegenerateInputError, TfIdfModel, normalize_name
from vectors import EmbeddingTable

AUTO_NEGATIVE = 'auto-negative'
AUTO_POSITIVE = 'auto-positive'
REVIEW_QUEUE = 'review-queue'
DISCARDED = 'discarded'
REVIEWED = 'reviewed'
SYNTHETIC = 'synthetic'

PAIR_COLUMNS = ['mention_id', 'surface', 'left_context', 'right_context', 'entity_id', 'label', 'provenance']
QUEUE_COLUMNS = ['mention_id', 'surface', 'left_context', 'right_context', 'entity_id', 'similarity', 'collision']


@dataclass(frozen=True)
class LabeledPair:
    mention: MentionContext
    entity_id: str
    label: Optional[int]
    provenance: str
    similarity: Optional[float] = None
    collision: bool = False

    def __post_init__(self):
        if self.provenance == REVIEW_QUEUE and self.label is not None:
            raise ValueError("Review-queue pairs carry no label")
        if self.provenance != REVIEW_QUEUE and self.label not in (0, 1):
            raise ValueError(f"Pair label must be 0 or 1, got {self.label!r}")

    @property
    def key(self) -> Tuple[str, str]:
        return self.mention.mention_id, self.entity_id


@dataclass
class WeakLabelConfig:
    negative_below: float = 0.5
    review_above: float = 0.75

    def __post_init__(self):
        if not 0.0 <= self.negative_below <= self.review_above < 1.0:
            raise ValueError("weaklabel thresholds must satisfy 0 <= negative_below <= review_above < 1")

    @classmethod
    def from_config(cls, config: dict) -> "WeakLabelConfig":
        section = config.get('weaklabel', {})
        return cls(
            negative_below=float(section.get('negative_below', 0.5)),
            review_above=float(section.get('review_above', 0.75)),
        )


@dataclass
class WeakLabelResult:
    labeled: List[LabeledPair] = field(default_factory=list)
    review_queue: List[LabeledPair] = field(default_factory=list)
    discarded: int = 0

    @property
    def total(self) -> int:
        return len(self.labeled) + len(self.review_queue) + self.discarded


def _joined_or_none(name: str) -> Optional[str]:
    try:
        return normalize_name(name).joined
    except DegenerateInputError:
        return None


def weak_label_pairs(mentions: Sequence[MentionContext], kb: KnowledgeBase,
                     tfidf: Optional[TfIdfModel] = None,
                     cfg: Optional[WeakLabelConfig] = None) -> WeakLabelResult:
    """
    Label every (mention, entity) combination by bigram cosine. Each pair
    lands in exactly one bucket: labeled, review queue or discarded.
    """
    cfg = cfg or WeakLabelConfig()
    result = WeakLabelResult()
    collisions = 0
    for mention in tqdm(mentions, desc="weak labeling", disable=None):
        for entity in kb.entities:
            sim = ngram_cosine(mention.surface, entity.name, 2, tfidf)
            if sim < cfg.negative_below:
                result.labeled.append(LabeledPair(mention, entity.id, 0, AUTO_NEGATIVE, sim))
            elif sim >= 1.0:
                joined = _joined_or_none(entity.name)
                if joined is not None and len(kb.by_normalized_name(joined)) > 1:
                    collisions += 1
                    result.review_queue.append(LabeledPair(mention, entity.id, None, REVIEW_QUEUE, sim, True))
                else:
                    result.labeled.append(LabeledPair(mention, entity.id, 1, AUTO_POSITIVE, sim))
            elif sim > cfg.review_above:
                result.review_queue.append(LabeledPair(mention, entity.id, None, REVIEW_QUEUE, sim))
            else:
                result.discarded += 1

    positives = sum(1 for pair in result.labeled if pair.label == 1)
    logger.info(f"Weak labeling: {positives} positive, {len(result.labeled) - positives} negative, "
                f"{len(result.review_queue)} queued for review ({collisions} name collisions), "
                f"{result.discarded} discarded")
    return result


def apply_review_labels(queue: Sequence[LabeledPair],
                        labels: Mapping[Tuple[str, str], int]) -> Tuple[List[LabeledPair], List[LabeledPair]]:
    """
    Fold reviewer decisions keyed by (mention_id, entity_id) into the queue.
    Returns (reviewed pairs, pairs still awaiting a decision).
    """
    reviewed, pending = [], []
    for pair in queue:
        label = labels.get(pair.key)
        if label is None:
            pending.append(pair)
            continue
        reviewed.append(LabeledPair(pair.mention, pair.entity_id, int(label), REVIEWED,
                                    pair.similarity, pair.collision))
    if pending:
        logger.warning(f"{len(pending)} review-queue pairs have no decision and stay unlabeled")
    return reviewed, pending


def resolve_queue_from_gold(queue: Sequence[LabeledPair], gold: Mapping[str, str]) -> Dict[Tuple[str, str], int]:
    """Reviewer stand-in: a queued pair is a link iff it matches the gold entity."""
    labels = {}
    for pair in queue:
        gold_id = gold.get(pair.mention.mention_id)
        if gold_id is not None:
            labels[pair.key] = int(gold_id == pair.entity_id)
    return labels


def balance_dataset(pairs: Sequence[LabeledPair], seed: int) -> List[LabeledPair]:
    """
    Keep every positive and a random sample of as many negatives, in the
    original order.
    """
    positives = [i for i, pair in enumerate(pairs) if pair.label == 1]
    negatives = [i for i, pair in enumerate(pairs) if pair.label == 0]
    if not positives:
        logger.warning("No positive pairs; balancing keeps no negatives")
        return []
    if len(negatives) <= len(positives):
        return [pair for pair in pairs if pair.label is not None]
    rng = np.random.default_rng(seed)
    kept = set(rng.choice(negatives, size=len(positives), replace=False).tolist())
    kept.update(positives)
    logger.info(f"Balanced to {len(positives)} positive and {len(positives)} negative pairs")
    return [pair for i, pair in enumerate(pairs) if i in kept]


def split_dataset(pairs: Sequence[LabeledPair], seed: int,
                  fractions: Tuple[float, float] = (0.8, 0.1)) -> Tuple[List[LabeledPair], List[LabeledPair], List[LabeledPair]]:
    """
    80/10/10 train/valid/test split over mentions: all pairs of a mention
    land in the same split. Mentions are shuffled with ``seed`` and assigned
    by the running pair count.
    """
    groups: Dict[str, List[LabeledPair]] = {}
    for pair in pairs:
        groups.setdefault(pair.mention.mention_id, []).append(pair)
    mention_ids = list(groups)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(mention_ids))

    total = len(pairs)
    train_cut = fractions[0] * total
    valid_cut = (fractions[0] + fractions[1]) * total
    train, valid, test = [], [], []
    assigned = 0
    for position in order:
        group = groups[mention_ids[position]]
        if assigned < train_cut:
            train.extend(group)
        elif assigned < valid_cut:
            valid.extend(group)
        else:
            test.extend(group)
        assigned += len(group)
    logger.info(f"Split {total} pairs into {len(train)} train, {len(valid)} valid, {len(test)} test")
    return train, valid, test


# ---------------------------------------------------------------------------
# Synthetic corpus
# ---------------------------------------------------------------------------

_CONSONANTS = "bcdfgklmnprstvz"
_VOWELS = "aeiou"
_LEGAL_SUFFIXES = ("Inc", "LLC", "Corp", "Ltd")
_INDUSTRY_NAMES = ("software", "energy", "retail", "pharma", "banking",
                   "mining", "media", "logistics", "telecom", "agriculture")


@dataclass
class SyntheticSpec:
    entities: int = 200
    industries: int = 5
    ambiguity: float = 0.2
    pairs: int = 2000
    negatives_per_mention: int = 3
    description_length: int = 30
    context_min: int = 20
    context_max: int = 40
    dim: int = 50
    industry_vocabulary: int = 40
    filler_vocabulary: int = 60
    context_window: int = 10
    seed: int = 7

    def __post_init__(self):
        if self.industries < 2:
            raise ValueError(f"synthetic.industries must be at least 2, got {self.industries}")
        if not 0.0 <= self.ambiguity <= 0.5:
            raise ValueError(f"synthetic.ambiguity must lie in [0, 0.5], got {self.ambiguity}")
        if self.entities < 2:
            raise ValueError(f"synthetic.entities must be at least 2, got {self.entities}")
        if self.context_min < 0 or self.context_max < self.context_min:
            raise ValueError("synthetic.context_min/context_max must satisfy 0 <= min <= max")
        if self.negatives_per_mention < 0 or self.pairs <= 0:
            raise ValueError("synthetic.pairs must be positive and negatives_per_mention non-negative")

    @property
    def mentions(self) -> int:
        return max(1, round(self.pairs / (1 + self.negatives_per_mention)))

    @classmethod
    def from_config(cls, config: dict) -> "SyntheticSpec":
        section = config.get('synthetic', {})
        return cls(
            entities=int(section.get('entities', 200)),
            industries=int(section.get('industries', 5)),
            ambiguity=float(section.get('ambiguity', 0.2)),
            pairs=int(section.get('pairs', 2000)),
            negatives_per_mention=int(section.get('negatives_per_mention', 3)),
            description_length=int(section.get('description_length', 30)),
            context_min=int(section.get('context_min', 20)),
            context_max=int(section.get('context_max', 40)),
            dim=int(section.get('dim', 50)),
            industry_vocabulary=int(section.get('industry_vocabulary', 40)),
            filler_vocabulary=int(section.get('filler_vocabulary', 60)),
            context_window=int(config.get('linker', {}).get('context_window', 10)),
            seed=int(config.get('seed', 7)),
        )


@dataclass
class SyntheticCorpus:
    kb: KnowledgeBase
    mentions: List[MentionContext]
    gold: Dict[str, str]
    industry_words: Dict[str, List[str]]
    filler_words: List[str]


def _pseudo_word(rng: np.random.Generator, syllables: int) -> str:
    return ''.join(_CONSONANTS[rng.integers(len(_CONSONANTS))] + _VOWELS[rng.integers(len(_VOWELS))]
                   for _ in range(syllables))


def _fresh_words(rng: np.random.Generator, count: int, taken: set, min_syllables: int, max_syllables: int) -> List[str]:
    words = []
    while len(words) < count:
        word = _pseudo_word(rng, int(rng.integers(min_syllables, max_syllables + 1)))
        if word in taken:
            continue
        taken.add(word)
        words.append(word)
    return words


def _industry_labels(count: int) -> List[str]:
    if count <= len(_INDUSTRY_NAMES):
        return list(_INDUSTRY_NAMES[:count])
    return [f"industry{i}" for i in range(count)]


def _mix(rng: np.random.Generator, length: int, topical: Sequence[str], filler: Sequence[str],
         topical_share: float) -> List[str]:
    return [topical[rng.integers(len(topical))] if rng.random() < topical_share
            else filler[rng.integers(len(filler))]
            for _ in range(length)]


def _surface_variant(rng: np.random.Generator, name: str, base: str) -> str:
    """A spelling of ``name`` that normalizes to the same joined form."""
    variants = (name, base, base.upper(), f"{base} Corp.")
    return variants[rng.integers(len(variants))]


def generate_synthetic_corpus(spec: SyntheticSpec) -> SyntheticCorpus:
    """
    Deterministic KB + mentions + gold links. ``round(ambiguity * entities)``
    names are each carried by two entities of different industries.
    """
    rng = np.random.default_rng(spec.seed)
    industries = _industry_labels(spec.industries)
    taken: set = set()
    industry_words = {ind: _fresh_words(rng, spec.industry_vocabulary, taken, 2, 3) for ind in industries}
    filler_words = _fresh_words(rng, spec.filler_vocabulary, taken, 1, 2)

    shared = int(round(spec.ambiguity * spec.entities))
    base_names = [w.capitalize() for w in _fresh_words(rng, spec.entities - shared, taken, 2, 3)]

    records: List[Tuple[str, str, str]] = []
    for position, base in enumerate(base_names):
        name = base
        if rng.random() < 0.3:
            name = f"{base} {_LEGAL_SUFFIXES[rng.integers(len(_LEGAL_SUFFIXES))]}"
        if position < shared:
            first = int(rng.integers(len(industries)))
            second = (first + 1 + int(rng.integers(len(industries) - 1))) % len(industries)
            records.append((name, base, industries[first]))
            records.append((name, base, industries[second]))
        else:
            records.append((name, base, industries[position % len(industries)]))

    entities = []
    bases: Dict[str, str] = {}
    for number, (name, base, industry) in enumerate(records, start=1):
        entity_id = f"E{number:04d}"
        description = _mix(rng, spec.description_length, industry_words[industry], filler_words, 0.5)
        entities.append(Entity(id=entity_id, name=name, description=' '.join(description), industry=industry))
        bases[entity_id] = base
    kb = build_kb(entities)

    mentions, gold = [], {}
    for number in range(1, spec.mentions + 1):
        entity = entities[(number - 1) % len(entities)]
        mention_id = f"M{number:05d}"
        surface = _surface_variant(rng, entity.name, bases[entity.id])
        length = int(rng.integers(spec.context_min, spec.context_max + 1))
        words = _mix(rng, length, industry_words[entity.industry], filler_words, 0.4)
        split = int(rng.integers(0, length + 1))
        mentions.append(build_context(mention_id, surface, ' '.join(words[:split]), ' '.join(words[split:]),
                                      spec.context_window))
        gold[mention_id] = entity.id

    logger.info(f"Synthetic corpus: {len(kb)} entities over {len(industries)} industries, "
                f"{shared} shared names, {len(mentions)} mentions")
    return SyntheticCorpus(kb=kb, mentions=mentions, gold=gold,
                           industry_words=industry_words, filler_words=filler_words)


def synthesize_word_vectors(industry_words: Mapping[str, Sequence[str]], filler_words: Sequence[str],
                            dim: int, seed: int) -> EmbeddingTable:
    """
    Stand-in for pretrained word vectors: each industry gets a random unit-scale
    centroid and its words scatter tightly around it; filler words are
    independent draws at the same scale.
    """
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(dim)
    table = EmbeddingTable(dim=dim)
    for industry in sorted(industry_words):
        centroid = rng.normal(0.0, scale, dim)
        for word in industry_words[industry]:
            table.insert(word, centroid + rng.normal(0.0, 0.3 * scale, dim))
    for word in filler_words:
        table.insert(word, rng.normal(0.0, scale, dim))
    return table


def synthetic_pairs(mentions: Sequence[MentionContext], gold: Mapping[str, str], kb: KnowledgeBase,
                    negatives_per_mention: int, seed: int,
                    blocker: Optional[OverlapBlocker] = None) -> List[LabeledPair]:
    """
    One positive per mention plus up to ``negatives_per_mention`` hard
    negatives: the gold entity's name twins first, then other blocked
    candidates, then random entities.
    """
    rng = np.random.default_rng(seed)
    blocker = blocker or OverlapBlocker(kb)
    ids = kb.ids
    pairs = []
    for mention in mentions:
        gold_id = gold[mention.mention_id]
        pairs.append(LabeledPair(mention, gold_id, 1, SYNTHETIC))

        chosen: List[str] = []
        joined = _joined_or_none(get_entity(kb, gold_id).name)
        twins = kb.by_normalized_name(joined) if joined is not None else []
        blocked = [entity.id for entity in blocker.candidates(mention.surface)]
        for entity_id in twins + blocked:
            if len(chosen) >= negatives_per_mention:
                break
            if entity_id != gold_id and entity_id not in chosen:
                chosen.append(entity_id)
        available = len(ids) - 1 - len(chosen)
        while len(chosen) < negatives_per_mention and available > 0:
            entity_id = ids[rng.integers(len(ids))]
            if entity_id != gold_id and entity_id not in chosen:
                chosen.append(entity_id)
                available -= 1
        pairs.extend(LabeledPair(mention, entity_id, 0, SYNTHETIC) for entity_id in chosen)
    logger.info(f"Built {len(pairs)} synthetic pairs for {len(mentions)} mentions")
    return pairs


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------

def write_mentions(mentions: Iterable[MentionContext], path) -> None:
    with open(path, 'w', encoding='utf-8') as f:
        for mention in mentions:
            record = {'id': mention.mention_id, 'surface': mention.surface,
                      'left': list(mention.left_tokens), 'right': list(mention.right_tokens)}
            f.write(json.dumps(record, ensure_ascii=False) + '\n')


def read_mentions(path, window: int = 10) -> List[MentionContext]:
    """
    Read mentions as JSON lines: {"id", "surface", "left", "right"} with
    token lists, or {"id", "surface", "before", "after"} with raw text, cut
    to ``window`` words per side unless the record carries its own "window".
    """
    mentions = []
    with open(path, 'r', encoding='utf-8') as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                mention_id, surface = record['id'], record['surface']
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise ValueError(f"{path}: line {line_number}: expected an object with 'id' and 'surface'") from e
            if 'left' in record or 'right' in record:
                mentions.append(MentionContext(mention_id, surface, tuple(record.get('left', [])),
                                               tuple(record.get('right', []))))
            else:
                mentions.append(build_context(mention_id, surface, record.get('before', ''),
                                              record.get('after', ''), int(record.get('window', window))))
    logger.info(f"Loaded {len(mentions)} mentions from {path}")
    return mentions


def _mention_cells(mention: MentionContext) -> List[str]:
    return [mention.mention_id, mention.surface, ' '.join(mention.left_tokens), ' '.join(mention.right_tokens)]


def _mention_from_row(row: Mapping[str, str]) -> MentionContext:
    return MentionContext(row['mention_id'], row['surface'],
                          tuple(row['left_context'].split()), tuple(row['right_context'].split()))


def write_pairs(pairs: Iterable[LabeledPair], path) -> None:
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, delimiter='\t', lineterminator='\n')
        writer.writerow(PAIR_COLUMNS)
        for pair in pairs:
            label = '' if pair.label is None else str(pair.label)
            writer.writerow(_mention_cells(pair.mention) + [pair.entity_id, label, pair.provenance])


def read_pairs(path) -> List[LabeledPair]:
    pairs = []
    with open(path, 'r', encoding='utf-8', newline='') as f:
        reader = csv.DictReader(f, delimiter='\t')
        missing = set(PAIR_COLUMNS) - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            label = int(row['label']) if row['label'] != '' else None
            pairs.append(LabeledPair(_mention_from_row(row), row['entity_id'], label, row['provenance']))
    return pairs


def write_review_queue(queue: Iterable[LabeledPair], path) -> None:
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, delimiter='\t', lineterminator='\n')
        writer.writerow(QUEUE_COLUMNS)
        for pair in queue:
            similarity = '' if pair.similarity is None else repr(pair.similarity)
            writer.writerow(_mention_cells(pair.mention) + [pair.entity_id, similarity, int(pair.collision)])


def read_review_queue(path) -> List[LabeledPair]:
    queue = []
    with open(path, 'r', encoding='utf-8', newline='') as f:
        for row in csv.DictReader(f, delimiter='\t'):
            similarity = float(row['similarity']) if row.get('similarity') else None
            queue.append(LabeledPair(_mention_from_row(row), row['entity_id'], None, REVIEW_QUEUE,
                                     similarity, row.get('collision') == '1'))
    return queue


def read_review_labels(path) -> Dict[Tuple[str, str], int]:
    """Reviewer decisions: mention_id, entity_id, label (0/1) per row."""
    labels = {}
    with open(path, 'r', encoding='utf-8', newline='') as f:
        for row in csv.DictReader(f, delimiter='\t'):
            labels[(row['mention_id'], row['entity_id'])] = int(row['label'])
    return labels


def write_gold(gold: Mapping[str, str], path) -> None:
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, delimiter='\t', lineterminator='\n')
        writer.writerow(['mention_id', 'entity_id'])
        for mention_id, entity_id in gold.items():
            writer.writerow([mention_id, entity_id])


def read_gold(path) -> Dict[str, str]:
    with open(path, 'r', encoding='utf-8', newline='') as f:
        return {row['mention_id']: row['entity_id'] for row in csv.DictReader(f, delimiter='\t')}
