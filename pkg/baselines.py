"""
Baselines

The comparison methods the linker is measured against:

- ``bigram`` / ``trigram``: tf-idf weighted character n-gram cosine between
  the mention surface and the entity name.
- ``jaccard-ctx`` / ``cosine-ctx``: overlap between the mention's context
  words and the entity description.
- ``lr``: logistic regression over four engineered surface/context features.

Every method scores the same blocked candidates and ranks them with
rank_by_score, so P@K numbers are comparable with the linker's.
"""

import json
import math
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from rapidfuzz.distance import Levenshtein
from tqdm import tqdm

import autodiff as ad
from kbstore import Entity, KnowledgeBase, get_entity
from linker import MentionContext
from logger_setup import logger
from textprep import DegenerateInputError, TfIdfModel, build_tfidf, char_ngrams, normalize_name, tokenize

STRING_METHODS = {'bigram': 2, 'trigram': 3}
CONTEXT_METHODS = {'jaccard-ctx': 'jaccard', 'cosine-ctx': 'cosine'}
METHODS = ('jel', 'bigram', 'trigram', 'jaccard-ctx', 'cosine-ctx', 'lr')


@dataclass
class BaselineConfig:
    string_threshold: float = 0.8
    context_threshold: float = 0.0
    lr_epochs: int = 500
    lr_learning_rate: float = 0.5
    seed: int = 7

    def __post_init__(self):
        if not 0.0 <= self.string_threshold <= 1.0:
            raise ValueError(f"baselines.string_threshold must lie in [0, 1], got {self.string_threshold}")
        if self.lr_epochs <= 0 or self.lr_learning_rate <= 0:
            raise ValueError("baselines.lr_epochs and baselines.lr_learning_rate must be positive")

    @classmethod
    def from_config(cls, config: dict) -> "BaselineConfig":
        section = config.get('baselines', {})
        return cls(
            string_threshold=float(section.get('string_threshold', 0.8)),
            context_threshold=float(section.get('context_threshold', 0.0)),
            lr_epochs=int(section.get('lr_epochs', 500)),
            lr_learning_rate=float(section.get('lr_learning_rate', 0.5)),
            seed=int(config.get('seed', 7)),
        )


def _cosine(a: Mapping[str, float], b: Mapping[str, float]) -> float:
    if not a or not b:
        return 0.0
    if a == b:
        return 1.0
    dot = sum(weight * b[token] for token, weight in a.items() if token in b)
    if dot == 0.0:
        return 0.0
    norm = math.sqrt(sum(w * w for w in a.values())) * math.sqrt(sum(w * w for w in b.values()))
    return min(1.0, dot / norm)


def _weighted(counts: Counter, tfidf: Optional[TfIdfModel]) -> Dict[str, float]:
    if tfidf is None:
        return {token: float(count) for token, count in counts.items()}
    return {token: count * tfidf.idf(token, default=1.0) for token, count in counts.items()}


def _joined(name: str) -> str:
    try:
        return normalize_name(name).joined
    except DegenerateInputError:
        return ""


def ngram_cosine(a: str, b: str, n: int, tfidf: Optional[TfIdfModel] = None) -> float:
    """
    Cosine between the n-gram count vectors of the normalized names, each
    n-gram weighted by its idf (unknown n-grams weigh 1). ``tfidf=None``
    weighs every n-gram 1.
    """
    if n not in (2, 3):
        raise ValueError(f"n must be 2 or 3, got {n}")
    grams_a = Counter(char_ngrams(_joined(a), n))
    grams_b = Counter(char_ngrams(_joined(b), n))
    return _cosine(_weighted(grams_a, tfidf), _weighted(grams_b, tfidf))


def build_ngram_tfidf(names: Iterable[str], n: int) -> TfIdfModel:
    """Document frequencies of character n-grams over the normalized KB names."""
    return build_tfidf(char_ngrams(_joined(name), n) for name in names)


def context_similarity(mention_ctx: Sequence[str], entity_desc: Sequence[str], kind: str = 'jaccard') -> float:
    """Jaccard over word sets or cosine over word counts; 0 when nothing is shared."""
    if kind == 'jaccard':
        left, right = set(mention_ctx), set(entity_desc)
        shared = left & right
        return len(shared) / len(left | right) if shared else 0.0
    if kind == 'cosine':
        return _cosine(_weighted(Counter(mention_ctx), None), _weighted(Counter(entity_desc), None))
    raise ValueError(f"Unknown context similarity kind: {kind!r}")


def context_words(mention: MentionContext) -> List[str]:
    """The words around a mention, without the mention words themselves."""
    k = len(tokenize(mention.surface))
    left = list(mention.left_tokens)
    right = list(mention.right_tokens)
    return left[:max(len(left) - k, 0)] + right[k:]


def lemma(word: str) -> str:
    """Lower-case and strip a plural "s" (not "ss") from words longer than 3."""
    word = word.lower()
    if len(word) > 3 and word.endswith('s') and not word.endswith('ss'):
        return word[:-1]
    return word


class SurfaceFeatures(NamedTuple):
    str_sim_surface: float
    exact_equal_surface: float
    tf_sim_context: float
    word_num_match: float

    def as_array(self) -> np.ndarray:
        return np.array(self, dtype=np.float64)


def str_similarity(a: str, b: str) -> float:
    """1 - Levenshtein(a, b) / max(|a|, |b|) on normalized names."""
    a, b = _joined(a), _joined(b)
    longest = max(len(a), len(b))
    if longest == 0:
        return 0.0
    return 1.0 - Levenshtein.distance(a, b) / longest


def surface_features(mention: MentionContext, entity: Entity, tfidf: Optional[TfIdfModel]) -> SurfaceFeatures:
    mention_lemmas = {lemma(w) for w in tokenize(mention.surface)}
    name_lemmas = {lemma(w) for w in tokenize(entity.name)}
    ctx = context_words(mention)
    desc = tokenize(entity.description)
    return SurfaceFeatures(
        str_sim_surface=str_similarity(mention.surface, entity.name),
        exact_equal_surface=float(len(mention_lemmas & name_lemmas)),
        tf_sim_context=_cosine(_weighted(Counter(ctx), tfidf), _weighted(Counter(desc), tfidf)),
        word_num_match=float(len({lemma(w) for w in ctx} & {lemma(w) for w in desc})),
    )


class LogisticBaseline:
    """
    Four-feature logistic regression. Features are standardized with the
    training mean and standard deviation, which are stored with the weights.
    """

    def __init__(self, weights=None, bias: float = 0.0, mean=None, std=None):
        n_features = len(SurfaceFeatures._fields)
        self.w = ad.Param("lr.w", np.zeros(n_features) if weights is None else np.asarray(weights, dtype=np.float64))
        self.b = ad.Param("lr.b", np.array([bias], dtype=np.float64))
        self.mean = np.zeros(n_features) if mean is None else np.asarray(mean, dtype=np.float64)
        self.std = np.ones(n_features) if std is None else np.asarray(std, dtype=np.float64)

    def parameters(self) -> List[ad.Param]:
        return [self.w, self.b]

    def _standardize(self, X: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(X) - self.mean) / self.std

    def logits(self, X: np.ndarray) -> ad.Tensor:
        return ad.add(ad.matvec(self._standardize(X), self.w), self.b)

    def loss(self, X: np.ndarray, y: np.ndarray) -> ad.Tensor:
        """Mean binary cross-entropy over the rows of ``X``."""
        return ad.mean(ad.bce_with_logits(self.logits(X), y))

    def fit(self, X: np.ndarray, y: np.ndarray, epochs: int, learning_rate: float) -> List[float]:
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        self.mean = X.mean(axis=0)
        std = X.std(axis=0)
        self.std = np.where(std > 0, std, 1.0)
        trace = []
        for _ in range(epochs):
            loss = self.loss(X, y)
            trace.append(loss.item())
            loss.backward()
            ad.sgd_step(self.parameters(), learning_rate)
        return trace

    def score(self, features) -> np.ndarray:
        """Probability of a link for each feature row."""
        z = self.logits(np.asarray(features, dtype=np.float64)).value
        return 0.5 * (1.0 + np.tanh(0.5 * z))

    def save(self, path) -> None:
        payload = {
            'features': list(SurfaceFeatures._fields),
            'weights': self.w.value.tolist(),
            'bias': float(self.b.value[0]),
            'mean': self.mean.tolist(),
            'std': self.std.tolist(),
        }
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(payload, f, indent=2)

    @classmethod
    def load(cls, path) -> "LogisticBaseline":
        with open(path, 'r', encoding='utf-8') as f:
            payload = json.load(f)
        return cls(weights=payload['weights'], bias=payload['bias'], mean=payload['mean'], std=payload['std'])


def feature_matrix(pairs: Sequence, kb: KnowledgeBase, tfidf: Optional[TfIdfModel]) -> np.ndarray:
    rows = [surface_features(pair.mention, get_entity(kb, pair.entity_id), tfidf).as_array() for pair in pairs]
    return np.vstack(rows) if rows else np.zeros((0, len(SurfaceFeatures._fields)))


def train_logistic_baseline(pairs: Sequence, kb: KnowledgeBase, tfidf: Optional[TfIdfModel],
                            cfg: BaselineConfig) -> Tuple[LogisticBaseline, List[float]]:
    """
    Fit the logistic baseline on labeled pairs by full-batch gradient descent.

    Raises:
        ValueError: If no pair carries a label or a pair references an unknown entity.
    """
    labeled = [pair for pair in pairs if pair.label is not None]
    if not labeled:
        raise ValueError("No labeled pairs to train the logistic baseline on")
    missing = [pair.entity_id for pair in labeled if get_entity(kb, pair.entity_id) is None]
    if missing:
        raise ValueError(f"{len(missing)} pairs reference unknown entities, e.g. {missing[0]!r}")

    X = feature_matrix(labeled, kb, tfidf)
    y = np.array([pair.label for pair in labeled], dtype=np.float64)
    model = LogisticBaseline()
    trace = model.fit(X, y, cfg.lr_epochs, cfg.lr_learning_rate)
    accuracy = float(np.mean((model.score(X) >= 0.5) == (y == 1)))
    logger.info(f"Logistic baseline trained on {len(labeled)} pairs; train accuracy {accuracy:.4f}")
    return model, trace


def rank_by_score(mention: MentionContext, candidates: Sequence[Entity],
                  scorer: Callable[[MentionContext, Entity], float],
                  higher_is_better: bool = True) -> List[Tuple[str, float]]:
    """(entity_id, score) best first; ties broken by entity id."""
    scored = [(entity.id, float(scorer(mention, entity))) for entity in candidates]
    sign = -1.0 if higher_is_better else 1.0
    scored.sort(key=lambda item: (sign * item[1], item[0]))
    return scored


def make_scorer(method: str, word_tfidf: Optional[TfIdfModel] = None,
                ngram_tfidf: Optional[Mapping[int, TfIdfModel]] = None,
                logistic: Optional[LogisticBaseline] = None) -> Callable[[MentionContext, Entity], float]:
    """Similarity function (higher is better) for a baseline method name."""
    if method in STRING_METHODS:
        n = STRING_METHODS[method]
        weights = (ngram_tfidf or {}).get(n)
        return lambda mention, entity: ngram_cosine(mention.surface, entity.name, n, weights)
    if method in CONTEXT_METHODS:
        kind = CONTEXT_METHODS[method]
        return lambda mention, entity: context_similarity(context_words(mention), tokenize(entity.description), kind)
    if method == 'lr':
        if logistic is None:
            raise ValueError("The lr method needs a trained logistic baseline")
        return lambda mention, entity: float(logistic.score(surface_features(mention, entity, word_tfidf).as_array())[0])
    raise ValueError(f"Unknown baseline method: {method!r}")


def predict_label(method: str, score: float, cfg: BaselineConfig) -> int:
    """Binary decision of a baseline method for one scored pair."""
    if method in STRING_METHODS:
        return int(score >= cfg.string_threshold)
    if method in CONTEXT_METHODS:
        return int(score > cfg.context_threshold)
    if method == 'lr':
        return int(score >= 0.5)
    raise ValueError(f"Unknown baseline method: {method!r}")


def rank_mentions(method: str, mentions: Sequence[MentionContext], candidate_lists: Sequence[Sequence[Entity]],
                  scorer: Callable[[MentionContext, Entity], float]) -> List[List[Tuple[str, float]]]:
    """rank_by_score over every mention, with a progress bar."""
    rankings = []
    for mention, candidates in tqdm(list(zip(mentions, candidate_lists)), desc=method, disable=None):
        rankings.append(rank_by_score(mention, candidates, scorer))
    return rankings
