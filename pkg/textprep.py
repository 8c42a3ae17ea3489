"""
Text Preparation

String normalization, subword featurization for the wide model, word
tokenization and tf-idf scoring. Everything here is shared by the wide
matcher, the baselines, triplet construction and blocking.

Featurization of a company name:

1. lower-case, strip punctuation, drop or rewrite legal suffixes
   ("PayPal Holdings, Inc." -> words ["paypal", "hlds"], joined "paypalhlds")
2. pad the joined form: "*paypalhlds*"
3. emit every overlapping n-gram of the padded form, n in [2, 5]
4. append each padded original word: "*paypal*", "*hlds*"
"""

import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from logger_setup import logger

NGRAM_MIN = 2
NGRAM_MAX = 5
PAD = '*'

_APOSTROPHES = re.compile(r"['’]")
_PUNCT = re.compile(r"[^\w\s]|_")

DEFAULT_SUFFIX_DROP = frozenset({"incorporated", "inc", "corp", "corporation", "llc", "ltd", "limited", "co"})
DEFAULT_SUFFIX_REWRITE = {"holdings": "hlds", "technologies": "tech", "international": "intl"}

_suffix_drop = set(DEFAULT_SUFFIX_DROP)
_suffix_rewrite = dict(DEFAULT_SUFFIX_REWRITE)


class DegenerateInputError(ValueError):
    """A name normalizes to the empty string."""


class NormalizedName(NamedTuple):
    joined: str
    words: List[str]


def set_suffix_rules(drop: Optional[Iterable[str]] = None, rewrite: Optional[Dict[str, str]] = None) -> None:
    """Replace the suffix map used by normalize_name (from the ``textprep`` config section)."""
    global _suffix_drop, _suffix_rewrite
    _suffix_drop = {w.lower() for w in (drop if drop is not None else DEFAULT_SUFFIX_DROP)}
    _suffix_rewrite = {k.lower(): v.lower() for k, v in (rewrite if rewrite is not None else DEFAULT_SUFFIX_REWRITE).items()}


def _strip_punctuation(text: str) -> str:
    text = _APOSTROPHES.sub('', text.lower())
    return _PUNCT.sub(' ', text)


def tokenize(text: str) -> List[str]:
    """Lower-case, strip punctuation and split on whitespace."""
    if not text:
        return []
    return _strip_punctuation(text).split()


def normalize_name(raw: str) -> NormalizedName:
    """
    Normalize a company name.

    Suffix rules apply to every word after the first; the first word is never
    dropped, so "Limited Brands" keeps "limited".

    Raises:
        DegenerateInputError: If nothing is left after normalization.
    """
    words = tokenize(raw)
    kept = []
    for position, word in enumerate(words):
        if position > 0:
            if word in _suffix_drop:
                continue
            word = _suffix_rewrite.get(word, word)
        kept.append(word)
    joined = ''.join(kept)
    if not joined:
        raise DegenerateInputError(f"Name {raw!r} is empty after normalization")
    return NormalizedName(joined=joined, words=kept)


def char_ngrams(s: str, n: int) -> List[str]:
    """Overlapping character n-grams of ``s`` (no padding), in order."""
    return [s[i:i + n] for i in range(len(s) - n + 1)]


def char_tokens(raw: str) -> List[str]:
    """
    All subword tokens of a name before de-duplication: n-grams of the padded
    joined form for n in [2, 5], then each padded word.
    """
    normalized = normalize_name(raw)
    padded = f"{PAD}{normalized.joined}{PAD}"
    tokens = []
    for n in range(NGRAM_MIN, NGRAM_MAX + 1):
        tokens.extend(char_ngrams(padded, n))
    tokens.extend(f"{PAD}{word}{PAD}" for word in normalized.words)
    return tokens


def char_token_set(raw: str) -> List[str]:
    """De-duplicated char tokens in first-seen order."""
    return list(dict.fromkeys(char_tokens(raw)))


@dataclass
class CharVocab:
    """Subword token -> dense index map. Frozen vocabularies drop unseen tokens."""
    token_to_index: Dict[str, int] = field(default_factory=dict)
    frozen: bool = False

    @property
    def size(self) -> int:
        return len(self.token_to_index)

    def __len__(self):
        return self.size

    def add(self, token: str) -> int:
        index = self.token_to_index.get(token)
        if index is None:
            index = len(self.token_to_index)
            self.token_to_index[token] = index
        return index

    def freeze(self) -> "CharVocab":
        self.frozen = True
        return self

    def save(self, path) -> None:
        with open(path, 'w', encoding='utf-8') as f:
            for token, index in self.token_to_index.items():
                f.write(f"{token}\t{index}\n")

    @classmethod
    def load(cls, path) -> "CharVocab":
        mapping = {}
        with open(path, 'r', encoding='utf-8') as f:
            for line_number, line in enumerate(f, start=1):
                line = line.rstrip('\n')
                if not line:
                    continue
                try:
                    token, index = line.split('\t')
                    mapping[token] = int(index)
                except ValueError as e:
                    raise ValueError(f"{path}: malformed vocab line {line_number}") from e
        if sorted(mapping.values()) != list(range(len(mapping))):
            raise ValueError(f"{path}: vocab indices are not dense")
        return cls(token_to_index=mapping, frozen=True)


@dataclass(frozen=True)
class CharFeatureVector:
    """Binary sparse vector: sorted unique indices of active subword tokens."""
    indices: np.ndarray
    size: int

    def __len__(self):
        return len(self.indices)

    def __eq__(self, other):
        if not isinstance(other, CharFeatureVector):
            return NotImplemented
        return self.size == other.size and np.array_equal(self.indices, other.indices)

    def __hash__(self):
        return hash((self.size, self.indices.tobytes()))


def featurize_chars(raw: str, vocab: CharVocab) -> CharFeatureVector:
    """
    Featurize a name over ``vocab``.

    An unfrozen vocab is in build mode and grows with unseen tokens; a frozen
    vocab drops them.
    """
    indices = []
    for token in char_token_set(raw):
        if vocab.frozen:
            index = vocab.token_to_index.get(token)
            if index is None:
                continue
        else:
            index = vocab.add(token)
        indices.append(index)
    return CharFeatureVector(indices=np.array(sorted(set(indices)), dtype=np.int64), size=vocab.size)


def build_char_vocab(names: Iterable[str]) -> CharVocab:
    """Build a vocabulary over names, skipping names that normalize to nothing."""
    vocab = CharVocab()
    skipped = 0
    for name in names:
        try:
            featurize_chars(name, vocab)
        except DegenerateInputError:
            skipped += 1
    if skipped:
        logger.warning(f"Skipped {skipped} degenerate names while building the char vocab")
    logger.info(f"Char vocab holds {vocab.size} subword tokens")
    return vocab


@dataclass
class TfIdfModel:
    """Document frequencies over a corpus of token lists."""
    df: Dict[str, int] = field(default_factory=dict)
    n_docs: int = 0

    def idf(self, token: str, default: Optional[float] = None) -> float:
        """ln(N / df); ``default`` (when given) replaces the value for unknown tokens."""
        count = self.df.get(token)
        if count is None:
            if default is not None:
                return default
            count = 1
        return math.log(self.n_docs / count) if self.n_docs else 0.0

    def save(self, path) -> None:
        with open(path, 'w', encoding='utf-8') as f:
            f.write(f"#docs\t{self.n_docs}\n")
            for token, count in sorted(self.df.items()):
                f.write(f"{token}\t{count}\n")

    @classmethod
    def load(cls, path) -> "TfIdfModel":
        with open(path, 'r', encoding='utf-8') as f:
            header = f.readline().rstrip('\n').split('\t')
            if len(header) != 2 or header[0] != '#docs':
                raise ValueError(f"{path}: missing '#docs' header")
            n_docs = int(header[1])
            df = {}
            for line_number, line in enumerate(f, start=2):
                line = line.rstrip('\n')
                if not line:
                    continue
                try:
                    token, count = line.split('\t')
                    df[token] = int(count)
                except ValueError as e:
                    raise ValueError(f"{path}: malformed tf-idf line {line_number}") from e
        return cls(df=df, n_docs=n_docs)


def build_tfidf(docs: Iterable[Sequence[str]]) -> TfIdfModel:
    df: Counter = Counter()
    n_docs = 0
    for doc in docs:
        n_docs += 1
        df.update(set(doc))
    return TfIdfModel(df=dict(df), n_docs=n_docs)


def tfidf_scores(doc: Sequence[str], model: TfIdfModel) -> List[Tuple[str, float]]:
    """
    Score each distinct word of ``doc`` as tf(w, doc) * ln(N / df(w)).
    Words unknown to the model count as df = 1. Order is first appearance.
    """
    counts = Counter(doc)
    return [(word, tf * model.idf(word)) for word, tf in counts.items()]


def top_k_words(scored: Sequence[Tuple[str, float]], k: int) -> List[str]:
    """The k highest-scoring words; ties broken lexicographically."""
    ranked = sorted(scored, key=lambda item: (-item[1], item[0]))
    return [word for word, _ in ranked[:k]]
