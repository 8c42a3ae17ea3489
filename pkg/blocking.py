"""
Candidate Blocking

Overlap blocker run ahead of the linker: an entity stays a candidate for a
mention only if their normalized names share at least ``threshold`` distinct
character bigrams (unpadded).
"""

from collections import defaultdict
from typing import Dict, FrozenSet, List, Sequence

from kbstore import Entity, KnowledgeBase
from logger_setup import logger
from textprep import DegenerateInputError, char_ngrams, normalize_name

DEFAULT_THRESHOLD = 2


def _check_threshold(threshold: int) -> None:
    if threshold < 1:
        raise ValueError(f"Blocking threshold must be at least 1, got {threshold}")


def bigram_tokens(s: str) -> FrozenSet[str]:
    """Distinct bigrams of the normalized joined name; empty for degenerate or 1-char names."""
    try:
        joined = normalize_name(s).joined
    except DegenerateInputError:
        return frozenset()
    return frozenset(char_ngrams(joined, 2))


def block_candidates(mention_surface: str, kb: KnowledgeBase, threshold: int = DEFAULT_THRESHOLD) -> List[Entity]:
    """Entities sharing at least ``threshold`` bigrams with the mention, in KB order."""
    _check_threshold(threshold)
    mention_bigrams = bigram_tokens(mention_surface)
    if not mention_bigrams:
        return []
    return [entity for entity in kb.entities
            if len(mention_bigrams & bigram_tokens(entity.name)) >= threshold]


class OverlapBlocker:
    """
    Same rule as block_candidates, with entity bigram sets computed once and an
    inverted bigram -> entity-position index to count overlaps.
    """

    def __init__(self, kb: KnowledgeBase, threshold: int = DEFAULT_THRESHOLD):
        _check_threshold(threshold)
        self.kb = kb
        self.threshold = threshold
        self._postings: Dict[str, List[int]] = defaultdict(list)
        for position, entity in enumerate(kb.entities):
            for bigram in bigram_tokens(entity.name):
                self._postings[bigram].append(position)
        logger.debug(f"Blocker indexed {len(self._postings)} bigrams over {len(kb)} entities")

    def candidates(self, mention_surface: str) -> List[Entity]:
        overlap: Dict[int, int] = defaultdict(int)
        for bigram in bigram_tokens(mention_surface):
            for position in self._postings.get(bigram, ()):
                overlap[position] += 1
        kept = sorted(position for position, count in overlap.items() if count >= self.threshold)
        return [self.kb.entities[position] for position in kept]


def candidate_reduction(candidate_counts: Sequence[int], kb_size: int) -> float:
    """Fraction of the full mention x KB comparison volume removed by blocking."""
    if not candidate_counts or kb_size == 0:
        return 0.0
    full = len(candidate_counts) * kb_size
    return 1.0 - sum(candidate_counts) / full
