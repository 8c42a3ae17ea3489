"""Tests for bigram-overlap candidate blocking."""

import numpy as np
import pytest

from blocking import OverlapBlocker, bigram_tokens, block_candidates, candidate_reduction
from kbstore import Entity, build_kb


@pytest.fixture
def kb():
    return build_kb([
        Entity('e1', 'Acma Retail'),
        Entity('e2', 'Zenith Bank'),
        Entity('e3', 'Macro Foods Inc'),
        Entity('e4', 'A'),
    ])


def test_bigram_tokens():
    assert bigram_tokens('Acma') == frozenset({'ac', 'cm', 'ma'})
    assert bigram_tokens('Acma Inc.') == frozenset({'ac', 'cm', 'ma'})
    assert bigram_tokens('A') == frozenset()
    assert bigram_tokens('...') == frozenset()


def test_block_keeps_entities_over_threshold(kb):
    ids = [e.id for e in block_candidates('Acma', kb)]
    assert 'e1' in ids
    assert 'e2' not in ids
    # "macrofoods" shares "ac" and "ma" with "acma"
    assert ids == ['e1', 'e3']


def test_higher_threshold_is_stricter(kb):
    assert [e.id for e in block_candidates('Acma', kb, threshold=3)] == ['e1']


def test_degenerate_mention_has_no_candidates(kb):
    assert block_candidates('?', kb) == []
    assert block_candidates('A', kb, threshold=1) == []


def test_threshold_must_be_positive(kb):
    with pytest.raises(ValueError):
        block_candidates('Acma', kb, threshold=0)
    with pytest.raises(ValueError):
        OverlapBlocker(kb, threshold=0)


def test_indexed_blocker_matches_the_scan():
    rng = np.random.default_rng(9)
    letters = list('abcdefghij')

    def name():
        return ''.join(rng.choice(letters, size=int(rng.integers(1, 7)))).capitalize()

    kb = build_kb([Entity(f"e{i}", f"{name()} {name()}") for i in range(60)])
    for threshold in (1, 2, 3):
        blocker = OverlapBlocker(kb, threshold)
        for _ in range(40):
            surface = name()
            assert blocker.candidates(surface) == block_candidates(surface, kb, threshold)


def test_candidate_reduction():
    assert candidate_reduction([2, 0, 3, 5], 10) == pytest.approx(0.75)
    assert candidate_reduction([], 10) == 0.0
