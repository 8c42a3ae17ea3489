"""Tests for the wide & deep linker: distances, loss, training, ranking and checkpoints."""

import numpy as np
import pytest

import autodiff as ad
from kbstore import Entity, build_kb, get_entity
from linker import (
    DegenerateContextError, DeepEncoderParams, JELModel, LinkerConfig, MentionContext, UnknownEntityError,
    WideModelParams, build_context, combined_distance, context_sides, contrastive_loss, encode_mention,
    initialize_model, mention_batches, pair_distances, pair_loss, predict_pair, rank_candidates,
    score_candidates, train_linker, wide_distance,
)
from textprep import CharFeatureVector, build_char_vocab, featurize_chars
from vectors import EmbeddingTable, lookup
from weaklabel import SYNTHETIC, LabeledPair

WORD_DIM = 4
ENTITY_DIM = 3
CONTEXT_WORDS = ['cloud', 'software', 'lamps', 'lighting', 'grocery', 'stores', 'power', 'grid', 'shares', 'rose']


@pytest.fixture
def kb():
    return build_kb([
        Entity('E1', 'Lumier Software', 'cloud software'),
        Entity('E2', 'Lumier Lighting', 'lamps lighting'),
        Entity('E3', 'Acma Retail', 'grocery stores'),
        Entity('E4', 'Borvo Energy', 'power grid'),
    ])


@pytest.fixture
def words():
    rng = np.random.default_rng(4)
    table = EmbeddingTable(dim=WORD_DIM)
    for word in CONTEXT_WORDS:
        table.insert(word, rng.normal(size=WORD_DIM) / np.sqrt(WORD_DIM))
    return table


@pytest.fixture
def entity_vectors(kb):
    rng = np.random.default_rng(8)
    table = EmbeddingTable(dim=ENTITY_DIM)
    for entity in kb:
        table.insert(entity.id, rng.normal(size=ENTITY_DIM) / np.sqrt(ENTITY_DIM))
    return table


@pytest.fixture
def small_cfg():
    return LinkerConfig(wide_dim=6, lstm_hidden=3, epochs=25, learning_rate=0.05, batch_size=4, seed=3)


@pytest.fixture
def model(kb, words, entity_vectors, small_cfg):
    vocab = build_char_vocab([e.name for e in kb] + ['Lumier']).freeze()
    return initialize_model(vocab, words, entity_vectors, small_cfg)


def mention(mention_id, surface, before='', after=''):
    return build_context(mention_id, surface, before, after, window=4)


def labeled_pairs():
    m1 = mention('M1', 'Lumier', 'shares of', 'cloud software rose')
    m2 = mention('M2', 'Lumier', 'new', 'lamps lighting')
    m3 = mention('M3', 'Acma', 'the', 'grocery stores')
    return [
        LabeledPair(m1, 'E1', 1, SYNTHETIC), LabeledPair(m1, 'E2', 0, SYNTHETIC),
        LabeledPair(m2, 'E2', 1, SYNTHETIC), LabeledPair(m2, 'E1', 0, SYNTHETIC),
        LabeledPair(m3, 'E3', 1, SYNTHETIC), LabeledPair(m3, 'E4', 0, SYNTHETIC),
    ]


# --- contrastive loss and combined distance ---

def test_contrastive_loss_values():
    assert contrastive_loss(1, 2.0, 1.0).item() == 2.0
    assert contrastive_loss(0, 0.4, 1.0).item() == pytest.approx(0.18)
    assert contrastive_loss(0, 1.5, 1.0).item() == 0.0
    assert contrastive_loss(1, 0.0, 1.0).item() == 0.0


def test_contrastive_loss_rejects_other_labels():
    with pytest.raises(ValueError):
        contrastive_loss(2, 0.5, 1.0)


def test_combined_distance_weights():
    cfg = LinkerConfig(lambda_syx=0.5, lambda_smc=0.5)
    assert combined_distance(ad.as_tensor(2.0), ad.as_tensor(4.0), cfg).item() == 3.0


@pytest.mark.parametrize('kwargs', [
    {'lambda_syx': 0.0, 'lambda_smc': 0.0},
    {'lambda_syx': -1.0},
    {'margin': 0.0},
])
def test_config_rejects_invalid_weights(kwargs):
    with pytest.raises(ValueError):
        LinkerConfig(**kwargs)


def test_threshold_defaults_to_margin():
    assert LinkerConfig(margin=1.5).threshold == 1.5
    assert LinkerConfig(margin=1.5, decision_threshold=0.7).threshold == 0.7


# --- context windows ---

def test_context_windows_include_the_mention():
    ctx = build_context('M1', 'Lumier Inc', 'Shares of the upstart', 'rose sharply on Monday', window=4)
    assert ctx.left_tokens == ('the', 'upstart', 'lumier', 'inc')
    assert ctx.right_tokens == ('lumier', 'inc', 'rose', 'sharply')


def test_empty_context_falls_back_to_surface():
    left, right = context_sides(MentionContext('M1', 'Acma Retail'))
    assert left == right == ('acma', 'retail')
    with pytest.raises(DegenerateContextError):
        context_sides(MentionContext('M2', '!!'))


# --- wide part ---

def test_siamese_distance_is_zero_on_identical_inputs_and_symmetric(model):
    a = model.features('Lumier Software')
    b = model.features('Acma Retail')
    assert wide_distance(model.wide, a, a).item() == 0.0
    assert wide_distance(model.wide, a, b).item() == wide_distance(model.wide, b, a).item()


def test_wide_layer_is_stored_output_by_vocab(model):
    assert model.wide.W.value.shape == (6, model.vocab.size)


def test_unknown_subwords_are_dropped_by_the_frozen_vocab(model):
    vector = featurize_chars('Zzqx', model.vocab)
    assert len(vector) < 15
    assert vector.size == model.vocab.size


# --- deep part ---

def test_encoding_has_entity_dimension(model, words):
    ctx = mention('M1', 'Lumier', 'shares of', 'cloud software')
    assert encode_mention(model.deep, ctx, words).shape == (ENTITY_DIM,)


def test_out_of_vocabulary_context_still_encodes(model, words):
    ctx = mention('M9', 'Qwerty', 'unseen words only', 'nothing known')
    assert np.all(np.isfinite(encode_mention(model.deep, ctx, words).value))


def test_missing_entity_vector_uses_zero(model, kb):
    entity = Entity('E9', 'Nova Foods', 'snacks')
    ctx = mention('M1', 'Nova')
    d_syx, d_smc, d_w = pair_distances(model, ctx, entity)
    V_m = encode_mention(model.deep, ctx, model.words).value
    assert d_smc == pytest.approx(np.linalg.norm(V_m))
    assert d_w == pytest.approx(d_syx + d_smc)


# --- gradients of the full objective ---

@pytest.mark.parametrize('seed', range(20))
def test_contrastive_objective_gradients_match_finite_differences(seed, kb, words, entity_vectors):
    cfg = LinkerConfig(wide_dim=4, lstm_hidden=3, margin=4.0, lambda_syx=0.7, lambda_smc=1.3, seed=seed)
    vocab = build_char_vocab([e.name for e in kb] + ['Lumier Inc']).freeze()
    model = initialize_model(vocab, words, entity_vectors, cfg)
    ctx = mention('M1', 'Lumier Inc', 'shares of', 'cloud software rose')
    label = seed % 2

    def objective():
        return pair_loss(model, ctx, get_entity(kb, 'E1'), label)

    report = ad.grad_check(objective, model.parameters(), max_entries=25, rng=np.random.default_rng(seed))
    assert report.passed, report.per_param


# --- training ---

def test_training_reduces_the_loss(kb, words, entity_vectors, small_cfg):
    vocab = build_char_vocab(e.name for e in kb)
    trained, trace = train_linker(labeled_pairs(), kb, words, entity_vectors, small_cfg, vocab)
    assert len(trace) == small_cfg.epochs
    assert trace[-1] < trace[0]
    assert trained.vocab.frozen


def test_training_is_deterministic(kb, words, entity_vectors, small_cfg):
    first, trace_a = train_linker(labeled_pairs(), kb, words, entity_vectors, small_cfg,
                                  build_char_vocab(e.name for e in kb))
    second, trace_b = train_linker(labeled_pairs(), kb, words, entity_vectors, small_cfg,
                                   build_char_vocab(e.name for e in kb))
    assert trace_a == trace_b
    for p, q in zip(first.parameters(), second.parameters()):
        np.testing.assert_array_equal(p.value, q.value)


def test_training_rejects_unknown_entities(kb, words, entity_vectors, small_cfg):
    pairs = labeled_pairs() + [LabeledPair(mention('M4', 'Nova'), 'E99', 1, SYNTHETIC)]
    with pytest.raises(UnknownEntityError):
        train_linker(pairs, kb, words, entity_vectors, small_cfg, build_char_vocab(e.name for e in kb))


# --- ranking ---

def test_ranking_is_a_sorted_permutation_of_candidates(model, kb):
    ctx = mention('M1', 'Lumier', 'shares of', 'cloud software')
    candidates = list(kb)
    ranked = rank_candidates(ctx, candidates, model)
    assert sorted(eid for eid, _ in ranked) == sorted(kb.ids)
    distances = [d for _, d in ranked]
    assert distances == sorted(distances)
    scores = score_candidates(ctx, candidates, model)
    for s in scores:
        assert s.d_w == pytest.approx(model.cfg.lambda_syx * s.d_syx + model.cfg.lambda_smc * s.d_smc)


def test_ranking_ties_break_on_entity_id(kb, words):
    twins = build_kb([Entity('B2', 'Vexo', ''), Entity('B1', 'Vexo', '')])
    vectors = EmbeddingTable(dim=ENTITY_DIM)
    vectors.insert('B1', [0.1, 0.2, 0.3])
    vectors.insert('B2', [0.1, 0.2, 0.3])
    model = initialize_model(build_char_vocab(['Vexo']).freeze(), words, vectors, LinkerConfig(wide_dim=4, lstm_hidden=2))
    ranked = rank_candidates(mention('M1', 'Vexo', 'the', 'grid'), list(twins), model)
    assert [eid for eid, _ in ranked] == ['B1', 'B2']
    assert ranked[0][1] == ranked[1][1]


def test_ranking_with_no_candidates_is_empty(model):
    assert rank_candidates(mention('M1', 'Lumier'), [], model) == []


def test_predict_pair_applies_threshold(model, kb):
    ctx = mention('M1', 'Lumier')
    entity = get_entity(kb, 'E1')
    d_w = pair_distances(model, ctx, entity)[2]
    model.cfg.decision_threshold = d_w + 1e-9
    assert predict_pair(model, ctx, entity) == 1
    model.cfg.decision_threshold = d_w
    assert predict_pair(model, ctx, entity) == 0


# --- checkpoints ---

def test_checkpoint_round_trip_reproduces_scores(tmp_path, model, kb, words, entity_vectors):
    ckpt, vocab_path = tmp_path / 'linker.ckpt', tmp_path / 'vocab.tsv'
    model.save(ckpt, vocab_path)
    loaded = JELModel.load(ckpt, vocab_path, words, entity_vectors)
    ctx = mention('M1', 'Lumier', 'shares of', 'cloud software')
    assert rank_candidates(ctx, list(kb), loaded) == rank_candidates(ctx, list(kb), model)
    assert loaded.cfg == model.cfg


def test_checkpoint_rejects_mismatched_vectors(tmp_path, model, words):
    ckpt, vocab_path = tmp_path / 'linker.ckpt', tmp_path / 'vocab.tsv'
    model.save(ckpt, vocab_path)
    with pytest.raises(ad.CheckpointFormatError):
        JELModel.load(ckpt, vocab_path, words, EmbeddingTable(dim=ENTITY_DIM + 1))


def test_wide_params_named_for_checkpoints():
    params = WideModelParams.initialize(5, 2, np.random.default_rng(0))
    assert [p.name for p in params.parameters()] == ['wide.W', 'wide.b']


def test_contrastive_loss_identities_over_a_grid():
    for D in np.linspace(0.0, 5.0, 100):
        for m in np.linspace(0.05, 5.0, 100):
            positive = contrastive_loss(1, D, m).item()
            negative = contrastive_loss(0, D, m).item()
            assert abs(positive - 0.5 * D * D) <= 1e-12
            if D >= m:
                assert negative == 0.0
            else:
                assert abs(negative - 0.5 * (m - D) ** 2) <= 1e-12


def test_siamese_invariance_over_random_draws():
    rng = np.random.default_rng(21)
    vocab_size = 20
    for _ in range(1000):
        params = WideModelParams(W=ad.Param("wide.W", rng.normal(size=(4, vocab_size))),
                                 b=ad.Param("wide.b", rng.normal(size=4)))
        a = CharFeatureVector(np.sort(rng.choice(vocab_size, size=5, replace=False)), vocab_size)
        b = CharFeatureVector(np.sort(rng.choice(vocab_size, size=7, replace=False)), vocab_size)
        assert wide_distance(params, a, a).item() == 0.0
        assert abs(wide_distance(params, a, b).item() - wide_distance(params, b, a).item()) <= 1e-12


# --- encoder edge cases ---

def test_zero_words_and_zero_parameters_encode_to_the_fc_bias():
    deep = DeepEncoderParams.initialize(WORD_DIM, 3, ENTITY_DIM, np.random.default_rng(0))
    for p in deep.parameters():
        p.value[...] = 0.0
    deep.fc_b.value[:] = [0.3, -0.2, 0.5]
    zeros = EmbeddingTable(dim=WORD_DIM)
    for word in CONTEXT_WORDS:
        zeros.insert(word, np.zeros(WORD_DIM))
    ctx = mention('M1', 'Lumier', 'shares of', 'cloud software rose')
    np.testing.assert_array_equal(encode_mention(deep, ctx, zeros).value, [0.3, -0.2, 0.5])


def test_single_token_contexts_pool_with_unit_weight(words):
    deep = DeepEncoderParams.initialize(WORD_DIM, 3, ENTITY_DIM, np.random.default_rng(1))
    x_l, x_r = lookup(words, 'cloud'), lookup(words, 'rose')
    h_l = ad.lstm_run(deep.left, [x_l])[0]
    h_r = ad.lstm_run(deep.right, [x_r])[0]

    g, a = ad.attention_pool(deep.attn_left, [h_l])
    np.testing.assert_array_equal(a, [1.0])
    np.testing.assert_array_equal(g.value, h_l.value)

    ctx = MentionContext('M1', 'Lumier', ('cloud',), ('rose',))
    expected = deep.fc_W.value @ np.concatenate([h_l.value, h_r.value]) + deep.fc_b.value
    np.testing.assert_allclose(encode_mention(deep, ctx, words).value, expected, rtol=1e-12)


def test_fc_bias_starts_at_the_mean_entity_vector(model, entity_vectors):
    np.testing.assert_allclose(model.deep.fc_b.value, entity_vectors.matrix.mean(axis=0))


# --- batching ---

def test_mention_batches_keep_each_mention_whole():
    pairs = labeled_pairs()
    batches = mention_batches(pairs, 3, np.random.default_rng(0))
    assert sorted(len(b) for b in batches) == [2, 4]
    for batch in batches:
        ids = [p.mention.mention_id for p in batch]
        for mention_id in set(ids):
            assert ids.count(mention_id) == 2
    assert sum(len(b) for b in batches) == len(pairs)


def test_sgd_optimizer_still_trains(kb, words, entity_vectors):
    cfg = LinkerConfig(wide_dim=6, lstm_hidden=3, epochs=10, learning_rate=0.05, batch_size=4,
                       optimizer='sgd', seed=3)
    _, trace = train_linker(labeled_pairs(), kb, words, entity_vectors, cfg, build_char_vocab(e.name for e in kb))
    assert trace[-1] < trace[0]


def test_config_rejects_unknown_optimizer():
    with pytest.raises(ValueError, match='optimizer'):
        LinkerConfig(optimizer='rmsprop')


# --- convergence on separable data ---

def test_separable_toy_set_converges(kb, words):
    targets = EmbeddingTable(dim=ENTITY_DIM)
    targets.insert('E1', [1.0, 0.0, 0.0])
    targets.insert('E2', [0.0, 1.0, 0.0])
    targets.insert('E3', [0.0, 0.0, 1.0])
    targets.insert('E4', [-1.0, 0.0, 0.0])
    t1 = mention('T1', 'Lumier Software', 'shares of', 'cloud software rose')
    t2 = mention('T2', 'Lumier Lighting', 'new', 'lamps lighting')
    t3 = mention('T3', 'Acma Retail', 'the', 'grocery stores')
    t4 = mention('T4', 'Borvo Energy', 'the', 'power grid')
    pairs = [
        LabeledPair(t1, 'E1', 1, SYNTHETIC), LabeledPair(t1, 'E2', 0, SYNTHETIC),
        LabeledPair(t2, 'E2', 1, SYNTHETIC), LabeledPair(t2, 'E1', 0, SYNTHETIC),
        LabeledPair(t3, 'E3', 1, SYNTHETIC), LabeledPair(t3, 'E4', 0, SYNTHETIC),
        LabeledPair(t4, 'E4', 1, SYNTHETIC), LabeledPair(t4, 'E3', 0, SYNTHETIC),
    ]
    cfg = LinkerConfig(wide_dim=6, lstm_hidden=4, epochs=500, learning_rate=0.02, batch_size=16, seed=5)
    _, trace = train_linker(pairs, kb, words, targets, cfg, build_char_vocab(e.name for e in kb))
    assert trace[-1] < 0.01


SOFTWARE_WORDS = ['cloud', 'software', 'servers', 'apps', 'code']
LIGHTING_WORDS = ['lamps', 'lighting', 'bulbs', 'led', 'fixtures']


def test_context_separates_same_name_twins():
    twins = build_kb([Entity('L1', 'Lumier', 'cloud software'), Entity('L2', 'Lumier', 'lamps lighting')])
    targets = EmbeddingTable(dim=ENTITY_DIM)
    targets.insert('L1', [1.0, 0.0, 0.0])
    targets.insert('L2', [0.0, 1.0, 0.0])

    rng = np.random.default_rng(12)
    clustered = EmbeddingTable(dim=WORD_DIM)
    for words_, center in ((SOFTWARE_WORDS, [1.0, 0.0, 0.0, 0.0]), (LIGHTING_WORDS, [0.0, 1.0, 0.0, 0.0])):
        for word in words_:
            clustered.insert(word, np.array(center) + 0.05 * rng.normal(size=WORD_DIM))

    training = [
        ('S1', 'shares of', 'cloud software', 'L1'), ('S2', 'the', 'servers apps', 'L1'),
        ('S3', 'new', 'code cloud', 'L1'), ('S4', 'shares of', 'lamps lighting', 'L2'),
        ('S5', 'the', 'bulbs led', 'L2'), ('S6', 'new', 'fixtures lamps', 'L2'),
    ]
    pairs = []
    for mention_id, before, after, gold in training:
        ctx = mention(mention_id, 'Lumier', before, after)
        twin = 'L2' if gold == 'L1' else 'L1'
        pairs += [LabeledPair(ctx, gold, 1, SYNTHETIC), LabeledPair(ctx, twin, 0, SYNTHETIC)]

    cfg = LinkerConfig(wide_dim=4, lstm_hidden=4, epochs=200, learning_rate=0.02, batch_size=16, seed=9)
    model, _ = train_linker(pairs, twins, clustered, targets, cfg, build_char_vocab(['Lumier']))

    software = mention('Q1', 'Lumier', 'the', 'apps code')
    lighting = mention('Q2', 'Lumier', 'the', 'bulbs fixtures')
    assert rank_candidates(software, list(twins), model)[0][0] == 'L1'
    assert rank_candidates(lighting, list(twins), model)[0][0] == 'L2'
