"""
Wide & Deep Linker

Scores a (mention, entity) pair with two distances and learns both from
labeled pairs with a contrastive loss.

Wide part: the mention surface and the entity name are featurized into
binary subword vectors and pushed through one shared linear layer (a
Siamese pair); D_syx is the Euclidean distance between the two outputs.

Deep part: the mention's left window runs forward through one LSTM, the
right window runs backwards through another, each hidden sequence is
attention-pooled, and the concatenation is projected by a fully connected
layer into the entity-embedding space. D_smc is the Euclidean distance to
the entity's trained vector.

    D_W = lambda_syx * D_syx + lambda_smc * D_smc
    L   = Y * D_W^2 / 2 + (1 - Y) * max(0, m - D_W)^2 / 2
"""

import json
from dataclasses import asdict, dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

import autodiff as ad
from kbstore import Entity, KnowledgeBase, get_entity
from logger_setup import logger
from textprep import CharFeatureVector, CharVocab, DegenerateInputError, featurize_chars, tokenize
from vectors import EmbeddingTable, lookup


class DegenerateContextError(ValueError):
    """A mention has no context words and no usable surface tokens."""


class UnknownEntityError(KeyError):
    """A training pair references an entity id absent from the KB."""


@dataclass
class LinkerConfig:
    lambda_syx: float = 1.0
    lambda_smc: float = 1.0
    margin: float = 1.0
    context_window: int = 10
    wide_dim: int = 128
    lstm_hidden: int = 64
    epochs: int = 40
    learning_rate: float = 0.005
    batch_size: int = 32
    optimizer: str = 'adam'
    decision_threshold: Optional[float] = None
    seed: int = 7

    def __post_init__(self):
        if self.lambda_syx < 0 or self.lambda_smc < 0:
            raise ValueError("linker.lambda_syx and linker.lambda_smc must be non-negative")
        if self.lambda_syx == 0 and self.lambda_smc == 0:
            raise ValueError("linker.lambda_syx and linker.lambda_smc cannot both be zero")
        if self.margin <= 0:
            raise ValueError(f"linker.margin must be positive, got {self.margin}")
        if self.context_window <= 0:
            raise ValueError(f"linker.context_window must be positive, got {self.context_window}")
        if self.batch_size <= 0:
            raise ValueError(f"linker.batch_size must be positive, got {self.batch_size}")
        if self.optimizer not in ad.OPTIMIZERS:
            raise ValueError(f"linker.optimizer must be one of {sorted(ad.OPTIMIZERS)}, got {self.optimizer!r}")

    @property
    def threshold(self) -> float:
        """Binary decision cut on D_W; the margin unless configured."""
        return self.margin if self.decision_threshold is None else self.decision_threshold

    @classmethod
    def from_config(cls, config: dict) -> "LinkerConfig":
        section = config.get('linker', {})
        threshold = section.get('decision_threshold')
        return cls(
            lambda_syx=float(section.get('lambda_syx', 1.0)),
            lambda_smc=float(section.get('lambda_smc', 1.0)),
            margin=float(section.get('margin', 1.0)),
            context_window=int(section.get('context_window', 10)),
            wide_dim=int(section.get('wide_dim', 128)),
            lstm_hidden=int(section.get('lstm_hidden', 64)),
            epochs=int(section.get('epochs', 40)),
            learning_rate=float(section.get('learning_rate', 0.005)),
            batch_size=int(section.get('batch_size', 32)),
            optimizer=str(section.get('optimizer', 'adam')),
            decision_threshold=None if threshold is None else float(threshold),
            seed=int(config.get('seed', 7)),
        )


@dataclass(frozen=True)
class MentionContext:
    """
    A mention with its context windows. Both windows include the mention
    words: ``left_tokens`` ends with them and ``right_tokens`` starts with them.
    """
    mention_id: str
    surface: str
    left_tokens: Tuple[str, ...] = ()
    right_tokens: Tuple[str, ...] = ()


def build_context(mention_id: str, surface: str, before: str, after: str, window: int) -> MentionContext:
    """
    Cut the left and right windows (``window`` words each) around a mention
    from the text before and after it.
    """
    mention_words = tokenize(surface)
    left = (tokenize(before) + mention_words)[-window:]
    right = (mention_words + tokenize(after))[:window]
    return MentionContext(mention_id, surface, tuple(left), tuple(right))


def context_sides(ctx: MentionContext) -> Tuple[Tuple[str, ...], Tuple[str, ...]]:
    """
    The token sequences the two LSTMs consume. Empty contexts fall back to
    the surface tokens on both sides.

    Raises:
        DegenerateContextError: If the surface has no tokens either.
    """
    if ctx.left_tokens or ctx.right_tokens:
        return ctx.left_tokens, ctx.right_tokens
    fallback = tuple(tokenize(ctx.surface))
    if not fallback:
        raise DegenerateContextError(f"Mention {ctx.mention_id!r} has no context and an empty surface")
    logger.debug(f"Mention {ctx.mention_id!r} has empty context; encoding the surface alone")
    return fallback, fallback


@dataclass
class WideModelParams:
    """Shared linear layer of both Siamese arms. ``W`` is stored (h_w x vocab)."""
    W: ad.Param
    b: ad.Param

    @classmethod
    def initialize(cls, vocab_size: int, wide_dim: int, rng: np.random.Generator) -> "WideModelParams":
        return cls(
            W=ad.init_uniform("wide.W", (wide_dim, vocab_size), vocab_size, rng),
            b=ad.init_uniform("wide.b", (wide_dim,), vocab_size, rng),
        )

    def parameters(self) -> List[ad.Param]:
        return [self.W, self.b]


@dataclass
class DeepEncoderParams:
    left: ad.LSTMParams
    right: ad.LSTMParams
    attn_left: ad.Param
    attn_right: ad.Param
    fc_W: ad.Param
    fc_b: ad.Param

    @property
    def output_dim(self) -> int:
        return self.fc_b.value.shape[0]

    @classmethod
    def initialize(cls, word_dim: int, hidden: int, output_dim: int, rng: np.random.Generator) -> "DeepEncoderParams":
        return cls(
            left=ad.LSTMParams.initialize("deep.left", word_dim, hidden, rng),
            right=ad.LSTMParams.initialize("deep.right", word_dim, hidden, rng),
            attn_left=ad.init_uniform("deep.attn_left", (hidden,), hidden, rng),
            attn_right=ad.init_uniform("deep.attn_right", (hidden,), hidden, rng),
            fc_W=ad.init_uniform("deep.fc.W", (output_dim, 2 * hidden), 2 * hidden, rng),
            fc_b=ad.init_uniform("deep.fc.b", (output_dim,), 2 * hidden, rng),
        )

    def parameters(self) -> List[ad.Param]:
        return (self.left.parameters() + self.right.parameters()
                + [self.attn_left, self.attn_right, self.fc_W, self.fc_b])


def wide_distance(params: WideModelParams, T_m: CharFeatureVector, T_e: CharFeatureVector) -> ad.Tensor:
    """D_syx: distance between the shared-layer outputs of the two feature vectors."""
    Y_m = ad.linear_forward(params.W, params.b, T_m)
    Y_e = ad.linear_forward(params.W, params.b, T_e)
    return ad.euclidean_distance(Y_m, Y_e)


def _word_inputs(tokens: Sequence[str], words: EmbeddingTable) -> List[np.ndarray]:
    zero = np.zeros(words.dim)
    out = []
    for token in tokens:
        vector = lookup(words, token)
        out.append(zero if vector is None else vector)
    return out


def encode_mention(params: DeepEncoderParams, ctx: MentionContext, words: EmbeddingTable) -> ad.Tensor:
    """
    V_m = FC([g_l; g_r]). Out-of-vocabulary context words enter as zero
    vectors so sequence positions are kept.
    """
    left_tokens, right_tokens = context_sides(ctx)
    if not left_tokens:
        left_tokens = right_tokens[:1]
    if not right_tokens:
        right_tokens = left_tokens[-1:]

    left_states = ad.lstm_run(params.left, _word_inputs(left_tokens, words))
    right_states = ad.lstm_run(params.right, _word_inputs(tuple(reversed(right_tokens)), words))
    g_l, _ = ad.attention_pool(params.attn_left, left_states)
    g_r, _ = ad.attention_pool(params.attn_right, right_states)
    return ad.linear_forward(params.fc_W, params.fc_b, ad.concat([g_l, g_r]))


def semantic_distance(V_m, V_e) -> ad.Tensor:
    """D_smc: Euclidean distance between the mention encoding and the entity vector."""
    return ad.euclidean_distance(V_m, V_e)


def combined_distance(D_syx, D_smc, cfg: LinkerConfig) -> ad.Tensor:
    return ad.add(ad.scale(D_syx, cfg.lambda_syx), ad.scale(D_smc, cfg.lambda_smc))


def contrastive_loss(Y: int, D_W, m: float) -> ad.Tensor:
    """Y * D_W^2 / 2 + (1 - Y) * max(0, m - D_W)^2 / 2 for Y in {0, 1}."""
    if Y not in (0, 1):
        raise ValueError(f"Label must be 0 or 1, got {Y!r}")
    if Y == 1:
        return ad.scale(ad.square(D_W), 0.5)
    return ad.scale(ad.square(ad.relu(ad.sub(m, D_W))), 0.5)


class PairScore(NamedTuple):
    entity_id: str
    d_syx: float
    d_smc: float
    d_w: float


@dataclass
class JELModel:
    """
    A trained linker: wide and deep parameters with the frozen char vocab,
    the word table the encoder reads and the entity table it is compared to.
    """
    cfg: LinkerConfig
    vocab: CharVocab
    wide: WideModelParams
    deep: DeepEncoderParams
    words: EmbeddingTable
    entity_vectors: EmbeddingTable
    _features: Dict[str, CharFeatureVector] = field(default_factory=dict, repr=False)
    _missing_logged: bool = field(default=False, repr=False)

    def parameters(self) -> List[ad.Param]:
        return self.wide.parameters() + self.deep.parameters()

    def features(self, name: str) -> CharFeatureVector:
        cached = self._features.get(name)
        if cached is None:
            try:
                cached = featurize_chars(name, self.vocab)
            except DegenerateInputError:
                logger.debug(f"Name {name!r} has no subword features")
                cached = CharFeatureVector(indices=np.zeros(0, dtype=np.int64), size=self.vocab.size)
            self._features[name] = cached
        return cached

    def entity_vector(self, entity_id: str) -> np.ndarray:
        vector = lookup(self.entity_vectors, entity_id)
        if vector is None:
            if not self._missing_logged:
                logger.warning(f"Entity {entity_id!r} has no trained vector; using the zero vector "
                               "(further misses are not logged)")
                self._missing_logged = True
            return np.zeros(self.entity_vectors.dim)
        return vector

    def distances(self, mention: MentionContext, entity: Entity,
                  V_m: Optional[ad.Tensor] = None) -> Tuple[ad.Tensor, ad.Tensor, ad.Tensor]:
        """(D_syx, D_smc, D_W) as graph tensors; pass ``V_m`` to reuse an encoding."""
        if V_m is None:
            V_m = encode_mention(self.deep, mention, self.words)
        D_syx = wide_distance(self.wide, self.features(mention.surface), self.features(entity.name))
        D_smc = semantic_distance(V_m, self.entity_vector(entity.id))
        return D_syx, D_smc, combined_distance(D_syx, D_smc, self.cfg)

    def save(self, checkpoint_path, vocab_path) -> None:
        tensors = {p.name: p.value for p in self.parameters()}
        header = {
            'model': 'jel',
            'config': json.dumps(asdict(self.cfg), sort_keys=True),
            'vocab_size': str(self.vocab.size),
            'word_dim': str(self.words.dim),
        }
        ad.save_checkpoint(checkpoint_path, tensors, header)
        self.vocab.save(vocab_path)
        logger.info(f"Saved linker checkpoint to {checkpoint_path}")

    @classmethod
    def load(cls, checkpoint_path, vocab_path, words: EmbeddingTable,
             entity_vectors: EmbeddingTable) -> "JELModel":
        tensors, header = ad.load_checkpoint(checkpoint_path)
        if header.get('model') != 'jel':
            raise ad.CheckpointFormatError(f"{checkpoint_path}: not a linker checkpoint")
        try:
            cfg = LinkerConfig(**json.loads(header['config']))
        except (KeyError, TypeError, json.JSONDecodeError) as e:
            raise ad.CheckpointFormatError(f"{checkpoint_path}: bad config header") from e
        vocab = CharVocab.load(vocab_path)
        if str(vocab.size) != header.get('vocab_size'):
            raise ad.CheckpointFormatError(
                f"{vocab_path}: vocab holds {vocab.size} tokens, checkpoint expects {header.get('vocab_size')}")

        def param(name):
            if name not in tensors:
                raise ad.CheckpointFormatError(f"{checkpoint_path}: missing tensor {name!r}")
            return ad.Param(name, tensors[name])

        wide = WideModelParams(W=param("wide.W"), b=param("wide.b"))
        deep = DeepEncoderParams(
            left=ad.LSTMParams(W=param("deep.left.W"), b=param("deep.left.b")),
            right=ad.LSTMParams(W=param("deep.right.W"), b=param("deep.right.b")),
            attn_left=param("deep.attn_left"),
            attn_right=param("deep.attn_right"),
            fc_W=param("deep.fc.W"),
            fc_b=param("deep.fc.b"),
        )
        if deep.left.input_size != words.dim or deep.output_dim != entity_vectors.dim:
            raise ad.CheckpointFormatError(f"{checkpoint_path}: dimensions do not match the vector tables")
        return cls(cfg=cfg, vocab=vocab, wide=wide, deep=deep, words=words, entity_vectors=entity_vectors)


def initialize_model(vocab: CharVocab, words: EmbeddingTable, entity_vectors: EmbeddingTable,
                     cfg: LinkerConfig) -> JELModel:
    """
    Seeded parameters. The FC bias starts at the mean entity vector, so an
    untrained encoder already sits at the center of the entity space.
    """
    rng = np.random.default_rng(cfg.seed)
    wide = WideModelParams.initialize(vocab.size, cfg.wide_dim, rng)
    deep = DeepEncoderParams.initialize(words.dim, cfg.lstm_hidden, entity_vectors.dim, rng)
    if len(entity_vectors):
        deep.fc_b.value[:] = entity_vectors.matrix.mean(axis=0)
    return JELModel(cfg=cfg, vocab=vocab, wide=wide, deep=deep, words=words, entity_vectors=entity_vectors)


def pair_loss(model: JELModel, mention: MentionContext, entity: Entity, label: int,
              V_m: Optional[ad.Tensor] = None) -> ad.Tensor:
    _, _, D_W = model.distances(mention, entity, V_m)
    return contrastive_loss(label, D_W, model.cfg.margin)


def _extend_vocab(vocab: CharVocab, surfaces: Sequence[str]) -> CharVocab:
    """Copy of ``vocab`` grown with the subword tokens of ``surfaces``, then frozen."""
    extended = CharVocab(token_to_index=dict(vocab.token_to_index))
    for surface in surfaces:
        try:
            featurize_chars(surface, extended)
        except DegenerateInputError:
            continue
    if extended.size > vocab.size:
        logger.info(f"Char vocab extended from {vocab.size} to {extended.size} tokens with training mentions")
    return extended.freeze()


def mention_batches(pairs: Sequence, batch_size: int, rng: np.random.Generator) -> List[List]:
    """
    Minibatches of whole mentions in shuffled order: every pair of a mention
    lands in the same batch, and a batch closes once it holds at least
    ``batch_size`` pairs.
    """
    groups: Dict[str, List] = {}
    for pair in pairs:
        groups.setdefault(pair.mention.mention_id, []).append(pair)
    ordered = list(groups.values())
    batches, batch = [], []
    for position in rng.permutation(len(ordered)):
        batch.extend(ordered[position])
        if len(batch) >= batch_size:
            batches.append(batch)
            batch = []
    if batch:
        batches.append(batch)
    return batches


def train_linker(pairs: Sequence, kb: KnowledgeBase, words: EmbeddingTable, entity_vectors: EmbeddingTable,
                 cfg: LinkerConfig, vocab: CharVocab) -> Tuple[JELModel, List[float]]:
    """
    Minimize the mean contrastive loss over labeled pairs with minibatch
    gradient descent (``cfg.optimizer``). Each mention is encoded once per
    batch and shared by all of its pairs.

    ``pairs`` are objects with ``mention``, ``entity_id`` and ``label``
    attributes (weaklabel.LabeledPair). Entity vectors stay frozen.

    Raises:
        UnknownEntityError: If a pair references an id absent from ``kb``.
    """
    labeled = [pair for pair in pairs if pair.label is not None]
    for pair in labeled:
        if get_entity(kb, pair.entity_id) is None:
            raise UnknownEntityError(f"Pair for mention {pair.mention.mention_id!r} references "
                                     f"unknown entity {pair.entity_id!r}")
    if len(labeled) < len(pairs):
        logger.warning(f"Skipping {len(pairs) - len(labeled)} unlabeled pairs")

    vocab = _extend_vocab(vocab, [pair.mention.surface for pair in labeled])
    model = initialize_model(vocab, words, entity_vectors, cfg)
    optimizer = ad.make_optimizer(cfg.optimizer, model.parameters(), cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed)
    trace: List[float] = []

    for epoch in tqdm(range(cfg.epochs), desc="linker", disable=None):
        epoch_loss = 0.0
        for batch in mention_batches(labeled, cfg.batch_size, rng):
            encodings: Dict[str, ad.Tensor] = {}
            losses = []
            for pair in batch:
                key = pair.mention.mention_id
                if key not in encodings:
                    encodings[key] = encode_mention(model.deep, pair.mention, words)
                entity = get_entity(kb, pair.entity_id)
                losses.append(pair_loss(model, pair.mention, entity, pair.label, encodings[key]))
            batch_loss = ad.scale(ad.total(ad.stack(losses)), 1.0 / len(batch))
            epoch_loss += batch_loss.item() * len(batch)
            batch_loss.backward()
            optimizer.step()
        trace.append(epoch_loss / max(len(labeled), 1))
        logger.debug(f"Linker epoch {epoch + 1}: mean loss {trace[-1]:.6f}")

    if trace:
        logger.info(f"Trained linker on {len(labeled)} pairs; final mean loss {trace[-1]:.4f}")
    return model, trace


def score_candidates(mention: MentionContext, candidates: Sequence[Entity], model: JELModel) -> List[PairScore]:
    """All three distances per candidate, sorted by D_W ascending then entity id."""
    if not candidates:
        return []
    V_m = encode_mention(model.deep, mention, model.words)
    scores = []
    for entity in candidates:
        D_syx, D_smc, D_W = model.distances(mention, entity, V_m)
        scores.append(PairScore(entity.id, D_syx.item(), D_smc.item(), D_W.item()))
    scores.sort(key=lambda s: (s.d_w, s.entity_id))
    return scores


def rank_candidates(mention: MentionContext, candidates: Sequence[Entity], model: JELModel) -> List[Tuple[str, float]]:
    """(entity_id, D_W) ascending; the first element is the predicted link."""
    return [(s.entity_id, s.d_w) for s in score_candidates(mention, candidates, model)]


def pair_distances(model: JELModel, mention: MentionContext, entity: Entity) -> Tuple[float, float, float]:
    D_syx, D_smc, D_W = model.distances(mention, entity)
    return D_syx.item(), D_smc.item(), D_W.item()


def predict_pair(model: JELModel, mention: MentionContext, entity: Entity) -> int:
    """1 iff D_W falls under the decision threshold."""
    return int(pair_distances(model, mention, entity)[2] < model.cfg.threshold)

