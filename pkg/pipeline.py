"""
Pipeline Stages

One function per CLI subcommand. Every stage reads and writes files inside a
single work directory (see WorkPaths) and returns the list of files it wrote.
main.py wraps each call in the stage ledger so a failure removes partial
outputs.
"""

import os
from typing import Dict, List, Optional, Sequence

from tqdm import tqdm

import baselines
import evalkit
import linker
import weaklabel
from blocking import OverlapBlocker, candidate_reduction
from entity_embed import NegativeSampler, TripletConfig, build_triplets, train_entity_embeddings, write_loss_trace
from kbstore import load_kb, save_kb
from logger_setup import logger
from textprep import CharVocab, TfIdfModel, build_char_vocab, build_tfidf, set_suffix_rules, tokenize
from vectors import load_word_vectors, neighborhood_purity, save_vectors


class WorkPaths:
    """File layout of a work directory."""

    def __init__(self, root):
        self.root = root
        os.makedirs(root, exist_ok=True)

        def join(name):
            return os.path.join(root, name)

        self.state_db = join('pipeline_state.db')
        self.entities = join('entities.jsonl')
        self.mentions = join('mentions.jsonl')
        self.gold = join('gold.tsv')
        self.word_vectors = join('word_vectors.txt')
        self.pairs = join('pairs.tsv')
        self.review_queue = join('review_queue.tsv')
        self.test_mentions = join('mentions_test.jsonl')
        self.test_gold = join('gold_test.tsv')
        self.char_vocab = join('char_vocab.tsv')
        self.word_tfidf = join('word_tfidf.tsv')
        self.entity_vectors = join('entity_vectors.txt')
        self.embed_loss = join('embed_loss.tsv')
        self.checkpoint = join('linker.ckpt')
        self.linker_vocab = join('linker_vocab.tsv')
        self.link_loss = join('link_loss.tsv')
        self.logistic = join('lr_model.json')
        self.metrics = join('metrics.tsv')

    def _p(self, name):
        return os.path.join(self.root, name)

    def split_pairs(self, split):
        return self._p(f'pairs_{split}.tsv')

    def ngram_tfidf(self, n):
        return self._p(f'ngram{n}_tfidf.tsv')

    def predictions(self, method):
        return self._p(f'predictions_{method}.tsv')


def apply_text_rules(config: dict) -> None:
    section = config.get('textprep', {})
    set_suffix_rules(section.get('suffix_drop'), section.get('suffix_rewrite'))


def _context_window(config: dict) -> int:
    return int(config.get('linker', {}).get('context_window', 10))


def _write_splits(pairs: Sequence[weaklabel.LabeledPair], paths: WorkPaths, seed: int,
                  gold: Optional[Dict[str, str]] = None) -> List[str]:
    train, valid, test = weaklabel.split_dataset(pairs, seed)
    written = []
    for split, subset in (('train', train), ('valid', valid), ('test', test)):
        weaklabel.write_pairs(subset, paths.split_pairs(split))
        written.append(paths.split_pairs(split))

    test_mentions = list({pair.mention.mention_id: pair.mention for pair in test}.values())
    weaklabel.write_mentions(test_mentions, paths.test_mentions)
    if gold is None:
        gold = {pair.mention.mention_id: pair.entity_id for pair in pairs if pair.label == 1}
    weaklabel.write_gold({m.mention_id: gold[m.mention_id] for m in test_mentions if m.mention_id in gold},
                         paths.test_gold)
    return written + [paths.test_mentions, paths.test_gold]


def synth_outputs(paths: WorkPaths) -> List[str]:
    return [paths.entities, paths.mentions, paths.gold, paths.word_vectors, paths.pairs,
            paths.split_pairs('train'), paths.split_pairs('valid'), paths.split_pairs('test'),
            paths.test_mentions, paths.test_gold]


def run_synth(config: dict, paths: WorkPaths) -> List[str]:
    """Synthetic KB, mentions, gold links, word vectors and labeled pairs."""
    spec = weaklabel.SyntheticSpec.from_config(config)
    corpus = weaklabel.generate_synthetic_corpus(spec)
    save_kb(corpus.kb, paths.entities)
    weaklabel.write_mentions(corpus.mentions, paths.mentions)
    weaklabel.write_gold(corpus.gold, paths.gold)
    words = weaklabel.synthesize_word_vectors(corpus.industry_words, corpus.filler_words, spec.dim, spec.seed)
    save_vectors(words, paths.word_vectors)

    blocker = OverlapBlocker(corpus.kb, int(config.get('blocking', {}).get('threshold', 2)))
    pairs = weaklabel.synthetic_pairs(corpus.mentions, corpus.gold, corpus.kb,
                                      spec.negatives_per_mention, spec.seed, blocker)
    weaklabel.write_pairs(pairs, paths.pairs)
    _write_splits(pairs, paths, spec.seed, corpus.gold)
    return synth_outputs(paths)


def ingest_outputs(paths: WorkPaths) -> List[str]:
    return [paths.char_vocab, paths.word_tfidf, paths.ngram_tfidf(2), paths.ngram_tfidf(3)]


def run_ingest(config: dict, paths: WorkPaths, kb_path: Optional[str] = None) -> List[str]:
    """Validate the KB and build the char vocab plus word and n-gram tf-idf models."""
    kb = load_kb(kb_path or paths.entities)
    if kb_path and os.path.abspath(kb_path) != os.path.abspath(paths.entities):
        save_kb(kb, paths.entities)
    names = [entity.name for entity in kb]
    build_char_vocab(names).save(paths.char_vocab)
    build_tfidf(tokenize(entity.description) for entity in kb).save(paths.word_tfidf)
    for n in (2, 3):
        baselines.build_ngram_tfidf(names, n).save(paths.ngram_tfidf(n))
    return ingest_outputs(paths)


def embed_outputs(paths: WorkPaths) -> List[str]:
    return [paths.entity_vectors, paths.embed_loss]


def run_train_embed(config: dict, paths: WorkPaths, vectors_path: Optional[str] = None) -> List[str]:
    """Triplet construction and entity-embedding training."""
    cfg = TripletConfig.from_config(config)
    kb = load_kb(paths.entities)
    words = load_word_vectors(vectors_path or paths.word_vectors)
    tfidf = TfIdfModel.load(paths.word_tfidf)

    triplets = build_triplets(kb, words, tfidf, cfg)
    sampler = NegativeSampler(words, {entity.id: tokenize(entity.description) for entity in kb})
    table, report = train_entity_embeddings(triplets, words, cfg, entity_ids=kb.ids, sampler=sampler)
    save_vectors(table, paths.entity_vectors)
    write_loss_trace(paths.embed_loss, report.loss_trace, config, excluded=report.excluded)

    labels = {entity.id: entity.industry for entity in kb if entity.industry}
    if labels:
        k = int(config.get('embedding', {}).get('purity_k', 10))
        purity = neighborhood_purity(table, labels, k)
        logger.info(f"Industry purity of entity vectors at k={k}: {purity:.4f} "
                    f"(random baseline {1 / len(set(labels.values())):.4f})")
    return embed_outputs(paths)


def link_train_outputs(paths: WorkPaths, method: str) -> List[str]:
    if method == 'jel':
        return [paths.checkpoint, paths.linker_vocab, paths.link_loss]
    return [paths.logistic]


def run_train_link(config: dict, paths: WorkPaths, method: str = 'jel',
                   pairs_path: Optional[str] = None, vectors_path: Optional[str] = None) -> List[str]:
    """Train the linker (``jel``) or the logistic baseline (``lr``) on the training pairs."""
    kb = load_kb(paths.entities)
    pairs = weaklabel.read_pairs(pairs_path or paths.split_pairs('train'))
    if method == 'jel':
        cfg = linker.LinkerConfig.from_config(config)
        words = load_word_vectors(vectors_path or paths.word_vectors)
        entity_vectors = load_word_vectors(paths.entity_vectors)
        model, trace = linker.train_linker(pairs, kb, words, entity_vectors, cfg, CharVocab.load(paths.char_vocab))
        model.save(paths.checkpoint, paths.linker_vocab)
        write_loss_trace(paths.link_loss, trace, config)
    elif method == 'lr':
        cfg = baselines.BaselineConfig.from_config(config)
        model, _ = baselines.train_logistic_baseline(pairs, kb, TfIdfModel.load(paths.word_tfidf), cfg)
        model.save(paths.logistic)
    else:
        raise ValueError(f"train-link supports jel and lr, got {method!r}")
    return link_train_outputs(paths, method)


def run_link(config: dict, paths: WorkPaths, method: str = 'jel', mentions_path: Optional[str] = None,
             block_threshold: Optional[int] = None, vectors_path: Optional[str] = None) -> List[str]:
    """Block, score and rank candidates for every mention; write the predictions file."""
    kb = load_kb(paths.entities)
    mentions = weaklabel.read_mentions(mentions_path or paths.test_mentions, _context_window(config))
    threshold = block_threshold if block_threshold is not None else int(config.get('blocking', {}).get('threshold', 2))
    blocker = OverlapBlocker(kb, threshold)
    candidate_lists = [blocker.candidates(mention.surface) for mention in mentions]
    empty = sum(1 for candidates in candidate_lists if not candidates)
    if empty:
        logger.warning(f"{empty} mentions have no candidates after blocking")
    logger.info(f"Blocking kept {sum(map(len, candidate_lists))} candidates; comparison volume reduced by "
                f"{candidate_reduction([len(c) for c in candidate_lists], len(kb)):.2%}")

    records = []
    if method == 'jel':
        words = load_word_vectors(vectors_path or paths.word_vectors)
        entity_vectors = load_word_vectors(paths.entity_vectors)
        model = linker.JELModel.load(paths.checkpoint, paths.linker_vocab, words, entity_vectors)
        for mention, candidates in tqdm(list(zip(mentions, candidate_lists)), desc="jel", disable=None):
            for rank, s in enumerate(linker.score_candidates(mention, candidates, model), start=1):
                records.append(evalkit.PredictionRecord(
                    mention.mention_id, s.entity_id, method, s.d_w, int(s.d_w < model.cfg.threshold),
                    rank, s.d_syx, s.d_smc, s.d_w))
    else:
        cfg = baselines.BaselineConfig.from_config(config)
        logistic = baselines.LogisticBaseline.load(paths.logistic) if method == 'lr' else None
        scorer = baselines.make_scorer(
            method,
            word_tfidf=TfIdfModel.load(paths.word_tfidf),
            ngram_tfidf={n: TfIdfModel.load(paths.ngram_tfidf(n)) for n in (2, 3)},
            logistic=logistic,
        )
        rankings = baselines.rank_mentions(method, mentions, candidate_lists, scorer)
        for mention, ranking in zip(mentions, rankings):
            for rank, (entity_id, score) in enumerate(ranking, start=1):
                records.append(evalkit.PredictionRecord(
                    mention.mention_id, entity_id, method, score,
                    baselines.predict_label(method, score, cfg), rank))

    evalkit.write_predictions(records, paths.predictions(method))
    return [paths.predictions(method)]


def run_eval(config: dict, paths: WorkPaths, methods: Sequence[str],
             predictions_paths: Optional[Sequence[str]] = None, pairs_path: Optional[str] = None,
             gold_path: Optional[str] = None) -> List[str]:
    """Metrics report over one predictions file per method."""
    truth_pairs = weaklabel.read_pairs(pairs_path or paths.split_pairs('test'))
    truth = [(p.mention.mention_id, p.entity_id, p.label) for p in truth_pairs if p.label is not None]
    gold_file = gold_path or paths.test_gold
    gold = weaklabel.read_gold(gold_file) if os.path.exists(gold_file) else {}
    kb = load_kb(paths.entities) if os.path.exists(paths.entities) else None
    k_values = [int(k) for k in config.get('eval', {}).get('k_values', [1, 5, 10])]

    sources = list(predictions_paths) if predictions_paths else [paths.predictions(m) for m in methods]
    reports = []
    for source in sources:
        records = evalkit.read_predictions(source)
        method = records[0].method if records else os.path.basename(source)
        report = evalkit.build_report(method, records, truth, gold, k_values, kb)
        reports.append(report)
        if report.prf is not None:
            logger.info(f"{method}: P {report.prf.precision:.4f} R {report.prf.recall:.4f} "
                        f"F1 {report.prf.f1:.4f} acc {report.prf.accuracy:.4f}")
        logger.info(f"{method}: " + ', '.join(f"P@{k} {v:.4f}" for k, v in report.p_at_k.items()))
    evalkit.write_metrics_report(reports, paths.metrics, config)
    return [paths.metrics]


def label_outputs(paths: WorkPaths) -> List[str]:
    return [paths.pairs, paths.review_queue, paths.split_pairs('train'), paths.split_pairs('valid'),
            paths.split_pairs('test'), paths.test_mentions, paths.test_gold]


def run_label(config: dict, paths: WorkPaths, mentions_path: Optional[str] = None,
              review_labels_path: Optional[str] = None, gold_path: Optional[str] = None) -> List[str]:
    """
    Weak-label every mention against the KB, fold in review decisions, then
    balance and split.
    """
    kb = load_kb(paths.entities)
    mentions = weaklabel.read_mentions(mentions_path or paths.mentions, _context_window(config))
    result = weaklabel.weak_label_pairs(mentions, kb, cfg=weaklabel.WeakLabelConfig.from_config(config))
    weaklabel.write_review_queue(result.review_queue, paths.review_queue)

    labels: Dict = {}
    gold = weaklabel.read_gold(gold_path) if gold_path else None
    if gold is not None:
        labels.update(weaklabel.resolve_queue_from_gold(result.review_queue, gold))
    if review_labels_path:
        labels.update(weaklabel.read_review_labels(review_labels_path))
    reviewed, _ = weaklabel.apply_review_labels(result.review_queue, labels) if labels else ([], [])

    seed = int(config.get('seed', 7))
    pairs = weaklabel.balance_dataset(result.labeled + reviewed, seed)
    weaklabel.write_pairs(pairs, paths.pairs)
    _write_splits(pairs, paths, seed, gold)
    return label_outputs(paths)

