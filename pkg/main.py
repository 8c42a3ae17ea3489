"""
Entity Linking Toolkit - Main Application

This is the command-line entry point. Each subcommand runs one pipeline
stage inside a work directory; ``all`` runs the whole synthetic pipeline:

    synth -> ingest -> train-embed -> train-link (jel, lr) -> link (every method) -> eval
"""

import argparse
import os
import sys
import time

import pipeline
from baselines import METHODS
from config import load_config
from logger_setup import DEFAULT_LOG_FILE, logger, setup_logging
from state_manager import StateManager


def _add_shared_arguments(parser):
    parser.add_argument('--config', type=str, default=None,
                        help='Path to configuration file (default: config.yaml when present)')
    parser.add_argument('--work-dir', type=str, default='work',
                        help='Directory holding every input and output of the pipeline')
    parser.add_argument('--seed', type=int, default=None,
                        help='Seed for every random draw of the run (overrides the config)')
    parser.add_argument('--set', dest='overrides', action='append', default=[], metavar='SECTION.KEY=VALUE',
                        help='Override a configuration value; repeatable')
    parser.add_argument('--log-level', type=str,
                        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'],
                        help='Set logging level')


def _add_synth_arguments(parser):
    parser.add_argument('--entities', type=int, help='Number of KB entities')
    parser.add_argument('--industries', type=int, help='Number of industries (at least 2)')
    parser.add_argument('--ambiguity', type=float, help='Share of entities whose name is carried by two entities')
    parser.add_argument('--pairs', type=int, help='Approximate number of labeled pairs')


def parse_arguments(argv=None):
    """Parse command-line arguments."""
    parser = argparse.ArgumentParser(description='Entity linking toolkit: wide & deep linker, baselines and evaluation')
    subparsers = parser.add_subparsers(dest='command', required=True)

    synth = subparsers.add_parser('synth', help='Generate a synthetic KB, mentions, gold links and word vectors')
    _add_synth_arguments(synth)

    ingest = subparsers.add_parser('ingest', help='Validate the KB and build the char vocab and tf-idf models')
    ingest.add_argument('--kb', type=str, help='Entities JSON-lines file (default: <work-dir>/entities.jsonl)')

    embed = subparsers.add_parser('train-embed', help='Train entity embeddings with the triplet margin loss')
    embed.add_argument('--vectors', type=str, help='Word-vector text file (default: <work-dir>/word_vectors.txt)')

    train_link = subparsers.add_parser('train-link', help='Train the linker or the logistic baseline')
    train_link.add_argument('--method', choices=['jel', 'lr'], default='jel')
    train_link.add_argument('--pairs', type=str, help='Labeled pairs (default: <work-dir>/pairs_train.tsv)')
    train_link.add_argument('--vectors', type=str, help='Word-vector text file')

    link = subparsers.add_parser('link', help='Block, score and rank candidates for a mentions file')
    link.add_argument('--method', choices=list(METHODS), default='jel')
    link.add_argument('--mentions', type=str, help='Mentions JSON-lines file (default: <work-dir>/mentions_test.jsonl)')
    link.add_argument('--block-threshold', type=int, help='Minimum shared bigrams for a candidate')
    link.add_argument('--vectors', type=str, help='Word-vector text file')

    evaluate = subparsers.add_parser('eval', help='Write the metrics report for predictions files')
    evaluate.add_argument('--methods', nargs='+', choices=list(METHODS),
                          help='Methods to evaluate (default: every method with a predictions file)')
    evaluate.add_argument('--predictions', nargs='+', help='Explicit predictions files')
    evaluate.add_argument('--pairs', type=str, help='Labeled truth pairs (default: <work-dir>/pairs_test.tsv)')
    evaluate.add_argument('--gold', type=str, help='Gold links (default: <work-dir>/gold_test.tsv)')

    label = subparsers.add_parser('label', help='Weak-label mentions against the KB')
    label.add_argument('--mentions', type=str, help='Mentions JSON-lines file (default: <work-dir>/mentions.jsonl)')
    label.add_argument('--review-labels', type=str, help='Reviewer decisions for the review queue')
    label.add_argument('--gold', type=str, help='Gold links used to resolve the review queue')

    run_all = subparsers.add_parser('all', help='Run the full pipeline on a synthetic corpus')
    _add_synth_arguments(run_all)

    for sub in subparsers.choices.values():
        _add_shared_arguments(sub)
    return parser.parse_args(argv)


def collect_overrides(args):
    """Fold --seed and the synth shortcuts into ``section.key=value`` overrides."""
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    for flag in ('entities', 'industries', 'ambiguity', 'pairs'):
        value = getattr(args, flag, None)
        if value is not None and args.command in ('synth', 'all'):
            overrides.append(f"synthetic.{flag}={value}")
    return overrides


def run_stage(state_manager, stage, outputs, action):
    """
    Run one stage under the ledger. On any error the declared outputs are
    removed and the message goes to stderr.

    Returns:
        bool: True if the stage completed with all outputs written
    """
    state_manager.begin_stage(stage, outputs)
    start_time = time.time()
    try:
        action()
    except Exception as e:
        logger.debug("Stage failure details", exc_info=True)
        state_manager.fail_stage(stage, f"{type(e).__name__}: {e}")
        print(f"Error in stage {stage}: {e}", file=sys.stderr)
        return False
    ok = state_manager.complete_stage(stage)
    if ok:
        logger.info(f"Stage {stage} finished in {time.time() - start_time:.2f} seconds")
    return ok


def _existing_methods(paths):
    return [method for method in METHODS if os.path.exists(paths.predictions(method))]


def dispatch(args, config, paths, state_manager):
    """Run the stage(s) for ``args.command``; True iff every stage succeeded."""
    command = args.command
    if command == 'synth':
        return run_stage(state_manager, 'synth', pipeline.synth_outputs(paths),
                         lambda: pipeline.run_synth(config, paths))
    if command == 'ingest':
        return run_stage(state_manager, 'ingest', pipeline.ingest_outputs(paths),
                         lambda: pipeline.run_ingest(config, paths, args.kb))
    if command == 'train-embed':
        return run_stage(state_manager, 'train-embed', pipeline.embed_outputs(paths),
                         lambda: pipeline.run_train_embed(config, paths, args.vectors))
    if command == 'train-link':
        return run_stage(state_manager, f'train-link:{args.method}', pipeline.link_train_outputs(paths, args.method),
                         lambda: pipeline.run_train_link(config, paths, args.method, args.pairs, args.vectors))
    if command == 'link':
        return run_stage(state_manager, f'link:{args.method}', [paths.predictions(args.method)],
                         lambda: pipeline.run_link(config, paths, args.method, args.mentions,
                                                   args.block_threshold, args.vectors))
    if command == 'eval':
        methods = args.methods or _existing_methods(paths)
        if not methods and not args.predictions:
            print("No predictions files to evaluate", file=sys.stderr)
            return False
        return run_stage(state_manager, 'eval', [paths.metrics],
                         lambda: pipeline.run_eval(config, paths, methods, args.predictions, args.pairs, args.gold))
    if command == 'label':
        return run_stage(state_manager, 'label', pipeline.label_outputs(paths),
                         lambda: pipeline.run_label(config, paths, args.mentions, args.review_labels, args.gold))
    if command == 'all':
        steps = [
            ('synth', pipeline.synth_outputs(paths), lambda: pipeline.run_synth(config, paths)),
            ('ingest', pipeline.ingest_outputs(paths), lambda: pipeline.run_ingest(config, paths)),
            ('train-embed', pipeline.embed_outputs(paths), lambda: pipeline.run_train_embed(config, paths)),
        ]
        for method in ('jel', 'lr'):
            steps.append((f'train-link:{method}', pipeline.link_train_outputs(paths, method),
                          lambda method=method: pipeline.run_train_link(config, paths, method)))
        for method in METHODS:
            steps.append((f'link:{method}', [paths.predictions(method)],
                          lambda method=method: pipeline.run_link(config, paths, method)))
        steps.append(('eval', [paths.metrics], lambda: pipeline.run_eval(config, paths, list(METHODS))))
        for stage, outputs, action in steps:
            if not run_stage(state_manager, stage, outputs, action):
                logger.warning(f"Skipping the stages after {stage}")
                return False
        return True
    raise ValueError(f"Unknown command: {command}")


def main(argv=None):
    """Main application entry point. Returns the process exit code."""
    args = parse_arguments(argv)

    config = load_config(args.config, collect_overrides(args))
    if not config:
        print("Failed to load configuration. Exiting.", file=sys.stderr)
        return 1

    log_level = args.log_level or config.get('log_level', 'INFO')
    setup_logging(
        log_level=log_level,
        log_file=config.get('log_file_path', DEFAULT_LOG_FILE),
        log_to_console=True,
        log_to_file=config.get('log_to_file', False)
    )
    pipeline.apply_text_rules(config)

    paths = pipeline.WorkPaths(args.work_dir)
    state_manager = StateManager(paths.state_db)
    try:
        start_time = time.time()
        success = dispatch(args, config, paths, state_manager)
        logger.info(f"{args.command} finished in {time.time() - start_time:.2f} seconds")
        summary = state_manager.get_summary()
        logger.debug(f"Stage summary: {summary}")
    except KeyboardInterrupt:
        print("Processing interrupted by user", file=sys.stderr)
        success = False
    finally:
        state_manager.close()
    return 0 if success else 1


if __name__ == "__main__":
    sys.exit(main())
