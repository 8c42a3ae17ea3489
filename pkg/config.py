"""
Configuration Module

This module handles loading the run configuration from a YAML file, merging it
over the built-in defaults and applying ``section.key=value`` overrides given on
the command line.
"""

import copy
import os

import yaml

from logger_setup import logger

# Default configuration file path
DEFAULT_CONFIG_PATH = 'config.yaml'

DEFAULT_CONFIG = {
    'project_name': 'kg-entity-linker',
    'seed': 7,
    'textprep': {
        'suffix_drop': ['incorporated', 'inc', 'corp', 'corporation', 'llc', 'ltd', 'limited', 'co'],
        'suffix_rewrite': {'holdings': 'hlds', 'technologies': 'tech', 'international': 'intl'},
    },
    'embedding': {
        'margin': 2.0,
        'positives_per_entity': 10,
        'negatives_per_entity': 10,
        'epochs': 200,
        'learning_rate': 0.05,
        'resample_negatives': False,
        'purity_k': 10,
    },
    'linker': {
        'lambda_syx': 1.0,
        'lambda_smc': 1.0,
        'margin': 1.0,
        'context_window': 10,
        'wide_dim': 128,
        'lstm_hidden': 64,
        'epochs': 40,
        'learning_rate': 0.005,
        'batch_size': 32,
        'optimizer': 'adam',
        'decision_threshold': None,
    },
    'blocking': {
        'threshold': 2,
    },
    'baselines': {
        'string_threshold': 0.8,
        'context_threshold': 0.0,
        'lr_epochs': 500,
        'lr_learning_rate': 0.5,
    },
    'weaklabel': {
        'negative_below': 0.5,
        'review_above': 0.75,
    },
    'synthetic': {
        'entities': 200,
        'industries': 5,
        'ambiguity': 0.2,
        'pairs': 2000,
        'negatives_per_mention': 3,
        'description_length': 30,
        'context_min': 20,
        'context_max': 40,
        'dim': 50,
    },
    'eval': {
        'k_values': [1, 5, 10],
    },
    'log_level': 'INFO',
    'log_to_file': False,
    'log_file_path': 'logs/entity_linker.log',
}


def _deep_merge(base, update):
    """Recursively merge ``update`` into a copy of ``base``."""
    merged = copy.deepcopy(base)
    for key, value in (update or {}).items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def apply_override(config, override):
    """
    Apply a single ``section.key=value`` override in place.

    The value is parsed as a YAML scalar so numbers, booleans and lists keep
    their types.

    Raises:
        ValueError: If the override has no '=' or an empty key.
    """
    if '=' not in override:
        raise ValueError(f"Override must look like section.key=value, got: {override!r}")
    dotted_key, raw_value = override.split('=', 1)
    keys = [k for k in dotted_key.strip().split('.') if k]
    if not keys:
        raise ValueError(f"Override has an empty key: {override!r}")
    value = yaml.safe_load(raw_value) if raw_value.strip() else None

    node = config
    for key in keys[:-1]:
        if not isinstance(node.get(key), dict):
            node[key] = {}
        node = node[key]
    node[keys[-1]] = value


def load_config(config_path=None, overrides=None):
    """
    Load configuration from a YAML file merged over the defaults.

    Args:
        config_path (str, optional): Path to the configuration YAML file.
            When None, DEFAULT_CONFIG_PATH is used if it exists, otherwise
            the built-in defaults alone.
        overrides (list of str, optional): ``section.key=value`` strings.

    Returns:
        dict: The loaded configuration dictionary, or None if loading failed.
    """
    explicit = config_path is not None
    if config_path is None:
        config_path = DEFAULT_CONFIG_PATH

    file_config = {}
    try:
        if os.path.exists(config_path):
            with open(config_path, 'r', encoding='utf-8') as f:
                file_config = yaml.safe_load(f) or {}
            if not isinstance(file_config, dict):
                logger.error(f"Configuration file {config_path} does not hold a mapping")
                return None
            logger.debug(f"Configuration loaded from {config_path}")
        elif explicit:
            logger.error(f"Configuration file not found at {config_path}")
            return None
    except yaml.YAMLError as e:
        logger.error(f"Error parsing configuration file {config_path}: {e}")
        return None

    config = _deep_merge(DEFAULT_CONFIG, file_config)

    try:
        for override in overrides or []:
            apply_override(config, override)
    except (ValueError, yaml.YAMLError) as e:
        logger.error(f"Invalid configuration override: {e}")
        return None

    return config
