"""Unsupervised dependency parsing with a jointly trained generative
valence grammar and discriminative clustering parser, coupled through
dual-decomposition agreement decoding."""

from .corpus import (
    Corpus,
    DepTree,
    Sentence,
    Token,
    filter_corpus,
    parse_conllu,
    read_conllu,
    write_conllu,
)
from .dmv import ConstraintConfig, DmvParams
from .cmst import CmstModel
from .decoder import DDConfig, DDResult, dd_decode
from .trainer import TrainConfig, TrainState, joint_train, pretrain, train

__version__ = "0.1.0"

__all__ = [
    "Corpus", "DepTree", "Sentence", "Token",
    "filter_corpus", "parse_conllu", "read_conllu", "write_conllu",
    "ConstraintConfig", "DmvParams", "CmstModel",
    "DDConfig", "DDResult", "dd_decode",
    "TrainConfig", "TrainState", "joint_train", "pretrain", "train",
]
