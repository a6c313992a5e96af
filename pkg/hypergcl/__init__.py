# coding: utf-8
__version__ = '0.1.0'

from .hypergraph import Hypergraph, load_hypergraph, synth_hypergraph  # Make `Hypergraph` available
from .augment import AugmentationKind, AugmentationSpec, apply_augmentation, parse_spec
from .train import Mode, TrainConfig, run_protocol
