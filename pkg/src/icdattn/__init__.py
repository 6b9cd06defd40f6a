"""Attentional matching of diagnosis descriptions to ICD codes."""
from .corpus import (AdmissionRecord, CodeDefinition, DatasetSplit, RawNote, Vocab,
                     extract_descriptions, select_top_codes, split_dataset, tokenize)
from .model import ICDCoder, TrainConfig
from .numerics import Rng

__version__ = "0.1.0"
