"""Question encoder and the CronKGQA / EmbedKGQA answer scorers."""
from .encoder import EncoderConfig, encode, encode_backward, init_encoder
from .model import (AnchorSet, QAConfig, QAModel, QATrainLog, embedkgqa_mode, evaluate_hits, extract_anchors,
                    load_model, save_model, train_qa)
from .tokenize import TokenVocab, pad_batch, question_tokens

__all__ = [
    "AnchorSet", "EncoderConfig", "QAConfig", "QAModel", "QATrainLog", "TokenVocab", "embedkgqa_mode", "encode",
    "encode_backward", "evaluate_hits", "extract_anchors", "init_encoder", "load_model", "pad_batch",
    "question_tokens", "save_model", "train_qa",
]
