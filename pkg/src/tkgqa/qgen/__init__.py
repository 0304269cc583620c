"""Template question generation, gold answers, splits and verification."""
from .answers import TIME_ANSWER_MODES, compute_answers
from .dataset import (QAInstance, SplitInfeasible, SplitSpec, assign_splits, dataset_stats, generate_dataset,
                      read_jsonl, to_jsonl, write_jsonl)
from .verify import VerifyReport, Violation, brute_force_answers, verify_dataset
from .templates import QTYPES, SIMPLE, QuestionTemplate, builtin_templates, catalog_index, group_by_seed

__all__ = [
    "QTYPES", "SIMPLE", "TIME_ANSWER_MODES", "QAInstance", "QuestionTemplate", "SplitInfeasible", "SplitSpec",
    "assign_splits", "builtin_templates", "catalog_index", "compute_answers", "dataset_stats",
    "generate_dataset", "group_by_seed", "read_jsonl", "to_jsonl", "write_jsonl", "VerifyReport", "Violation",
    "brute_force_answers", "verify_dataset",
]
