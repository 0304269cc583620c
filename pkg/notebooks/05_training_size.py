"""
Complex-question accuracy against training-set size
===================================================

Train the CronKGQA model on nested 10% / 30% / 100% subsets of the training
questions and print the hits@10 curve. Roughly ten minutes on one core.
"""

# %% setup
from tkgqa.ablations import curve_csv, size_ablation
from tkgqa.pipeline import PipelineConfig, build_dataset, build_embeddings, build_kg, split_dataset

cfg = PipelineConfig(seed=1, qa={"epochs": 8})
kg = build_kg(cfg)
folds = split_dataset(build_dataset(kg, cfg))
tcx = build_embeddings(kg, "tcomplex", cfg)

# %% sweep
rows = size_ablation([0.1, 0.3, 1.0], tcx, folds, cfg.qa_config())
print(curve_csv(rows))
