"""
CronKGQA and the EmbedKGQA ablation
===================================

Train the QA model over frozen TComplEx embeddings (time-aware scoring)
and over ComplEx embeddings with a learned timestamp table, then compare
stratified hits@1 on the test split. Around ten minutes on one core.
"""

# %% data and embeddings
from tkgqa.evaluation import paired_table, render_table
from tkgqa.pipeline import PipelineConfig, build_dataset, build_embeddings, build_kg, run_qa, split_dataset

cfg = PipelineConfig(seed=1, qa={"epochs": 8})
kg = build_kg(cfg)
folds = split_dataset(build_dataset(kg, cfg))
tcx = build_embeddings(kg, "tcomplex", cfg)
cx = build_embeddings(kg, "complex", cfg)

# %% CronKGQA over TComplEx
cron = run_qa(tcx, folds, "cronkgqa", cfg.qa_config())
print(render_table(cron.report))

# %% EmbedKGQA over ComplEx; time answers have to come from the learned table
embed = run_qa(cx, folds, "embedkgqa", cfg.qa_config())
print(paired_table(embed.report, cron.report, k=1))

# %% a few predictions
for inst in folds["test"][:5]:
    print(inst.question, "->", cron.model.predict_topk(inst, 3), "gold", inst.answers[:3])
