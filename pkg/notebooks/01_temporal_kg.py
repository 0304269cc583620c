"""
A seeded toy temporal knowledge graph
=====================================

Build the toy KG, look at its shape, and query it by (subject, relation)
and by year. Runs in about a second.
"""

# %% generate and summarise
from tkgqa.kg import facts_valid_at, load_kg, write_kg
from tkgqa.toy import generate_toy_kg

kg = generate_toy_kg(seed=7)
print(kg.stats())

# %% facts are closed year intervals; the index answers "which facts hold in year y"
fact = kg.facts[0]
print("first fact:", kg.describe(fact))
for year in (fact.start - 1, fact.start, fact.end, fact.end + 1):
    hits = facts_valid_at(kg, fact.subject, fact.relation, year)
    print(year, [kg.describe(f) for f in hits])

# %% event entities carry their own time span
event = sorted(kg.event_entities)[0]
print(kg.entity_label(event), "spans", kg.event_interval(event))

# %% TSV round trip (the vocabulary sidecar pins ids and the year range)
import tempfile
from pathlib import Path

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "toy.tsv"
    write_kg(kg, path)
    back = load_kg(path)
    print("round trip identical:", back.facts == kg.facts)
