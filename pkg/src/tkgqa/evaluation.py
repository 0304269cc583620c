"""Hits@k metrics and reasoning-type stratified reports."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

from .qgen.templates import QTYPES, SIMPLE

STRATA = ("overall", "simple", "complex", *QTYPES, "entity", "time")
GOLD_MODES = ("any", "all")

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "EvalReport",
    "type": "object",
    "required": ["ks", "gold_mode", "total", "strata", "fingerprint"],
    "additionalProperties": False,
    "properties": {
        "ks": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
        "gold_mode": {"enum": list(GOLD_MODES)},
        "total": {"type": "integer", "minimum": 0},
        "fingerprint": {"type": "string", "pattern": "^[0-9a-f]{16}$"},
        "config": {"type": "object"},
        "strata": {
            "type": "object",
            "required": list(STRATA),
            "additionalProperties": False,
            "properties": {
                name: {
                    "type": "object",
                    "required": ["count", "metrics"],
                    "additionalProperties": False,
                    "properties": {
                        "count": {"type": "integer", "minimum": 0},
                        "metrics": {
                            "oneOf": [
                                {"type": "null"},
                                {"type": "object",
                                 "patternProperties": {"^hits@[0-9]+$": {"type": "number", "minimum": 0,
                                                                         "maximum": 1}},
                                 "additionalProperties": False},
                            ]
                        },
                    },
                }
                for name in STRATA
            },
        },
    },
}


def hits_at_k(ranked, gold, k: int, mode: str = "any") -> int:
    """1 if the top ``k`` of ``ranked`` hit ``gold``, else 0.

    ``mode="any"`` needs one gold answer in the top ``k``; ``mode="all"``
    needs ``min(k, |gold|)`` of them, i.e. full recall as far as ``k`` allows.

    >>> hits_at_k(["A", "B", "C"], {"B"}, 1), hits_at_k(["A", "B", "C"], {"B"}, 2)
    (0, 1)
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    gold = set(gold)
    if not gold:
        raise ValueError("gold answer set is empty")
    if mode not in GOLD_MODES:
        raise ValueError(f"mode must be one of {GOLD_MODES}")
    found = len(gold.intersection(list(ranked)[:k]))
    if mode == "any":
        return int(found > 0)
    return int(found >= min(k, len(gold)))


def strata_of(instance) -> tuple[str, ...]:
    return ("overall", "simple" if instance.qtype in SIMPLE else "complex", instance.qtype, instance.answer_kind)


def fingerprint(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True, default=str).encode()).hexdigest()[:16]


@dataclass
class EvalReport:
    ks: tuple[int, ...]
    gold_mode: str
    counts: dict[str, int]
    metrics: dict[str, dict[str, float] | None]
    config: dict = field(default_factory=dict)

    @property
    def total(self) -> int:
        return self.counts["overall"]

    def get(self, stratum: str, k: int) -> float | None:
        m = self.metrics[stratum]
        return None if m is None else m[f"hits@{k}"]

    def to_json(self) -> dict:
        return {
            "ks": list(self.ks),
            "gold_mode": self.gold_mode,
            "total": self.total,
            "fingerprint": fingerprint(self.config),
            "config": self.config,
            "strata": {s: {"count": self.counts[s], "metrics": self.metrics[s]} for s in STRATA},
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, d: dict) -> "EvalReport":
        return cls(tuple(d["ks"]), d["gold_mode"], {s: v["count"] for s, v in d["strata"].items()},
                   {s: v["metrics"] for s, v in d["strata"].items()}, d.get("config", {}))


def report_from_rankings(instances, rankings, ks=(1, 10), gold_mode: str = "any",
                         config: dict | None = None) -> EvalReport:
    """Aggregate hits@k from per-instance ranked answer labels."""
    ks = tuple(sorted(set(ks)))
    sums = {s: {k: 0 for k in ks} for s in STRATA}
    counts = {s: 0 for s in STRATA}
    for inst, ranked in zip(instances, rankings, strict=True):
        gold = set(inst.answers)
        for s in strata_of(inst):
            counts[s] += 1
            for k in ks:
                sums[s][k] += hits_at_k(ranked, gold, k, gold_mode)
    metrics = {s: ({f"hits@{k}": sums[s][k] / counts[s] for k in ks} if counts[s] else None) for s in STRATA}
    return EvalReport(ks, gold_mode, counts, metrics, dict(config or {}))


def stratified_eval(model, instances, ks=(1, 10), gold_mode: str = "any", config: dict | None = None) -> EvalReport:
    """Evaluate ``model`` (anything with ``predict_slots``/``slot_label``) on a dev or test split."""
    bad = sorted({i.split for i in instances} - {"dev", "test"}, key=str)
    if bad:
        raise ValueError(f"stratified_eval expects dev/test instances, got splits {bad}")
    kmax = min(max(ks), model.n_answers)
    slots = model.predict_slots(list(instances), kmax) if instances else []
    rankings = [[model.slot_label(int(x)) for x in row] for row in slots]
    return report_from_rankings(instances, rankings, ks, gold_mode, config)


def render_table(report: EvalReport) -> str:
    """Fixed-width text table, one row per stratum."""
    cols = [f"hits@{k}" for k in report.ks]
    lines = [f"{'stratum':<14}{'count':>7}" + "".join(f"{c:>10}" for c in cols)]
    for s in STRATA:
        m = report.metrics[s]
        vals = "".join(f"{'-' if m is None else format(m[c], '.3f'):>10}" for c in cols)
        lines.append(f"{s:<14}{report.counts[s]:>7}{vals}")
    return "\n".join(lines) + "\n"


def paired_table(cx: EvalReport, tcx: EvalReport, k: int = 1) -> str:
    """Side-by-side hits@k for the ComplEx and TComplEx runs."""
    rows = [("Simple", "simple"), ("Complex", "complex"), ("Entity Answer", "entity"),
            ("Time Answer", "time"), ("Overall", "overall")]
    out = [f"{'question type':<16}{'CX':>8}{'TCX':>8}"]
    for name, s in rows:
        a, b = cx.get(s, k), tcx.get(s, k)
        out.append(f"{name:<16}{'-' if a is None else format(a, '.3f'):>8}{'-' if b is None else format(b, '.3f'):>8}")
    return "\n".join(out) + "\n"
