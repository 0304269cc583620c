"""Independent dataset checker.

This module deliberately does not use :mod:`tkgqa.qgen.answers` or the KG
indexes: slots are recovered from the question text and annotations, and
every answer set is recomputed by nested loops over the raw fact list.
"""
from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field

from ..kg import TemporalKG
from .templates import ENTITY_SLOTS, WORD_SLOTS, catalog_index


@dataclass
class Violation:
    index: int
    kind: str  # "answer" | "split" | "annotation"
    message: str

    def __str__(self):
        return f"instance {self.index}: {self.kind}: {self.message}"


@dataclass
class VerifyReport:
    n_instances: int = 0
    violations: list[Violation] = field(default_factory=list)

    def count(self, kind: str) -> int:
        return sum(v.kind == kind for v in self.violations)

    @property
    def answer_violations(self) -> int:
        return self.count("answer") + self.count("annotation")

    @property
    def split_violations(self) -> int:
        return self.count("split")

    @property
    def ok(self) -> bool:
        return not self.violations

    def summary(self) -> str:
        return (f"{len(self.violations)} violations ({self.answer_violations} answer, "
                f"{self.split_violations} split) in {self.n_instances} instances")

    def to_json(self) -> dict:
        return {"n_instances": self.n_instances, "answer_violations": self.answer_violations,
                "split_violations": self.split_violations,
                "violations": [{"index": v.index, "kind": v.kind, "message": v.message}
                               for v in self.violations]}


def _slot_names_by_position(text: str) -> list[str]:
    return re.findall(r"\{(\w+)\}", text)


def _recover_slots(inst, template) -> dict | None:
    """Assign mention values back to slot names by re-rendering the template."""
    names = _slot_names_by_position(template.text)
    ent_names = [n for n in names if n in ENTITY_SLOTS]
    ents = sorted(inst.entities, key=lambda e: tuple(e["span"]))
    times = sorted(inst.times, key=lambda t: tuple(t["span"]))
    if len(ents) != len(ent_names) or len(times) != names.count("time"):
        return None
    values = {}
    for name, e in zip(ent_names, ents):
        values[name] = e["id"]
    if times:
        values["time"] = times[0]["year"]
    word_names = [n for n in names if n in WORD_SLOTS]
    for choice in itertools.product(*(WORD_SLOTS[n] for n in word_names)):
        trial = dict(values, **dict(zip(word_names, choice)))
        rendered = template.text
        for n in names:
            rendered = rendered.replace("{" + n + "}", str(trial[n]), 1)
        if rendered == inst.question:
            return trial
    return None


def labelled_rows(kg: TemporalKG) -> list[tuple]:
    """The fact list as (subject, relation, object, start, end, is_event) label tuples."""
    return [(kg.entity_label(f.subject), kg.relation_label(f.relation), kg.entity_label(f.object), f.start, f.end,
             f.is_event) for f in kg.facts]


def brute_force_answers(template, slots: dict, kg: TemporalKG, time_answer: str = "years",
                        all_rows: list[tuple] | None = None) -> set:
    """Answer labels/years from direct scans of the flat fact list."""
    if all_rows is None:
        all_rows = labelled_rows(kg)
    rel = template.relation
    rows = [r[:5] for r in all_rows if r[1] == rel]
    q = template.qtype
    out: set = set()
    if q == "simple_time":
        for s, _, o, a, b in rows:
            if s == slots["head"] and o == slots["tail"]:
                out.update([a] if time_answer == "start" else range(a, b + 1))
    elif q == "simple_entity":
        y = slots["time"]
        for s, _, o, a, b in rows:
            if a <= y <= b:
                if template.form == "forward" and s == slots["head"]:
                    out.add(o)
                if template.form == "backward" and o == slots["tail"]:
                    out.add(s)
    elif q == "before_after":
        h, p = slots["head"], slots["tail"]
        own = [(a, b) for s, _, o, a, b in rows if s == h and o == p]
        if own:
            if slots["type"] == "before":
                anchor = min(a for a, _ in own)
                best = None
                for s, _, o, a, b in rows:
                    if o == p and s != h and b <= anchor and (best is None or b > best):
                        best = b
                for s, _, o, a, b in rows:
                    if o == p and s != h and b == best:
                        out.add(s)
            else:
                anchor = max(b for _, b in own)
                best = None
                for s, _, o, a, b in rows:
                    if o == p and s != h and a >= anchor and (best is None or a < best):
                        best = a
                for s, _, o, a, b in rows:
                    if o == p and s != h and a == best:
                        out.add(s)
    elif q == "first_last":
        forward = template.form == "forward"
        mine = [r for r in rows if (r[0] == slots["head"] if forward else r[2] == slots["tail"])]
        if mine:
            first = slots["adj"] == "first"
            best = min(r[3] for r in mine) if first else max(r[4] for r in mine)
            for r in mine:
                if (r[3] if first else r[4]) == best:
                    out.add(best if template.answer_kind == "time" else (r[2] if forward else r[0]))
    elif q == "time_join":
        p = slots["tail"]
        if template.form == "event":
            ev = [(r[3], r[4]) for r in all_rows if r[5] and r[0] == slots["event"]]
            refs, excluded = ev, None
        else:
            excluded = slots["head"]
            refs = [(a, b) for s, _, o, a, b in rows if s == excluded and o == p]
        for s, _, o, a, b in rows:
            if o == p and s != excluded:
                for ra, rb in refs:
                    if a <= rb and ra <= b:
                        out.add(s)
    return out


def _mention_problems(inst, kg: TemporalKG) -> list[str]:
    problems = []
    spans = []
    for e in inst.entities:
        a, b = e["span"]
        if not 0 <= a < b <= len(inst.question):
            problems.append(f"entity span {e['span']} outside the text")
            continue
        if inst.question[a:b] != e["mention"]:
            problems.append(f"entity span {e['span']} does not cover mention {e['mention']!r}")
        if e["id"] not in kg.entities.index or e["id"] == kg.entities.labels[0]:
            problems.append(f"entity id {e['id']!r} not in KG")
        spans.append((a, b))
    for t in inst.times:
        a, b = t["span"]
        if not 0 <= a < b <= len(inst.question) or inst.question[a:b] != t["mention"]:
            problems.append(f"time span {t['span']} does not cover mention {t['mention']!r}")
        if not kg.y_min <= t["year"] <= kg.y_max:
            problems.append(f"time {t['year']} outside KG years")
        spans.append((a, b))
    spans.sort()
    for (a1, b1), (a2, b2) in zip(spans, spans[1:]):
        if a2 < b1:
            problems.append("overlapping mention spans")
    if not inst.answers:
        problems.append("empty gold answer set")
    return problems


def verify_dataset(instances, kg: TemporalKG, catalog, time_answer: str = "years") -> VerifyReport:
    """Recompute every answer and check the split constraints.

    Each instance contributes at most one answer/annotation violation and at
    most one split violation.
    """
    index = catalog_index(catalog)
    report = VerifyReport(n_instances=len(instances))
    rows = labelled_rows(kg)
    events = {r[0] for r in rows if r[5]}
    bindings = []
    for i, inst in enumerate(instances):
        template = index.get((inst.seed_id, inst.paraphrase_id))
        if template is None:
            report.violations.append(Violation(i, "annotation", f"unknown template {inst.seed_id}#{inst.paraphrase_id}"))
            bindings.append(None)
            continue
        problems = _mention_problems(inst, kg)
        slots = _recover_slots(inst, template)
        if slots is None:
            problems.append("question text does not match its template and annotations")
        if problems:
            report.violations.append(Violation(i, "annotation", "; ".join(problems)))
            bindings.append(None)
            continue
        bindings.append((inst.seed_id,) + tuple(sorted((k, str(v)) for k, v in slots.items())))
        expected = brute_force_answers(template, slots, kg, time_answer, rows)
        if set(inst.answers) != expected or len(inst.answers) != len(expected):
            report.violations.append(Violation(i, "answer", f"gold {sorted(inst.answers, key=str)} != "
                                                           f"recomputed {sorted(expected, key=str)}"))

    train_entities: set[str] = set()
    for inst in instances:
        if inst.split == "train":
            train_entities.update(e["id"] for e in inst.entities)
    train_entities -= events
    fold_of_binding: dict = {}
    for i, inst in enumerate(instances):
        if bindings[i] is not None:
            fold_of_binding.setdefault(bindings[i], set()).add(inst.split)
    for i, inst in enumerate(instances):
        msgs = []
        if inst.split not in ("train", "dev", "test"):
            msgs.append(f"bad split label {inst.split!r}")
        elif inst.split != "train":
            leaked = sorted({e["id"] for e in inst.entities} & train_entities)
            if leaked:
                msgs.append(f"{inst.split} question mentions train entities {leaked}")
            if inst.head is not None or inst.tail is not None or inst.time is not None:
                msgs.append("head/tail/time annotation present outside train")
        if bindings[i] is not None and len(fold_of_binding[bindings[i]]) > 1:
            msgs.append(f"paraphrase group spans folds {sorted(fold_of_binding[bindings[i]], key=str)}")
        if msgs:
            report.violations.append(Violation(i, "split", "; ".join(msgs)))
    return report
