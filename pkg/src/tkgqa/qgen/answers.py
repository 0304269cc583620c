"""Answer procedures for each reasoning type, run against the KG indexes.

``slots`` maps ``head``/``tail``/``event`` to entity ids, ``time`` to a
year, and ``type``/``adj`` to ``before``/``after`` and ``first``/``last``.
"""
from __future__ import annotations

from ..kg import TemporalKG
from .templates import REQUIRED_SLOTS, QuestionTemplate

TIME_ANSWER_MODES = ("years", "start")


def _check_slots(template: QuestionTemplate, slots: dict, kg: TemporalKG) -> None:
    need = REQUIRED_SLOTS[template.qtype, template.form]
    missing = sorted(need - set(k for k, v in slots.items() if v is not None))
    if missing:
        raise ValueError(f"unbound slots {missing} for template {template.seed_id}")
    for name in ("head", "tail", "event"):
        if name in need:
            eid = slots[name]
            if not isinstance(eid, int) or not 0 < eid < len(kg.entities):
                raise KeyError(f"slot {name}={eid!r} is not an entity of this KG")
    if "time" in need and not kg.y_min <= slots["time"] <= kg.y_max:
        raise KeyError(f"slot time={slots['time']} outside {kg.y_min}..{kg.y_max}")
    if "type" in need and slots["type"] not in ("before", "after"):
        raise ValueError(f"type slot must be before/after, got {slots['type']!r}")
    if "adj" in need and slots["adj"] not in ("first", "last"):
        raise ValueError(f"adj slot must be first/last, got {slots['adj']!r}")


def compute_answers(template: QuestionTemplate, slots: dict, kg: TemporalKG,
                    time_answer: str = "years") -> frozenset:
    """Gold answer set: entity ids or years. May be empty (unsatisfiable binding)."""
    _check_slots(template, slots, kg)
    if time_answer not in TIME_ANSWER_MODES:
        raise ValueError(f"time_answer must be one of {TIME_ANSWER_MODES}")
    rel = kg.relation_id(template.relation)
    qtype, form = template.qtype, template.form

    if qtype == "simple_time":
        facts = [f for f in kg.facts_for(slots["head"], rel) if f.object == slots["tail"]]
        if time_answer == "start":
            return frozenset(f.start for f in facts)
        return frozenset(y for f in facts for y in range(f.start, f.end + 1))

    if qtype == "simple_entity":
        year = slots["time"]
        if form == "forward":
            return frozenset(f.object for f in kg.facts_for(slots["head"], rel) if f.contains(year))
        return frozenset(f.subject for f in kg.facts_into(rel, slots["tail"]) if f.contains(year))

    if qtype == "before_after":
        head, tail = slots["head"], slots["tail"]
        holders = kg.facts_into(rel, tail)
        own = [f for f in holders if f.subject == head]
        others = [f for f in holders if f.subject != head]
        if not own:
            return frozenset()
        if slots["type"] == "before":
            anchor = min(f.start for f in own)
            ends = [f.end for f in others if f.end <= anchor]
            if not ends:
                return frozenset()
            best = max(ends)
            return frozenset(f.subject for f in others if f.end == best)
        anchor = max(f.end for f in own)
        starts = [f.start for f in others if f.start >= anchor]
        if not starts:
            return frozenset()
        best = min(starts)
        return frozenset(f.subject for f in others if f.start == best)

    if qtype == "first_last":
        if form == "forward":
            facts = kg.facts_for(slots["head"], rel)
            other = lambda f: f.object  # noqa: E731
        else:
            facts = kg.facts_into(rel, slots["tail"])
            other = lambda f: f.subject  # noqa: E731
        if not facts:
            return frozenset()
        if slots["adj"] == "first":
            best = min(f.start for f in facts)
            chosen = [f for f in facts if f.start == best]
        else:
            best = max(f.end for f in facts)
            chosen = [f for f in facts if f.end == best]
        if template.answer_kind == "time":
            return frozenset({best})
        return frozenset(other(f) for f in chosen)

    # time_join
    tail = slots["tail"]
    holders = kg.facts_into(rel, tail)
    if form == "event":
        span = kg.event_interval(slots["event"])
        if span is None:
            return frozenset()
        refs, exclude = [span], None
    else:
        exclude = slots["head"]
        refs = [(f.start, f.end) for f in holders if f.subject == exclude]
    return frozenset(f.subject for f in holders if f.subject != exclude
                     and any(f.overlaps(a, b) for a, b in refs))
