"""Seed question templates and their hand-written paraphrases.

A template's ``form`` says which side of the fact the question is anchored
on:

``forward``   the question names the subject (``{head}``)
``backward``  the question names the object (``{tail}``) and asks for subjects
``event``     time join against the interval of an event entity
``peer``      time join against the named co-participant's interval
"""
from __future__ import annotations

import re
from dataclasses import dataclass

QTYPES = ("simple_entity", "simple_time", "before_after", "first_last", "time_join")
SIMPLE = frozenset({"simple_entity", "simple_time"})
ENTITY_SLOTS = ("head", "tail", "event")
WORD_SLOTS = {"type": ("before", "after"), "adj": ("first", "last")}

REQUIRED_SLOTS = {
    ("simple_time", "forward"): {"head", "tail"},
    ("simple_entity", "forward"): {"head", "time"},
    ("simple_entity", "backward"): {"tail", "time"},
    ("before_after", "forward"): {"head", "tail", "type"},
    ("first_last", "forward"): {"head", "adj"},
    ("first_last", "backward"): {"tail", "adj"},
    ("time_join", "event"): {"tail", "event"},
    ("time_join", "peer"): {"head", "tail"},
}

_SLOT_RE = re.compile(r"\{(\w+)\}")


def slots_in(text: str) -> list[str]:
    return _SLOT_RE.findall(text)


@dataclass(frozen=True)
class QuestionTemplate:
    seed_id: str
    paraphrase_id: int
    text: str
    qtype: str
    relation: str
    answer_kind: str
    form: str = "forward"

    def __post_init__(self):
        key = (self.qtype, self.form)
        if key not in REQUIRED_SLOTS:
            raise ValueError(f"unsupported reasoning type/form {key}")
        if self.answer_kind not in ("entity", "time"):
            raise ValueError(f"answer_kind must be entity or time, got {self.answer_kind!r}")
        found = slots_in(self.text)
        if len(found) != len(set(found)) or set(found) != REQUIRED_SLOTS[key]:
            raise ValueError(f"template {self.text!r} has slots {found}, "
                             f"{self.qtype}/{self.form} needs {sorted(REQUIRED_SLOTS[key])}")
        if self.qtype == "simple_time" and self.answer_kind != "time":
            raise ValueError("simple_time templates answer with times")
        if self.qtype in ("simple_entity", "before_after", "time_join") and self.answer_kind != "entity":
            raise ValueError(f"{self.qtype} templates answer with entities")

    @property
    def slots(self) -> list[str]:
        return slots_in(self.text)

    def render(self, values: dict[str, str]) -> tuple[str, dict[str, tuple[int, int]]]:
        """Fill the slots; returns the question and each slot's ``[a, b)`` span."""
        out, spans, pos = [], {}, 0
        for m in _SLOT_RE.finditer(self.text):
            out.append(self.text[pos:m.start()])
            start = sum(len(x) for x in out)
            value = str(values[m.group(1)])
            out.append(value)
            spans[m.group(1)] = (start, start + len(value))
            pos = m.end()
        out.append(self.text[pos:])
        return "".join(out), spans


# (relation, qtype, form, answer_kind, [paraphrases])
_SEEDS = [
    # member of sports team
    ("member_of_sports_team", "simple_time", "forward", "time", [
        "When did {head} play in {tail}",
        "When was {head} playing in {tail}",
        "Which years did {head} play for {tail}",
        "When did {tail} have {head} in their team",
    ]),
    ("member_of_sports_team", "simple_entity", "forward", "entity", [
        "Which team did {head} play for in {time}",
        "In {time}, which team was {head} playing for",
        "What team was {head} a member of in {time}",
    ]),
    ("member_of_sports_team", "simple_entity", "backward", "entity", [
        "Who played for {tail} in {time}",
        "In {time}, who was playing for {tail}",
        "Which player was on {tail} in {time}",
    ]),
    ("member_of_sports_team", "before_after", "forward", "entity", [
        "Who played for {tail} {type} {head}",
        "Which player was on {tail} {type} {head}",
        "Who was a member of {tail} {type} {head}",
    ]),
    ("member_of_sports_team", "first_last", "forward", "entity", [
        "Which team did {head} play for {adj}",
        "What was the {adj} team of {head}",
        "Which was {head}'s {adj} team",
    ]),
    ("member_of_sports_team", "first_last", "forward", "time", [
        "When did {head} play their {adj} game",
        "In which year did {head} play their {adj} game",
        "When was the {adj} game of {head}",
    ]),
    ("member_of_sports_team", "time_join", "peer", "entity", [
        "Who played with {head} on {tail}",
        "Who were the teammates of {head} on {tail}",
        "Which player was on {tail} at the same time as {head}",
    ]),
    ("member_of_sports_team", "time_join", "event", "entity", [
        "Who played for {tail} during {event}",
        "During {event}, who was playing for {tail}",
        "Which player was on {tail} during {event}",
    ]),
    # position held
    ("position_held", "simple_time", "forward", "time", [
        "When did {head} hold the position of {tail}",
        "When was {head} holding the position of {tail}",
        "During which years did {head} serve as {tail}",
    ]),
    ("position_held", "simple_entity", "backward", "entity", [
        "Who held the position of {tail} in {time}",
        "Who was serving as {tail} in {time}",
        "In {time}, who held the position of {tail}",
    ]),
    ("position_held", "simple_entity", "forward", "entity", [
        "Which position did {head} hold in {time}",
        "What position was held by {head} in {time}",
        "In {time}, which position did {head} hold",
    ]),
    ("position_held", "before_after", "forward", "entity", [
        "Who was the {tail} {type} {head}",
        "Who held the position of {tail} {type} {head}",
        "Who served as {tail} {type} {head}",
    ]),
    ("position_held", "first_last", "backward", "entity", [
        "Who was the {adj} person to hold the position of {tail}",
        "Who held the position of {tail} {adj}",
        "Who served as {tail} {adj}",
    ]),
    ("position_held", "first_last", "forward", "entity", [
        "Which position did {head} hold {adj}",
        "What was the {adj} position held by {head}",
    ]),
    ("position_held", "first_last", "forward", "time", [
        "When did {head} hold their {adj} position",
        "In which year did {head} hold their {adj} position",
    ]),
    ("position_held", "time_join", "event", "entity", [
        "Who held the position of {tail} during {event}",
        "During {event}, who held the position of {tail}",
        "Who served as {tail} during {event}",
    ]),
    # award received
    ("award_received", "simple_time", "forward", "time", [
        "When did {head} receive {tail}",
        "In which year was {head} awarded {tail}",
        "When was {tail} given to {head}",
    ]),
    ("award_received", "simple_entity", "forward", "entity", [
        "Which award did {head} receive in {time}",
        "What award was {head} given in {time}",
        "In {time}, which award did {head} win",
    ]),
    ("award_received", "simple_entity", "backward", "entity", [
        "Who received {tail} in {time}",
        "Who won {tail} in {time}",
        "In {time}, who was awarded {tail}",
    ]),
    ("award_received", "before_after", "forward", "entity", [
        "Who received {tail} {type} {head}",
        "Who was awarded {tail} {type} {head}",
        "Who won {tail} {type} {head}",
    ]),
    ("award_received", "first_last", "forward", "entity", [
        "Which award did {head} receive {adj}",
        "What was the {adj} award won by {head}",
    ]),
    ("award_received", "first_last", "forward", "time", [
        "When did {head} receive their {adj} award",
        "In which year did {head} win their {adj} award",
        "When was the {adj} award given to {head}",
    ]),
    ("award_received", "first_last", "backward", "entity", [
        "Who was the {adj} recipient of {tail}",
        "Who received {tail} {adj}",
        "Who won {tail} {adj}",
    ]),
    ("award_received", "time_join", "event", "entity", [
        "Who received {tail} during {event}",
        "During {event}, who won {tail}",
        "Who was awarded {tail} during {event}",
    ]),
    # spouse
    ("spouse", "simple_time", "forward", "time", [
        "When was {head} married to {tail}",
        "When were {head} and {tail} married",
        "During which years was {head} the spouse of {tail}",
    ]),
    ("spouse", "simple_entity", "forward", "entity", [
        "Who was {head} married to in {time}",
        "Who was the spouse of {head} in {time}",
        "In {time}, who was {head} married to",
    ]),
    ("spouse", "before_after", "forward", "entity", [
        "Who was married to {tail} {type} {head}",
        "Who was the spouse of {tail} {type} {head}",
    ]),
    ("spouse", "first_last", "forward", "entity", [
        "Who was the {adj} spouse of {head}",
        "Who did {head} marry {adj}",
    ]),
    ("spouse", "first_last", "forward", "time", [
        "When was the {adj} marriage of {head}",
        "In which year was {head} married for the {adj} time",
    ]),
    ("spouse", "time_join", "event", "entity", [
        "Who was married to {tail} during {event}",
        "During {event}, who was the spouse of {tail}",
    ]),
    # employer
    ("employer", "simple_time", "forward", "time", [
        "When did {head} work for {tail}",
        "When was {head} employed by {tail}",
        "During which years did {tail} employ {head}",
    ]),
    ("employer", "simple_entity", "forward", "entity", [
        "Which organization did {head} work for in {time}",
        "Who employed {head} in {time}",
        "In {time}, where did {head} work",
    ]),
    ("employer", "simple_entity", "backward", "entity", [
        "Who worked for {tail} in {time}",
        "Who was employed by {tail} in {time}",
        "In {time}, who worked for {tail}",
    ]),
    ("employer", "before_after", "forward", "entity", [
        "Who worked for {tail} {type} {head}",
        "Who was employed by {tail} {type} {head}",
    ]),
    ("employer", "first_last", "forward", "entity", [
        "Which organization did {head} work for {adj}",
        "Who was the {adj} employer of {head}",
    ]),
    ("employer", "first_last", "forward", "time", [
        "When did {head} work at their {adj} employer",
        "In which year was {head} at their {adj} employer",
    ]),
    ("employer", "time_join", "peer", "entity", [
        "Who worked with {head} at {tail}",
        "Who was employed by {tail} at the same time as {head}",
        "Which colleagues did {head} have at {tail}",
    ]),
    ("employer", "time_join", "event", "entity", [
        "Who worked for {tail} during {event}",
        "During {event}, who was employed by {tail}",
    ]),
]


def _seed_id(relation: str, qtype: str, form: str, kind: str) -> str:
    return f"{relation}/{qtype}/{form}/{kind}"


def builtin_templates() -> list[QuestionTemplate]:
    """The shipped catalog: one entry per (seed, paraphrase)."""
    catalog = []
    for relation, qtype, form, kind, texts in _SEEDS:
        sid = _seed_id(relation, qtype, form, kind)
        for pid, text in enumerate(texts):
            catalog.append(QuestionTemplate(sid, pid, text, qtype, relation, kind, form))
    return catalog


def group_by_seed(catalog) -> dict[str, list[QuestionTemplate]]:
    seeds: dict[str, list[QuestionTemplate]] = {}
    for t in catalog:
        seeds.setdefault(t.seed_id, []).append(t)
    for sid, ts in seeds.items():
        first = ts[0]
        for t in ts[1:]:
            if (t.qtype, t.form, t.relation, t.answer_kind) != (first.qtype, first.form, first.relation,
                                                                 first.answer_kind):
                raise ValueError(f"paraphrases of seed {sid} disagree on type, form, relation or answer kind")
            if set(t.slots) != set(first.slots):
                raise ValueError(f"paraphrases of seed {sid} disagree on slots")
    return seeds


def catalog_index(catalog) -> dict[tuple[str, int], QuestionTemplate]:
    return {(t.seed_id, t.paraphrase_id): t for t in catalog}
