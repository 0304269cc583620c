"""In-memory temporal knowledge graph.

Facts are quintuples ``(subject, relation, object, start, end)`` over integer
years, with closed intervals. Entity and timestamp id 0 are reserved for the
DUMMY sentinel used by the QA model; they never occur in a fact.
"""
from __future__ import annotations

import json
import os
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple

import numpy as np

DUMMY = "<DUMMY>"
EVENT_RELATION = "significant_event"
EVENT_OBJECT = "occurred"
EVENT_FLAG = "E"


class KGFormatError(ValueError):
    """Raised when a facts file or vocabulary cannot be parsed."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class TemporalFact(NamedTuple):
    subject: int
    relation: int
    object: int
    start: int
    end: int
    is_event: bool = False

    def contains(self, year: int) -> bool:
        return self.start <= year <= self.end

    def overlaps(self, start: int, end: int) -> bool:
        return self.start <= end and start <= self.end


@dataclass
class Vocabulary:
    """Bidirectional label <-> dense id map. Index 0 may hold a sentinel."""

    labels: list[str] = field(default_factory=list)
    index: dict[str, int] = field(default_factory=dict)

    @classmethod
    def from_labels(cls, labels: Iterable[str]) -> "Vocabulary":
        vocab = cls()
        for label in labels:
            vocab.add(label)
        return vocab

    def add(self, label: str) -> int:
        idx = self.index.get(label)
        if idx is None:
            idx = len(self.labels)
            self.labels.append(label)
            self.index[label] = idx
        return idx

    def __len__(self) -> int:
        return len(self.labels)

    def __contains__(self, label: str) -> bool:
        return label in self.index

    def __getitem__(self, label: str) -> int:
        return self.index[label]

    def label(self, idx: int) -> str:
        return self.labels[idx]


class TemporalKG:
    """Immutable fact store with the lookup indexes used downstream.

    Parameters
    ----------
    facts : sequence of TemporalFact
        Facts over ids of ``entities`` and ``relations``.
    entities, relations : Vocabulary
        ``entities`` must carry :data:`DUMMY` at id 0.
    year_range : (int, int)
        Closed range of years; timestamp id ``k`` maps to year ``y_min + k - 1``.
    """

    def __init__(self, facts, entities: Vocabulary, relations: Vocabulary, year_range):
        if len(entities) == 0 or entities.label(0) != DUMMY:
            raise ValueError("entity vocabulary must reserve id 0 for the DUMMY sentinel")
        y_min, y_max = int(year_range[0]), int(year_range[1])
        if y_min > y_max:
            raise ValueError(f"empty year range {y_min}..{y_max}")
        self.entities = entities
        self.relations = relations
        self.y_min, self.y_max = y_min, y_max
        self.facts: tuple[TemporalFact, ...] = tuple(facts)
        seen = set()
        for fact in self.facts:
            self._check_fact(fact)
            key = fact[:5]
            if key in seen:
                raise ValueError(f"duplicate fact {self.describe(fact)}")
            seen.add(key)
        self._build_indexes()

    def _check_fact(self, fact: TemporalFact) -> None:
        if fact.start > fact.end:
            raise ValueError(f"interval start {fact.start} > end {fact.end}")
        if not (self.y_min <= fact.start and fact.end <= self.y_max):
            raise ValueError(f"interval {fact.start}-{fact.end} outside year range")
        for e in (fact.subject, fact.object):
            if not 0 < e < len(self.entities):
                raise ValueError(f"entity id {e} is DUMMY or out of range")
        if not 0 <= fact.relation < len(self.relations):
            raise ValueError(f"relation id {fact.relation} out of range")
        if fact.is_event and self.relations.label(fact.relation) != EVENT_RELATION:
            raise ValueError(f"event facts must use relation {EVENT_RELATION!r}")

    def _build_indexes(self) -> None:
        by_sr = defaultdict(list)
        by_ro = defaultdict(list)
        by_s = defaultdict(list)
        by_event = {}
        for i, f in enumerate(self.facts):
            by_sr[f.subject, f.relation].append(i)
            by_ro[f.relation, f.object].append(i)
            by_s[f.subject].append(i)
            if f.is_event:
                by_event.setdefault(f.subject, []).append(i)
        self.by_subject_relation = {k: tuple(v) for k, v in by_sr.items()}
        self.by_relation_object = {k: tuple(v) for k, v in by_ro.items()}
        self.by_subject = {k: tuple(v) for k, v in by_s.items()}
        self.by_event = {k: tuple(v) for k, v in by_event.items()}

    # -- sizes and id maps -------------------------------------------------

    @property
    def n_entities(self) -> int:
        """Number of real entities (DUMMY excluded)."""
        return len(self.entities) - 1

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    @property
    def n_timestamps(self) -> int:
        """Number of real timestamps (DUMMY excluded)."""
        return self.y_max - self.y_min + 1

    @property
    def years(self) -> range:
        return range(self.y_min, self.y_max + 1)

    def year_to_id(self, year: int) -> int:
        if not self.y_min <= year <= self.y_max:
            raise KeyError(f"year {year} outside {self.y_min}..{self.y_max}")
        return int(year) - self.y_min + 1

    def id_to_year(self, tid: int) -> int:
        if not 1 <= tid <= self.n_timestamps:
            raise KeyError(f"timestamp id {tid} is DUMMY or out of range")
        return self.y_min + int(tid) - 1

    def entity_id(self, label: str) -> int:
        return self.entities[label]

    def relation_id(self, label: str) -> int:
        return self.relations[label]

    def entity_label(self, eid: int) -> str:
        return self.entities.label(eid)

    def relation_label(self, rid: int) -> str:
        return self.relations.label(rid)

    def describe(self, fact: TemporalFact) -> str:
        return (
            f"({self.entities.label(fact.subject)}, {self.relations.label(fact.relation)}, "
            f"{self.entities.label(fact.object)}, {fact.start}, {fact.end})"
        )

    @property
    def event_entities(self) -> frozenset[int]:
        return frozenset(self.by_event)

    def is_event_entity(self, eid: int) -> bool:
        return eid in self.by_event

    # -- queries -----------------------------------------------------------

    def facts_for(self, subject: int, relation: int) -> list[TemporalFact]:
        return [self.facts[i] for i in self.by_subject_relation.get((subject, relation), ())]

    def facts_into(self, relation: int, obj: int) -> list[TemporalFact]:
        return [self.facts[i] for i in self.by_relation_object.get((relation, obj), ())]

    def event_interval(self, event: int) -> tuple[int, int] | None:
        idx = self.by_event.get(event)
        if not idx:
            return None
        facts = [self.facts[i] for i in idx]
        return min(f.start for f in facts), max(f.end for f in facts)

    def __len__(self) -> int:
        return len(self.facts)

    def __iter__(self) -> Iterator[TemporalFact]:
        return iter(self.facts)

    def as_array(self) -> np.ndarray:
        """Facts as an ``(n, 6)`` int64 array: s, r, o, start, end, is_event."""
        if not self.facts:
            return np.zeros((0, 6), dtype=np.int64)
        return np.array(self.facts, dtype=np.int64)

    def stats(self) -> dict:
        per_rel = defaultdict(int)
        for f in self.facts:
            per_rel[self.relations.label(f.relation)] += 1
        return {
            "facts": len(self.facts),
            "event_facts": sum(f.is_event for f in self.facts),
            "entities": self.n_entities,
            "relations": self.n_relations,
            "years": [self.y_min, self.y_max],
            "facts_per_relation": dict(sorted(per_rel.items())),
        }


def facts_valid_at(kg: TemporalKG, subject: int, relation: int, year: int) -> list[TemporalFact]:
    """All facts for ``(subject, relation)`` whose closed interval contains ``year``."""
    return [f for f in kg.facts_for(subject, relation) if f.start <= year <= f.end]


# -- file formats ----------------------------------------------------------


def vocab_path_for(facts_path) -> Path:
    return Path(str(facts_path) + ".vocab.json")


def _parse_year(text: str, lineno: int, what: str) -> int:
    try:
        return int(text, 10)
    except ValueError:
        raise KGFormatError(f"{what} year {text!r} is not a base-10 integer", lineno) from None


def load_kg(facts_path, vocab_path=None) -> TemporalKG:
    """Read a facts TSV into a :class:`TemporalKG`.

    Ids come from the vocabulary sidecar when one is given or found next to
    the facts file (``<facts>.vocab.json``); otherwise they are assigned in
    order of first appearance.
    """
    facts_path = Path(facts_path)
    if vocab_path is None and vocab_path_for(facts_path).exists():
        vocab_path = vocab_path_for(facts_path)
    entities = Vocabulary.from_labels([DUMMY])
    relations = Vocabulary()
    fixed = False
    declared = None
    if vocab_path is not None:
        entities, relations, declared = _read_vocab(vocab_path)
        fixed = True

    def lookup(vocab: Vocabulary, label: str, lineno: int, kind: str) -> int:
        if fixed:
            if label not in vocab:
                raise KGFormatError(f"{kind} {label!r} missing from vocabulary", lineno)
            return vocab[label]
        return vocab.add(label)

    rows = []
    with open(facts_path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) not in (5, 6):
                raise KGFormatError(f"expected 5 or 6 tab-separated fields, got {len(parts)}", lineno)
            s, r, o = parts[0], parts[1], parts[2]
            if not (s and r and o):
                raise KGFormatError("empty label", lineno)
            if s == DUMMY or o == DUMMY:
                raise KGFormatError(f"label {DUMMY!r} is reserved", lineno)
            start = _parse_year(parts[3], lineno, "start")
            end = _parse_year(parts[4], lineno, "end")
            if start > end:
                raise KGFormatError(f"interval start {start} > end {end}", lineno)
            is_event = False
            if len(parts) == 6 and parts[5] != "":
                if parts[5] != EVENT_FLAG:
                    raise KGFormatError(f"unknown flag value {parts[5]!r}", lineno)
                is_event = True
                if r != EVENT_RELATION:
                    raise KGFormatError(f"event facts must use relation {EVENT_RELATION!r}", lineno)
            fact = TemporalFact(
                lookup(entities, s, lineno, "entity"),
                lookup(relations, r, lineno, "relation"),
                lookup(entities, o, lineno, "entity"),
                start,
                end,
                is_event,
            )
            rows.append((lineno, fact))
    if not rows:
        raise KGFormatError("no facts in file")
    seen = {}
    for lineno, fact in rows:
        if fact[:5] in seen:
            raise KGFormatError(f"duplicate fact (first seen on line {seen[fact[:5]]})", lineno)
        seen[fact[:5]] = lineno
    y_min = min(f.start for _, f in rows)
    y_max = max(f.end for _, f in rows)
    if declared is not None:
        if declared[0] > y_min or declared[1] < y_max:
            raise KGFormatError(f"facts span {y_min}-{y_max}, outside declared years {declared[0]}-{declared[1]}")
        y_min, y_max = declared
    return TemporalKG([f for _, f in rows], entities, relations, (y_min, y_max))


def _read_vocab(path) -> tuple[Vocabulary, Vocabulary, tuple[int, int] | None]:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    try:
        ent_map, rel_map = data["entities"], data["relations"]
    except (KeyError, TypeError):
        raise KGFormatError(f"{path}: vocabulary needs 'entities' and 'relations' maps") from None
    entities = _vocab_from_map(ent_map, path, "entities")
    relations = _vocab_from_map(rel_map, path, "relations")
    if len(entities) == 0 or entities.label(0) != DUMMY:
        raise KGFormatError(f"{path}: entity id 0 must be {DUMMY!r}")
    years = data.get("years")
    if years is not None:
        years = (int(years[0]), int(years[1]))
    return entities, relations, years


def _vocab_from_map(mapping: dict, path, kind: str) -> Vocabulary:
    labels = [None] * len(mapping)
    for label, idx in mapping.items():
        if not isinstance(idx, int) or not 0 <= idx < len(labels) or labels[idx] is not None:
            raise KGFormatError(f"{path}: {kind} ids must be a dense bijection onto 0..{len(labels) - 1}")
        labels[idx] = label
    return Vocabulary.from_labels(labels)


def write_kg(kg: TemporalKG, facts_path, write_vocab: bool = True) -> None:
    """Write the facts TSV and, by default, the vocabulary sidecar."""
    facts_path = Path(facts_path)
    lines = []
    for f in kg.facts:
        cols = [kg.entity_label(f.subject), kg.relation_label(f.relation), kg.entity_label(f.object),
                str(f.start), str(f.end)]
        if f.is_event:
            cols.append(EVENT_FLAG)
        lines.append("\t".join(cols))
    tmp = facts_path.with_name(facts_path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, facts_path)
    if write_vocab:
        vocab = {
            "entities": {label: i for i, label in enumerate(kg.entities.labels)},
            "relations": {label: i for i, label in enumerate(kg.relations.labels)},
            "years": [kg.y_min, kg.y_max],
        }
        with open(vocab_path_for(facts_path), "w", encoding="utf-8") as fh:
            json.dump(vocab, fh, indent=1, sort_keys=False)
            fh.write("\n")
