"""QA instances, dataset generation, leakage-free splits and JSONL I/O."""
from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..kg import TemporalKG
from .answers import compute_answers
from .templates import ENTITY_SLOTS, QTYPES, WORD_SLOTS, QuestionTemplate, group_by_seed

log = logging.getLogger(__name__)

SPLITS = ("train", "dev", "test")
# share of each reasoning type in the generated data
QTYPE_SHARE = {"simple_entity": 0.26, "simple_time": 0.18, "before_after": 0.07,
               "first_last": 0.33, "time_join": 0.16}


@dataclass
class QAInstance:
    question: str
    seed_id: str
    paraphrase_id: int
    qtype: str
    answer_kind: str
    entities: list[dict]
    times: list[dict]
    answers: list
    split: str | None = None
    head: str | None = None
    tail: str | None = None
    time: int | None = None
    slots: dict = field(default_factory=dict, repr=False, compare=False)

    def binding_key(self) -> tuple:
        return (self.seed_id,) + tuple(sorted((k, str(v)) for k, v in self.slots.items()))

    def to_json(self) -> dict:
        d = {
            "question": self.question,
            "seed_id": self.seed_id,
            "paraphrase_id": self.paraphrase_id,
            "qtype": self.qtype,
            "answer_kind": self.answer_kind,
            "entities": [{"mention": e["mention"], "span": list(e["span"]), "id": e["id"]} for e in self.entities],
            "times": [{"mention": t["mention"], "span": list(t["span"]), "year": t["year"]} for t in self.times],
            "answers": list(self.answers),
            "split": self.split,
        }
        if self.split == "train":
            d.update(head=self.head, tail=self.tail, time=self.time)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "QAInstance":
        return cls(
            question=d["question"], seed_id=d["seed_id"], paraphrase_id=int(d["paraphrase_id"]), qtype=d["qtype"],
            answer_kind=d["answer_kind"],
            entities=[{"mention": e["mention"], "span": tuple(e["span"]), "id": e["id"]} for e in d["entities"]],
            times=[{"mention": t["mention"], "span": tuple(t["span"]), "year": int(t["year"])} for t in d["times"]],
            answers=list(d["answers"]), split=d.get("split"), head=d.get("head"), tail=d.get("tail"),
            time=d.get("time"),
        )

    @property
    def is_simple(self) -> bool:
        return self.qtype in ("simple_entity", "simple_time")


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.70
    dev: float = 0.15
    test: float = 0.15
    seed: int = 0
    partition_templates: bool = False

    def __post_init__(self):
        fr = (self.train, self.dev, self.test)
        if min(fr) < 0 or abs(sum(fr) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must be non-negative and sum to 1, got {fr}")

    @property
    def fractions(self) -> dict[str, float]:
        return {"train": self.train, "dev": self.dev, "test": self.test}


class SplitInfeasible(ValueError):
    def __init__(self, message: str, conflicts: int):
        self.conflicts = conflicts
        super().__init__(f"{message} ({conflicts} conflicting instances)")


def make_instance(template: QuestionTemplate, slots: dict, kg: TemporalKG, answers) -> QAInstance:
    values = {}
    for name in template.slots:
        v = slots[name]
        values[name] = kg.entity_label(v) if name in ENTITY_SLOTS else str(v)
    text, spans = template.render(values)
    entities, times = [], []
    for name in template.slots:
        if name in ENTITY_SLOTS:
            entities.append({"mention": values[name], "span": spans[name], "id": values[name]})
        elif name == "time":
            times.append({"mention": values[name], "span": spans[name], "year": int(slots[name])})
    entities.sort(key=lambda e: e["span"])
    times.sort(key=lambda t: t["span"])
    if template.answer_kind == "entity":
        gold = sorted(kg.entity_label(a) for a in answers)
    else:
        gold = sorted(int(a) for a in answers)
    return QAInstance(
        question=text, seed_id=template.seed_id, paraphrase_id=template.paraphrase_id, qtype=template.qtype,
        answer_kind=template.answer_kind, entities=entities, times=times, answers=gold,
        head=kg.entity_label(slots["head"]) if slots.get("head") is not None else None,
        tail=kg.entity_label(slots["tail"]) if slots.get("tail") is not None else None,
        time=int(slots["time"]) if slots.get("time") is not None else None,
        slots={k: v for k, v in slots.items() if k in template.slots},
    )


def candidate_bindings(template: QuestionTemplate, kg: TemporalKG) -> list[dict]:
    """Every slot binding the KG supports for this seed, in a deterministic order.

    Bindings are not yet filtered for non-empty answers.
    """
    if template.relation not in kg.relations:
        return []
    rel = kg.relation_id(template.relation)
    facts = sorted((kg.facts[i] for (s, r), idx in kg.by_subject_relation.items() if r == rel for i in idx),
                   key=lambda f: f[:5])
    qtype, form = template.qtype, template.form
    out: list[dict] = []
    if qtype == "simple_time":
        pairs = sorted({(f.subject, f.object) for f in facts})
        out = [{"head": s, "tail": o} for s, o in pairs]
    elif qtype == "simple_entity":
        side = "head" if form == "forward" else "tail"
        keys = sorted({(f.subject if form == "forward" else f.object, y)
                       for f in facts for y in range(f.start, f.end + 1)})
        out = [{side: e, "time": y} for e, y in keys]
    elif qtype == "before_after":
        pairs = sorted({(f.subject, f.object) for f in facts})
        out = [{"head": s, "tail": o, "type": ty} for s, o in pairs for ty in WORD_SLOTS["type"]]
    elif qtype == "first_last":
        side = "head" if form == "forward" else "tail"
        ents = sorted({f.subject if form == "forward" else f.object for f in facts})
        out = [{side: e, "adj": adj} for e in ents for adj in WORD_SLOTS["adj"]]
    elif qtype == "time_join":
        if form == "event":
            tails = sorted({f.object for f in facts})
            events = sorted(kg.event_entities)
            out = [{"tail": o, "event": ev} for o in tails for ev in events]
        else:
            pairs = sorted({(f.subject, f.object) for f in facts})
            out = [{"head": s, "tail": o} for s, o in pairs]
    return out


def _allocate(target: int, pools: dict[str, int], qtype_of: dict[str, str]) -> dict[str, int]:
    """Spread ``target`` over seeds: by reasoning-type share, then evenly, capped by pool size."""
    alloc = {sid: 0 for sid in pools}
    by_type: dict[str, list[str]] = {}
    for sid in pools:
        by_type.setdefault(qtype_of[sid], []).append(sid)
    shares = {q: QTYPE_SHARE[q] for q in by_type}
    total_share = sum(shares.values())
    left = target
    room = dict(pools)
    # water-filling: repeatedly hand out what is left to seeds that still have room
    for _ in range(50):
        if left <= 0:
            break
        open_types = [q for q in by_type if any(room[s] > 0 for s in by_type[q])]
        if not open_types:
            break
        share_sum = sum(shares[q] for q in open_types) or total_share
        handed = 0
        for q in open_types:
            quota = int(round(left * shares[q] / share_sum))
            seeds = [s for s in by_type[q] if room[s] > 0]
            for i, s in enumerate(seeds):
                n = quota // len(seeds) + (1 if i < quota % len(seeds) else 0)
                n = min(n, room[s], left - handed)
                alloc[s] += n
                room[s] -= n
                handed += n
        if handed == 0:
            for s in sorted(room, key=lambda s: -room[s]):
                if left - handed <= 0:
                    break
                n = min(room[s], left - handed)
                alloc[s] += n
                room[s] -= n
                handed += n
        left -= handed
    return alloc


def generate_dataset(kg: TemporalKG, catalog, split_spec: SplitSpec = SplitSpec(), target_count: int = 20000,
                     time_answer: str = "years", report: dict | None = None) -> list[QAInstance]:
    """Sample ``target_count`` questions with computed gold answers and split labels.

    Seeds whose relation is missing or which have no answerable binding are
    skipped and listed in ``report["skipped"]``.
    """
    if target_count < 0:
        raise ValueError("target_count must be non-negative")
    rng = np.random.default_rng([split_spec.seed, 2])
    seeds = group_by_seed(catalog)
    pools: dict[str, list[tuple[dict, int]]] = {}
    skipped = []
    for sid, paraphrases in seeds.items():
        base = paraphrases[0]
        bindings = []
        for slots in candidate_bindings(base, kg):
            ans = compute_answers(base, slots, kg, time_answer)
            if ans:
                bindings.append(slots)
        if not bindings:
            skipped.append(sid)
            log.warning("seed template %s is unsatisfiable on this KG; skipped", sid)
            continue
        pools[sid] = [(b, p) for b in bindings for p in range(len(paraphrases))]
    alloc = _allocate(target_count, {s: len(p) for s, p in pools.items()},
                      {s: seeds[s][0].qtype for s in pools})
    instances = []
    seen_text = set()
    for sid in sorted(pools):
        n = alloc[sid]
        if n == 0:
            continue
        pool = pools[sid]
        pick = rng.choice(len(pool), size=n, replace=False)
        by_pid = {t.paraphrase_id: t for t in seeds[sid]}
        for k in np.sort(pick):
            slots, pid = pool[int(k)]
            template = by_pid[pid]
            inst = make_instance(template, slots, kg, compute_answers(template, slots, kg, time_answer))
            if inst.question in seen_text:
                continue
            seen_text.add(inst.question)
            instances.append(inst)
    order = rng.permutation(len(instances))
    instances = [instances[i] for i in order]
    if instances:
        event_labels = {kg.entity_label(e) for e in kg.event_entities}
        instances = assign_splits(instances, split_spec, event_labels, report=report)
    counts = Counter(i.qtype for i in instances)
    log.info("generated %d/%d questions: %s", len(instances), target_count, dict(sorted(counts.items())))
    if report is not None:
        report["skipped"] = skipped
        report["generated"] = len(instances)
        report["target"] = target_count
        report["per_qtype"] = {q: counts.get(q, 0) for q in QTYPES}
    return instances


# -- splits ---------------------------------------------------------------


class _UnionFind:
    def __init__(self):
        self.parent: dict = {}

    def find(self, x):
        self.parent.setdefault(x, x)
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            if str(ra) > str(rb):
                ra, rb = rb, ra
            self.parent[rb] = ra


def group_key(inst: QAInstance) -> tuple:
    """Identity of the (seed, slot binding) a question was filled from."""
    if inst.slots:
        return inst.binding_key()
    ents = tuple(e["id"] for e in sorted(inst.entities, key=lambda e: e["span"]))
    times = tuple(t["year"] for t in sorted(inst.times, key=lambda t: t["span"]))
    return (inst.seed_id, "mentions", tuple(sorted(ents)), tuple(sorted(times)))


def assign_splits(instances: list[QAInstance], split_spec: SplitSpec, event_entities=frozenset(),
                  report: dict | None = None) -> list[QAInstance]:
    """Label instances train/dev/test under the leakage constraints.

    All paraphrases of one (seed, binding) share a fold, and no non-event
    entity is mentioned in both train and dev/test. Connected components of
    the entity co-mention graph are packed greedily, largest first, into the
    fold furthest below its target fraction. Dev/test instances lose their
    head/tail/time annotation.
    """
    event_entities = set(event_entities)
    groups: dict[tuple, list[int]] = {}
    for i, inst in enumerate(instances):
        groups.setdefault(group_key(inst), []).append(i)
    uf = _UnionFind()
    unit_of_group = {}
    for gk, members in groups.items():
        ents = sorted({e["id"] for i in members for e in instances[i].entities} - event_entities)
        if not ents:
            unit_of_group[gk] = ("group", gk)
            continue
        node = ("entity", ents[0])
        for e in ents[1:]:
            uf.union(node, ("entity", e))
        unit_of_group[gk] = node
    units: dict = {}
    for gk, node in unit_of_group.items():
        root = uf.find(node) if node[0] == "entity" else node
        units.setdefault(root, []).append(gk)
    rng = np.random.default_rng([split_spec.seed, 3])
    keys = sorted(units, key=str)
    keys = [keys[i] for i in rng.permutation(len(keys))]
    sizes = {u: sum(len(groups[g]) for g in units[u]) for u in keys}
    keys.sort(key=lambda u: -sizes[u])
    n = len(instances)
    target = {s: split_spec.fractions[s] * n for s in SPLITS}
    filled = {s: 0 for s in SPLITS}
    for u in keys:
        live = [s for s in SPLITS if target[s] > 0]
        fold = max(live, key=lambda s: ((target[s] - filled[s]) / target[s], -SPLITS.index(s)))
        filled[fold] += sizes[u]
        for gk in units[u]:
            for i in groups[gk]:
                instances[i].split = fold
    empty = [s for s in SPLITS if target[s] > 0 and filled[s] == 0]
    if empty:
        raise SplitInfeasible(f"folds {empty} received no questions; the entity co-mention graph has "
                              f"{len(keys)} components, largest {sizes[keys[0]]} of {n} questions",
                              conflicts=sizes[keys[0]])
    dropped = 0
    if split_spec.partition_templates:
        instances, dropped = _partition_templates(instances, split_spec, rng)
    for inst in instances:
        if inst.split != "train":
            inst.head = inst.tail = inst.time = None
    if report is not None:
        report["split_sizes"] = dict(Counter(i.split for i in instances))
        report["components"] = len(keys)
        report["dropped_for_template_partition"] = dropped
    return instances


def _partition_templates(instances, split_spec, rng):
    """Give every paraphrase template a single fold and drop instances that disagree."""
    templates = sorted({(i.seed_id, i.paraphrase_id) for i in instances})
    fold_of = {}
    for sid in sorted({s for s, _ in templates}):
        pids = [p for s, p in templates if s == sid]
        pids = [pids[i] for i in rng.permutation(len(pids))]
        for k, pid in enumerate(pids):
            fold_of[sid, pid] = "train" if k < max(1, len(pids) - 2) else ("dev" if k == len(pids) - 2 else "test")
    kept = [i for i in instances if fold_of[i.seed_id, i.paraphrase_id] == i.split]
    return kept, len(instances) - len(kept)


# -- JSONL ----------------------------------------------------------------


def to_jsonl(instances) -> str:
    return "".join(json.dumps(i.to_json(), ensure_ascii=False) + "\n" for i in instances)


def write_jsonl(instances, path) -> None:
    Path(path).write_text(to_jsonl(instances), encoding="utf-8")


def read_jsonl(path) -> list[QAInstance]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(QAInstance.from_json(json.loads(line)))
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}: line {lineno}: malformed QA instance ({exc})") from None
    return out


def dataset_stats(instances) -> dict:
    by_split: dict[str, Counter] = {}
    for inst in instances:
        c = by_split.setdefault(inst.split or "unassigned", Counter())
        c[inst.qtype] += 1
        c[f"answer:{inst.answer_kind}"] += 1
        c["total"] += 1
    return {s: dict(sorted(c.items())) for s, c in sorted(by_split.items())}
