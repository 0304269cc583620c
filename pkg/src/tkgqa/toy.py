"""Seeded synthetic temporal KG shaped like the question-bearing WikiData slice.

Non-event entities are grouped into small communities: every regular fact
links two members of the same community. A real KG with 10^5 entities has a
sparse co-mention graph and entity-disjoint question splits come for free;
at 200 entities the communities play that role. Event entities are shared
by everybody, which is fine because question splits may overlap on events.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kg import DUMMY, EVENT_OBJECT, EVENT_RELATION, TemporalFact, TemporalKG, Vocabulary


@dataclass(frozen=True)
class RelationSpec:
    label: str
    object_kind: str | None  # None: the object is another person
    weight: float
    min_len: int
    max_len: int
    succession: bool = False  # timeline belongs to the object (one holder at a time)


RELATIONS = (
    RelationSpec("member_of_sports_team", "team", 0.30, 1, 6),
    RelationSpec("position_held", "position", 0.11, 1, 8, succession=True),
    RelationSpec("award_received", "award", 0.18, 1, 1),
    RelationSpec("spouse", None, 0.12, 3, 25),
    RelationSpec("employer", "org", 0.29, 1, 8),
)

COMMUNITY_SIZE = 25


def _relation_specs(n_relations: int) -> list[RelationSpec]:
    specs = list(RELATIONS[:n_relations])
    for k in range(len(RELATIONS), n_relations):
        specs.append(RelationSpec(f"relation_{k}", f"thing{k}", 0.15, 1, 6))
    return specs


def generate_toy_kg(
    seed: int,
    n_entities: int = 200,
    n_relations: int = 5,
    year_range: tuple[int, int] = (1950, 2020),
    n_facts: int = 3000,
) -> TemporalKG:
    """Build a deterministic toy temporal KG.

    The result has exactly ``n_entities`` entities, ``n_relations`` regular
    relations plus ``significant_event``, and ``n_facts`` facts of which at
    least two are event facts. Every entity occurs in some fact.
    """
    y0, y1 = int(year_range[0]), int(year_range[1])
    if n_entities < 10:
        raise ValueError(f"n_entities must be >= 10, got {n_entities}")
    if y1 <= y0:
        raise ValueError(f"year range must satisfy y1 > y0, got {y0}..{y1}")
    if n_relations < 1:
        raise ValueError("n_relations must be >= 1")
    if n_facts < n_entities:
        raise ValueError(f"infeasible: n_facts ({n_facts}) < n_entities ({n_entities})")
    rng = np.random.default_rng(seed)
    specs = _relation_specs(n_relations)

    n_events = max(2, n_entities // 40)
    n_regular = n_entities - n_events - 1
    kinds = sorted({s.object_kind for s in specs if s.object_kind is not None},
                   key=[s.object_kind for s in specs].index)
    if n_regular < 2 + len(kinds):
        raise ValueError(f"n_entities={n_entities} too small for {n_relations} relations")

    entities = Vocabulary.from_labels([DUMMY])
    events = [entities.add(f"event_{i:03d}") for i in range(n_events)]
    occurred = entities.add(EVENT_OBJECT)

    n_comm = max(1, int(round(n_regular / COMMUNITY_SIZE)))
    sizes = [n_regular // n_comm + (1 if i < n_regular % n_comm else 0) for i in range(n_comm)]
    counters: dict[str, int] = {}

    def new_entity(kind: str) -> int:
        k = counters.get(kind, 0)
        counters[kind] = k + 1
        return entities.add(f"{kind}_{k:03d}")

    communities = []
    for size in sizes:
        per_kind = max(1, int(round(0.44 * size / max(1, len(kinds))))) if kinds else 0
        while kinds and size - per_kind * len(kinds) < 2 and per_kind > 1:
            per_kind -= 1
        n_people = size - per_kind * len(kinds)
        if n_people < 2:
            raise ValueError(f"n_entities={n_entities} too small for {n_relations} relations")
        people = [new_entity("person") for _ in range(n_people)]
        objects = {kind: [new_entity(kind) for _ in range(per_kind)] for kind in kinds}
        communities.append((people, objects))

    span = {}
    n_years = y1 - y0 + 1
    for people, _ in communities:
        for p in people:
            length = int(rng.integers(max(1, n_years // 4), n_years + 1))
            a = int(rng.integers(y0, y1 - length + 2))
            span[p] = (a, a + length - 1)

    relations = Vocabulary.from_labels([s.label for s in specs] + [EVENT_RELATION])
    facts: list[TemporalFact] = []
    seen: set[tuple] = set()

    def emit(s, r, o, a, b, is_event=False) -> bool:
        key = (s, r, o, a, b)
        if key in seen or s == o:
            return False
        seen.add(key)
        facts.append(TemporalFact(s, r, o, a, b, is_event))
        return True

    for ev in events:
        length = int(rng.integers(1, min(8, n_years) + 1))
        a = int(rng.integers(y0, y1 - length + 2))
        emit(ev, relations[EVENT_RELATION], occurred, a, a + length - 1, True)

    # one timeline per (relation, owner); owner is a person, or the object for successions
    cursor: dict[tuple[int, int], int] = {}
    last_obj: dict[tuple[int, int], int] = {}
    community_of = {}
    for c, (people, objects) in enumerate(communities):
        for p in people:
            community_of[p] = c
        for objs in objects.values():
            for o in objs:
                community_of[o] = c

    def timeline_owners(ri: int) -> list[int]:
        spec = specs[ri]
        owners = []
        for people, objects in communities:
            owners.extend(objects[spec.object_kind] if spec.succession else people)
        return owners

    def extend(ri: int, owner: int, forced: int | None = None) -> bool:
        """Append one interval to a timeline; False once the timeline is full."""
        spec = specs[ri]
        people, objects = communities[community_of[owner]]
        key = (ri, owner)
        lo, hi = (y0, y1) if spec.succession else span[owner]
        start = cursor.get(key, lo + int(rng.integers(0, 3)))
        if not spec.succession or key in cursor:
            start += int(rng.integers(0, 3))
        if start > hi:
            return False
        end = min(hi, start + int(rng.integers(spec.min_len, spec.max_len + 1)) - 1)
        prev = last_obj.get(key)
        if spec.succession:
            active = [p for p in people if span[p][0] <= start <= span[p][1] and p != prev]
            pool = active or [p for p in people if p != prev] or people
            subj = forced if forced is not None else pool[int(rng.integers(len(pool)))]
            obj = owner
            last_obj[key] = subj
        else:
            subj = owner
            if forced is not None:
                obj = forced
            else:
                choices = (objects[spec.object_kind] if spec.object_kind else
                           [p for p in people if p != owner])
                if len(choices) > 1 and prev in choices:
                    choices = [x for x in choices if x != prev]
                obj = choices[int(rng.integers(len(choices)))]
            last_obj[key] = obj
        cursor[key] = end + 1
        emit(subj, ri, obj, start, end)
        return True

    # coverage: every object and every person gets at least one fact
    for people, objects in communities:
        for ri, spec in enumerate(specs):
            if spec.object_kind is None:
                continue
            for o in objects[spec.object_kind]:
                if spec.succession:
                    extend(ri, o)
                else:
                    p = people[int(rng.integers(len(people)))]
                    if not extend(ri, p, forced=o):
                        cursor.pop((ri, p), None)
                        extend(ri, p, forced=o)
    covered = {f.subject for f in facts} | {f.object for f in facts}
    for people, _ in communities:
        for p in people:
            if p not in covered:
                person_rels = [ri for ri, s in enumerate(specs) if not s.succession]
                ri = person_rels[int(rng.integers(len(person_rels)))] if person_rels else 0
                if specs[ri].succession:
                    obj = communities[community_of[p]][1][specs[ri].object_kind][0]
                    cursor.pop((ri, obj), None)
                    extend(ri, obj, forced=p)
                else:
                    cursor.pop((ri, p), None)
                    extend(ri, p)
                covered |= {f.subject for f in facts[-1:]} | {f.object for f in facts[-1:]}

    remaining = n_facts - len(facts)
    if remaining < 0:
        raise ValueError(f"infeasible: coverage alone needs {len(facts)} facts > n_facts={n_facts}")
    weights = np.array([s.weight for s in specs], dtype=float)
    weights /= weights.sum()
    have = np.array([sum(f.relation == ri for f in facts) for ri in range(len(specs))])
    target = np.floor(weights * n_facts).astype(int)
    budget = np.maximum(target - have, 0)
    # top up rounding error on the heaviest relation
    deficit = remaining - int(budget.sum())
    order = np.argsort(-weights, kind="stable")
    i = 0
    while deficit != 0:
        ri = order[i % len(order)]
        step = 1 if deficit > 0 else -1
        if step < 0 and budget[ri] == 0:
            i += 1
            continue
        budget[ri] += step
        deficit -= step
        i += 1

    owners = {ri: timeline_owners(ri) for ri in range(len(specs))}
    open_owners = {ri: list(v) for ri, v in owners.items()}
    stalls = 0
    while budget.sum() > 0:
        live = [ri for ri in range(len(specs)) if budget[ri] > 0]
        ri = live[int(rng.integers(len(live)))]
        pool = open_owners[ri]
        if not pool:
            # every timeline is full: start a second, overlapping pass
            for owner in owners[ri]:
                cursor.pop((ri, owner), None)
            open_owners[ri] = pool = list(owners[ri])
        j = int(rng.integers(len(pool)))
        before = len(facts)
        if not extend(ri, pool[j]):
            pool.pop(j)
            continue
        if len(facts) > before:
            budget[ri] -= 1
            stalls = 0
        else:
            stalls += 1
            if stalls > 10000:
                raise ValueError("infeasible: cannot place the requested number of distinct facts")

    facts.sort(key=lambda f: (f.subject, f.relation, f.object, f.start, f.end))
    return TemporalKG(facts, entities, relations, (y0, y1))
