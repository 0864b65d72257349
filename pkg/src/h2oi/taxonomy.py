"""The 51-verb H2O taxonomy and the scene validator built on it."""
from __future__ import annotations

import enum
from collections import Counter, defaultdict
from dataclasses import dataclass
from functools import lru_cache


class Category(enum.Enum):
    POSTURE = "Posture"
    MOTION = "Motion"
    OBJECT_INTERACTION = "ObjectInteraction"
    SOCIAL = "Social"
    VIOLENT = "Violent"

    @property
    def exclusive(self) -> bool:
        return self in (Category.POSTURE, Category.MOTION)

    @property
    def mandatory(self) -> bool:
        # exclusive and mandatory go together in this taxonomy
        return self.exclusive


class TargetKind(enum.Enum):
    NONE = "None"
    OBJECT_ONLY = "ObjectOnly"
    PERSON_ONLY = "PersonOnly"
    OBJECT_OR_PERSON = "ObjectOrPerson"

    def accepts(self, is_person: bool) -> bool:
        if self is TargetKind.NONE:
            return False
        if self is TargetKind.OBJECT_ONLY:
            return not is_person
        if self is TargetKind.PERSON_ONLY:
            return is_person
        return True


@dataclass(frozen=True)
class TargetRule:
    target_kind: TargetKind
    instrument_allowed: bool = False


@dataclass(frozen=True)
class Verb:
    name: str
    category: Category
    target_rule: TargetRule
    id: int

    @property
    def exclusive(self) -> bool:
        return self.category.exclusive


_INSTRUMENT_VERBS = frozenset(
    ["point", "use on", "eat", "drink", "point somebody", "act on somebody", "hit"]
)

# Enumeration order fixes the verb ids (dense-map channel order).
_VERBS_BY_CATEGORY = [
    (Category.POSTURE, TargetKind.OBJECT_OR_PERSON, [
        "stand", "bend", "sit", "crouch", "lay", "other", "undetermined posture",
    ]),
    (Category.MOTION, TargetKind.OBJECT_OR_PERSON, [
        "still", "walk", "run", "ride", "board", "crawl", "jump or fall", "dance",
        "swim", "climb", "undetermined motion",
    ]),
    (Category.OBJECT_INTERACTION, TargetKind.OBJECT_ONLY, [
        "hold", "lift", "carry without hands", "pull or push softly", "manipulate",
        "point", "use on", "eat", "drink", "watch", "talk on phone", "smoke",
    ]),
    (Category.SOCIAL, TargetKind.PERSON_ONLY, [
        "hug", "kiss", "handshake", "wave", "highfive", "fistbump", "thumbsup", "pat",
        "hold somebody", "pull or push somebody softly", "carry somebody",
        "point somebody", "act on somebody",
    ]),
    (Category.VIOLENT, TargetKind.OBJECT_OR_PERSON, [
        "punch", "kick", "choke", "block", "pull or push strongly", "throw", "catch",
        "hit",
    ]),
]


class Taxonomy:
    """Immutable ordered verb registry with lookup by name and id."""

    def __init__(self, verbs):
        self._verbs = tuple(verbs)
        self._by_name = {v.name: v for v in self._verbs}
        if len(self._by_name) != len(self._verbs):
            raise ValueError("duplicate verb names")
        if [v.id for v in self._verbs] != list(range(len(self._verbs))):
            raise ValueError("verb ids must be dense and ordered")

    def __len__(self):
        return len(self._verbs)

    def __iter__(self):
        return iter(self._verbs)

    def __contains__(self, name):
        return name in self._by_name

    @property
    def verbs(self):
        return self._verbs

    @property
    def count(self):
        return len(self._verbs)

    def lookup(self, name: str) -> Verb:
        try:
            return self._by_name[name]
        except KeyError:
            raise KeyError(f"unknown verb {name!r}") from None

    def by_id(self, verb_id: int) -> Verb:
        return self._verbs[verb_id]

    def category(self, name: str) -> Category:
        return self.lookup(name).category

    def target_rule(self, name: str) -> TargetRule:
        return self.lookup(name).target_rule

    def in_category(self, category: Category):
        return [v for v in self._verbs if v.category is category]

    def table(self) -> str:
        rows = [("id", "verb", "category", "excl", "mand", "target", "instrument")]
        for v in self._verbs:
            rows.append((
                str(v.id), v.name, v.category.value,
                "yes" if v.category.exclusive else "no",
                "yes" if v.category.mandatory else "no",
                v.target_rule.target_kind.value,
                "yes" if v.target_rule.instrument_allowed else "no",
            ))
        widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
        lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
        lines.insert(1, "  ".join("-" * w for w in widths))
        return "\n".join(lines)


@lru_cache(maxsize=None)
def builtin_taxonomy() -> Taxonomy:
    verbs = []
    for category, kind, names in _VERBS_BY_CATEGORY:
        for name in names:
            rule = TargetRule(kind, name in _INSTRUMENT_VERBS)
            verbs.append(Verb(name, category, rule, len(verbs)))
    return Taxonomy(verbs)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


class StructuralError(ValueError):
    """Scene references an instance id that does not exist."""


@dataclass(frozen=True, order=True)
class Violation:
    rule: str
    subject_id: int
    message: str


def validate_scene(scene, tax: Taxonomy | None = None) -> list[Violation]:
    """Check a scene against rules R1-R6, returning violations sorted.

    R1 one posture and one motion verb per person, R2 posture and motion
    share their target, R3 target (and instrument) kind, R4 instrument only
    where allowed, R5 only persons are subjects, R6 no duplicate triplets.
    """
    tax = tax or builtin_taxonomy()
    instances = {inst.id: inst for inst in scene.instances}
    out = []

    def resolve(iid, what, k):
        if iid is None:
            return None
        if iid not in instances:
            raise StructuralError(
                f"image {scene.image_id}: interaction {k} {what} id {iid} does not resolve"
            )
        return instances[iid]

    per_person = defaultdict(lambda: defaultdict(list))
    seen = Counter()
    for k, ia in enumerate(scene.interactions):
        subj = resolve(ia.subject_id, "subject", k)
        tgt = resolve(ia.target_id, "target", k)
        instr = resolve(ia.instrument_id, "instrument", k)
        if ia.verb not in tax:
            raise StructuralError(f"image {scene.image_id}: unknown verb {ia.verb!r}")
        verb = tax.lookup(ia.verb)
        sid = subj.id
        seen[(sid, ia.verb, ia.target_id, ia.instrument_id)] += 1

        if not subj.is_person:
            out.append(Violation("R5", sid, f"non-person {subj.class_name!r} is subject of {verb.name!r}"))
        else:
            per_person[sid][verb.category].append(ia)

        kind = verb.target_rule.target_kind
        if tgt is not None:
            if tgt.id == sid:
                out.append(Violation("R3", sid, f"{verb.name!r} targets its own subject"))
            elif not kind.accepts(tgt.is_person):
                out.append(Violation(
                    "R3", sid,
                    f"{verb.name!r} expects {kind.value} target, got {tgt.class_name!r} ({tgt.id})",
                ))
        if instr is not None:
            if not verb.target_rule.instrument_allowed:
                out.append(Violation("R4", sid, f"{verb.name!r} does not take an instrument"))
            elif instr.is_person or instr.id == sid:
                out.append(Violation("R3", sid, f"instrument of {verb.name!r} must be an object"))

    for key, n in seen.items():
        if n > 1:
            sid, verb, tid, iid = key
            out.append(Violation("R6", sid, f"triplet ({sid}, {verb!r}, {tid}, {iid}) repeated {n} times"))

    for inst in instances.values():
        if not inst.is_person:
            continue
        cats = per_person.get(inst.id, {})
        for cat in (Category.POSTURE, Category.MOTION):
            names = sorted({ia.verb for ia in cats.get(cat, [])})
            if len(names) != 1:
                out.append(Violation(
                    "R1", inst.id, f"person needs exactly one {cat.value} verb, has {names or 'none'}",
                ))
        post = {ia.target_id for ia in cats.get(Category.POSTURE, [])}
        mot = {ia.target_id for ia in cats.get(Category.MOTION, [])}
        if post and mot and post != mot:
            out.append(Violation(
                "R2", inst.id,
                f"posture targets {sorted(post, key=str)} differ from motion targets {sorted(mot, key=str)}",
            ))
    out.sort()
    return out
