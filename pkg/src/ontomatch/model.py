"""Core data model: concepts, ontologies, mappings, and judgements.

Concept identity is the absolute IRI string. The JSONL interchange format
(one concept per line, keys ``iri``, ``label``, ``synonyms``, ``parents``,
``equiv_descriptions``, ``definition``) is the canonical on-disk form.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import IO, Iterable

from .errors import OntologyParseError

__all__ = [
    "Concept",
    "Ontology",
    "ContextBlock",
    "Mapping",
    "MappingSet",
    "Judgement",
    "Thresholds",
    "iri_fragment",
    "is_absolute_iri",
    "normalize_string",
    "read_concept_jsonl",
    "write_concept_jsonl",
]

_JSONL_KEYS = ("iri", "label", "synonyms", "parents", "equiv_descriptions", "definition")


def is_absolute_iri(iri: str) -> bool:
    return "://" in iri


def iri_fragment(iri: str) -> str:
    """Human-readable tail of an IRI: after '#', else after the last '/'."""
    if "#" in iri:
        frag = iri.rsplit("#", 1)[1]
    elif "/" in iri:
        frag = iri.rsplit("/", 1)[1]
    else:
        frag = iri
    return frag or iri


def normalize_string(s: str) -> str:
    """Trim, collapse internal whitespace, case-fold."""
    return " ".join(s.split()).casefold()


@dataclass
class Concept:
    iri: str
    label: str | None = None
    synonyms: list[str] = field(default_factory=list)
    parents: list[str] = field(default_factory=list)
    equiv_descriptions: list[str] = field(default_factory=list)
    definition: str | None = None

    def display_name(self) -> str:
        return self.label if self.label else iri_fragment(self.iri)

    def lexical_strings(self) -> list[str]:
        """Label plus synonyms, as written."""
        out = [self.label] if self.label else []
        out.extend(self.synonyms)
        return out

    def to_json_dict(self) -> dict:
        return {
            "iri": self.iri,
            "label": self.label,
            "synonyms": list(self.synonyms),
            "parents": list(self.parents),
            "equiv_descriptions": list(self.equiv_descriptions),
            "definition": self.definition,
        }


def dedupe_synonyms(label: str | None, synonyms: Iterable[str]) -> list[str]:
    """Drop synonyms that are duplicates after normalization, or equal to the label."""
    seen = set()
    if label is not None:
        seen.add(normalize_string(label))
    out: list[str] = []
    for s in synonyms:
        key = normalize_string(s)
        if not key or key in seen:
            continue
        seen.add(key)
        out.append(s)
    return out


@dataclass
class OntologyStats:
    """Parse-time bookkeeping; excluded from ontology equality."""

    skipped_axioms: int = 0
    dropped_anonymous_parents: int = 0
    unlabeled_concepts: int = 0


@dataclass
class Ontology:
    name: str
    concepts: dict[str, Concept] = field(default_factory=dict)
    dangling_parent_count: int = 0
    stats: OntologyStats = field(default_factory=OntologyStats, compare=False)

    def __len__(self) -> int:
        return len(self.concepts)

    def recount_dangling(self) -> None:
        """Tally parent references that do not resolve within this ontology."""
        n = 0
        for c in self.concepts.values():
            for p in c.parents:
                if p not in self.concepts:
                    n += 1
        self.dangling_parent_count = n

    def label_for(self, iri: str) -> str | None:
        c = self.concepts.get(iri)
        return c.label if c else None

    def sorted_concepts(self) -> list[Concept]:
        return [self.concepts[k] for k in sorted(self.concepts)]


@dataclass
class ContextBlock:
    """Everything a prompt needs to describe one concept."""

    iri: str
    label: str | None
    synonyms: list[str]
    parents: list[str]  # display strings, already resolved
    descriptions: list[str]
    definition: str | None = None

    def display_name(self) -> str:
        return self.label if self.label else iri_fragment(self.iri)


def concept_context(concept: Concept, ontology: Ontology) -> ContextBlock:
    """Assemble a prompt context; parent IRIs resolve to labels else fragments."""
    parents = []
    for p in concept.parents:
        label = ontology.label_for(p)
        parents.append(label if label else iri_fragment(p))
    return ContextBlock(
        iri=concept.iri,
        label=concept.label,
        synonyms=list(concept.synonyms),
        parents=parents,
        descriptions=list(concept.equiv_descriptions),
        definition=concept.definition,
    )


@dataclass(frozen=True)
class Mapping:
    source: str
    target: str
    alpha: float
    provenance: str = "llm"  # llm | exact | both

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.provenance not in ("llm", "exact", "both"):
            raise ValueError(f"unknown provenance {self.provenance!r}")


class MappingSet:
    """An ordered set of mappings, unique per (source, target) pair."""

    def __init__(self, mappings: Iterable[Mapping] = ()):
        self._by_pair: dict[tuple[str, str], Mapping] = {}
        for m in mappings:
            self.add(m)

    def add(self, m: Mapping) -> None:
        self._by_pair[(m.source, m.target)] = m

    def get(self, source: str, target: str) -> Mapping | None:
        return self._by_pair.get((source, target))

    def pairs(self) -> set[tuple[str, str]]:
        return set(self._by_pair)

    def sorted_mappings(self) -> list[Mapping]:
        return sorted(self._by_pair.values(), key=lambda m: (m.source, -m.alpha, m.target))

    def __len__(self) -> int:
        return len(self._by_pair)

    def __iter__(self):
        return iter(self.sorted_mappings())

    def __contains__(self, pair: tuple[str, str]) -> bool:
        return pair in self._by_pair

    def write_tsv(self, fp: IO[str], with_provenance: bool = False) -> None:
        cols = "SrcEntity\tTgtEntity\tScore"
        fp.write(cols + ("\tProvenance\n" if with_provenance else "\n"))
        for m in self.sorted_mappings():
            row = f"{m.source}\t{m.target}\t{m.alpha:.8f}"
            fp.write(row + (f"\t{m.provenance}\n" if with_provenance else "\n"))

    @classmethod
    def read_tsv(cls, fp: IO[str]) -> "MappingSet":
        ms = cls()
        for lineno, line in enumerate(fp, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if lineno == 1 and parts[0] == "SrcEntity":
                continue
            if len(parts) < 2:
                raise OntologyParseError("mapping row needs at least 2 columns", line=lineno)
            score = float(parts[2]) if len(parts) > 2 and parts[2] else 1.0
            prov = parts[3] if len(parts) > 3 else "llm"
            ms.add(Mapping(parts[0], parts[1], score, prov))
        return ms


@dataclass(frozen=True)
class Judgement:
    source: str
    target: str
    cosine: float
    p_yes: float
    decision: bool


@dataclass(frozen=True)
class Thresholds:
    lambda_prob: float = 0.99
    lambda_cs: float = 0.97

    def __post_init__(self):
        for name, value in (("lambda_prob", self.lambda_prob), ("lambda_cs", self.lambda_cs)):
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {value}")


def read_concept_jsonl(fp: IO[str], name: str) -> Ontology:
    """Parse the JSONL interchange format into an Ontology.

    Raises OntologyParseError with the 1-based line number on malformed input.
    """
    onto = Ontology(name=name)
    for lineno, line in enumerate(fp, start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as e:
            raise OntologyParseError(f"invalid JSON: {e.msg}", line=lineno) from e
        if not isinstance(row, dict):
            raise OntologyParseError("concept row must be a JSON object", line=lineno)
        iri = row.get("iri")
        if not isinstance(iri, str) or not iri:
            raise OntologyParseError("missing or non-string 'iri'", line=lineno)
        if not is_absolute_iri(iri):
            raise OntologyParseError(f"iri is not absolute: {iri!r}", line=lineno)
        if iri in onto.concepts:
            raise OntologyParseError(f"duplicate iri {iri!r}", line=lineno)
        label = row.get("label")
        if label is not None and not isinstance(label, str):
            raise OntologyParseError("'label' must be a string or null", line=lineno)
        for key in ("synonyms", "parents", "equiv_descriptions"):
            value = row.get(key, [])
            if not isinstance(value, list) or any(not isinstance(x, str) for x in value):
                raise OntologyParseError(f"{key!r} must be an array of strings", line=lineno)
        definition = row.get("definition")
        if definition is not None and not isinstance(definition, str):
            raise OntologyParseError("'definition' must be a string or null", line=lineno)
        concept = Concept(
            iri=iri,
            label=label,
            synonyms=dedupe_synonyms(label, row.get("synonyms", [])),
            parents=list(row.get("parents", [])),
            equiv_descriptions=list(row.get("equiv_descriptions", [])),
            definition=definition,
        )
        if concept.label is None:
            onto.stats.unlabeled_concepts += 1
        onto.concepts[iri] = concept
    onto.recount_dangling()
    return onto


def write_concept_jsonl(ontology: Ontology, fp: IO[str]) -> None:
    """Emit concepts sorted by IRI, UTF-8 JSON, LF line endings."""
    for concept in ontology.sorted_concepts():
        fp.write(json.dumps(concept.to_json_dict(), ensure_ascii=False))
        fp.write("\n")
