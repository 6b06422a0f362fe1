"""Ontology ingestion.

Two input formats:

* ``owl-xml-subset`` -- RDF/XML restricted to named classes, ``rdfs:subClassOf``
  with named superclasses, and ``owl:equivalentClass`` axioms built from
  intersections and existential restrictions over named fillers. Anything
  outside the subset is skipped and counted, never a hard failure.
* ``concept-jsonl`` -- the package's canonical interchange format.

Annotation property IRIs select labels and synonyms; the defaults cover the
conventional biomedical vocabularies (OBO, EFO, ORDO, FMA, SKOS, NCIt).
"""

from __future__ import annotations

import logging
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Union
from urllib.parse import urljoin

from .errors import OntologyParseError, StructureError
from .model import (
    Concept,
    Ontology,
    dedupe_synonyms,
    is_absolute_iri,
    read_concept_jsonl,
)
from .verbalize import ClassExpression, Intersection, Named, SomeValuesFrom, verbalize

logger = logging.getLogger(__name__)

__all__ = ["ExtractionConfig", "parse_ontology", "infer_format"]

RDF_NS = "http://www.w3.org/1999/02/22-rdf-syntax-ns#"
RDFS_NS = "http://www.w3.org/2000/01/rdf-schema#"
OWL_NS = "http://www.w3.org/2002/07/owl#"
XML_NS = "http://www.w3.org/XML/1998/namespace"

_RDF_ABOUT = f"{{{RDF_NS}}}about"
_RDF_ID = f"{{{RDF_NS}}}ID"
_RDF_RESOURCE = f"{{{RDF_NS}}}resource"
_XML_BASE = f"{{{XML_NS}}}base"
_OWL_CLASS = f"{{{OWL_NS}}}Class"
_OWL_RESTRICTION = f"{{{OWL_NS}}}Restriction"
_OWL_INTERSECTION = f"{{{OWL_NS}}}intersectionOf"
_OWL_ON_PROPERTY = f"{{{OWL_NS}}}onProperty"
_OWL_SOME_VALUES = f"{{{OWL_NS}}}someValuesFrom"
_OWL_EQUIVALENT = f"{{{OWL_NS}}}equivalentClass"
_RDFS_SUBCLASS = f"{{{RDFS_NS}}}subClassOf"

DEFAULT_LABEL_PROPERTY = f"{RDFS_NS}label"

# Synonym annotation properties of the usual biomedical vocabularies.
DEFAULT_SYNONYM_PROPERTIES = (
    "http://www.geneontology.org/formats/oboInOwl#hasSynonym",
    "http://www.geneontology.org/formats/oboInOwl#hasExactSynonym",
    "http://www.ebi.ac.uk/efo/alternative_term",
    "http://www.orpha.net/ORDO/Orphanet_#symbol",
    "http://purl.org/sig/ont/fma/synonym",
    "http://www.w3.org/2004/02/skos/core#altLabel",
    "http://www.w3.org/2004/02/skos/core#prefLabel",
    "http://ncicb.nci.nih.gov/xml/owl/EVS/Thesaurus.owl#P108",
    "http://ncicb.nci.nih.gov/xml/owl/EVS/Thesaurus.owl#P90",
)


@dataclass(frozen=True)
class ExtractionConfig:
    label_property: str = DEFAULT_LABEL_PROPERTY
    synonym_properties: tuple[str, ...] = DEFAULT_SYNONYM_PROPERTIES

    def __post_init__(self):
        if not self.label_property:
            raise ValueError("label_property must be non-empty")


def _tag_to_iri(tag: str) -> str:
    """ElementTree '{namespace}local' -> 'namespacelocal' (the property IRI)."""
    if tag.startswith("{"):
        return tag[1:].replace("}", "", 1)
    return tag


def _resolve(ref: str, base: str) -> str:
    if is_absolute_iri(ref):
        return ref
    if base:
        return urljoin(base, ref)
    raise OntologyParseError(
        f"relative IRI {ref!r} without an xml:base to resolve against"
    )


def infer_format(path: Union[str, Path]) -> str:
    suffix = Path(path).suffix.lower()
    if suffix == ".jsonl":
        return "concept-jsonl"
    return "owl-xml-subset"


@dataclass
class _RawClass:
    iri: str
    labels: list[str] = field(default_factory=list)
    synonyms: list[str] = field(default_factory=list)
    parents: list[str] = field(default_factory=list)
    equivs: list[ClassExpression] = field(default_factory=list)


def _parse_expression(elem: ET.Element, base: str) -> ClassExpression | None:
    """Return a ClassExpression for a supported node, else None."""
    if elem.tag == _OWL_CLASS:
        about = elem.get(_RDF_ABOUT)
        if about is not None:
            return Named(_resolve(about, base))
        for child in elem:
            if child.tag == _OWL_INTERSECTION:
                members = []
                for sub in child:
                    parsed = _parse_expression(sub, base)
                    if parsed is None:
                        return None
                    members.append(parsed)
                if len(members) < 2:
                    return None
                return Intersection(tuple(members))
        return None
    if elem.tag == _OWL_RESTRICTION:
        prop: str | None = None
        filler: ClassExpression | None = None
        for child in elem:
            if child.tag == _OWL_ON_PROPERTY:
                res = child.get(_RDF_RESOURCE)
                if res is not None:
                    prop = _resolve(res, base)
                else:
                    for sub in child:
                        about = sub.get(_RDF_ABOUT)
                        if about is not None:
                            prop = _resolve(about, base)
            elif child.tag == _OWL_SOME_VALUES:
                res = child.get(_RDF_RESOURCE)
                if res is not None:
                    filler = Named(_resolve(res, base))
                else:
                    for sub in child:
                        filler = _parse_expression(sub, base)
        if prop is not None and filler is not None:
            return SomeValuesFrom(prop, filler)
        return None
    return None


def _parse_owl(fp: IO[bytes], cfg: ExtractionConfig, name: str) -> Ontology:
    try:
        tree = ET.parse(fp)
    except ET.ParseError as e:
        line, column = e.position if e.position else (None, None)
        # expat already embeds ": line N, column M"; the position is attached
        # structurally, so strip the clause rather than printing it twice.
        msg = re.sub(r": line \d+, column \d+$", "", e.msg)
        raise OntologyParseError(f"malformed XML: {msg}", line=line, column=column) from e

    root = tree.getroot()
    base = root.get(_XML_BASE, "")
    onto = Ontology(name=name)
    raw: dict[str, _RawClass] = {}
    label_index: dict[str, str] = {}  # classes and properties, for verbalization

    for elem in root:
        about = elem.get(_RDF_ABOUT)
        rdf_id = elem.get(_RDF_ID)
        if about is not None:
            iri = _resolve(about, base)
        elif rdf_id is not None:
            iri = (base.split("#", 1)[0] if base else "") + "#" + rdf_id
            if not is_absolute_iri(iri):
                raise OntologyParseError(f"rdf:ID {rdf_id!r} without an absolute xml:base")
        else:
            continue

        # Any described entity may contribute a label for verbalization.
        for child in elem:
            if _tag_to_iri(child.tag) == cfg.label_property and child.text and child.text.strip():
                label_index.setdefault(iri, child.text.strip())
                break

        if elem.tag != _OWL_CLASS:
            continue

        rc = raw.setdefault(iri, _RawClass(iri=iri))
        for child in elem:
            child_iri = _tag_to_iri(child.tag)
            text = child.text.strip() if child.text else ""
            if child_iri == cfg.label_property:
                if text:
                    rc.labels.append(text)
            elif child_iri in cfg.synonym_properties:
                if text:
                    rc.synonyms.append(text)
            elif child.tag == _RDFS_SUBCLASS:
                res = child.get(_RDF_RESOURCE)
                if res is not None:
                    rc.parents.append(_resolve(res, base))
                    continue
                named_child = None
                for sub in child:
                    if sub.tag == _OWL_CLASS and sub.get(_RDF_ABOUT) is not None:
                        named_child = _resolve(sub.get(_RDF_ABOUT), base)
                    break
                if named_child is not None:
                    rc.parents.append(named_child)
                else:
                    onto.stats.dropped_anonymous_parents += 1
            elif child.tag == _OWL_EQUIVALENT:
                res = child.get(_RDF_RESOURCE)
                expr: ClassExpression | None = None
                if res is not None:
                    expr = Named(_resolve(res, base))
                else:
                    for sub in child:
                        expr = _parse_expression(sub, base)
                        break
                if expr is not None:
                    rc.equivs.append(expr)
                else:
                    onto.stats.skipped_axioms += 1

    for iri, rc in raw.items():
        label = rc.labels[0] if rc.labels else None
        extra_labels = rc.labels[1:]
        descriptions = []
        for expr in rc.equivs:
            try:
                descriptions.append(verbalize(expr, label_index))
            except StructureError:
                onto.stats.skipped_axioms += 1
        seen_parents: set[str] = set()
        parents = []
        for p in rc.parents:
            if p not in seen_parents:
                seen_parents.add(p)
                parents.append(p)
        concept = Concept(
            iri=iri,
            label=label,
            synonyms=dedupe_synonyms(label, extra_labels + rc.synonyms),
            parents=parents,
            equiv_descriptions=descriptions,
        )
        if label is None:
            onto.stats.unlabeled_concepts += 1
        onto.concepts[iri] = concept

    onto.recount_dangling()
    if onto.stats.unlabeled_concepts:
        logger.warning(
            "%s: %d concepts have no label", name, onto.stats.unlabeled_concepts
        )
    if onto.stats.skipped_axioms or onto.stats.dropped_anonymous_parents:
        logger.info(
            "%s: skipped %d unsupported axioms, dropped %d anonymous superclasses",
            name,
            onto.stats.skipped_axioms,
            onto.stats.dropped_anonymous_parents,
        )
    return onto


def parse_ontology(
    source: Union[str, Path],
    format: str = "auto",
    cfg: ExtractionConfig | None = None,
    name: str | None = None,
) -> Ontology:
    """Parse an ontology file into the in-memory model.

    ``format`` is ``owl-xml-subset``, ``concept-jsonl``, or ``auto`` (inferred
    from the file extension). ``name`` defaults to the file stem.
    """
    cfg = cfg or ExtractionConfig()
    path = Path(source)
    fmt = infer_format(path) if format == "auto" else format
    onto_name = name if name is not None else path.stem
    if fmt == "concept-jsonl":
        with open(path, "r", encoding="utf-8") as fp:
            return read_concept_jsonl(fp, name=onto_name)
    if fmt == "owl-xml-subset":
        with open(path, "rb") as fp:
            return _parse_owl(fp, cfg, name=onto_name)
    raise ValueError(f"unknown ontology format {fmt!r}")
