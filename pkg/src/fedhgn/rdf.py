"""N-Triples parsing and RDF-to-heterograph conversion."""

from __future__ import annotations

import csv
import logging
import re
from dataclasses import dataclass
from typing import BinaryIO, Iterable, Iterator, Sequence, TextIO, Union

import numpy as np

from .errors import IngestionError, ParseError
from .graph import UNLABELED, EdgeType, HeteroGraph, Mask, Schema
from .numerics import STREAM_MASK, derive_rng

log = logging.getLogger(__name__)

RDF_TYPE = "http://www.w3.org/1999/02/22-rdf-syntax-ns#type"
UNTYPED = "untyped"
INVERSE_SUFFIX = "_inv"


@dataclass(frozen=True)
class Literal:
    lexical: str
    datatype: str | None = None
    language: str | None = None


Term = Union[str, Literal]


@dataclass(frozen=True)
class Triple:
    subject: str
    predicate: str
    object: Term


_ESCAPES = {"t": "\t", "b": "\b", "n": "\n", "r": "\r", "f": "\f", '"': '"', "'": "'", "\\": "\\"}
_SCHEME = re.compile(r"[A-Za-z][A-Za-z0-9+.\-]*:")
_LANG = re.compile(r"[A-Za-z]+(-[A-Za-z0-9]+)*")
_BNODE = re.compile(r"[A-Za-z0-9_][A-Za-z0-9_.\-]*")
_IRI_FORBIDDEN = set('<>"{}|^`\\ ') | {chr(c) for c in range(0x21)}


class _Line:
    """Cursor over one N-Triples line."""

    def __init__(self, text: str, lineno: int):
        self.s = text
        self.i = 0
        self.lineno = lineno

    def fail(self, msg: str):
        raise ParseError(msg, self.lineno)

    def ws(self) -> None:
        while self.i < len(self.s) and self.s[self.i] in " \t":
            self.i += 1

    def peek(self) -> str:
        return self.s[self.i] if self.i < len(self.s) else ""

    def uchar(self, kind: str) -> str:
        width = 4 if kind == "u" else 8
        digits = self.s[self.i:self.i + width]
        if len(digits) != width or not all(c in "0123456789abcdefABCDEF" for c in digits):
            self.fail(f"bad \\{kind} escape")
        self.i += width
        try:
            return chr(int(digits, 16))
        except ValueError:
            self.fail(f"escape \\{kind}{digits} is not a code point")

    def iri(self) -> str:
        if self.peek() != "<":
            self.fail("expected '<'")
        self.i += 1
        out = []
        while True:
            c = self.peek()
            if c == "":
                self.fail("unbalanced angle brackets in IRI")
            self.i += 1
            if c == ">":
                break
            if c == "\\":
                kind = self.peek()
                if kind not in ("u", "U"):
                    self.fail("only \\u and \\U escapes are allowed in IRIs")
                self.i += 1
                out.append(self.uchar(kind))
            elif c in _IRI_FORBIDDEN:
                self.fail(f"character {c!r} not allowed in IRI")
            else:
                out.append(c)
        iri = "".join(out)
        if not _SCHEME.match(iri):
            self.fail(f"relative IRI <{iri}>")
        return iri

    def bnode(self) -> str:
        self.i += 2
        m = _BNODE.match(self.s, self.i)
        if not m:
            self.fail("empty blank node label")
        label = m.group(0).rstrip(".")
        self.i += len(label)
        return "_:" + label

    def literal(self) -> Literal:
        self.i += 1
        out = []
        while True:
            c = self.peek()
            if c == "":
                self.fail("unterminated string literal")
            self.i += 1
            if c == '"':
                break
            if c == "\\":
                kind = self.peek()
                self.i += 1
                if kind in ("u", "U"):
                    out.append(self.uchar(kind))
                elif kind in _ESCAPES:
                    out.append(_ESCAPES[kind])
                else:
                    self.fail(f"bad escape \\{kind}")
            elif c in "\n\r":
                self.fail("raw line break in literal")
            else:
                out.append(c)
        lexical = "".join(out)
        if self.s.startswith("^^", self.i):
            self.i += 2
            return Literal(lexical, datatype=self.iri())
        if self.peek() == "@":
            m = _LANG.match(self.s, self.i + 1)
            if not m:
                self.fail("bad language tag")
            self.i += 1 + len(m.group(0))
            return Literal(lexical, language=m.group(0))
        return Literal(lexical)

    def subject(self) -> str:
        if self.s.startswith("_:", self.i):
            return self.bnode()
        return self.iri()

    def object(self) -> Term:
        c = self.peek()
        if c == '"':
            return self.literal()
        if self.s.startswith("_:", self.i):
            return self.bnode()
        if c == "<":
            return self.iri()
        self.fail("expected IRI, blank node or literal as object")


def parse_line(text: str, lineno: int = 1) -> Triple | None:
    cur = _Line(text.rstrip("\r\n"), lineno)
    cur.ws()
    if cur.peek() in ("", "#"):
        return None
    s = cur.subject()
    cur.ws()
    p = cur.iri()
    cur.ws()
    o = cur.object()
    cur.ws()
    if cur.peek() != ".":
        cur.fail("triple not terminated by ' .'")
    cur.i += 1
    cur.ws()
    if cur.peek() not in ("", "#"):
        cur.fail("trailing content after '.'")
    return Triple(s, p, o)


def iter_ntriples(lines: Iterable[str]) -> Iterator[Triple]:
    for lineno, line in enumerate(lines, 1):
        t = parse_line(line, lineno)
        if t is not None:
            yield t


def parse_ntriples(stream: BinaryIO | bytes) -> list[Triple]:
    """Parse UTF-8 N-Triples into a list of triples."""
    data = stream if isinstance(stream, bytes) else stream.read()
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"input is not UTF-8: {exc}") from None
    return list(iter_ntriples(text.split("\n")))


# ---------------------------------------------------------------------------
# writer


def _escape_iri(iri: str) -> str:
    return "".join(f"\\u{ord(c):04X}" if c in _IRI_FORBIDDEN else c for c in iri)


def _escape_literal(text: str) -> str:
    return (text.replace("\\", "\\\\").replace('"', '\\"')
            .replace("\n", "\\n").replace("\r", "\\r").replace("\t", "\\t"))


def format_term(term: Term) -> str:
    if isinstance(term, Literal):
        out = f'"{_escape_literal(term.lexical)}"'
        if term.datatype is not None:
            out += f"^^<{_escape_iri(term.datatype)}>"
        elif term.language is not None:
            out += f"@{term.language}"
        return out
    if term.startswith("_:"):
        return term
    return f"<{_escape_iri(term)}>"


def serialize_ntriples(triples: Iterable[Triple], out: TextIO) -> None:
    for t in triples:
        out.write(f"{format_term(t.subject)} {format_term(t.predicate)} {format_term(t.object)} .\n")


# ---------------------------------------------------------------------------
# labels and graph construction


@dataclass(frozen=True)
class LabelRow:
    entity: str
    class_name: str
    split_hint: str


LabelTable = Sequence[LabelRow]


def read_label_table(lines: Iterable[str]) -> list[LabelRow]:
    """Tab-separated ``entity, class, train|test`` rows after one header line."""
    rows = []
    reader = csv.reader(lines, delimiter="\t")
    for i, rec in enumerate(reader):
        if i == 0 or not rec or not "".join(rec).strip():
            continue
        if len(rec) < 3:
            raise ParseError("label row needs entity, class and split", i + 1)
        entity, cls, hint = (x.strip() for x in rec[:3])
        if entity.startswith("<") and entity.endswith(">"):
            entity = entity[1:-1]
        if hint not in ("train", "test"):
            raise ParseError(f"split hint must be train or test, got {hint!r}", i + 1)
        rows.append(LabelRow(entity, cls, hint))
    return rows


@dataclass(frozen=True)
class IngestConfig:
    target_type: str
    type_predicate: str = RDF_TYPE
    add_reverse: bool = True
    seed: int = 0
    valid_fraction: float = 0.2


def build_hetero_graph(triples: Sequence[Triple], labels: LabelTable, config: IngestConfig) -> HeteroGraph:
    """Turn triples into a typed graph.

    Node types are the distinct objects of ``type_predicate`` in file order
    followed by ``untyped``. A node keeps its first declared type. Literal
    objects are dropped. Edge types are the distinct
    ``(predicate, src type, dst type)`` triples in first-seen order, followed
    by their reverses when ``add_reverse`` is set.
    """
    type_of: dict[str, str] = {}
    type_names: list[str] = []
    extra_types = 0
    for t in triples:
        if t.predicate == config.type_predicate and not isinstance(t.object, Literal):
            if t.object not in type_names:
                type_names.append(t.object)
            if t.subject in type_of:
                if type_of[t.subject] != t.object:
                    extra_types += 1
            else:
                type_of[t.subject] = t.object
    if extra_types:
        log.warning("%d additional type assertions ignored (first type kept)", extra_types)
    if config.target_type not in type_names:
        raise IngestionError("no target-type nodes")
    type_names.append(UNTYPED)
    type_id = {name: i for i, name in enumerate(type_names)}

    node_ids: list[dict[str, int]] = [{} for _ in type_names]

    def node(iri: str) -> tuple[int, int]:
        t = type_id[type_of.get(iri, UNTYPED)]
        ids = node_ids[t]
        if iri not in ids:
            ids[iri] = len(ids)
        return t, ids[iri]

    # typed subjects get ids in file order even without relational edges
    for t in triples:
        if t.predicate == config.type_predicate and not isinstance(t.object, Literal):
            node(t.subject)

    rel_index: dict[tuple[str, int, int], int] = {}
    rel_edges: list[list[tuple[int, int]]] = []
    for t in triples:
        if t.predicate == config.type_predicate or isinstance(t.object, Literal):
            continue
        st, u = node(t.subject)
        dt, v = node(t.object)
        key = (t.predicate, st, dt)
        if key not in rel_index:
            rel_index[key] = len(rel_edges)
            rel_edges.append([])
        rel_edges[rel_index[key]].append((u, v))

    keys = list(rel_index)
    edge_types = [EdgeType(i, st, dt) for i, (_, st, dt) in enumerate(keys)]
    edge_names = [p for p, _, _ in keys]
    edges = [np.array(e, dtype=np.int64).reshape(-1, 2) for e in rel_edges]
    if config.add_reverse:
        n = len(keys)
        for i, (p, st, dt) in enumerate(keys):
            edge_types.append(EdgeType(n + i, dt, st))
            edge_names.append(p + INVERSE_SUFFIX)
            edges.append(edges[i][:, ::-1].copy())

    target = type_id[config.target_type]
    n_target = len(node_ids[target])
    class_names = sorted({row.class_name for row in labels})
    class_id = {c: i for i, c in enumerate(class_names)}
    lab = np.full(n_target, UNLABELED, dtype=np.int64)
    masks = np.zeros(n_target, dtype=np.int8)
    missing = [row.entity for row in labels if row.entity not in node_ids[target]]
    if missing:
        raise IngestionError("label entities not among target-type nodes: " + ", ".join(missing[:10]))
    train_rows = []
    for row in labels:
        v = node_ids[target][row.entity]
        lab[v] = class_id[row.class_name]
        if row.split_hint == "test":
            masks[v] = Mask.TEST
        else:
            train_rows.append(v)
    train_rows = np.array(train_rows, dtype=np.int64)
    perm = derive_rng(config.seed, STREAM_MASK).permutation(len(train_rows))
    n_valid = int(round(config.valid_fraction * len(train_rows)))
    masks[train_rows[perm[:n_valid]]] = Mask.VALID
    masks[train_rows[perm[n_valid:]]] = Mask.TRAIN

    schema = Schema(len(type_names), tuple(edge_types), tuple(type_names), tuple(edge_names))
    counts = tuple(len(ids) for ids in node_ids)
    return HeteroGraph(schema, counts, tuple(edges), target, lab, masks, max(len(class_names), 1))
