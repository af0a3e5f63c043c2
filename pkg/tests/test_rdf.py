import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedhgn.errors import IngestionError, ParseError
from fedhgn.graph import Mask
from fedhgn.rdf import (
    RDF_TYPE,
    IngestConfig,
    LabelRow,
    Literal,
    Triple,
    build_hetero_graph,
    format_term,
    parse_line,
    parse_ntriples,
    read_label_table,
    serialize_ntriples,
)

EX = "http://example.org/"

# (line, expected triple or None)
WELL_FORMED = [
    (f"<{EX}s> <{EX}p> <{EX}o> .", Triple(f"{EX}s", f"{EX}p", f"{EX}o")),
    (f"<{EX}s> <{EX}p> <{EX}o>.", Triple(f"{EX}s", f"{EX}p", f"{EX}o")),
    (f"  <{EX}s>\t<{EX}p>   <{EX}o> .  ", Triple(f"{EX}s", f"{EX}p", f"{EX}o")),
    (f'<{EX}s> <{EX}p> "plain" .', Triple(f"{EX}s", f"{EX}p", Literal("plain"))),
    (f'<{EX}s> <{EX}p> "chat"@fr-BE .', Triple(f"{EX}s", f"{EX}p", Literal("chat", language="fr-BE"))),
    (f'<{EX}s> <{EX}p> "1"^^<http://www.w3.org/2001/XMLSchema#int> .',
     Triple(f"{EX}s", f"{EX}p", Literal("1", "http://www.w3.org/2001/XMLSchema#int"))),
    (f"_:b1 <{EX}p> _:b2 .", Triple("_:b1", f"{EX}p", "_:b2")),
    (f"_:a.b <{EX}p> _:c .", Triple("_:a.b", f"{EX}p", "_:c")),
    (f'<{EX}s> <{EX}p> "tab\\there\\nnew \\"q\\" \\\\ \\r" .',
     Triple(f"{EX}s", f"{EX}p", Literal('tab\there\nnew "q" \\ \r'))),
    (f'<{EX}s> <{EX}p> "\\u00E9\\U0001F600" .', Triple(f"{EX}s", f"{EX}p", Literal("é\U0001f600"))),
    (f"<{EX}caf\\u00E9> <{EX}p> <{EX}o> .", Triple(f"{EX}café", f"{EX}p", f"{EX}o")),
    (f"<{EX}s> <{EX}p> <{EX}o> . # trailing comment", Triple(f"{EX}s", f"{EX}p", f"{EX}o")),
    (f'<{EX}s> <{EX}p> "" .', Triple(f"{EX}s", f"{EX}p", Literal(""))),
    (f"<urn:isbn:123> <{EX}p> <{EX}o> .", Triple("urn:isbn:123", f"{EX}p", f"{EX}o")),
    ("# a comment line", None),
    ("", None),
    ("   \t ", None),
]

MALFORMED = [
    (f"<{EX}s> <{EX}p> <{EX}o>", "terminated"),
    (f"<{EX}s> <{EX}p> <{EX}o", "unbalanced"),
    (f"<{EX}s <{EX}p> <{EX}o> .", "not allowed"),
    (f'<{EX}s> <{EX}p> "bad \\q escape" .', "escape"),
    (f'<{EX}s> <{EX}p> "\\u12" .', "escape"),
    (f"<{EX}s> <{EX}p> <{EX}o> . extra", "trailing"),
    ("<rel> <http://x/p> <http://x/o> .", "relative"),
    (f'<{EX}s> <{EX}p> "unterminated .', "unterminated"),
    (f'"lit" <{EX}p> <{EX}o> .', "expected"),
    (f"<{EX}s> _:p <{EX}o> .", "expected"),
    (f'<{EX}s> <{EX}p> "x"@ .', "language"),
    (f"<{EX}s> <{EX}p> _: .", "blank"),
]


@pytest.mark.parametrize("line,expected", WELL_FORMED)
def test_well_formed_lines(line, expected):
    assert parse_line(line) == expected


@pytest.mark.parametrize("line,fragment", MALFORMED)
def test_malformed_lines_carry_line_number(line, fragment):
    with pytest.raises(ParseError, match=fragment) as info:
        parse_line(line, lineno=7)
    assert info.value.line == 7 and str(info.value).startswith("line 7:")


def test_stream_parse_reports_file_line():
    data = f"<{EX}a> <{EX}p> <{EX}b> .\n\n# c\n<{EX}a> <{EX}p> .\n".encode()
    with pytest.raises(ParseError) as info:
        parse_ntriples(io.BytesIO(data))
    assert info.value.line == 4
    with pytest.raises(ParseError):
        parse_ntriples(b"\xff\xfe")


def test_crlf_line_endings():
    data = f"<{EX}a> <{EX}p> <{EX}b> .\r\n<{EX}a> <{EX}p> <{EX}c> .\r\n".encode()
    assert len(parse_ntriples(data)) == 2


def _round_trip(triples):
    buf = io.StringIO()
    serialize_ntriples(triples, buf)
    return parse_ntriples(buf.getvalue().encode("utf-8"))


def test_suite_round_trip():
    triples = [t for _, t in WELL_FORMED if t is not None]
    assert _round_trip(triples) == triples


_iri = st.text(st.characters(blacklist_categories=("Cs",)), max_size=12).map(lambda s: EX + s)
_bnode = st.from_regex(r"_:[A-Za-z0-9_]([A-Za-z0-9_.\-]*[A-Za-z0-9_\-])?", fullmatch=True)
_text = st.text(st.characters(blacklist_categories=("Cs",)), max_size=20)
_literal = st.one_of(
    _text.map(Literal),
    st.tuples(_text, _iri).map(lambda x: Literal(x[0], datatype=x[1])),
    st.tuples(_text, st.from_regex(r"[a-z]{2}(-[A-Z0-9]{2})?", fullmatch=True)).map(
        lambda x: Literal(x[0], language=x[1])),
)
_triple = st.builds(Triple, st.one_of(_iri, _bnode), _iri, st.one_of(_iri, _bnode, _literal))


@settings(max_examples=200, deadline=None)
@given(st.lists(_triple, max_size=8))
def test_round_trip_property(triples):
    assert _round_trip(triples) == triples


def test_format_term_escapes():
    assert format_term(Literal('a"b\n')) == '"a\\"b\\n"'
    assert format_term(f"{EX}a b") == f"<{EX}a\\u0020b>"


# ---------------------------------------------------------------------------
# ingestion

def _kb():
    T = RDF_TYPE
    return [
        Triple(f"{EX}p1", T, f"{EX}Person"),
        Triple(f"{EX}p2", T, f"{EX}Person"),
        Triple(f"{EX}p3", T, f"{EX}Person"),
        Triple(f"{EX}g1", T, f"{EX}Group"),
        Triple(f"{EX}p1", f"{EX}member", f"{EX}g1"),
        Triple(f"{EX}p2", f"{EX}member", f"{EX}g1"),
        Triple(f"{EX}p3", f"{EX}knows", f"{EX}p1"),
        Triple(f"{EX}p3", f"{EX}name", Literal("Three")),
        Triple(f"{EX}p1", f"{EX}homepage", f"{EX}page"),
    ]


def test_build_hetero_graph():
    labels = [LabelRow(f"{EX}p1", "a", "train"), LabelRow(f"{EX}p2", "b", "train"),
              LabelRow(f"{EX}p3", "a", "test")]
    g = build_hetero_graph(_kb(), labels, IngestConfig(f"{EX}Person", valid_fraction=0.5))
    s = g.schema
    assert s.node_type_names == (f"{EX}Person", f"{EX}Group", "untyped")
    assert g.node_counts == (3, 1, 1)
    assert s.edge_type_names == (f"{EX}member", f"{EX}knows", f"{EX}homepage",
                                 f"{EX}member_inv", f"{EX}knows_inv", f"{EX}homepage_inv")
    assert s.edge_types[0].src_type == 0 and s.edge_types[0].dst_type == 1
    assert s.edge_types[3].src_type == 1 and s.edge_types[3].dst_type == 0
    assert g.edges[0].tolist() == [[0, 0], [1, 0]]
    assert g.edges[3].tolist() == [[0, 0], [0, 1]]
    assert g.num_classes == 2 and list(g.labels) == [0, 1, 0]
    assert g.masks[2] == Mask.TEST
    assert sorted(g.masks[:2].tolist()) == [Mask.TRAIN, Mask.VALID]


def test_no_reverse_option():
    g = build_hetero_graph(_kb(), [LabelRow(f"{EX}p1", "a", "train")],
                           IngestConfig(f"{EX}Person", add_reverse=False))
    assert g.schema.num_edge_types == 3


def test_ingest_errors():
    with pytest.raises(IngestionError, match="no target-type nodes"):
        build_hetero_graph([], [], IngestConfig(f"{EX}Person"))
    with pytest.raises(IngestionError, match="not among target-type"):
        build_hetero_graph(_kb(), [LabelRow(f"{EX}g1", "a", "train")], IngestConfig(f"{EX}Person"))


def test_first_type_wins(caplog):
    kb = _kb() + [Triple(f"{EX}p1", RDF_TYPE, f"{EX}Group")]
    g = build_hetero_graph(kb, [LabelRow(f"{EX}p1", "a", "train")], IngestConfig(f"{EX}Person"))
    assert g.node_counts[0] == 3
    assert "additional type" in caplog.text


def test_label_table():
    rows = read_label_table(["person\tlabel\tsplit\n", f"<{EX}p1>\ta\ttrain\n", "\n", f"{EX}p2\tb\ttest\n"])
    assert rows == [LabelRow(f"{EX}p1", "a", "train"), LabelRow(f"{EX}p2", "b", "test")]
    with pytest.raises(ParseError, match="line 2"):
        read_label_table(["h\n", "x\ty\tvalid\n"])
    with pytest.raises(ParseError):
        read_label_table(["h\n", "x\ty\n"])


def test_ingest_is_seeded():
    labels = [LabelRow(f"{EX}p{i}", "a", "train") for i in (1, 2, 3)]
    a = build_hetero_graph(_kb(), labels, IngestConfig(f"{EX}Person", seed=1))
    b = build_hetero_graph(_kb(), labels, IngestConfig(f"{EX}Person", seed=1))
    assert np.array_equal(a.masks, b.masks)
