import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from ctxnlg.data import (
    DA_TYPES,
    EOS_ID,
    RESERVED,
    UNK_ID,
    CorpusError,
    DaItem,
    DaParseError,
    DialogueAct,
    Vocabulary,
    apply_manifest,
    build_vocab,
    da_to_triples,
    delexicalize,
    detokenize,
    lexicalize,
    load_corpus,
    make_instance,
    parse_da,
    prepare_published,
    serialize_da,
    split_corpus,
    split_manifest,
    tokenize,
    write_corpus,
)
from ctxnlg.synthetic import make_corpus

# ------------------------------------------------------------------- parse_da


def test_parse_single_item():
    assert parse_da("iconfirm(alternative=next)").items == (DaItem("iconfirm", "alternative", "next"),)
    assert parse_da("inform_no_match(vehicle=bus)").items == (DaItem("inform_no_match", "vehicle", "bus"),)


def test_parse_values_with_spaces_and_colons():
    da = parse_da("inform(vehicle=bus, departure_time=8:01am, from_stop=Bowling Green)")
    assert da.items == (
        DaItem("inform", "vehicle", "bus"),
        DaItem("inform", "departure_time", "8:01am"),
        DaItem("inform", "from_stop", "Bowling Green"),
    )


def test_parse_joined_acts_and_valueless_slots():
    da = parse_da("iconfirm(to_stop=Park Place)&request(from_stop)")
    assert da.items == (DaItem("iconfirm", "to_stop", "Park Place"), DaItem("request", "from_stop", None))


def test_parse_quoted_value():
    da = parse_da('inform(from_stop="A, B (east)")')
    assert da.items[0].value == "A, B (east)"


@pytest.mark.parametrize(
    "text, offset, fragment",
    [
        ("request(", 8, "unbalanced"),
        ("inform(vehicle=bus", 18, "unbalanced"),
        ("inform(vehicle=bus(x))", 18, "unbalanced"),
        ("greet(x=1)", 0, "unknown DA type"),
        ("inform(=bus)", 7, "empty slot name"),
        ("inform(a=1,)", 11, "empty slot name"),
    ],
)
def test_parse_errors_report_position(text, offset, fragment):
    with pytest.raises(DaParseError, match=fragment) as info:
        parse_da(text)
    assert info.value.offset == offset


_ident = st.from_regex(r"[a-z][a-z_]{0,8}", fullmatch=True)
_value = st.text(st.characters(codec="ascii", exclude_characters="\x00\r\n"), min_size=1, max_size=12)
_item = st.builds(
    lambda t, s, v: DaItem(t, s, v),
    st.sampled_from(DA_TYPES),
    _ident,
    st.one_of(st.none(), _value),
)


@given(st.lists(_item, min_size=1, max_size=6))
def test_parse_inverts_serialize(items):
    da = DialogueAct(tuple(items))
    assert parse_da(serialize_da(da)) == da


def test_parse_serialize_roundtrip_on_synthetic_corpus():
    for rec in make_corpus(100, seed=4):
        da = parse_da(rec["da"])
        assert parse_da(serialize_da(da)) == da


# -------------------------------------------------------------------- triples


def test_triples_examples():
    da = DialogueAct((DaItem("inform", "vehicle", "bus"), DaItem("inform", "line", "*LINE*")))
    assert da_to_triples(da) == ["inform", "vehicle", "bus", "inform", "line", "*LINE*"]
    assert da_to_triples(parse_da("iconfirm(alternative=next)")) == ["iconfirm", "alternative", "next"]
    assert da_to_triples(parse_da("request(from_stop)")) == ["request", "from_stop", "<novalue>"]


def test_triples_of_slotless_act():
    assert da_to_triples(parse_da("inform_no_match()")) == ["inform_no_match", "<noslot>", "<novalue>"]


# ---------------------------------------------------------------------- delex


def test_delexicalize_table_example():
    da = parse_da("inform(from_stop=Bowling Green, departure_time=8:01am)")
    d = delexicalize(tokenize("from Bowling Green at 8:01am"), da)
    assert d.tokens == ["from", "*STOP*", "at", "*TIME*"]
    assert d.delex_map == {"*STOP*": "Bowling Green", "*TIME*": "8:01am"}
    assert d.da.items[0].value == "*STOP*"
    assert d.unmatched == 0


def test_delexicalize_without_slot_values_is_identity():
    d = delexicalize(tokenize("is there a later option"), parse_da("iconfirm(alternative=next)"))
    assert d.tokens == ["is", "there", "a", "later", "option"]
    assert d.delex_map == {}


def test_two_distinct_stops_get_indexed_markers():
    da = parse_da("inform(from_stop=Park Place, direction=Central Park)")
    d = delexicalize(tokenize("from Park Place toward Central Park"), da)
    assert d.tokens == ["from", "*STOP1*", "toward", "*STOP2*"]
    assert lexicalize(d.tokens, d.delex_map) == "from Park Place toward Central Park"


def test_vehicle_stays_lexical():
    d = delexicalize(tokenize("take the bus"), parse_da("inform(vehicle=bus)"))
    assert d.tokens == ["take", "the", "bus"]


def test_unmatched_values_are_counted():
    d = delexicalize(tokenize("where to?"), parse_da("iconfirm(to_stop=Wall Street)"))
    assert d.unmatched == 1
    assert d.tokens == ["where", "to", "?"]


def test_lexicalize_examples():
    assert lexicalize(["at", "*TIME*"], {"*TIME*": "8:01am"}) == "at 8:01am"
    assert lexicalize(["where", "do", "you", "want", "to", "go", "?"], {}) == "where do you want to go?"


def test_lexicalize_names_unmapped_placeholder():
    with pytest.raises(KeyError, match=r"\*LINE\*"):
        lexicalize(["line", "*LINE*"], {"*TIME*": "8:01am"})


def test_delex_lex_roundtrip_on_synthetic_corpus():
    checked = 0
    for rec in make_corpus(150, seed=2):
        da = parse_da(rec["da"])
        for ref in rec["refs"]:
            d = delexicalize(tokenize(ref), da)
            if d.unmatched:
                continue
            assert tokenize(lexicalize(d.tokens, d.delex_map)) == tokenize(ref)
            checked += 1
    assert checked > 300


def test_tokenize_lowercases_and_splits_punctuation():
    assert tokenize("I'm sorry, no Bus at 8:01am.") == ["i'm", "sorry", ",", "no", "bus", "at", "8:01am", "."]
    assert tokenize("from *STOP1* now") == ["from", "*STOP1*", "now"]
    assert detokenize(["no", "bus", ",", "sorry", "."]) == "no bus, sorry."


# --------------------------------------------------------------------- corpus


def _write_lines(path, lines):
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return path


def test_load_corpus_empty_file(tmp_path):
    assert load_corpus(_write_lines(tmp_path / "c.jsonl", [])) == []


def test_load_corpus_groups_and_delexicalizes(tmp_path):
    rec = {
        "context": "i want to go to Wall Street",
        "da": "iconfirm(to_stop=Wall Street)",
        "refs": ["you want to go to Wall Street.", "to Wall Street."],
    }
    (inst,) = load_corpus(_write_lines(tmp_path / "c.jsonl", [json.dumps(rec)]))
    assert inst.context == ["i", "want", "to", "go", "to", "*STOP*"]
    assert inst.references == [["you", "want", "to", "go", "to", "*STOP*", "."], ["to", "*STOP*", "."]]
    assert inst.da_tokens == ["iconfirm", "to_stop", "*STOP*"]
    assert inst.delex_map == {"*STOP*": "Wall Street"}


@pytest.mark.parametrize("missing", ["context", "da", "refs"])
def test_load_corpus_missing_field_names_line(tmp_path, missing):
    good = json.dumps({"context": "hi", "da": "request(to_stop)", "refs": ["where to?"]})
    bad = {"context": "hi", "da": "request(to_stop)", "refs": ["where to?"]}
    del bad[missing]
    path = _write_lines(tmp_path / "c.jsonl", [good, json.dumps(bad)])
    with pytest.raises(CorpusError, match=rf":2: .*{missing}"):
        load_corpus(path)


def test_load_corpus_bad_json_and_bad_da_name_line(tmp_path):
    with pytest.raises(CorpusError, match=":1:"):
        load_corpus(_write_lines(tmp_path / "a.jsonl", ["{not json"]))
    rec = json.dumps({"context": "", "da": "request(", "refs": ["x"]})
    with pytest.raises(CorpusError, match=":1:.*offset 8"):
        load_corpus(_write_lines(tmp_path / "b.jsonl", [rec]))


def _instances(n):
    return [make_instance(i, "hello", "request(to_stop)", ["where to?"]) for i in range(n)]


def test_split_sizes_for_1800_groups():
    train, dev, test = split_corpus(_instances(1800), seed=0)
    assert (len(train), len(dev), len(test)) == (1080, 360, 360)


@pytest.mark.parametrize("n", [5, 7, 13, 101])
def test_split_sizes_within_one_group(n):
    parts = split_corpus(_instances(n), seed=1)
    assert sum(map(len, parts)) == n
    for part, r in zip(parts, (3, 1, 1)):
        assert abs(len(part) - n * r / 5) <= 1


def test_split_is_deterministic_and_disjoint():
    insts = _instances(50)
    a = split_corpus(insts, seed=7)
    b = split_corpus(insts, seed=7)
    ids = [{i.group_id for i in part} for part in a]
    assert [[i.group_id for i in p] for p in a] == [[i.group_id for i in p] for p in b]
    assert not (ids[0] & ids[1] or ids[0] & ids[2] or ids[1] & ids[2])
    assert split_corpus(insts, seed=8)[1] != a[1]


def test_split_needs_enough_groups():
    with pytest.raises(ValueError):
        split_corpus(_instances(2))


def test_manifest_reproduces_split():
    insts = _instances(30)
    parts = split_corpus(insts, seed=3)
    manifest = json.loads(json.dumps(split_manifest(*parts, seed=3)))
    again = apply_manifest(insts, manifest)
    assert [[i.group_id for i in p] for p in again] == [[i.group_id for i in p] for p in parts]


def test_references_stay_grouped_across_split():
    insts = [make_instance(i, **_group(i)) for i in range(20)]
    for part in split_corpus(insts, seed=0):
        for inst in part:
            assert len(inst.references) == 3


def _group(i):
    return {"context": f"take me to stop {i}", "da_text": "request(from_stop)", "refs": ["a", "b", "c"]}


# ----------------------------------------------------------------- vocabulary


def _toy_output(tokens):
    inst = make_instance(0, "", "request(to_stop)", [" ".join(tokens)])
    return [inst]


def test_vocab_min_count_one():
    vocab = build_vocab(_toy_output(["a", "a", "b"]), "output", min_count=1)
    assert vocab.itos == list(RESERVED) + ["a", "b"]


def test_vocab_min_count_two_maps_rare_to_unk():
    vocab = build_vocab(_toy_output(["a", "a", "b"]), "output", min_count=2)
    assert vocab.itos == list(RESERVED) + ["a"]
    assert vocab.encode(["a", "b"], eos=True) == [4, UNK_ID, EOS_ID]
    with pytest.raises(KeyError, match="'b'"):
        vocab.encode(["b"], unk=False)


def test_context_and_da_dictionaries_are_separate():
    insts = [make_instance(0, "is there a later option", "iconfirm(alternative=next)", ["a later option."])]
    da_vocab = build_vocab(insts, "da")
    ctx_vocab = build_vocab(insts, "context")
    assert "later" in ctx_vocab and "later" not in da_vocab
    assert "iconfirm" in da_vocab and "iconfirm" not in ctx_vocab


def test_vocab_decode_stops_at_eos():
    vocab = Vocabulary(list(RESERVED) + ["a", "b"])
    assert vocab.decode([1, 4, 5, 2, 4]) == ["a", "b"]


def test_vocab_rejects_duplicates():
    with pytest.raises(ValueError):
        Vocabulary(list(RESERVED) + ["a", "a"])


# -------------------------------------------------------------------- adapter


def test_prepare_groups_paraphrase_rows(tmp_path):
    src = tmp_path / "release"
    src.mkdir()
    (src / "data.tsv").write_text(
        "context_utt\tresponse_da\tresponse_nl\n"
        "is there a later option\ticonfirm(alternative=next)\tNext connection.\n"
        "is there a later option\ticonfirm(alternative=next)\tYou want a later connection.\n"
        "i am at Park Place\trequest(to_stop)\tWhere are you going?\n",
        encoding="utf-8",
    )
    out = tmp_path / "dataset.jsonl"
    assert prepare_published(src, out) == 2
    insts = load_corpus(out)
    assert [len(i.references) for i in insts] == [2, 1]


def test_prepare_reports_missing_columns(tmp_path):
    (tmp_path / "x.csv").write_text("foo,bar\n1,2\n", encoding="utf-8")
    with pytest.raises(CorpusError, match="context"):
        prepare_published(tmp_path / "x.csv", tmp_path / "out.jsonl")


def test_write_corpus_roundtrip(tmp_path):
    recs = make_corpus(10, seed=1)
    path = tmp_path / "d.jsonl"
    assert write_corpus(recs, path) == 10
    assert [i.raw_refs for i in load_corpus(path)] == [r["refs"] for r in recs]
