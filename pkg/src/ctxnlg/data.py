"""Dialogue acts, corpus ingestion, delexicalization and vocabularies."""
from __future__ import annotations

import csv
import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

log = logging.getLogger(__name__)

DA_TYPES = ("iconfirm", "inform", "inform_no_match", "request")

NO_SLOT = "<noslot>"
NO_VALUE = "<novalue>"

# slot -> placeholder class; everything else (vehicle, alternative, ...) stays lexical
DELEX_SLOTS = {
    "from_stop": "STOP",
    "to_stop": "STOP",
    "direction": "STOP",
    "departure_time": "TIME",
    "arrival_time": "TIME",
    "time": "TIME",
    "departure_time_rel": "TIME",
    "arrival_time_rel": "TIME",
    "line": "LINE",
    "ampm": "AMPM",
}

PLACEHOLDER_RE = re.compile(r"\*[A-Z][A-Z_]*\d*\*")
_TOKEN_RE = re.compile(
    r"\*[A-Z][A-Z_]*\d*\*"  # placeholders, kept verbatim
    r"|\d+(?::\d+)?(?:[aApP]\.?[mM])?"  # 8:01am, 10:00, 15
    r"|[^\W_]+(?:'[^\W_]+)?"  # words, i'm, don't
    r"|\S"
)


_TYPE_RE = re.compile(r"[A-Za-z_]\w*")
_SLOT_RE = re.compile(r'[^\s=,()&"]+')


class DaParseError(ValueError):
    def __init__(self, message: str, text: str, offset: int):
        super().__init__(f"{message} at offset {offset}: {text!r}")
        self.text = text
        self.offset = offset


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class DaItem:
    da_type: str
    slot: str | None = None
    value: str | None = None

    def __post_init__(self):
        if self.value is not None and self.slot is None:
            raise ValueError("a DA item with a value must have a slot")


@dataclass(frozen=True)
class DialogueAct:
    items: tuple[DaItem, ...]

    def __post_init__(self):
        if not self.items:
            raise ValueError("a dialogue act needs at least one item")

    def __str__(self):
        return serialize_da(self)

    def values(self) -> list[str]:
        return [it.value for it in self.items if it.value is not None]


# ------------------------------------------------------------------ DA syntax


def parse_da(text: str, da_types: Iterable[str] | None = DA_TYPES) -> DialogueAct:
    """Parse ``type(slot=value, ...)&type(...)`` notation.

    Values may contain spaces and colons; double-quoted values may contain
    anything but an unescaped quote.  ``da_types=None`` accepts any type.
    """
    allowed = None if da_types is None else set(da_types)
    items: list[DaItem] = []
    pos = 0
    n = len(text)

    def skip_ws(p):
        while p < n and text[p].isspace():
            p += 1
        return p

    while True:
        pos = skip_ws(pos)
        m = _TYPE_RE.match(text, pos)
        if not m:
            raise DaParseError("expected a DA type", text, pos)
        da_type = m.group()
        if allowed is not None and da_type not in allowed:
            raise DaParseError(f"unknown DA type {da_type!r}", text, pos)
        pos = skip_ws(m.end())
        if pos >= n or text[pos] != "(":
            raise DaParseError("expected '('", text, pos)
        pos += 1
        act_items: list[DaItem] = []
        pos = skip_ws(pos)
        if pos >= n:
            raise DaParseError("unbalanced parentheses", text, pos)
        if text[pos] == ")":
            pos += 1
        else:
            while True:
                pos = skip_ws(pos)
                m = _SLOT_RE.match(text, pos)
                if not m:
                    raise DaParseError("empty slot name", text, pos)
                slot = m.group()
                pos = skip_ws(m.end())
                value = None
                if pos < n and text[pos] == "=":
                    pos = skip_ws(pos + 1)
                    if pos < n and text[pos] == '"':
                        end = pos + 1
                        buf = []
                        while end < n and text[end] != '"':
                            if text[end] == "\\" and end + 1 < n:
                                end += 1
                            buf.append(text[end])
                            end += 1
                        if end >= n:
                            raise DaParseError("unterminated quoted value", text, end)
                        value = "".join(buf)
                        pos = end + 1
                    else:
                        end = pos
                        while end < n and text[end] not in ",)":
                            if text[end] in "(&":
                                raise DaParseError("unbalanced parentheses", text, end)
                            end += 1
                        value = text[pos:end].strip()
                        pos = end
                act_items.append(DaItem(da_type, slot, value))
                pos = skip_ws(pos)
                if pos >= n:
                    raise DaParseError("unbalanced parentheses", text, pos)
                if text[pos] == ",":
                    pos += 1
                    continue
                if text[pos] == ")":
                    pos += 1
                    break
                raise DaParseError(f"unexpected {text[pos]!r}", text, pos)
        items.extend(act_items or [DaItem(da_type)])
        pos = skip_ws(pos)
        if pos >= n:
            break
        if text[pos] != "&":
            raise DaParseError(f"unexpected {text[pos]!r}", text, pos)
        pos += 1
    return DialogueAct(tuple(items))


def _quote(value: str) -> str:
    if value == "" or re.search(r'[,()&="\\]', value) or value != value.strip():
        return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
    return value


def serialize_da(da: DialogueAct) -> str:
    acts: list[tuple[str, list[str]]] = []
    for it in da.items:
        if it.slot is None:
            acts.append((it.da_type, []))
            acts.append(None)  # a slot-less act never absorbs following items
            continue
        body = it.slot if it.value is None else f"{it.slot}={_quote(it.value)}"
        if acts and acts[-1] is not None and acts[-1][0] == it.da_type:
            acts[-1][1].append(body)
        else:
            acts.append((it.da_type, [body]))
    return "&".join(f"{t}({', '.join(b)})" for t, b in (a for a in acts if a is not None))


def da_to_triples(da: DialogueAct) -> list[str]:
    """Flatten a DA into ``type, slot, value`` token triples."""
    out = []
    for it in da.items:
        out += [it.da_type, it.slot or NO_SLOT, NO_VALUE if it.value is None else it.value]
    return out


# ---------------------------------------------------------- tokens & delex


def tokenize(text: str) -> list[str]:
    """Lowercase and split off punctuation; placeholder markers survive as-is."""
    return [t if PLACEHOLDER_RE.fullmatch(t) else t.lower() for t in _TOKEN_RE.findall(text)]


def detokenize(tokens: Sequence[str]) -> str:
    out = ""
    for tok in tokens:
        if out and not (len(tok) == 1 and tok in ".,!?;:%)"):
            if not out.endswith(("(", "$")):
                out += " "
        out += tok
    return out


def is_placeholder(token: str) -> bool:
    return PLACEHOLDER_RE.fullmatch(token) is not None


class Delexicalized(NamedTuple):
    tokens: list[str]
    delex_map: dict[str, str]
    da: DialogueAct
    unmatched: int


def placeholder_map(da: DialogueAct, delex_slots=DELEX_SLOTS) -> dict[str, str]:
    """Assign placeholders to the DA's delexicalizable values, in item order.

    Returns ``value -> placeholder``; a class with several distinct values
    gets indexed markers (``*STOP1*``, ``*STOP2*``).
    """
    per_class: dict[str, list[str]] = {}
    for it in da.items:
        cls = delex_slots.get(it.slot or "")
        if cls is None or it.value is None or not tokenize(it.value):
            continue
        seen = per_class.setdefault(cls, [])
        if it.value not in seen:
            seen.append(it.value)
    out = {}
    for cls, values in per_class.items():
        for i, v in enumerate(values, 1):
            out[v] = f"*{cls}*" if len(values) == 1 else f"*{cls}{i}*"
    return out


def _replace_subsequence(tokens: list[str], needle: list[str], marker: str) -> tuple[list[str], int]:
    out, i, hits, k = [], 0, 0, len(needle)
    while i < len(tokens):
        if tokens[i : i + k] == needle:
            out.append(marker)
            i += k
            hits += 1
        else:
            out.append(tokens[i])
            i += 1
    return out, hits


def delexicalize(utterance: Sequence[str], da: DialogueAct, delex_slots=DELEX_SLOTS) -> Delexicalized:
    """Replace the DA's open-class slot values in ``utterance`` by placeholders.

    The DA is rewritten consistently; values that never occur in the
    utterance are left alone and counted in ``unmatched``.
    """
    value_to_ph = placeholder_map(da, delex_slots)
    tokens = list(utterance)
    unmatched = 0
    # longest values first so "park place" wins over "park"
    for value in sorted(value_to_ph, key=lambda v: (-len(tokenize(v)), v)):
        tokens, hits = _replace_subsequence(tokens, tokenize(value), value_to_ph[value])
        if hits == 0:
            unmatched += 1
    items = tuple(
        DaItem(it.da_type, it.slot, value_to_ph.get(it.value, it.value))
        if delex_slots.get(it.slot or "") is not None
        else it
        for it in da.items
    )
    delex_map = {ph: v for v, ph in value_to_ph.items()}
    return Delexicalized(tokens, delex_map, DialogueAct(items), unmatched)


def lexicalize(tokens: Sequence[str], delex_map: dict[str, str]) -> str:
    out = []
    for tok in tokens:
        if is_placeholder(tok):
            if tok not in delex_map:
                raise KeyError(f"placeholder {tok} has no value in the delexicalization map")
            out.append(delex_map[tok])
        else:
            out.append(tok)
    return detokenize(out)


# --------------------------------------------------------------------- corpus


@dataclass
class Instance:
    """One DA + context group with its paraphrase set, delexicalized."""

    group_id: int
    context: list[str]
    da: DialogueAct
    references: list[list[str]]
    delex_map: dict[str, str]
    raw_context: str = ""
    raw_da: DialogueAct | None = None
    raw_refs: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.references:
            raise ValueError(f"group {self.group_id} has no references")

    @property
    def da_tokens(self) -> list[str]:
        return da_to_triples(self.da)


def make_instance(group_id: int, context: str, da_text: str, refs: Sequence[str], da_types=DA_TYPES) -> Instance:
    raw_da = parse_da(da_text, da_types)
    delex_refs, delex_map, delex_da = [], {}, raw_da
    for ref in refs:
        d = delexicalize(tokenize(ref), raw_da)
        delex_refs.append(d.tokens)
        delex_map, delex_da = d.delex_map, d.da
        if d.unmatched:
            log.debug("group %d: %d DA value(s) not found in %r", group_id, d.unmatched, ref)
    if not refs:
        delex_map, delex_da = delexicalize([], raw_da)[1:3]
    ctx = delexicalize(tokenize(context), raw_da).tokens
    return Instance(group_id, ctx, delex_da, delex_refs, delex_map, context, raw_da, list(refs))


def load_corpus(path, da_types=DA_TYPES) -> list[Instance]:
    """Read the canonical JSON-lines corpus, one DA+context group per line."""
    instances = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            for key in ("context", "da", "refs"):
                if key not in rec:
                    raise CorpusError(f"{path}:{lineno}: record lacks field {key!r}")
            if not isinstance(rec["refs"], list) or not rec["refs"]:
                raise CorpusError(f"{path}:{lineno}: 'refs' must be a non-empty list")
            try:
                inst = make_instance(len(instances), rec["context"], rec["da"], rec["refs"], da_types)
            except DaParseError as exc:
                raise CorpusError(f"{path}:{lineno}: {exc}") from exc
            instances.append(inst)
    return instances


def write_corpus(records: Iterable[dict], path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps({"context": rec["context"], "da": rec["da"], "refs": list(rec["refs"])}) + "\n")
            n += 1
    return n


def training_examples(instances: Iterable[Instance]) -> list[tuple[Instance, list[str]]]:
    """Each paraphrase becomes its own (group, reference) training example."""
    return [(inst, ref) for inst in instances for ref in inst.references]


class Section(list):
    """Instances of one named corpus section (``train``, ``dev`` or ``test``)."""

    def __init__(self, name: str, instances: Iterable[Instance] = ()):
        super().__init__(instances)
        self.name = name


SECTION_NAMES = ("train", "dev", "test")


def split_corpus(instances: Sequence[Instance], ratios=(3, 1, 1), seed: int = 0) -> tuple[Section, Section, Section]:
    """Shuffle whole groups and cut them into train/dev/test sections."""
    n = len(instances)
    if n < len(ratios):
        raise ValueError(f"cannot split {n} groups into {len(ratios)} sections")
    total = float(np.sum(ratios))
    n_dev = int(round(n * ratios[1] / total))
    n_test = int(round(n * ratios[2] / total))
    n_dev, n_test = max(n_dev, 1), max(n_test, 1)
    n_train = n - n_dev - n_test
    if n_train < 1:
        raise ValueError(f"cannot split {n} groups into {len(ratios)} sections")
    order = np.random.default_rng(seed).permutation(n)
    cuts = (order[:n_train], order[n_train : n_train + n_dev], order[n_train + n_dev :])
    return tuple(Section(name, (instances[i] for i in sorted(idx))) for name, idx in zip(SECTION_NAMES, cuts))


def split_manifest(train, dev, test, seed=None, ratios=(3, 1, 1)) -> dict:
    return {
        "seed": seed,
        "ratios": list(ratios),
        "train": [i.group_id for i in train],
        "dev": [i.group_id for i in dev],
        "test": [i.group_id for i in test],
    }


def apply_manifest(instances: Sequence[Instance], manifest: dict) -> tuple[Section, Section, Section]:
    by_id = {i.group_id: i for i in instances}
    return tuple(Section(name, (by_id[g] for g in manifest[name])) for name in SECTION_NAMES)


# ---------------------------------------------------------------- vocabulary

PAD, GO, EOS, UNK = "<pad>", "<go>", "<eos>", "<unk>"
RESERVED = (PAD, GO, EOS, UNK)
PAD_ID, GO_ID, EOS_ID, UNK_ID = range(4)


@dataclass
class Vocabulary:
    itos: list[str]

    def __post_init__(self):
        if tuple(self.itos[:4]) != RESERVED:
            raise ValueError("vocabulary must start with the reserved symbols")
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("duplicate vocabulary entries")

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def encode(self, tokens: Iterable[str], eos: bool = False, unk: bool = True) -> list[int]:
        ids = []
        for t in tokens:
            if t in self.stoi:
                ids.append(self.stoi[t])
            elif unk:
                ids.append(UNK_ID)
            else:
                raise KeyError(f"token {t!r} is not in the vocabulary")
        if eos:
            ids.append(EOS_ID)
        return ids

    def decode(self, ids: Iterable[int], strip: bool = True) -> list[str]:
        out = []
        for i in ids:
            if strip and i == EOS_ID:
                break
            if strip and i in (PAD_ID, GO_ID):
                continue
            out.append(self.itos[i])
        return out


def build_vocab(instances: Iterable[Instance], which: str, min_count: int = 1) -> Vocabulary:
    """Build the ``da``, ``context`` or ``output`` dictionary from training groups."""
    counts: Counter = Counter()
    for inst in instances:
        if which == "da":
            counts.update(inst.da_tokens)
        elif which == "context":
            counts.update(inst.context)
        elif which == "output":
            for ref in inst.references:
                counts.update(ref)
        else:
            raise ValueError(f"unknown vocabulary kind {which!r}")
    kept = sorted((t for t, c in counts.items() if c >= min_count and t not in RESERVED), key=lambda t: (-counts[t], t))
    return Vocabulary(list(RESERVED) + kept)


# ------------------------------------------------------- published-data adapter

_CONTEXT_KEYS = ("context_utt", "context_utterance", "context", "prev_utt", "user_utt")
_DA_KEYS = ("response_da", "da", "system_da", "mr")
_TEXT_KEYS = ("response_nl", "response", "text", "ref", "refs", "utterance", "sentence")


def _pick(row: dict, keys: Sequence[str], what: str, where: str):
    lowered = {k.lower().strip(): v for k, v in row.items()}
    for k in keys:
        if k in lowered:
            return lowered[k]
    raise CorpusError(f"{where}: no {what} column among {sorted(lowered)}")


def _read_rows(path: Path) -> list[dict]:
    if path.suffix in (".tsv", ".csv"):
        with open(path, encoding="utf-8", newline="") as fh:
            return list(csv.DictReader(fh, delimiter="\t" if path.suffix == ".tsv" else ","))
    if path.suffix == ".jsonl":
        with open(path, encoding="utf-8") as fh:
            return [json.loads(line) for line in fh if line.strip()]
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if isinstance(data, dict):  # column-oriented
        keys = list(data)
        return [dict(zip(keys, vals)) for vals in zip(*(data[k] for k in keys))]
    return list(data)


def prepare_published(input_path, output_path) -> int:
    """Group a row-per-paraphrase release into the canonical JSON-lines file.

    Accepts a directory (the first .tsv/.csv/.json/.jsonl data file found) or
    a single file.  Rows sharing context and DA become one group.
    """
    input_path = Path(input_path)
    if input_path.is_dir():
        candidates = sorted(
            p for p in input_path.rglob("*") if p.suffix in (".tsv", ".csv", ".json", ".jsonl")
        )
        if not candidates:
            raise CorpusError(f"{input_path}: no data file found")
        input_path = candidates[0]
    groups: dict[tuple[str, str], list[str]] = {}
    for i, row in enumerate(_read_rows(input_path), 1):
        where = f"{input_path}:{i}"
        ctx = str(_pick(row, _CONTEXT_KEYS, "context", where)).strip()
        da = str(_pick(row, _DA_KEYS, "dialogue act", where)).strip()
        text = _pick(row, _TEXT_KEYS, "response text", where)
        texts = text if isinstance(text, list) else [text]
        groups.setdefault((ctx, da), []).extend(str(t).strip() for t in texts if str(t).strip())
    recs = ({"context": c, "da": d, "refs": r} for (c, d), r in groups.items() if r)
    return write_corpus(recs, output_path)
