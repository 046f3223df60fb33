"""Small synthetic transit-information corpus for demos and tests.

Each group pairs a user utterance with a system DA and three paraphrases.
Paraphrases lean toward wording found in the user utterance, so a model that
sees the context can learn to echo it.
"""
from __future__ import annotations

import numpy as np

STOPS = [
    "Bowling Green", "Cathedral Parkway", "Park Place", "Central Park", "Wall Street",
    "Times Square", "Union Square", "City Hall", "Grand Central", "Canal Street",
    "Houston Street", "Penn Station",
]
LINES = ["M15", "M5", "M20", "M103", "Q32", "B61"]
TIMES = ["8:01am", "9:15am", "10:00am", "11:40am", "1:05pm", "3:30pm", "6:20pm", "7:45pm"]

# (context phrasing, paraphrases); "{v}" marks a vehicle slot value
_NEXT = [
    ("is there a later option", ["you want a later option.", "a later option.", "you want a later connection."]),
    ("what about a later connection", ["you want a later connection.", "a later connection.", "a later one."]),
    ("give me the next one", ["the next one.", "you want the next one.", "next connection."]),
    ("anything after that", ["something after that.", "the connection after that.", "next connection."]),
]
_NO_MATCH = [
    ("i need to find a {v} connection", ["i'm sorry, i cannot find a {v} connection.", "i did not find a {v} connection.", "no {v} connection found, sorry."]),
    ("is there a {v}", ["sorry, there is no {v}.", "there is no {v}, sorry.", "no {v} found, sorry."]),
    ("i would like to take the {v}", ["i'm sorry, you cannot take the {v}.", "sorry, no {v} route found.", "no {v} found, sorry."]),
]
_INFORM = [
    ("i rather take the {v}", [
        "you can take the {line} {v} from {from} to {dir} at {time}.",
        "take the {line} {v} from {from} at {time} toward {dir}.",
        "at {time} by {v} line {line} from {from} to {dir}.",
    ]),
    ("when does the next {v} leave", [
        "the next {v} leaves {from} at {time}, line {line} toward {dir}.",
        "the {v} leaves at {time} from {from}, line {line} to {dir}.",
        "at {time} by {v} line {line} from {from} to {dir}.",
    ]),
    ("how do i get there", [
        "you get there by {v} line {line} from {from} at {time} to {dir}.",
        "take {v} line {line} from {from} to {dir} at {time}.",
        "at {time} by {v} line {line} from {from} to {dir}.",
    ]),
]
_REQUEST_TO = [
    ("i want to go from {from}", ["where do you want to go?", "where do you want to go from {from}?", "what is your destination?"]),
    ("starting from {from}", ["where are you going to?", "where do you want to go?", "and where are you going?"]),
    ("i am at {from}", ["where are you going?", "what is your destination?", "where do you want to go?"]),
]
_REQUEST_FROM = [
    ("i want to go to {to}", ["where do you want to go from?", "where are you going from?", "what is your starting point?"]),
    ("i need to get to {to}", ["where are you starting from?", "where do you want to go from?", "what is your starting point?"]),
]
_CONFIRM_TO = [
    ("i want to go to {to}", ["you want to go to {to}.", "to {to}.", "going to {to}."]),
    ("take me to {to}", ["taking you to {to}.", "to {to}.", "you want to go to {to}."]),
]


def _fill(text: str, values: dict) -> str:
    return text.format(**values)


def make_corpus(n_groups: int = 200, seed: int = 0) -> list[dict]:
    """Records in the canonical ``{"context", "da", "refs"}`` layout."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_groups):
        kind = rng.choice(6, p=[0.15, 0.15, 0.3, 0.15, 0.1, 0.15])
        s = rng.choice(len(STOPS), size=3, replace=False)
        vals = {
            "v": ["bus", "subway"][rng.integers(2)],
            "from": STOPS[s[0]],
            "to": STOPS[s[1]],
            "dir": STOPS[s[2]],
            "line": LINES[rng.integers(len(LINES))],
            "time": TIMES[rng.integers(len(TIMES))],
        }
        if kind == 0:
            ctx, refs = _NEXT[rng.integers(len(_NEXT))]
            da = "iconfirm(alternative=next)"
        elif kind == 1:
            ctx, refs = _NO_MATCH[rng.integers(len(_NO_MATCH))]
            da = f"inform_no_match(vehicle={vals['v']})"
        elif kind == 2:
            ctx, refs = _INFORM[rng.integers(len(_INFORM))]
            da = (f"inform(vehicle={vals['v']}, departure_time={vals['time']}, direction={vals['dir']}, "
                  f"from_stop={vals['from']}, line={vals['line']})")
        elif kind == 3:
            ctx, refs = _REQUEST_TO[rng.integers(len(_REQUEST_TO))]
            da = "request(to_stop)"
        elif kind == 4:
            ctx, refs = _REQUEST_FROM[rng.integers(len(_REQUEST_FROM))]
            da = "request(from_stop)"
        else:
            ctx, refs = _CONFIRM_TO[rng.integers(len(_CONFIRM_TO))]
            da = f"iconfirm(to_stop={vals['to']})"
        out.append({"context": _fill(ctx, vals), "da": da, "refs": [_fill(r, vals) for r in refs]})
    return out
