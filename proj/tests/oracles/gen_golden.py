"""Independent oracle for the mock teacher + positional confidence.

Writes tests/data/golden_scored.jsonl from tests/data/triplets.jsonl.
Straight-line re-derivation; shares no code with the C++ library.
"""
import json
import math
import string
import sys
from pathlib import Path

A0, A1, A2, EPS = -1.0, 2.5, 0.5, 0.01
K, C, PEAK = 0.2, 1.5, 5.0


def tokens(text):
    out = []
    for raw in text.split():
        t = "".join(ch.lower() for ch in raw if ch not in string.punctuation)
        if t:
            out.append(t)
    return out


def logistic(z):
    return 1.0 / (1.0 + math.exp(-z))


def mock(query, answer, document):
    q = set(tokens(query))
    d = set(tokens(document)) if document is not None else set()
    lps = []
    for t in tokens(answer):
        z = A0 + A1 * (t in d) + A2 * (t in q)
        p = min(max(logistic(z), EPS), 1.0 - EPS)
        lps.append(math.log(p))
    return lps


def positional(lps):
    w = [max(0.0, -K * (i - PEAK) ** 2 + C) for i in range(1, len(lps) + 1)]
    if sum(w) == 0.0:
        w = [1.0] * len(lps)
    return math.exp(math.fsum(wi * lp for wi, lp in zip(w, lps)))


def main():
    root = Path(__file__).resolve().parents[1] / "data"
    rows = []
    for line in (root / "triplets.jsonl").read_text().splitlines():
        if not line.strip():
            continue
        t = json.loads(line)
        cw = positional(mock(t["query"], t["answer"], t["document"]))
        cwo = positional(mock(t["query"], t["answer"], None))
        rows.append({"id": t["id"], "conf_with": cw, "conf_without": cwo, "mig": cw - cwo})
    out = root / "golden_scored.jsonl"
    out.write_text("".join(json.dumps(r) + "\n" for r in rows))
    print(f"wrote {len(rows)} rows to {out}", file=sys.stderr)


if __name__ == "__main__":
    main()
