"""Independent oracle for exact match and token F1.

Writes crates/core/tests/data/metric_table.json. The Rust tests compare the
library's metrics against this table to 1e-9.
"""

import json
import string
import sys
from fractions import Fraction
from pathlib import Path

ARTICLES = {"a", "an", "the"}

CASES = [
    ("the kitchen floor", ["kitchen"]),
    ("garden", ["kitchen", "garden shed"]),
    ("kitchen", ["kitchen"]),
    ("office", ["office"]),
    ("the office", ["office"]),
    ("officer", ["office"]),
    ("Office.", ["office"]),
    ("OFFICE", ["the Office"]),
    ("an apple", ["apple"]),
    ("a", ["the"]),
    ("", [""]),
    ("", ["kitchen"]),
    ("kitchen", [""]),
    ("the", ["kitchen"]),
    ("kitchen kitchen", ["kitchen"]),
    ("kitchen", ["kitchen kitchen"]),
    ("kitchen kitchen", ["kitchen kitchen garden"]),
    ("red blue green", ["green blue red"]),
    ("red blue green", ["red"]),
    ("red", ["red blue green"]),
    ("red blue", ["blue yellow"]),
    ("one two three four", ["three four five six"]),
    ("one two three four", ["five six", "four"]),
    ("Denver Broncos", ["Denver Broncos", "Broncos", "the Denver Broncos"]),
    ("Broncos", ["Denver Broncos"]),
    ("Carolina Panthers", ["Denver Broncos"]),
    ("Santa Clara, California", ["Santa Clara, California", "Levi's Stadium"]),
    ("Levis Stadium", ["Levi's Stadium"]),
    ("Levi Stadium", ["Levi's Stadium"]),
    ("1,000", ["1000"]),
    ("3.5 million", ["35 million"]),
    ("horse-drawn carriage", ["horsedrawn carriage"]),
    ("horse drawn", ["horse-drawn"]),
    ("the the the", ["a an the"]),
    ("New   York\tCity", ["new york city"]),
    ("  padded  ", ["padded"]),
    ("it was the bathroom", ["bathroom"]),
    ("bathroom hallway kitchen", ["hallway"]),
    ("yes", ["no", "yes"]),
    ("no", ["yes"]),
    ("Mary, John", ["john mary"]),
    ("(north)", ["north"]),
    ("north-east", ["northeast"]),
    ("north east", ["northeast"]),
    ("apple banana apple", ["apple apple banana banana"]),
    ("x y z", ["x", "y", "z", "x y"]),
    ("the milk is in the kitchen", ["kitchen", "the kitchen"]),
    ("two", ["2", "two"]),
    ("football!", ["the football"]),
    ("café crème", ["café crème", "cafe creme"]),
]


def normalize(s):
    s = s.lower()
    s = "".join(ch for ch in s if ch not in string.punctuation)
    return [tok for tok in s.split() if tok not in ARTICLES]


def overlap(pred, gold):
    # multiset intersection by exhaustive counting
    common = 0
    for tok in set(pred):
        common += min(pred.count(tok), gold.count(tok))
    return common


def f1_one(pred, gold):
    if not pred and not gold:
        return Fraction(1)
    if not pred or not gold:
        return Fraction(0)
    common = overlap(pred, gold)
    if common == 0:
        return Fraction(0)
    p = Fraction(common, len(pred))
    r = Fraction(common, len(gold))
    return 2 * p * r / (p + r)


def main():
    assert len(CASES) == 50, len(CASES)
    rows = []
    for prediction, labels in CASES:
        pred = normalize(prediction)
        golds = [normalize(l) for l in labels]
        rows.append({
            "prediction": prediction,
            "labels": labels,
            "exact_match": int(any(pred == g for g in golds)),
            "f1": float(max(f1_one(pred, g) for g in golds)),
        })
    out = Path(__file__).resolve().parent.parent / "crates/core/tests/data/metric_table.json"
    out.write_text(json.dumps(rows, indent=1, ensure_ascii=False) + "\n")
    print(f"wrote {len(rows)} cases to {out}", file=sys.stderr)


if __name__ == "__main__":
    main()
