"""Generates the bundled synthetic corpus used by the end-to-end tests.

Sentences follow a handful of class templates. Words inside a class are
drawn with Zipfian weights, and names are mostly fresh strings so the
vocabulary carries a long tail of words seen exactly once.

    python3 scripts/gen_corpus.py > crates/core/tests/data/synthetic_corpus.txt
"""

import random
import sys

SEED = 20260101
TARGET_TOKENS = 100_000

rng = random.Random(SEED)
ONSETS = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "tr", "st", "pl", "gr", "sk"]
VOWELS = ["a", "e", "i", "o", "u", "ai", "ou", "ea"]
used = set()


def fresh(syllables, suffix=""):
    while True:
        w = "".join(rng.choice(ONSETS) + rng.choice(VOWELS) for _ in range(syllables)) + suffix
        if w not in used:
            used.add(w)
            return w


CLASSES = {
    "DET": ["the", "a", "this", "that", "every", "some"],
    "ADJ": [fresh(2, "ish") for _ in range(60)],
    "ANIMAL": [fresh(2) for _ in range(120)],
    "THING": [fresh(2, "et") for _ in range(150)],
    "PLACE": [fresh(3, "ia") for _ in range(60)],
    "VT": [fresh(2, "s") for _ in range(80)],
    "VI": [fresh(2, "ed") for _ in range(60)],
    "ADV": [fresh(2, "ly") for _ in range(40)],
    "PREP": ["in", "near", "under", "behind", "across", "beside"],
    "CONJ": ["and", "but", "while"],
}
WEIGHTS = {k: [1.0 / (i + 1) for i in range(len(v))] for k, v in CLASSES.items()}

TEMPLATES = [
    "DET ADJ ANIMAL VT DET THING .",
    "DET ANIMAL VI ADV PREP DET PLACE .",
    "NAME VT DET ADJ THING PREP PLACE .",
    "DET THING VI PREP DET PLACE CONJ NAME VI ADV .",
    "NAME CONJ NAME VT DET ANIMAL .",
    "DET ADJ ADJ ANIMAL VI .",
    "PREP PLACE DET ANIMAL VT NAME .",
]
name_pool = []


def name():
    # Mostly fresh names; occasionally a recurring one.
    if name_pool and rng.random() < 0.3:
        return rng.choice(name_pool[:200])
    n = fresh(rng.choice([2, 3]), "o").capitalize()
    name_pool.append(n)
    return n


def word(cls):
    if cls == "NAME":
        return name()
    if cls == ".":
        return "."
    return rng.choices(CLASSES[cls], weights=WEIGHTS[cls])[0]


tokens = 0
lines = []
while tokens < TARGET_TOKENS:
    sentences = []
    for _ in range(rng.randint(1, 4)):
        s = [word(c) for c in rng.choice(TEMPLATES).split()]
        tokens += len(s)
        sentences.append(" ".join(s))
    lines.append(" ".join(sentences))
sys.stdout.write("\n".join(lines) + "\n")
