#!/usr/bin/env python3
"""Seeded synthetic corpora for the bundled data/ directory.

Sentences are drawn from a small topic grammar: every sentence picks a topic,
and its nouns, verbs and adjectives come from that topic's word clusters with
Zipfian frequencies. Word forms are pronounceable pseudo-words.

    python3 tools/make_toy_corpus.py --out data
"""

import argparse
import random
from pathlib import Path

ONSETS = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "st", "tr", "pl", "kr", "sn"]
VOWELS = ["a", "e", "i", "o", "u", "ai", "ou", "ea"]
CODAS = ["", "", "n", "r", "s", "l", "k", "m"]

FUNCTION = ["the", "a", "of", "and", "to", "in", "with", "on", "for", "by", "from", "at", "that", "this", "is", "was", "not", "very"]


def make_words(rng, count, taken):
    out = []
    while len(out) < count:
        w = "".join(rng.choice(ONSETS) + rng.choice(VOWELS) + rng.choice(CODAS) for _ in range(rng.choice([2, 2, 3])))
        if w not in taken:
            taken.add(w)
            out.append(w)
    return out


def zipf_pick(rng, words, s=1.1):
    weights = [1.0 / (i + 1) ** s for i in range(len(words))]
    return rng.choices(words, weights=weights)[0]


class Grammar:
    def __init__(self, seed, topics, nouns, verbs, adjs):
        rng = random.Random(seed)
        taken = set(FUNCTION)
        self.topics = []
        for _ in range(topics):
            self.topics.append({
                "n": make_words(rng, nouns, taken),
                "v": make_words(rng, verbs, taken),
                "a": make_words(rng, adjs, taken),
            })
        self.topic_weights = [1.0 / (i + 1) ** 0.6 for i in range(topics)]

    def noun_phrase(self, rng, t):
        parts = [rng.choice(["the", "the", "a", "this", "that"])]
        if rng.random() < 0.4:
            if rng.random() < 0.2:
                parts.append("very")
            parts.append(zipf_pick(rng, t["a"]))
        parts.append(zipf_pick(rng, t["n"]))
        if rng.random() < 0.2:
            parts += ["of", "the", zipf_pick(rng, t["n"])]
        return parts

    def sentence(self, rng):
        t = rng.choices(self.topics, weights=self.topic_weights)[0]
        words = self.noun_phrase(rng, t)
        if rng.random() < 0.15:
            words += [rng.choice(["is", "was"]), rng.choice(["not", "very"]), zipf_pick(rng, t["a"])]
        else:
            words.append(zipf_pick(rng, t["v"]))
            words += self.noun_phrase(rng, t)
            if rng.random() < 0.35:
                words.append(rng.choice(["in", "with", "on", "for", "by", "from", "at", "to"]))
                words += self.noun_phrase(rng, t)
        if rng.random() < 0.2:
            words.append("and")
            words.append(zipf_pick(rng, t["v"]))
            words += self.noun_phrase(rng, t)
        return " ".join(words)


def write_corpus(path, grammar, rng, target_bytes=None, target_tokens=None):
    lines, size, tokens = [], 0, 0
    while True:
        s = grammar.sentence(rng)
        lines.append(s)
        size += len(s) + 1
        tokens += len(s.split()) + 1
        if target_bytes and size >= target_bytes:
            break
        if target_tokens and tokens >= target_tokens:
            break
    path.write_text("\n".join(lines) + "\n")
    return size, tokens


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default="data")
    ap.add_argument("--seed", type=int, default=2024)
    args = ap.parse_args()
    out = Path(args.out)

    desk = Grammar(args.seed, topics=20, nouns=68, verbs=34, adjs=18)
    (out / "desk").mkdir(parents=True, exist_ok=True)
    for split, nbytes, off in [("train", 200_000, 1), ("valid", 20_000, 2), ("test", 20_000, 3)]:
        size, toks = write_corpus(out / "desk" / f"{split}.txt", desk, random.Random(args.seed * 10 + off), target_bytes=nbytes)
        print(f"desk/{split}.txt: {size} bytes, {toks} tokens")

    toy = Grammar(args.seed + 1, topics=3, nouns=8, verbs=5, adjs=3)
    (out / "toy").mkdir(parents=True, exist_ok=True)
    for split, ntok, off in [("train", 1000, 1), ("valid", 300, 2), ("test", 300, 3)]:
        size, toks = write_corpus(out / "toy" / f"{split}.txt", toy, random.Random(args.seed * 10 + 100 + off), target_tokens=ntok)
        print(f"toy/{split}.txt: {size} bytes, {toks} tokens")


if __name__ == "__main__":
    main()
