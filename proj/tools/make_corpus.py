#!/usr/bin/env python3
"""Deterministic generator for the bundled sample corpus.

Emits heterogeneous byte-level text (prose, numeric tables, config blocks,
log lines) so calibration batches see visibly different activation ranges.
Regenerating with the same seed reproduces the files byte for byte.
"""

import random

NOUNS = [
    "signal", "column", "kernel", "ledger", "matrix", "window", "channel",
    "buffer", "scale", "token", "lattice", "residue", "gauge", "filter",
    "probe", "cursor", "packet", "branch", "vector", "register",
]
VERBS = [
    "drifts", "saturates", "settles", "collapses", "aligns", "overflows",
    "quantizes", "decays", "sharpens", "wanders", "stabilizes", "clips",
]
ADJS = [
    "narrow", "stubborn", "silent", "uniform", "skewed", "coarse", "dense",
    "brittle", "steady", "rounded", "clipped", "stale",
]
PLACES = [
    "the prefill phase", "the decode loop", "the eighth channel",
    "the calibration pass", "the residual stream", "the last window",
    "the integer path", "the float baseline",
]
TEMPLATES = [
    "The {adj} {noun} {verb} under {place}.",
    "Every {noun} {verb} once {place} warms up.",
    "When the {noun} {verb}, the {adj} {noun2} follows.",
    "No {adj} {noun} ever {verb2} twice in {place}.",
    "A {noun} that {verb2} will mark {place}.",
    "Inside {place}, the {noun} stays {adj}.",
]
KEYS = ["alpha", "beta", "gamma", "delta", "rows", "cols", "bits", "floor",
        "stride", "grain", "phase", "budget"]
LEVELS = ["info", "warn", "debug", "trace"]
EVENTS = [
    "scale floor reached", "window shuffled", "cache reset", "probe armed",
    "outlier clipped", "digest verified", "batch merged", "round tripped",
]


def sentence(rng):
    t = rng.choice(TEMPLATES)
    verb = rng.choice(VERBS)
    return t.format(
        adj=rng.choice(ADJS), noun=rng.choice(NOUNS), noun2=rng.choice(NOUNS),
        verb=verb, verb2=verb.rstrip("s") + "s", place=rng.choice(PLACES),
    )


def prose(rng):
    lines = [" ".join(sentence(rng) for _ in range(rng.randint(2, 4)))
             for _ in range(rng.randint(2, 4))]
    return "\n".join(lines) + "\n"


def table(rng):
    rows = rng.randint(3, 6)
    out = ["  idx   value     gain    flag"]
    for i in range(rows):
        out.append("  %3d   %7.3f   %5.2f   %s" % (
            i, rng.uniform(-12, 12), rng.uniform(0, 4),
            rng.choice(["ok", "sat", "clip", "ok"])))
    return "\n".join(out) + "\n"


def config_block(rng):
    out = ["[unit.%s]" % rng.choice(NOUNS)]
    for k in rng.sample(KEYS, rng.randint(3, 5)):
        if rng.random() < 0.5:
            out.append("%s = %d" % (k, rng.randint(0, 4096)))
        else:
            out.append("%s = %.4f" % (k, rng.uniform(0, 1)))
    return "\n".join(out) + "\n"


def log_lines(rng):
    out = []
    t = rng.randint(0, 86_000)
    for _ in range(rng.randint(2, 5)):
        t += rng.randint(1, 90)
        out.append("%05d %s %s (ch=%d)" % (
            t, rng.choice(LEVELS), rng.choice(EVENTS), rng.randint(0, 127)))
    return "\n".join(out) + "\n"


def block(rng, i):
    kind = rng.choices(["prose", "table", "config", "log"],
                       weights=[5, 2, 2, 2])[0]
    header = "== section %04d: %s ==\n" % (i, kind)
    body = {"prose": prose, "table": table, "config": config_block,
            "log": log_lines}[kind](rng)
    return header + body + "\n"


def build(seed, target_bytes):
    rng = random.Random(seed)
    parts, total, i = [], 0, 0
    while total < target_bytes:
        b = block(rng, i)
        parts.append(b)
        total += len(b.encode())
        i += 1
    return "".join(parts)


if __name__ == "__main__":
    for path, seed, size in [("data/corpus.txt", 11, 64 * 1024),
                             ("data/valid.txt", 23, 12 * 1024)]:
        text = build(seed, size)
        with open(path, "w", encoding="ascii") as f:
            f.write(text)
        print(path, len(text.encode()), "bytes")
