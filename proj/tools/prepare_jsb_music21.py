#!/usr/bin/env python3
"""Build a JSB-Chorales-style piano-roll dataset from the Bach chorales bundled
with music21.

Each chorale is sampled on a quarter-note grid; a frame holds every pitch
sounding at that grid point. Pitches are shifted by 21 so the lowest piano key is
index 0. Output is the canonical dataset JSON read by tcrnn::music::load_dataset.

    python3 tools/prepare_jsb_music21.py data/jsb_chorales.json
"""
import json
import math
import random
import sys

from music21 import corpus

PITCH_BASE = 21
NUM_KEYS = 88


def chorale_frames(score):
    steps = int(score.highestTime)
    frames = [set() for _ in range(steps)]
    for part in score.parts:
        for el in part.flatten().notes:
            start = float(el.offset)
            stop = start + float(el.quarterLength)
            # grid step t is covered when start <= t < stop
            for t in range(math.ceil(start - 1e-9), min(steps, math.ceil(stop - 1e-9))):
                for p in el.pitches:
                    key = p.midi - PITCH_BASE
                    if not 0 <= key < NUM_KEYS:
                        raise ValueError(f"pitch {p.midi} out of range")
                    frames[t].add(key)
    frames = [sorted(f) for f in frames]
    while frames and not frames[-1]:
        frames.pop()
    return frames


def main():
    out = sys.argv[1] if len(sys.argv) > 1 else "jsb_chorales.json"
    names = sorted(corpus.chorales.Iterator(returnType="filename"))
    seqs = []
    for name in names:
        frames = chorale_frames(corpus.parse(name))
        if len(frames) >= 2:
            seqs.append(frames)
    rng = random.Random(1234)
    rng.shuffle(seqs)
    n = len(seqs)
    n_train = round(n * 0.6)
    n_valid = round(n * 0.2)
    data = {
        "name": "jsb_chorales_music21",
        "splits": {
            "train": seqs[:n_train],
            "valid": seqs[n_train:n_train + n_valid],
            "test": seqs[n_train + n_valid:],
        },
    }
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(data, fh, separators=(",", ":"))
        fh.write("\n")
    steps = sum(len(s) for s in seqs)
    print(f"sequences={n} train={n_train} valid={n_valid} "
          f"test={n - n_train - n_valid} timesteps={steps}")


if __name__ == "__main__":
    main()
