#!/usr/bin/env python3
"""Writes the bundled MovieLens-format toy datasets under data/.

Items form one cycle in a seeded order; each user walks the cycle from its own
starting point, so the next item is a function of the current one.
"""
import csv
import random
import sys
from pathlib import Path

ADJECTIVES = ["Silent", "Crimson", "Hidden", "Last", "Broken", "Golden", "Distant", "Frozen",
              "Wild", "Hollow", "Bright", "Secret", "Lonely", "Electric", "Quiet", "Burning"]
NOUNS = ["Harbor", "Garden", "Empire", "River", "Station", "Letter", "Mountain", "Circus",
         "Mirror", "Voyage", "Orchard", "Signal", "Lantern", "Bridge", "Island", "Winter"]


def titles(n, rng):
    pool = [(a, b) for a in ADJECTIVES for b in NOUNS]
    rng.shuffle(pool)
    out = []
    for i, (a, b) in enumerate(pool[:n]):
        year = 1950 + rng.randrange(70)
        if i % 7 == 3:
            out.append(f"{b}, The {a} ({year})")  # exercises CSV quoting
        else:
            out.append(f"The {a} {b} ({year})")
    return out


def write(root, num_users, num_items, lengths, seed):
    rng = random.Random(seed)
    root.mkdir(parents=True, exist_ok=True)
    names = titles(num_items, rng)
    ids = list(range(1, num_items + 1))
    cycle = ids[:]
    rng.shuffle(cycle)
    with open(root / "movies.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["movieId", "title", "genres"])
        for i, name in zip(ids, names):
            w.writerow([i, name, "Drama"])
    with open(root / "ratings.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["userId", "movieId", "rating", "timestamp"])
        for u in range(num_users):
            length = lengths(u)
            t = 1_000_000_000 + u * 10_000
            for step in range(length):
                item = cycle[(u + step) % num_items]
                w.writerow([u + 1, item, f"{rng.choice([3.0, 3.5, 4.0, 4.5, 5.0]):.1f}", t + step * 60])


def main():
    root = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).resolve().parent.parent / "data"
    write(root / "toy50", 50, 50, lambda u: 6, seed=50)
    write(root / "toy100", 100, 60, lambda u: 5 + u % 4, seed=100)


if __name__ == "__main__":
    main()
