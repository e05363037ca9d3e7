"""Writes a small synthetic JSONL dataset of cubic and distorted crystals.

Targets are smooth functions of composition and volume so a model can fit
them; they are not physical band gaps or formation energies.
"""
import argparse
import json
import random

SPECIES = ["Li", "Na", "K", "Mg", "Ca", "Al", "Si", "O", "F", "Cl", "S", "Ti", "Fe", "Zn"]

PROTOTYPES = {
    "rocksalt": [(0, 0, 0), (0.5, 0.5, 0.5)],
    "cscl": [(0, 0, 0), (0.5, 0.5, 0.5)],
    "fluorite": [(0, 0, 0), (0.25, 0.25, 0.25), (0.75, 0.75, 0.75)],
    "perovskite": [(0, 0, 0), (0.5, 0.5, 0.5), (0.5, 0.5, 0), (0.5, 0, 0.5), (0, 0.5, 0.5)],
}


def record(rng, idx):
    name = rng.choice(sorted(PROTOTYPES))
    frac = [list(p) for p in PROTOTYPES[name]]
    n = len(frac)
    kinds = rng.sample(SPECIES, min(n, 3))
    species = [kinds[min(i, len(kinds) - 1)] for i in range(n)]
    a = rng.uniform(3.0, 5.0)
    lattice = [[a if i == j else 0.0 for j in range(3)] for i in range(3)]
    for i in range(3):
        for j in range(3):
            if i != j:
                lattice[i][j] = rng.uniform(-0.3, 0.3)
    frac = [[(c + rng.uniform(-0.03, 0.03)) % 1.0 for c in p] for p in frac]
    z = sum(SPECIES.index(s) + 1 for s in species) / n
    band_gap = max(0.0, 0.35 * z - 0.4 * a + 2.0)
    formation = -0.15 * z + 0.05 * a - 0.5
    return {
        "id": f"toy-{idx:03d}",
        "lattice": lattice,
        "frac_coords": frac,
        "species": species,
        "targets": {"band_gap": round(band_gap, 6), "formation_energy": round(formation, 6)},
        "units": {"band_gap": "eV", "formation_energy": "eV/atom"},
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--count", type=int, default=30)
    ap.add_argument("--seed", type=int, default=3)
    ap.add_argument("--out", default="data/toy.jsonl")
    args = ap.parse_args()
    rng = random.Random(args.seed)
    with open(args.out, "w", newline="\n") as f:
        for i in range(args.count):
            f.write(json.dumps(record(rng, i)) + "\n")


if __name__ == "__main__":
    main()
