#!/usr/bin/env python3
"""Regenerate data/elements.tsv from the mendeleev package.

Usage: python3 tools/gen_element_table.py > data/elements.tsv

Columns whose header carries a unit in parentheses are continuous; the
rest are categorical. f-block elements without an IUPAC group are placed
in group 3 alongside La and Ac.
"""
import re
import sys
import warnings

warnings.filterwarnings("ignore")

from mendeleev import element  # noqa: E402

COLUMNS = [
    ("AtomicMass(u)", lambda e: e.atomic_weight),
    ("Density(g/cm3)", lambda e: e.density),
    ("CovalentRadius(pm)", lambda e: e.covalent_radius_pyykko),
    ("VdwRadius(pm)", lambda e: e.vdw_radius),
    ("FirstIonizationEnergy(eV)", lambda e: e.ionenergies.get(1)),
    ("DipolePolarizability(bohr3)", lambda e: e.dipole_polarizability),
    ("ElectronegativityGhosh(-)", lambda e: e.en_ghosh),
    ("PettiforNumber(-)", lambda e: e.pettifor_number),
    ("Group", lambda e: e.group_id if e.group_id is not None else 3),
    ("Period", lambda e: e.period),
    ("Block", lambda e: e.block),
    ("ValenceElectrons", lambda e: e.nvalence()),
    ("UnpairedElectrons", lambda e: e.ec.unpaired_electrons()),
    ("Series", lambda e: re.sub(r"[^A-Za-z]", "", e.series.title())),
    ("GoldschmidtClass", lambda e: e.goldschmidt_class.title()),
    ("Radioactive", lambda e: "Yes" if e.is_radioactive else "No"),
]


def fmt(v):
    if isinstance(v, float):
        return repr(round(v, 6)).rstrip("0").rstrip(".") if v != int(v) else str(int(v))
    return str(v)


def main():
    out = sys.stdout
    out.write("# Element attribute table, Z = 1..103. Source: mendeleev %s.\n" % __import__("mendeleev").__version__)
    out.write("\t".join(["Symbol", "AtomicNumber"] + [c for c, _ in COLUMNS]) + "\n")
    for z in range(1, 104):
        e = element(z)
        row = [e.symbol, str(z)]
        for name, get in COLUMNS:
            v = get(e)
            if v is None:
                raise SystemExit(f"missing {name} for {e.symbol}")
            row.append(fmt(v))
        out.write("\t".join(row) + "\n")


if __name__ == "__main__":
    main()
