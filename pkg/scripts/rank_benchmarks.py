"""Friedman rank analysis over the shipped benchmark tables.

Usage: python3 scripts/rank_benchmarks.py

Prints the chi-square and F statistics for each fixture, using the
tables' reported average-rank columns, plus the exact recomputation
for comparison.
"""

from pathlib import Path

from driftlab.evalstats import friedman, load_rank_table

FIXTURES = Path(__file__).parent.parent / "fixtures"
TABLES = ("office31", "officehome", "visda", "domainnet", "digits")


def main():
    header = f"{'table':<12} {'chi2':>8} {'f_stat':>8} {'dof':>10}   route"
    print(header)
    for name in TABLES:
        rnk = load_rank_table(FIXTURES / f"{name}_ranks.csv")
        for route in ("reported", "exact"):
            fr = friedman(rnk, averages=route)
            dof = f"({fr.dof[0]},{fr.dof[1]})"
            print(f"{name:<12} {fr.chi2:>8.2f} {fr.f_stat:>8.2f} "
                  f"{dof:>10}   {route}")


if __name__ == "__main__":
    main()
