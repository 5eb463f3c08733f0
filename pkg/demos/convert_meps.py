"""Convert the ``MEPS2001`` data frame from the R package ``ssmrob`` to the CLI schema.

The data cannot be redistributed, so export it yourself::

    R -e 'library(ssmrob); data(MEPS2001); write.csv(MEPS2001, "MEPS2001.csv", row.names = FALSE)'
    python demos/convert_meps.py MEPS2001.csv meps2001.csv
    GENHECK_MEPS_CSV=meps2001.csv pytest tests/test_acceptance.py

``ssmrob`` already stores age in tens of years and income in thousands of
dollars; the only change made here is that ``lambexp`` is written as ``NA``
whenever ``dambexp`` is 0 (``ssmrob`` stores the placeholder 0 there), so the
file passes ingestion with the selected/censored split made explicit.
"""

import csv
import sys

COLUMNS = ["ambexp", "lambexp", "dambexp", "age", "female", "educ", "blhisp", "totchr", "ins", "income"]


def convert(src, dst):
    with open(src, newline="", encoding="utf-8") as fin:
        rows = list(csv.DictReader(fin))
    missing = [c for c in COLUMNS if c not in rows[0]]
    if missing:
        sys.exit(f"{src}: columns {missing} not found; is this the ssmrob MEPS2001 export?")
    with open(dst, "w", newline="", encoding="utf-8") as fout:
        w = csv.writer(fout)
        w.writerow(COLUMNS)
        for r in rows:
            rec = [r[c].strip().strip('"') for c in COLUMNS]
            if float(rec[2]) == 0:
                rec[1] = "NA"
            w.writerow(rec)
    n0 = sum(float(r["dambexp"]) == 0 for r in rows)
    print(f"wrote {dst}: {len(rows)} rows, {n0} with zero expenditure")


if __name__ == "__main__":
    if len(sys.argv) != 3:
        sys.exit(__doc__)
    convert(sys.argv[1], sys.argv[2])
