"""Materialize the bundled benchmark CSVs under ``data/``.

The UCI Adult files and the ProPublica two-year COMPAS export ship inside the
``responsibly`` wheel on PyPI, which is the only route to them that works
through a package mirror. This script downloads that wheel with pip, extracts
the raw files and writes:

* ``data/adult.csv``   all 48,842 rows (train + test files), header added,
                       the trailing ``.`` of test-file labels stripped.
* ``data/compas.csv``  the 6,172 rows that survive the ProPublica filter
                       (|days_b_screening_arrest| <= 30, is_recid != -1,
                       c_charge_degree != 'O', score_text != 'N/A').

Usage::

    python scripts/fetch_data.py [--wheel PATH] [--out DIR]
"""

from __future__ import annotations

import argparse
import csv
import io
import subprocess
import sys
import tempfile
import zipfile
from pathlib import Path

WHEEL_SPEC = "responsibly==0.1.2"

ADULT_COLUMNS = [
    "age", "workclass", "fnlwgt", "education", "education-num",
    "marital-status", "occupation", "relationship", "race", "sex",
    "capital-gain", "capital-loss", "hours-per-week", "native-country", "income",
]

COMPAS_COLUMNS = [
    "sex", "age", "age_cat", "race", "juv_fel_count", "juv_misd_count",
    "juv_other_count", "priors_count", "c_charge_degree", "two_year_recid",
]


def download_wheel(dest: Path) -> Path:
    subprocess.run(
        [sys.executable, "-m", "pip", "download", "--no-deps", "-q", "-d", str(dest), WHEEL_SPEC],
        check=True,
    )
    return next(dest.glob("responsibly-*.whl"))


def adult_rows(wheel: zipfile.ZipFile):
    for member in ("adult.data", "adult.test"):
        text = wheel.read(f"responsibly/dataset/adult/{member}").decode("utf-8")
        for line in text.splitlines():
            if not line.strip() or line.startswith("|"):
                continue
            fields = [f.strip() for f in line.split(",")]
            if len(fields) != len(ADULT_COLUMNS):
                continue
            fields[-1] = fields[-1].rstrip(".")
            yield fields


def compas_rows(wheel: zipfile.ZipFile):
    text = wheel.read("responsibly/dataset/compas/compas-scores-two-years.csv").decode("utf-8")
    for row in csv.DictReader(io.StringIO(text)):
        if not row["days_b_screening_arrest"]:
            continue
        if abs(int(float(row["days_b_screening_arrest"]))) > 30:
            continue
        if row["is_recid"] == "-1" or row["c_charge_degree"] == "O" or row["score_text"] == "N/A":
            continue
        yield [row[c] for c in COMPAS_COLUMNS]


def write_csv(path: Path, header, rows) -> int:
    n = 0
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)
            n += 1
    return n


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--wheel", type=Path, help="use an already downloaded responsibly wheel")
    parser.add_argument("--out", type=Path, default=Path(__file__).resolve().parent.parent / "data")
    args = parser.parse_args(argv)
    args.out.mkdir(parents=True, exist_ok=True)

    with tempfile.TemporaryDirectory() as tmp:
        wheel_path = args.wheel or download_wheel(Path(tmp))
        with zipfile.ZipFile(wheel_path) as wheel:
            n_adult = write_csv(args.out / "adult.csv", ADULT_COLUMNS, adult_rows(wheel))
            n_compas = write_csv(args.out / "compas.csv", COMPAS_COLUMNS, compas_rows(wheel))

    print(f"adult.csv: {n_adult} rows")
    print(f"compas.csv: {n_compas} rows")
    if n_adult != 48842 or n_compas != 6172:
        print("unexpected row counts", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
