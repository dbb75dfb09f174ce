"""Convert the raw Adult, COMPAS and German credit files into the headered
CSVs shipped in this directory.

Usage: python3 convert.py <raw-dir>

<raw-dir> must contain adult.data, adult.test, compas-scores-two-years.csv
and german.data exactly as distributed by UCI / ProPublica (the same files
are bundled with the `responsibly` Python package under
responsibly/dataset/). Missing values are written as empty cells; the Rust
loader drops those rows.
"""
import csv
import sys
from datetime import datetime
from pathlib import Path

ADULT_COLUMNS = [
    "age", "workclass", "fnlwgt", "education", "education_num",
    "marital_status", "occupation", "relationship", "race", "sex",
    "capital_gain", "capital_loss", "hours_per_week", "native_country",
    "income",
]

GERMAN_COLUMNS = [
    "status", "duration", "credit_history", "purpose", "credit_amount",
    "savings", "present_employment", "installment_rate", "status_sex",
    "other_debtors", "residence_since", "property", "age",
    "installment_plans", "housing", "number_of_credits", "job",
    "people_liable", "telephone", "foreign_worker", "credit",
]

COMPAS_COLUMNS = [
    "sex", "age", "age_cat", "race", "juv_fel_count", "juv_misd_count",
    "juv_other_count", "priors_count", "c_charge_degree", "c_charge_desc",
    "decile_score", "length_of_stay", "two_year_recid",
]


def adult(raw: Path, out: Path) -> None:
    rows = []
    for name, skip in (("adult.data", 0), ("adult.test", 1)):
        with open(raw / name) as fh:
            for i, line in enumerate(fh):
                if i < skip or not line.strip():
                    continue
                cells = [c.strip() for c in line.strip().split(",")]
                cells = ["" if c == "?" else c for c in cells]
                cells[-1] = cells[-1].rstrip(".")
                rows.append(cells)
    write(out / "adult.csv", ADULT_COLUMNS, rows)


def german(raw: Path, out: Path) -> None:
    rows = []
    with open(raw / "german.data") as fh:
        for line in fh:
            cells = line.split()
            if not cells:
                continue
            sex = "female" if cells[8] in ("A92", "A95") else "male"
            rows.append(cells + [sex])
    write(out / "german.csv", GERMAN_COLUMNS + ["sex"], rows)


def compas(raw: Path, out: Path) -> None:
    rows = []
    with open(raw / "compas-scores-two-years.csv") as fh:
        for rec in csv.DictReader(fh):
            # ProPublica's screening filter
            if rec["days_b_screening_arrest"] == "":
                continue
            days = int(float(rec["days_b_screening_arrest"]))
            if not -30 <= days <= 30:
                continue
            if rec["is_recid"] == "-1" or rec["c_charge_degree"] == "O":
                continue
            if rec["score_text"] == "N/A":
                continue
            fmt = "%Y-%m-%d %H:%M:%S"
            stay = (datetime.strptime(rec["c_jail_out"], fmt)
                    - datetime.strptime(rec["c_jail_in"], fmt)).days
            rec["length_of_stay"] = str(stay)
            rows.append([rec[c] for c in COMPAS_COLUMNS])
    write(out / "compas.csv", COMPAS_COLUMNS, rows)


def write(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    print(f"{path}: {len(rows)} rows")


if __name__ == "__main__":
    raw = Path(sys.argv[1])
    out = Path(__file__).resolve().parent
    adult(raw, out)
    german(raw, out)
    compas(raw, out)
