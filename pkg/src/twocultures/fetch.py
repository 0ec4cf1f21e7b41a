"""Dataset registry and fetcher.

Data is never bundled with the package. Each entry knows a public source URL
and how to normalize the download into <data_dir>/<name>.csv. A local file can
stand in for the network via ``source=``; the same validation applies.
"""
import csv
import io
import os
import urllib.request
from dataclasses import dataclass


@dataclass(frozen=True)
class DatasetSource:
    name: str
    url: str
    n_rows: int
    n_cols: int
    kind: str  # "rdatasets" drops the rownames column; "uci-german" decodes codes


_RD = "https://vincentarelbundock.github.io/Rdatasets/csv"
_UCI = "https://archive.ics.uci.edu/ml/machine-learning-databases/statlog/german/german.data"

REGISTRY = {
    "carseats": DatasetSource("carseats", f"{_RD}/ISLR/Carseats.csv", 400, 11, "rdatasets"),
    "caravan": DatasetSource("caravan", f"{_RD}/ISLR/Caravan.csv", 5822, 86, "rdatasets"),
    "cps1985": DatasetSource("cps1985", f"{_RD}/AER/CPS1985.csv", 534, 11, "rdatasets"),
    "boston": DatasetSource("boston", f"{_RD}/MASS/Boston.csv", 506, 14, "rdatasets"),
    "german": DatasetSource("german", _UCI, 1000, 20, "uci-german"),
}

GERMAN_COLUMNS = (
    "checking_status", "duration", "credit_history", "purpose", "credit_amount",
    "savings", "employment", "installment_rate", "personal_status", "other_parties",
    "residence_since", "property_magnitude", "age", "other_payment_plans", "housing",
    "existing_credits", "job", "num_dependents", "telephone", "class",
)


def data_dir():
    return os.environ.get("TWOCULTURES_DATA_DIR", os.path.join(os.getcwd(), "data"))


def dataset_path(name, directory=None):
    return os.path.join(directory or data_dir(), name + ".csv")


def fetch_instructions(name):
    src = REGISTRY.get(name)
    hint = f" (source: {src.url})" if src else ""
    return (f"dataset '{name}' not found; run `twocultures fetch {name}`{hint} "
            f"or point TWOCULTURES_DATA_DIR at a directory holding {name}.csv")


def _read_text(src):
    if src.startswith("http://") or src.startswith("https://"):
        with urllib.request.urlopen(src) as resp:
            return resp.read().decode("utf-8")
    with open(src, "r", encoding="utf-8") as fh:
        return fh.read()


def _normalize_rdatasets(text):
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise ValueError("empty download")
    header = rows[0]
    if header and header[0] in ("rownames", ""):
        rows = [r[1:] for r in rows]
    return rows


def _normalize_german(text):
    first = text.lstrip().splitlines()[0]
    if "," in first and first.split(",")[0] == GERMAN_COLUMNS[0]:
        # already-decoded CSV; pass through the parser for validation only
        return list(csv.reader(io.StringIO(text)))
    out = [list(GERMAN_COLUMNS)]
    for ln, line in enumerate(text.splitlines(), start=1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 21:
            raise ValueError(f"line {ln}: expected 21 fields, got {len(parts)}")
        # attribute 20 (foreign worker: 963 of 1000 rows identical) is dropped
        out.append(parts[:19] + [{"1": "good", "2": "bad"}[parts[20]]])
    return out


def fetch(name, directory=None, source=None):
    """Download (or copy from ``source``), normalize, validate, and write."""
    if name not in REGISTRY:
        raise KeyError(f"unknown dataset '{name}'; choose from {sorted(REGISTRY)}")
    spec = REGISTRY[name]
    text = _read_text(source or spec.url)
    if spec.kind == "uci-german":
        rows = _normalize_german(text)
    else:
        rows = _normalize_rdatasets(text)
    body = rows[1:]
    if len(body) != spec.n_rows:
        raise ValueError(f"{name}: expected {spec.n_rows} rows, got {len(body)}")
    widths = {len(r) for r in rows}
    if widths != {spec.n_cols}:
        raise ValueError(f"{name}: expected {spec.n_cols} columns, got {sorted(widths)}")
    directory = directory or data_dir()
    os.makedirs(directory, exist_ok=True)
    path = dataset_path(name, directory)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        csv.writer(fh).writerows(rows)
    return path
