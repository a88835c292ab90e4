"""Cohort volume tables (CSV) and the per-region statistics report."""
import csv
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from ..errors import DataError, DegenerateError
from .stats import auroc, bonferroni, delong_test, ranksum_test, signedrank_test

COHORTS = ("control", "patient")
SUFFIX = "_mm3"


class CsvFormatError(DataError):
    def __init__(self, msg, row=None):
        super().__init__(msg if row is None else f"row {row}: {msg}")
        self.row = row


@dataclass(frozen=True, eq=False)
class GroupTable:
    subjects: tuple
    cohorts: tuple
    regions: tuple
    volumes: np.ndarray  # (subjects, regions)
    tiv: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        vol = np.asarray(self.volumes, dtype=np.float64)
        tiv = np.asarray(self.tiv, dtype=np.float64)
        if vol.shape != (len(self.subjects), len(self.regions)) or tiv.shape != (len(self.subjects),):
            raise DataError("group table arrays do not match subjects/regions")
        bad = [c for c in self.cohorts if c not in COHORTS]
        if bad:
            raise DataError(f"unknown cohort {bad[0]!r}; expected one of {COHORTS}")
        object.__setattr__(self, "volumes", vol)
        object.__setattr__(self, "tiv", tiv)

    def column(self, region):
        return self.volumes[:, self.regions.index(region)]

    def cohort_mask(self, cohort):
        return np.array([c == cohort for c in self.cohorts])


def tiv_normalize(table):
    """Divide each row's region volumes by its TIV."""
    if np.any(~(table.tiv > 0)):
        i = int(np.argmax(~(table.tiv > 0)))
        raise DataError(f"subject {table.subjects[i]}: TIV must be positive")
    return replace(table, volumes=table.volumes / table.tiv[:, None], normalized=True)


def read_group_csv(path):
    """Parse ``subject,cohort,tiv_mm3,<region>_mm3,...``; rows are 1-based
    counting the header as row 1."""
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise CsvFormatError("empty file", 1)
    head = [h.strip() for h in rows[0]]
    if head[:3] != ["subject", "cohort", "tiv_mm3"] or len(head) < 4:
        raise CsvFormatError("header must start with subject,cohort,tiv_mm3 and list regions", 1)
    if not all(h.endswith(SUFFIX) and len(h) > len(SUFFIX) for h in head[3:]):
        raise CsvFormatError(f"region columns must end in {SUFFIX}", 1)
    regions = tuple(h[: -len(SUFFIX)] for h in head[3:])
    subjects, cohorts, tiv, vols = [], [], [], []
    for n, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(head):
            raise CsvFormatError(f"expected {len(head)} fields, got {len(row)}", n)
        cohort = row[1].strip()
        if cohort not in COHORTS:
            raise CsvFormatError(f"cohort {cohort!r} is not control/patient", n)
        try:
            nums = [float(c) for c in row[2:]]
        except ValueError:
            raise CsvFormatError("non-numeric volume or TIV", n) from None
        if not all(math.isfinite(v) for v in nums) or any(v < 0 for v in nums):
            raise CsvFormatError("volumes must be finite and nonnegative", n)
        if nums[0] <= 0:
            raise CsvFormatError("tiv_mm3 must be positive", n)
        subjects.append(row[0].strip())
        cohorts.append(cohort)
        tiv.append(nums[0])
        vols.append(nums[1:])
    if not subjects:
        raise CsvFormatError("no data rows", 2)
    return GroupTable(tuple(subjects), tuple(cohorts), regions, np.array(vols), np.array(tiv))


def write_group_csv(path, table):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject", "cohort", "tiv_mm3"] + [r + SUFFIX for r in table.regions])
        for s, c, t, v in zip(table.subjects, table.cohorts, table.tiv, table.volumes):
            w.writerow([s, c, repr(float(t))] + [repr(float(x)) for x in v])


def stats_report(table, paired=None, mode="auto"):
    """Per region: AUROC (patient vs control, TIV-normalized), rank-sum p and
    its Bonferroni adjustment; with ``paired`` also DeLong and signed-rank
    comparisons against the second table."""
    norm = tiv_normalize(table)
    ctrl, pat = norm.cohort_mask("control"), norm.cohort_mask("patient")
    if not ctrl.any() or not pat.any():
        raise DataError("both control and patient rows are required")
    rows = []
    for r in norm.regions:
        v = norm.column(r)
        # smaller volumes in patients count as positive evidence
        rows.append({"region": r, "n_control": int(ctrl.sum()), "n_patient": int(pat.sum()),
                     "auroc": auroc(-v[ctrl], -v[pat]),
                     "ranksum_p": ranksum_test(v[ctrl], v[pat], mode)[1]})
    for row, adj in zip(rows, bonferroni([r["ranksum_p"] for r in rows])):
        row["ranksum_p_bonferroni"] = adj
    if paired is not None:
        _add_paired(rows, norm, tiv_normalize(paired), pat, mode)
    return rows


def _add_paired(rows, a, b, labels, mode):
    if a.subjects != b.subjects or a.cohorts != b.cohorts:
        raise DataError("paired tables must list the same subjects and cohorts in the same order")
    for row in rows:
        r = row["region"]
        if r not in b.regions:
            raise DataError(f"paired table lacks region {r!r}")
        va, vb = a.column(r), b.column(r)
        auc_a, auc_b, z, p = delong_test(-va, -vb, labels.astype(int))
        row.update({"delong_auc_a": auc_a, "delong_auc_b": auc_b, "delong_z": z, "delong_p": p})
        try:
            row["signedrank_p"] = signedrank_test(np.column_stack([va, vb]), mode)[1]
        except DegenerateError:
            row["signedrank_p"] = None  # every paired difference is zero
    ps = [r["delong_p"] for r in rows]
    for row, adj in zip(rows, bonferroni(ps)):
        row["delong_p_bonferroni"] = adj


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_report(rows, csv_path=None, json_path=None, extra=None):
    if csv_path:
        keys = list(rows[0]) if rows else ["region"]
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(keys)
            for r in rows:
                w.writerow([_cell(r.get(k)) for k in keys])
    if json_path:
        doc = {"regions": rows, **(extra or {})}
        Path(json_path).write_text(json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n")
