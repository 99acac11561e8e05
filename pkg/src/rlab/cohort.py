"""Admissions ingest, cohort exclusions, 30-day readmission labels and patient-level splits."""
from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import ContractError, ParseError
from .text import MAX_SEQ_LEN, Document

CSV_COLUMNS = ("patient_id", "admit_time", "discharge_time", "admission_type",
               "died_in_hospital", "note_text")
READMISSION_WINDOW = timedelta(days=30)


class AdmissionType(str, Enum):
    EMERGENCY = "EMERGENCY"
    URGENT = "URGENT"
    ELECTIVE = "ELECTIVE"
    NEWBORN = "NEWBORN"


@dataclass(frozen=True)
class AdmissionRecord:
    patient_id: str
    admit_time: datetime
    discharge_time: datetime
    admission_type: AdmissionType
    died_in_hospital: bool
    note_text: str

    def __post_init__(self):
        if self.discharge_time < self.admit_time:
            raise ContractError(f"patient {self.patient_id}: discharge_time precedes admit_time")

    @property
    def admission_id(self):
        return f"{self.patient_id}@{self.admit_time.isoformat()}"


@dataclass
class CohortDataset:
    documents: list
    provenance: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)

    @property
    def counts(self):
        pos = sum(d.label for d in self.documents)
        n_patients = len({d.patient for d in self.documents})
        return n_patients, pos, len(self.documents) - pos


_TRUE = {"1", "true", "t", "yes", "y"}
_FALSE = {"0", "false", "f", "no", "n", ""}


def _parse_bool(value, line):
    v = value.strip().lower()
    if v in _TRUE:
        return True
    if v in _FALSE:
        return False
    raise ParseError(f"died_in_hospital: cannot read {value!r} as a boolean", line=line)


def _parse_time(value, column, line):
    try:
        return datetime.fromisoformat(value.strip())
    except ValueError as exc:
        raise ParseError(f"{column}: {value!r} is not an ISO-8601 timestamp", line=line) from exc


def load_admissions(path) -> list[AdmissionRecord]:
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in CSV_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ParseError(f"{path}: header lacks columns {missing}", line=1)
        for row in reader:
            line = reader.line_num
            if None in row or any(row[c] is None for c in CSV_COLUMNS):
                raise ParseError("wrong number of fields", line=line)
            kind = row["admission_type"].strip().upper()
            if kind not in AdmissionType.__members__:
                raise ParseError(f"admission_type {row['admission_type']!r} not one of "
                                 f"{sorted(AdmissionType.__members__)}", line=line)
            try:
                records.append(AdmissionRecord(
                    patient_id=row["patient_id"].strip(),
                    admit_time=_parse_time(row["admit_time"], "admit_time", line),
                    discharge_time=_parse_time(row["discharge_time"], "discharge_time", line),
                    admission_type=AdmissionType[kind],
                    died_in_hospital=_parse_bool(row["died_in_hospital"], line),
                    note_text=row["note_text"],
                ))
            except ContractError as exc:
                raise ParseError(str(exc), line=line) from exc
    return records


def readmission_labels(records: Sequence[AdmissionRecord], anchor="discharge"):
    """Map admission id -> 0/1 for every record, looking only within ``records``.

    The next admission is the first later non-ELECTIVE admission of the same
    patient; label 1 iff it starts within 30 days of this admission's
    discharge (or admit time with ``anchor="admit"``).
    """
    if anchor not in ("discharge", "admit"):
        raise ContractError(f"anchor must be 'discharge' or 'admit', got {anchor!r}")
    by_patient = defaultdict(list)
    for r in records:
        by_patient[r.patient_id].append(r)
    labels = {}
    for adms in by_patient.values():
        adms.sort(key=lambda r: (r.admit_time, r.discharge_time))
        for i, a in enumerate(adms):
            start = a.discharge_time if anchor == "discharge" else a.admit_time
            label = 0
            for b in adms[i + 1:]:
                if b.admission_type is AdmissionType.ELECTIVE:
                    continue
                label = int(b.admit_time - start <= READMISSION_WINDOW)
                break
            labels[a.admission_id] = label
    return labels


def cohort_survivors(records):
    """Records left after dropping NEWBORN admissions and in-hospital deaths."""
    return [r for r in records
            if r.admission_type is not AdmissionType.NEWBORN and not r.died_in_hospital]


def build_cohort(records: Sequence[AdmissionRecord], anchor="discharge",
                 max_seq_len=MAX_SEQ_LEN) -> CohortDataset:
    n_newborn = sum(r.admission_type is AdmissionType.NEWBORN for r in records)
    n_death = sum(r.died_in_hospital and r.admission_type is not AdmissionType.NEWBORN
                  for r in records)
    kept = sorted(cohort_survivors(records), key=lambda r: (r.patient_id, r.admit_time, r.discharge_time))
    labels = readmission_labels(kept, anchor)
    docs, provenance = [], {}
    for r in kept:
        aid = r.admission_id
        try:
            doc = Document.from_text(aid, r.note_text, labels[aid], patient_id=r.patient_id,
                                     max_seq_len=max_seq_len)
        except ContractError as exc:
            raise ContractError(f"admission {aid}: {exc}") from exc
        docs.append(doc)
        provenance[doc.doc_id] = aid
    ds = CohortDataset(docs, provenance)
    n_patients, n_pos, n_neg = ds.counts
    ds.summary = {
        "n_patients": n_patients,
        "n_admissions_in": len(records),
        "n_excluded_death": n_death,
        "n_excluded_newborn": n_newborn,
        "n_positive": n_pos,
        "n_negative": n_neg,
    }
    return ds


def split_dataset(docs, ratios=(0.7, 0.1, 0.2), seed=0):
    """Patient-level split into ``(train, val, test)``; documents come back tagged."""
    if isinstance(docs, CohortDataset):
        docs = docs.documents
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or min(ratios) < 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ContractError(f"ratios must be three nonnegative numbers summing to 1, got {ratios}")
    patients = sorted({d.patient for d in docs})
    n = len(patients)
    if n < 3:
        raise ContractError(f"{n} patients cannot fill 3 splits")
    sizes = [int(round(r * n)) for r in ratios[:2]]
    sizes.append(n - sum(sizes))
    for i in range(3):
        # every split gets at least one patient, taken from the largest
        if sizes[i] <= 0:
            j = int(np.argmax(sizes))
            sizes[j] += sizes[i] - 1
            sizes[i] = 1
    order = np.random.default_rng(seed).permutation(n)
    assignment = {}
    bounds = np.cumsum([0] + sizes)
    for split_idx, name in enumerate(("train", "val", "test")):
        for k in order[bounds[split_idx]:bounds[split_idx + 1]]:
            assignment[patients[k]] = name
    out = {"train": [], "val": [], "test": []}
    for d in docs:
        name = assignment[d.patient]
        out[name].append(d.with_split(name))
    return out["train"], out["val"], out["test"]
