"""Multi-arm binomial trial datasets and their treatment network.

Treatments are identified internally by integers ``1..K`` with the reference
treatment always mapped to ``1``.  Original labels are kept on the
:class:`Dataset` so outputs can be reported with the user's names.
"""
from __future__ import annotations

import csv
import io
import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Arm",
    "Study",
    "Dataset",
    "NetworkSummary",
    "DataError",
    "parse_dataset",
    "read_dataset",
    "dataset_to_csv",
    "validate_network",
    "with_events",
]


class DataError(ValueError):
    """Raised for malformed or inconsistent trial data."""


@dataclass(frozen=True)
class Arm:
    treatment: int
    events: int
    trials: int

    def __post_init__(self):
        if self.trials <= 0:
            raise DataError(f"trials must be positive, got {self.trials}")
        if self.events < 0:
            raise DataError(f"events must be nonnegative, got {self.events}")
        if self.events > self.trials:
            raise DataError(
                f"events exceed trials ({self.events} > {self.trials})"
            )


@dataclass(frozen=True)
class Study:
    id: str
    arms: tuple[Arm, ...]
    baseline: int

    def __post_init__(self):
        if len(self.arms) < 2:
            raise DataError(f"study {self.id!r} requires >=2 arms")
        trts = [a.treatment for a in self.arms]
        if len(set(trts)) != len(trts):
            raise DataError(f"study {self.id!r} has duplicate treatments")
        if self.baseline not in trts:
            raise DataError(f"study {self.id!r}: baseline {self.baseline} not among arms")

    @property
    def treatments(self) -> tuple[int, ...]:
        return tuple(a.treatment for a in self.arms)

    @property
    def non_baseline(self) -> tuple[int, ...]:
        return tuple(t for t in self.treatments if t != self.baseline)

    @property
    def t(self) -> int:
        """Number of arms compared with the baseline."""
        return len(self.arms) - 1

    def arm(self, treatment: int) -> Arm:
        for a in self.arms:
            if a.treatment == treatment:
                return a
        raise KeyError(treatment)


@dataclass(frozen=True)
class Dataset:
    studies: tuple[Study, ...]
    n_treatments: int
    labels: tuple[str, ...] = field(default=())
    reference: int = 1

    def __post_init__(self):
        if not self.labels:
            object.__setattr__(
                self, "labels", tuple(str(k) for k in range(1, self.n_treatments + 1))
            )
        if len(self.labels) != self.n_treatments:
            raise DataError("labels must have one entry per treatment")
        seen = set()
        for s in self.studies:
            for t in s.treatments:
                if not 1 <= t <= self.n_treatments:
                    raise DataError(f"study {s.id!r}: treatment {t} outside 1..K")
                seen.add(t)
        missing = set(range(1, self.n_treatments + 1)) - seen
        if missing:
            raise DataError(f"treatments {sorted(missing)} appear in no study")

    @property
    def n_studies(self) -> int:
        return len(self.studies)

    def label(self, treatment: int) -> str:
        return self.labels[treatment - 1]


@dataclass(frozen=True)
class NetworkSummary:
    sample_size: dict[int, int]
    pair_counts: dict[tuple[int, int], int]
    connected: bool
    n_multi_arm: int

    def pair_matrix(self, n_treatments: int) -> np.ndarray:
        """Symmetric K x K matrix of direct-comparison study counts."""
        m = np.zeros((n_treatments, n_treatments), dtype=int)
        for (j, k), c in self.pair_counts.items():
            m[j - 1, k - 1] = m[k - 1, j - 1] = c
        return m


def _label_order(labels: list[str], reference: str) -> list[str]:
    rest = [lab for lab in labels if lab != reference]
    try:
        rest.sort(key=int)
    except ValueError:
        rest.sort()
    return [reference, *rest]


def parse_dataset(
    text: str,
    reference: str | None = None,
    require_events: bool = True,
) -> Dataset:
    """Parse the ``study_id,treatment,events,total[,baseline]`` CSV format.

    With ``require_events=False`` the ``events`` column may be absent, which is
    how template networks for simulation are stored; events are then 0.
    """
    reader = csv.reader(io.StringIO(text.lstrip("﻿")))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise DataError("empty input") from None
    required = ["study_id", "treatment", "total"]
    if require_events:
        required.insert(2, "events")
    missing = [c for c in required if c not in header]
    if missing:
        raise DataError(f"missing column(s): {', '.join(missing)}")
    col = {name: header.index(name) for name in header}
    has_events = "events" in col
    has_baseline = "baseline" in col

    rows = []
    for lineno, raw in enumerate(reader, start=2):
        if not raw or all(not c.strip() for c in raw):
            continue
        if len(raw) != len(header):
            raise DataError(f"row {lineno}: expected {len(header)} fields, got {len(raw)}")
        cells = [c.strip() for c in raw]
        try:
            total = int(cells[col["total"]])
            events = int(cells[col["events"]]) if has_events else 0
            flag = int(cells[col["baseline"]]) if has_baseline else 0
        except ValueError:
            raise DataError(f"row {lineno}: non-integer count") from None
        if not cells[col["study_id"]] or not cells[col["treatment"]]:
            raise DataError(f"row {lineno}: empty study_id or treatment")
        if total <= 0:
            raise DataError(f"row {lineno}: total must be positive")
        if events < 0:
            raise DataError(f"row {lineno}: events must be nonnegative")
        if events > total:
            raise DataError(f"row {lineno}: events exceed trials ({events} > {total})")
        if flag not in (0, 1):
            raise DataError(f"row {lineno}: baseline flag must be 0 or 1")
        rows.append((lineno, cells[col["study_id"]], cells[col["treatment"]], events, total, flag))
    if not rows:
        raise DataError("no data rows")

    seen_labels = list(dict.fromkeys(r[2] for r in rows))
    ref = rows[0][2] if reference is None else str(reference)
    if ref not in seen_labels:
        raise DataError(f"unknown treatment label {ref!r} given as reference")
    order = _label_order(seen_labels, ref)
    ids = {lab: i + 1 for i, lab in enumerate(order)}

    grouped: dict[str, list] = {}
    for r in rows:
        grouped.setdefault(r[1], []).append(r)
    studies = []
    for sid, srows in grouped.items():
        trts = [ids[r[2]] for r in srows]
        if len(set(trts)) != len(trts):
            dup = next(r for r in srows if trts.count(ids[r[2]]) > 1)
            raise DataError(f"row {dup[0]}: duplicate (study, treatment) ({sid}, {dup[2]})")
        if len(srows) < 2:
            raise DataError(f"row {srows[0][0]}: study {sid!r} requires >=2 arms")
        flagged = [ids[r[2]] for r in srows if r[5] == 1]
        if len(flagged) > 1:
            raise DataError(f"study {sid!r}: more than one baseline flagged")
        baseline = flagged[0] if flagged else min(trts)
        arms = tuple(sorted((Arm(ids[r[2]], r[3], r[4]) for r in srows), key=lambda a: a.treatment))
        studies.append(Study(sid, arms, baseline))

    ds = Dataset(tuple(studies), len(order), tuple(order))
    if not validate_network(ds).connected:
        warnings.warn("treatment network is disconnected", stacklevel=2)
    return ds


def read_dataset(path, reference: str | None = None, require_events: bool = True) -> Dataset:
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_dataset(fh.read(), reference=reference, require_events=require_events)


def dataset_to_csv(ds: Dataset, events: bool = True) -> str:
    """Serialize with an explicit baseline column so parsing round-trips."""
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["study_id", "treatment", *(["events"] if events else []), "total", "baseline"])
    for s in ds.studies:
        for a in s.arms:
            row = [s.id, ds.label(a.treatment)]
            if events:
                row.append(a.events)
            row += [a.trials, int(a.treatment == s.baseline)]
            w.writerow(row)
    return out.getvalue()


def validate_network(d: Dataset) -> NetworkSummary:
    sizes = {k: 0 for k in range(1, d.n_treatments + 1)}
    pairs: dict[tuple[int, int], int] = {}
    parent = list(range(d.n_treatments + 1))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    multi = 0
    for s in d.studies:
        for a in s.arms:
            sizes[a.treatment] += a.trials
        if len(s.arms) > 2:
            multi += 1
        for j, k in itertools.combinations(sorted(s.treatments), 2):
            pairs[(j, k)] = pairs.get((j, k), 0) + 1
            parent[find(j)] = find(k)
    roots = {find(k) for k in range(1, d.n_treatments + 1)}
    return NetworkSummary(sizes, dict(sorted(pairs.items())), len(roots) == 1, multi)


def with_events(template: Dataset, events: dict[tuple[int, int], int]) -> Dataset:
    """Copy of ``template`` with arm events replaced, keyed by (study index, treatment)."""
    studies = []
    for i, s in enumerate(template.studies):
        arms = tuple(Arm(a.treatment, int(events[(i, a.treatment)]), a.trials) for a in s.arms)
        studies.append(Study(s.id, arms, s.baseline))
    return Dataset(tuple(studies), template.n_treatments, template.labels)
