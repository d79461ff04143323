"""Data model for progressive multi-state survival data.

A subject is described by stage-wise observed times ``U^q`` and event
indicators ``delta^q`` for stages ``q = 1..Q+1``, where stage ``Q+1`` is the
absorbing state. ``U^q`` is the stage-q transition time truncated at the
common censoring time, so times are non-decreasing in q and indicators are
non-increasing.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ParseError, SchemaError, ValidationError

IRT = "irt"
CRT = "crt"


@dataclass(frozen=True)
class MultiStateRecord:
    """One subject: arm, covariates and the stage-wise (time, indicator) pairs."""

    subject_id: str
    arm: int
    times: tuple
    indicators: tuple
    covariates: tuple
    cluster_id: str | None = None

    def validate(self) -> None:
        t = np.asarray(self.times, dtype=float)
        d = np.asarray(self.indicators, dtype=int)
        if t.ndim != 1 or d.shape != t.shape:
            raise ValidationError(
                f"subject {self.subject_id}: times and indicators must be "
                f"equal-length vectors"
            )
        if not np.all(np.isfinite(t)) or np.any(t < 0):
            raise ValidationError(
                f"subject {self.subject_id}: times must be finite and >= 0"
            )
        if not np.all(np.isin(d, (0, 1))):
            raise ValidationError(
                f"subject {self.subject_id}: indicators must be 0/1"
            )
        if np.any(np.diff(t) < 0):
            raise ValidationError(
                f"subject {self.subject_id}: times non-decreasing violated"
            )
        if np.any(np.diff(d) > 0):
            raise ValidationError(
                f"subject {self.subject_id}: indicators non-increasing violated"
            )
        censored = np.flatnonzero(d == 0)
        if censored.size and np.any(t[censored[0]:] != t[censored[0]]):
            raise ValidationError(
                f"subject {self.subject_id}: times after censoring must equal "
                f"the censoring time"
            )
        if self.arm not in (0, 1):
            raise ValidationError(f"subject {self.subject_id}: arm must be 0 or 1")
        z = np.asarray(self.covariates, dtype=float)
        if z.size and not np.all(np.isfinite(z)):
            raise ValidationError(
                f"subject {self.subject_id}: covariates contain missing values"
            )


class Dataset:
    """Array-backed collection of :class:`MultiStateRecord` for one trial.

    The constructor validates every record and freezes the data into numpy
    arrays; instances are read-only afterwards and safe to share across
    workers.
    """

    def __init__(self, records, n_stages: int, covariate_names, design: str = IRT,
                 validate: bool = True):
        if n_stages < 2:
            raise ValidationError("n_stages must be >= 2")
        if design not in (IRT, CRT):
            raise ValidationError(f"unknown design {design!r}")
        covariate_names = list(covariate_names)
        n = len(records)
        if n == 0:
            raise ValidationError("dataset has no records")
        times = np.empty((n, n_stages), dtype=float)
        indicators = np.empty((n, n_stages), dtype=np.int8)
        arm = np.empty(n, dtype=np.int8)
        covariates = np.empty((n, len(covariate_names)), dtype=float)
        subject_ids = []
        cluster_ids = []
        for i, rec in enumerate(records):
            if validate:
                rec.validate()
            if len(rec.times) != n_stages:
                raise ValidationError(
                    f"subject {rec.subject_id}: expected {n_stages} stages, "
                    f"got {len(rec.times)}"
                )
            if len(rec.covariates) != len(covariate_names):
                raise ValidationError(
                    f"subject {rec.subject_id}: covariate dimension mismatch"
                )
            times[i] = rec.times
            indicators[i] = rec.indicators
            arm[i] = rec.arm
            covariates[i] = rec.covariates
            subject_ids.append(str(rec.subject_id))
            cluster_ids.append(rec.cluster_id)
        if design == CRT and any(c is None or c == "" for c in cluster_ids):
            raise ValidationError("design=crt requires a cluster_id on every record")
        self.n_stages = int(n_stages)
        self.covariate_names = covariate_names
        self.design = design
        self.times = times
        self.indicators = indicators
        self.arm = arm
        self.covariates = covariates
        self.subject_ids = np.asarray(subject_ids, dtype=object)
        self.cluster_ids = (np.asarray(cluster_ids, dtype=object)
                            if design == CRT else None)
        self._check_design()

    @classmethod
    def from_arrays(cls, times, indicators, arm, covariates, covariate_names,
                    design: str = IRT, subject_ids=None, cluster_ids=None,
                    validate: bool = True) -> "Dataset":
        times = np.asarray(times, dtype=float)
        n, n_stages = times.shape
        if subject_ids is None:
            subject_ids = [str(i) for i in range(n)]
        if cluster_ids is None:
            cluster_ids = [None] * n
        records = [
            MultiStateRecord(
                subject_id=subject_ids[i],
                arm=int(arm[i]),
                times=tuple(times[i]),
                indicators=tuple(int(v) for v in indicators[i]),
                covariates=tuple(np.asarray(covariates)[i]),
                cluster_id=cluster_ids[i],
            )
            for i in range(n)
        ]
        return cls(records, n_stages, covariate_names, design, validate=validate)

    # -- derived views -------------------------------------------------

    def __len__(self) -> int:
        return self.times.shape[0]

    @property
    def records(self):
        ids = self.cluster_ids if self.cluster_ids is not None else [None] * len(self)
        return [
            MultiStateRecord(
                subject_id=self.subject_ids[i],
                arm=int(self.arm[i]),
                times=tuple(self.times[i]),
                indicators=tuple(int(v) for v in self.indicators[i]),
                covariates=tuple(self.covariates[i]),
                cluster_id=ids[i],
            )
            for i in range(len(self))
        ]

    def covariate_matrix(self, names=None) -> np.ndarray:
        if names is None:
            return self.covariates
        idx = []
        for name in names:
            try:
                idx.append(self.covariate_names.index(name))
            except ValueError:
                raise SchemaError(f"unknown covariate {name!r}") from None
        return self.covariates[:, idx]

    def cluster_codes(self):
        """(codes, unique_ids, sizes): integer cluster labels per record."""
        if self.cluster_ids is None:
            raise ValidationError("dataset has no cluster structure")
        unique, codes = np.unique(self.cluster_ids.astype(str), return_inverse=True)
        sizes = np.bincount(codes)
        return codes, unique, sizes

    def subset(self, mask_or_index) -> "Dataset":
        """New Dataset restricted to the selected rows (no re-validation)."""
        idx = np.asarray(mask_or_index)
        out = object.__new__(Dataset)
        out.n_stages = self.n_stages
        out.covariate_names = self.covariate_names
        out.design = self.design
        out.times = self.times[idx]
        out.indicators = self.indicators[idx]
        out.arm = self.arm[idx]
        out.covariates = self.covariates[idx]
        out.subject_ids = self.subject_ids[idx]
        out.cluster_ids = None if self.cluster_ids is None else self.cluster_ids[idx]
        out._check_design()
        return out

    def _check_design(self) -> None:
        if not (np.any(self.arm == 0) and np.any(self.arm == 1)):
            raise ValidationError("both arms must be present")
        if self.design == CRT:
            codes, _, _ = self.cluster_codes()
            for a in (0, 1):
                if len(np.unique(codes[self.arm == a])) < 2:
                    raise ValidationError(
                        f"design=crt requires at least 2 clusters in arm {a}"
                    )
            n_clusters = len(np.unique(codes))
            arm_per_cluster = np.zeros(n_clusters) - 1
            for code, a in zip(codes, self.arm):
                if arm_per_cluster[code] == -1:
                    arm_per_cluster[code] = a
                elif arm_per_cluster[code] != a:
                    raise ValidationError("arm must be constant within a cluster")


@dataclass(frozen=True)
class DesignConfig:
    """Design constants: randomization probability, horizons and guards."""

    pi1: float = 0.5
    tau_grid: tuple = (1.0,)
    censor_floor: float = 1e-8
    estimand_level: str = "both"  # CRT only: cluster | individual | both

    def __post_init__(self):
        if not 0.0 < self.pi1 < 1.0:
            raise ValidationError("pi1 must be strictly inside (0, 1)")
        taus = tuple(float(t) for t in self.tau_grid)
        if any(t <= 0 for t in taus) or list(taus) != sorted(taus):
            raise ValidationError("tau_grid must be sorted and strictly positive")
        if not 0.0 < self.censor_floor < 0.5:
            raise ValidationError("censor_floor must lie in (0, 0.5)")
        if self.estimand_level not in ("cluster", "individual", "both"):
            raise ValidationError(f"unknown estimand_level {self.estimand_level!r}")
        object.__setattr__(self, "tau_grid", taus)

    def pi(self, arm: int) -> float:
        return self.pi1 if arm == 1 else 1.0 - self.pi1


# -- CSV ingestion -----------------------------------------------------


def _read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise SchemaError(f"{path}: empty file")
        header = [h.strip() for h in reader.fieldnames]
        rows = [{k.strip(): v for k, v in row.items()} for row in reader]
    return header, rows


def _num(row, col, rownum):
    raw = row.get(col, "")
    try:
        return float(raw)
    except (TypeError, ValueError):
        raise ParseError(
            f"row {rownum}: non-numeric value {raw!r} in column {col!r}"
        ) from None


def load_wide_csv(path, n_stages: int, covariate_names) -> Dataset:
    """Read the wide interchange format.

    Header: ``id[,cluster],arm,time_1..time_S,status_1..status_S,<covariates>``
    with S = n_stages.
    """
    header, rows = _read_rows(path)
    covariate_names = list(covariate_names)
    required = (["id", "arm"]
                + [f"time_{q}" for q in range(1, n_stages + 1)]
                + [f"status_{q}" for q in range(1, n_stages + 1)]
                + covariate_names)
    for col in required:
        if col not in header:
            raise SchemaError(f"missing column {col!r}")
    has_cluster = "cluster" in header
    records = []
    for rownum, row in enumerate(rows, start=2):
        times = tuple(_num(row, f"time_{q}", rownum) for q in range(1, n_stages + 1))
        status = tuple(int(_num(row, f"status_{q}", rownum))
                       for q in range(1, n_stages + 1))
        records.append(MultiStateRecord(
            subject_id=str(row["id"]),
            arm=int(_num(row, "arm", rownum)),
            times=times,
            indicators=status,
            covariates=tuple(_num(row, c, rownum) for c in covariate_names),
            cluster_id=str(row["cluster"]) if has_cluster else None,
        ))
    design = CRT if has_cluster else IRT
    return Dataset(records, n_stages, covariate_names, design)


def load_long_csv(path, n_stages: int, covariate_names) -> Dataset:
    """Read the long (time, event) format.

    Per subject: rows sorted by time, ``event`` in {0, 1, .., S} with 0
    (censoring) allowed only on the last row and positive events strictly
    increasing. The wide record is recovered as ``U^q`` = smallest row time
    with event >= q when one exists, else the subject's last row time with
    ``delta^q = 0``.
    """
    header, rows = _read_rows(path)
    covariate_names = list(covariate_names)
    for col in ["id", "arm", "time", "event"] + covariate_names:
        if col not in header:
            raise SchemaError(f"missing column {col!r}")
    has_cluster = "cluster" in header
    by_subject: dict = {}
    order = []
    for rownum, row in enumerate(rows, start=2):
        sid = str(row["id"])
        if sid not in by_subject:
            by_subject[sid] = []
            order.append(sid)
        by_subject[sid].append((rownum, row))
    records = []
    n_skipped = 0
    for sid in order:
        subject_rows = by_subject[sid]
        if not subject_rows:
            n_skipped += 1
            continue
        times, events = [], []
        for rownum, row in subject_rows:
            times.append(_num(row, "time", rownum))
            events.append(int(_num(row, "event", rownum)))
        if any(t2 < t1 for t1, t2 in zip(times, times[1:])):
            raise FormatError(f"subject {sid}: rows not sorted by time")
        if 0 in events[:-1]:
            raise FormatError(f"subject {sid}: event=0 allowed only on the last row")
        positive = [e for e in events if e > 0]
        if any(e2 <= e1 for e1, e2 in zip(positive, positive[1:])):
            raise FormatError(f"subject {sid}: event states must be strictly increasing")
        if any(e < 0 or e > n_stages for e in events):
            raise FormatError(f"subject {sid}: event outside 0..{n_stages}")
        last_time = times[-1]
        rec_times, rec_ind = [], []
        for q in range(1, n_stages + 1):
            hit = [t for t, e in zip(times, events) if e >= q]
            if hit:
                rec_times.append(min(hit))
                rec_ind.append(1)
            else:
                rec_times.append(last_time)
                rec_ind.append(0)
        rownum, row = subject_rows[0]
        records.append(MultiStateRecord(
            subject_id=sid,
            arm=int(_num(row, "arm", rownum)),
            times=tuple(rec_times),
            indicators=tuple(rec_ind),
            covariates=tuple(_num(row, c, rownum) for c in covariate_names),
            cluster_id=str(row["cluster"]) if has_cluster else None,
        ))
    design = CRT if has_cluster else IRT
    dataset = Dataset(records, n_stages, covariate_names, design)
    dataset.warnings = {"skipped_subjects": n_skipped}
    return dataset


def to_long_rows(dataset: Dataset):
    """Export to the long format; inverse of :func:`load_long_csv`.

    Returns rows ``(subject_id, cluster_id, arm, time, event, covariates)``.
    """
    out = []
    for i in range(len(dataset)):
        t = dataset.times[i]
        d = dataset.indicators[i]
        cid = None if dataset.cluster_ids is None else dataset.cluster_ids[i]
        observed = [q for q in range(dataset.n_stages) if d[q] == 1]
        # keep the highest state per distinct time
        rows = {}
        for q in observed:
            rows[t[q]] = q + 1
        for time in sorted(rows):
            out.append((dataset.subject_ids[i], cid, int(dataset.arm[i]),
                        float(time), rows[time], tuple(dataset.covariates[i])))
        if not observed or d[-1] == 0:
            out.append((dataset.subject_ids[i], cid, int(dataset.arm[i]),
                        float(t[-1]), 0, tuple(dataset.covariates[i])))
    return out


def winsorize_states(dataset: Dataset, cap: int) -> Dataset:
    """Collapse non-terminal states above ``cap`` into state ``cap``.

    The terminal state becomes ``cap + 1``; a no-op (with a warning flag)
    when the dataset already has at most ``cap + 1`` stages.
    """
    if cap < 1:
        raise ValidationError("cap must be >= 1")
    if cap + 1 >= dataset.n_stages:
        dataset = dataset.subset(np.arange(len(dataset)))
        dataset.warnings = {"winsorize_noop": True}
        return dataset
    keep = list(range(cap)) + [dataset.n_stages - 1]
    out = dataset.subset(np.arange(len(dataset)))
    out.times = dataset.times[:, keep].copy()
    out.indicators = dataset.indicators[:, keep].copy()
    out.n_stages = cap + 1
    out.warnings = {"winsorize_noop": False}
    return out
