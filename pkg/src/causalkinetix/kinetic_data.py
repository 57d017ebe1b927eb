"""Multi-experiment trajectory data: containers, file formats and validation.

A :class:`Dataset` holds ``d`` variables observed on per-repetition time
grids.  Repetitions are grouped into experiments (environments); one of the
variables is the designated target.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

__all__ = [
    "DatasetError",
    "TimeGrid",
    "Repetition",
    "Experiment",
    "Dataset",
    "ValidationReport",
    "load_dataset",
    "write_dataset",
    "dataset_to_dict",
    "dataset_from_dict",
    "validate",
    "split_leave_experiment",
]

CSV_HEADER = ("experiment", "repetition", "time", "variable", "value")


class DatasetError(ValueError):
    """Raised for malformed files, schema violations and invalid datasets."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


def _frozen(a, ndim):
    arr = np.array(a, dtype=float)
    if arr.ndim != ndim:
        raise DatasetError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TimeGrid:
    """Ordered observation times of one repetition."""

    times: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "times", _frozen(self.times, 1))

    def __len__(self):
        return len(self.times)

    def problems(self):
        t = self.times
        out = []
        if len(t) < 3:
            out.append(f"time grid needs at least 3 points, got {len(t)}")
        if not np.all(np.isfinite(t)):
            out.append("non-finite time value")
        elif len(t) > 1 and np.any(np.diff(t) <= 0):
            out.append("non-monotone time grid")
        return out


@dataclass(frozen=True)
class Repetition:
    """One multivariate trajectory; ``values`` has shape (d, L)."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "times", _frozen(self.times, 1))
        object.__setattr__(self, "values", _frozen(self.values, 2))

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(self.times)

    @property
    def L(self) -> int:
        return len(self.times)

    def __eq__(self, other):
        if not isinstance(other, Repetition):
            return NotImplemented
        return (
            self.times.shape == other.times.shape
            and self.values.shape == other.values.shape
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None


@dataclass(frozen=True)
class Experiment:
    id: str
    repetitions: tuple

    def __post_init__(self):
        object.__setattr__(self, "id", str(self.id))
        object.__setattr__(self, "repetitions", tuple(self.repetitions))


@dataclass(frozen=True)
class Dataset:
    """Immutable multi-experiment dataset.

    Parameters
    ----------
    variable_names : sequence of str
        Names of the ``d`` variables (row order of every repetition).
    target_index : int
        Row index of the target variable.
    experiments : sequence of Experiment
    """

    variable_names: tuple
    target_index: int
    experiments: tuple

    def __post_init__(self):
        object.__setattr__(self, "variable_names", tuple(str(v) for v in self.variable_names))
        object.__setattr__(self, "target_index", int(self.target_index))
        exps = tuple(
            e if isinstance(e, Experiment) else Experiment(*e) for e in self.experiments
        )
        object.__setattr__(self, "experiments", exps)

    @property
    def d(self) -> int:
        return len(self.variable_names)

    @property
    def m(self) -> int:
        return len(self.experiments)

    @property
    def n(self) -> int:
        return sum(len(e.repetitions) for e in self.experiments)

    @property
    def target(self) -> str:
        return self.variable_names[self.target_index]

    @property
    def experiment_ids(self) -> list:
        return [e.id for e in self.experiments]

    def repetitions(self) -> Iterator[tuple]:
        """Yield ``(experiment_position, repetition_position, Repetition)``."""
        for k, exp in enumerate(self.experiments):
            for r, rep in enumerate(exp.repetitions):
                yield k, r, rep

    def experiment_labels(self) -> np.ndarray:
        """Experiment position of every repetition, in iteration order."""
        return np.array([k for k, _, _ in self.repetitions()], dtype=int)

    def select_variables(self, keep: Sequence[int]) -> "Dataset":
        """Dataset restricted to the variables ``keep`` (must include the target)."""
        keep = [int(j) for j in keep]
        if self.target_index not in keep:
            raise DatasetError("variable selection must keep the target")
        exps = [
            Experiment(e.id, [Repetition(r.times, r.values[keep]) for r in e.repetitions])
            for e in self.experiments
        ]
        return Dataset(
            [self.variable_names[j] for j in keep], keep.index(self.target_index), exps
        )

    def permute_variables(self, perm: Sequence[int]) -> "Dataset":
        """Reorder variables so that new row ``i`` is old row ``perm[i]``."""
        perm = [int(j) for j in perm]
        if sorted(perm) != list(range(self.d)):
            raise DatasetError("not a permutation of the variables")
        return self.select_variables(perm)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.variable_names == other.variable_names
            and self.target_index == other.target_index
            and len(self.experiments) == len(other.experiments)
            and all(
                a.id == b.id and a.repetitions == b.repetitions
                for a, b in zip(self.experiments, other.experiments)
            )
        )

    __hash__ = None


@dataclass
class ValidationReport:
    errors: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def to_dict(self):
        return {
            "errors": [{"location": loc, "message": msg} for loc, msg in self.errors],
            "warnings": [{"location": loc, "message": msg} for loc, msg in self.warnings],
        }


def validate(dataset: Dataset, min_experiments=2) -> ValidationReport:
    """Enumerate every invariant violation of ``dataset``.

    ``min_experiments=1`` admits single-experiment data (pooled scoring).
    """
    rep = ValidationReport()
    d = dataset.d
    if d < 1:
        rep.errors.append(("dataset", "no variables"))
    if len(set(dataset.variable_names)) != d:
        rep.errors.append(("variables", "duplicate variable names"))
    if not 0 <= dataset.target_index < max(d, 1):
        rep.errors.append(("target", f"target index {dataset.target_index} out of range"))
    if dataset.m < min_experiments:
        rep.errors.append(("experiments", f"need >= {min_experiments} experiments"))
    ids = dataset.experiment_ids
    if len(set(ids)) != len(ids):
        rep.errors.append(("experiments", "experiment ids are not unique"))
    for exp in dataset.experiments:
        if not exp.repetitions:
            rep.errors.append((f"experiment {exp.id}", "experiment has no repetitions"))
        for r, obs in enumerate(exp.repetitions):
            loc = f"experiment {exp.id}, repetition {r}"
            for msg in obs.grid.problems():
                rep.errors.append((loc, msg))
            if obs.values.shape != (d, obs.L):
                rep.errors.append(
                    (loc, f"values have shape {obs.values.shape}, expected {(d, obs.L)}")
                )
                continue
            bad = np.argwhere(~np.isfinite(obs.values))
            for j, ell in bad:
                rep.errors.append(
                    (
                        f"{loc}, variable {dataset.variable_names[j]}, time index {ell}",
                        "non-finite value",
                    )
                )
    return rep


def check_valid(dataset: Dataset, min_experiments=2) -> Dataset:
    report = validate(dataset, min_experiments)
    if not report.ok:
        loc, msg = report.errors[0]
        raise DatasetError(f"{msg} ({loc})", report)
    return dataset


def split_leave_experiment(dataset: Dataset, experiment_id) -> tuple:
    """Split into (all other experiments, the named experiment)."""
    experiment_id = str(experiment_id)
    if experiment_id not in dataset.experiment_ids:
        raise DatasetError(f"unknown experiment id {experiment_id!r}")
    if dataset.m < 2:
        raise DatasetError("holding out the only experiment would leave train empty")
    train = [e for e in dataset.experiments if e.id != experiment_id]
    held = [e for e in dataset.experiments if e.id == experiment_id]
    mk = lambda exps: Dataset(dataset.variable_names, dataset.target_index, exps)
    return mk(train), mk(held)


# --------------------------------------------------------------------- I/O


def dataset_to_dict(dataset: Dataset) -> dict:
    return {
        "variables": list(dataset.variable_names),
        "target": dataset.target,
        "experiments": [
            {
                "id": e.id,
                "repetitions": [
                    {"times": r.times.tolist(), "values": r.values.tolist()}
                    for r in e.repetitions
                ],
            }
            for e in dataset.experiments
        ],
    }


def dataset_from_dict(obj) -> Dataset:
    try:
        names = [str(v) for v in obj["variables"]]
        target = str(obj["target"])
        exps = []
        for e in obj["experiments"]:
            reps = []
            for r in e["repetitions"]:
                times = [float(x) for x in r["times"]]
                rows = r["values"]
                if len(rows) != len(names):
                    raise DatasetError(
                        f"experiment {e['id']}: values have {len(rows)} rows, expected {len(names)}"
                    )
                if any(len(row) != len(times) for row in rows):
                    raise DatasetError(f"experiment {e['id']}: ragged values matrix")
                reps.append(Repetition(times, [[float(x) for x in row] for row in rows]))
            exps.append(Experiment(e["id"], reps))
    except (KeyError, TypeError) as exc:
        raise DatasetError(f"schema error: missing or malformed field {exc}") from exc
    if target not in names:
        raise DatasetError(f"target {target!r} is not one of the variables")
    return Dataset(names, names.index(target), exps)


def _read_csv_long(path, target):
    if target is None:
        raise DatasetError("csv_long input needs an explicit target variable")
    names, exps = [], {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
            raise DatasetError(f"csv header must be {','.join(CSV_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise DatasetError(f"line {lineno}: expected 5 fields, got {len(row)}")
            exp, rep, t, var, val = row
            try:
                t, val = float(t), float(val)
            except ValueError as exc:
                raise DatasetError(f"line {lineno}: {exc}") from exc
            if var not in names:
                names.append(var)
            cells = exps.setdefault(exp, {}).setdefault(rep, {})
            cells.setdefault(t, {})[var] = val
    experiments = []
    for exp_id, reps in exps.items():
        out = []
        for rep_id, cells in reps.items():
            times = list(cells)
            values = np.full((len(names), len(times)), np.nan)
            for ell, t in enumerate(times):
                for var, val in cells[t].items():
                    values[names.index(var), ell] = val
            if np.isnan(values).any():
                raise DatasetError(
                    f"experiment {exp_id}, repetition {rep_id}: missing cells in long table"
                )
            out.append(Repetition(times, values))
        experiments.append(Experiment(exp_id, out))
    if target not in names:
        raise DatasetError(f"target {target!r} is not one of the variables")
    return Dataset(names, names.index(target), experiments)


def load_dataset(path, format: str = "json", target: str | None = None) -> Dataset:
    """Read and validate a dataset file.

    ``format`` is ``"json"`` or ``"csv_long"``; the long CSV format carries no
    target, so ``target`` must name one of its variables.
    """
    path = Path(path)
    if format == "json":
        try:
            with open(path, encoding="utf-8") as fh:
                obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"parse error: {exc}") from exc
        ds = dataset_from_dict(obj)
    elif format == "csv_long":
        ds = _read_csv_long(path, target)
    else:
        raise DatasetError(f"unknown format {format!r}")
    return check_valid(ds)


def write_dataset(dataset: Dataset, path, format: str = "json") -> None:
    path = Path(path)
    if format == "json":
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(dataset_to_dict(dataset), fh)
            fh.write("\n")
    elif format == "csv_long":
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for exp in dataset.experiments:
                for r, rep in enumerate(exp.repetitions):
                    for ell, t in enumerate(rep.times):
                        for j, name in enumerate(dataset.variable_names):
                            w.writerow([exp.id, r, repr(float(t)), name, repr(float(rep.values[j, ell]))])
    else:
        raise DatasetError(f"unknown format {format!r}")
