"""Observation container, validation and the delimited-text file formats.

A dataset is a flat list of (time, unit, count) records plus an optional
T x R covariate table.  Repeated (time, unit) pairs are distinct observations
(repeated presentations); absent pairs simply contribute nothing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataValidationError

__all__ = [
    "ObservationSet",
    "build_observation_set",
    "read_counts_file",
    "write_counts_file",
    "read_covariates_file",
    "write_covariates_file",
]


@dataclass(frozen=True)
class ObservationSet:
    """Validated, indexed spike-count dataset.

    Attributes
    ----------
    time_idx, unit_idx, counts : int arrays of length M (one entry per record)
    covariates : (T, R) float array; R may be 0
    n_times, n_units, n_covariates : dimensions T, U, R
    """

    time_idx: np.ndarray
    unit_idx: np.ndarray
    counts: np.ndarray
    covariates: np.ndarray
    n_times: int
    n_units: int
    n_covariates: int
    # grouped views, derived once at construction
    counts_tu: np.ndarray = field(repr=False, default=None)
    presentations: np.ndarray = field(repr=False, default=None)
    flat_cell: np.ndarray = field(repr=False, default=None)
    obs_per_unit: np.ndarray = field(repr=False, default=None)

    @property
    def n_obs(self) -> int:
        return self.counts.shape[0]

    def unit_mask(self, u: int) -> np.ndarray:
        return self.unit_idx == u

    def scatter_to_grid(self, per_obs: np.ndarray) -> np.ndarray:
        """Sum a per-observation vector into a dense (T, U) grid."""
        flat = np.bincount(
            self.flat_cell, weights=per_obs, minlength=self.n_times * self.n_units
        )
        return flat.reshape(self.n_times, self.n_units)


def build_observation_set(
    records,
    covariate_table=None,
    n_times: int | None = None,
    n_units: int | None = None,
) -> ObservationSet:
    """Validate raw count records and build the indexed dataset.

    ``records`` is an iterable of (t, u, n) triples or an (M, 3) array.
    Dimensions default to the smallest grid containing the records; the
    covariate table, when given, fixes T to its row count.
    """
    arr = np.asarray(list(records) if not isinstance(records, np.ndarray) else records)
    if arr.ndim != 2 or arr.shape[1] != 3 or arr.shape[0] == 0:
        raise DataValidationError("count records must be a non-empty sequence of (t, u, n) triples")
    if not np.all(arr == np.floor(arr)):
        bad = int(np.flatnonzero(np.any(arr != np.floor(arr), axis=1))[0])
        raise DataValidationError(f"record {bad} has non-integer entries: {tuple(arr[bad])}")
    arr = arr.astype(np.int64)
    t, u, n = arr[:, 0], arr[:, 1], arr[:, 2]

    if covariate_table is not None:
        x = np.atleast_2d(np.asarray(covariate_table, dtype=float))
        if n_times is not None and n_times != x.shape[0]:
            raise DataValidationError(
                f"n_times={n_times} disagrees with covariate table rows ({x.shape[0]})"
            )
        n_times = x.shape[0]
    T = int(n_times) if n_times is not None else int(t.max()) + 1
    U = int(n_units) if n_units is not None else int(u.max()) + 1

    for name, idx, bound in (("time", t, T), ("unit", u, U)):
        if idx.min() < 0 or idx.max() >= bound:
            bad = int(np.flatnonzero((idx < 0) | (idx >= bound))[0])
            raise DataValidationError(
                f"{name} index out of range in record {bad}: "
                f"(t={t[bad]}, u={u[bad]}, n={n[bad]}), valid {name} range is [0, {bound})"
            )
    if n.min() < 0:
        bad = int(np.flatnonzero(n < 0)[0])
        raise DataValidationError(
            f"negative count in record {bad}: (t={t[bad]}, u={u[bad]}, n={n[bad]})"
        )

    if covariate_table is None:
        x = np.zeros((T, 0))
    elif x.shape[0] != T:
        raise DataValidationError(f"covariate table has {x.shape[0]} rows, expected {T}")
    if not np.all(np.isfinite(x)):
        raise DataValidationError("covariate table contains non-finite values")

    flat = t * U + u
    counts_tu = np.bincount(flat, weights=n.astype(float), minlength=T * U).reshape(T, U)
    pres = np.bincount(flat, minlength=T * U).reshape(T, U).astype(float)
    obs_per_unit = np.bincount(u, minlength=U).astype(float)

    return ObservationSet(
        time_idx=t,
        unit_idx=u,
        counts=n,
        covariates=x,
        n_times=T,
        n_units=U,
        n_covariates=x.shape[1],
        counts_tu=counts_tu,
        presentations=pres,
        flat_cell=flat,
        obs_per_unit=obs_per_unit,
    )


def write_counts_file(path, obs: ObservationSet) -> None:
    with open(path, "w") as fh:
        fh.write("t,u,n\n")
        for t, u, n in zip(obs.time_idx, obs.unit_idx, obs.counts):
            fh.write(f"{t},{u},{n}\n")


def read_counts_file(path) -> np.ndarray:
    """Parse a `t,u,n` counts file into an (M, 3) integer array."""
    path = Path(path)
    with open(path) as fh:
        header = fh.readline().strip()
        if [c.strip() for c in header.split(",")] != ["t", "u", "n"]:
            raise DataValidationError(f"{path}:1: expected header 't,u,n', got '{header}'")
        rows = []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise DataValidationError(f"{path}:{lineno}: expected 3 fields, got {len(parts)}")
            try:
                rows.append([int(p) for p in parts])
            except ValueError:
                raise DataValidationError(f"{path}:{lineno}: non-integer field in '{line}'")
    if not rows:
        raise DataValidationError(f"{path}: no count records")
    return np.asarray(rows, dtype=np.int64)


def write_covariates_file(path, covariates: np.ndarray) -> None:
    x = np.atleast_2d(np.asarray(covariates, dtype=float))
    with open(path, "w") as fh:
        fh.write(",".join(f"x{r}" for r in range(x.shape[1])) + "\n")
        for row in x:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_covariates_file(path) -> np.ndarray:
    path = Path(path)
    with open(path) as fh:
        header = [c.strip() for c in fh.readline().strip().split(",")]
        R = len(header)
        if header != [f"x{r}" for r in range(R)]:
            raise DataValidationError(f"{path}:1: expected header 'x0..x{{R-1}}', got {header}")
        rows = []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != R:
                raise DataValidationError(f"{path}:{lineno}: expected {R} fields, got {len(parts)}")
            try:
                rows.append([float(p) for p in parts])
            except ValueError:
                raise DataValidationError(f"{path}:{lineno}: non-numeric field in '{line}'")
    return np.asarray(rows, dtype=float).reshape(len(rows), R)
