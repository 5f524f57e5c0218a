"""Ordinal-score datasets, group coding, and design-matrix construction.

An :class:`ObservationTable` holds one row per rating: an ordinal score
``R`` on a 1..L scale, a binary status ``D``, a group label with G >= 2
levels, and optional continuous covariates.  A :class:`DesignSpec` fixes
the reference group and covariate order, and :func:`build_design` turns
the pair into the numeric view consumed by the fitting code: a row
vector ``x`` of length ``p = (G - 1) + p_c`` holding reference-coded
group dummies followed by the continuous covariates, with ``D`` kept as
a separate column.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, RankDeficiencyError

__all__ = [
    "ObservationTable",
    "DesignSpec",
    "CovariateProfile",
    "Design",
    "CsvSchema",
    "load_csv",
    "build_design",
]


def _frozen(a: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(a)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class ObservationTable:
    """Validated ordinal-score dataset.

    ``scores`` take values in 1..n_levels, ``status`` in {0, 1}, and
    ``group_codes`` index into ``group_levels`` (declared order).  All
    arrays are read-only; instances are safe to share across threads.
    """

    scores: np.ndarray
    status: np.ndarray
    group_codes: np.ndarray
    covariates: np.ndarray
    group_levels: tuple[str, ...]
    covariate_names: tuple[str, ...]
    n_levels: int

    @property
    def n_obs(self) -> int:
        return self.scores.shape[0]

    @property
    def n_groups(self) -> int:
        return len(self.group_levels)

    @property
    def n_covariates(self) -> int:
        return len(self.covariate_names)

    @classmethod
    def create(
        cls,
        scores,
        status,
        groups,
        covariates=None,
        *,
        n_levels: int | None = None,
        group_levels=None,
        covariate_names=None,
    ) -> "ObservationTable":
        """Validate raw columns and build an immutable table.

        ``n_levels`` defaults to the maximum observed score; ``group_levels``
        defaults to the labels in order of first appearance.
        """
        scores = np.asarray(scores)
        if scores.size and not np.all(scores == np.floor(scores)):
            raise DataError("scores must be integer-valued")
        scores = scores.astype(np.int64)
        status = np.asarray(status).astype(np.int64)
        n = scores.shape[0]
        if status.shape[0] != n:
            raise DataError("scores and status have different lengths")
        if not np.all((status == 0) | (status == 1)):
            raise DataError("status must be 0 or 1")

        labels = np.asarray([str(g) for g in groups])
        if labels.shape[0] != n:
            raise DataError("scores and groups have different lengths")
        if group_levels is None:
            seen: dict[str, None] = {}
            for g in labels:
                seen.setdefault(g, None)
            group_levels = tuple(seen)
        else:
            group_levels = tuple(str(g) for g in group_levels)
            unknown = sorted(set(labels) - set(group_levels))
            if unknown:
                raise DataError(f"unknown group label(s): {', '.join(unknown)}")
        if len(group_levels) < 2:
            raise DataError("at least 2 group levels are required")
        code_of = {g: i for i, g in enumerate(group_levels)}
        group_codes = np.array([code_of[g] for g in labels], dtype=np.int64)

        if covariates is None:
            covariates = np.empty((n, 0), dtype=float)
        covariates = np.atleast_2d(np.asarray(covariates, dtype=float))
        if covariates.shape[0] != n and covariates.shape == (1, n):
            covariates = covariates.T
        if covariates.shape[0] != n:
            raise DataError("covariate rows do not match the number of observations")
        if not np.all(np.isfinite(covariates)):
            raise DataError("covariates contain missing or non-finite values")
        if covariate_names is None:
            covariate_names = tuple(f"x{j + 1}" for j in range(covariates.shape[1]))
        else:
            covariate_names = tuple(covariate_names)
        if len(covariate_names) != covariates.shape[1]:
            raise DataError("covariate_names does not match covariate arity")

        if n_levels is None:
            if n == 0:
                raise DataError("n_levels must be given for an empty table")
            n_levels = int(scores.max())
        n_levels = int(n_levels)
        if n_levels < 2:
            raise DataError("ordinal scale needs at least 2 levels")
        if n and (scores.min() < 1 or scores.max() > n_levels):
            bad = int(scores[(scores < 1) | (scores > n_levels)][0])
            raise DataError(f"score outside 1..{n_levels}: {bad}")

        return cls(
            scores=_frozen(scores),
            status=_frozen(status),
            group_codes=_frozen(group_codes),
            covariates=_frozen(covariates),
            group_levels=group_levels,
            covariate_names=covariate_names,
            n_levels=n_levels,
        )

    def group_status_counts(self) -> np.ndarray:
        """(G, 2) matrix of row counts per (group, status) cell."""
        counts = np.zeros((self.n_groups, 2), dtype=np.int64)
        np.add.at(counts, (self.group_codes, self.status), 1)
        return counts

    def category_counts(self) -> np.ndarray:
        return np.bincount(self.scores - 1, minlength=self.n_levels)


@dataclass(frozen=True)
class DesignSpec:
    """Group coding and covariate order for the design-matrix view.

    The reference group is dropped from the dummy block; the remaining
    groups appear in declared order.  ``p = (G - 1) + p_c``.
    """

    group_levels: tuple[str, ...]
    reference_group: str
    covariate_names: tuple[str, ...] = ()

    def __post_init__(self):
        if self.reference_group not in self.group_levels:
            raise DataError(
                f"reference group {self.reference_group!r} is not a declared level"
            )

    @classmethod
    def for_table(cls, table: ObservationTable, reference_group: str | None = None) -> "DesignSpec":
        """Spec matching a table; the reference defaults to the last declared level."""
        ref = table.group_levels[-1] if reference_group is None else str(reference_group)
        return cls(table.group_levels, ref, table.covariate_names)

    @property
    def n_groups(self) -> int:
        return len(self.group_levels)

    @property
    def dummy_levels(self) -> tuple[str, ...]:
        return tuple(g for g in self.group_levels if g != self.reference_group)

    @property
    def p(self) -> int:
        return (self.n_groups - 1) + len(self.covariate_names)

    @property
    def column_names(self) -> tuple[str, ...]:
        return tuple(f"group[{g}]" for g in self.dummy_levels) + self.covariate_names

    def encode_groups(self, group_codes: np.ndarray) -> np.ndarray:
        """(N, G-1) dummy block for integer group codes."""
        dummy_cols = [self.group_levels.index(g) for g in self.dummy_levels]
        out = np.zeros((group_codes.shape[0], len(dummy_cols)))
        for j, code in enumerate(dummy_cols):
            out[group_codes == code, j] = 1.0
        return out

    def encode_profile(self, profile: "CovariateProfile") -> np.ndarray:
        """Length-p covariate vector for one evaluation point."""
        if profile.group not in self.group_levels:
            raise DataError(f"unknown group label: {profile.group!r}")
        values = np.asarray(profile.covariates, dtype=float)
        if values.shape != (len(self.covariate_names),):
            raise DataError(
                f"profile has {values.size} covariate value(s), "
                f"expected {len(self.covariate_names)}"
            )
        x = np.zeros(self.p)
        if profile.group != self.reference_group:
            x[self.dummy_levels.index(profile.group)] = 1.0
        x[self.n_groups - 1:] = values
        return x

    def profiles_at(self, covariates=()) -> list["CovariateProfile"]:
        """One profile per group, all sharing the same continuous covariates."""
        values = tuple(float(v) for v in np.atleast_1d(np.asarray(covariates, dtype=float)))
        return [CovariateProfile(group=g, covariates=values) for g in self.group_levels]


@dataclass(frozen=True)
class CovariateProfile:
    """Evaluation point: a group label plus continuous covariate values."""

    group: str
    covariates: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(float(v) for v in self.covariates))


@dataclass(frozen=True)
class Design:
    """Numeric view of a table under a spec: x rows, D, and scores.

    Row i of every array corresponds to row i of the source table.
    """

    x: np.ndarray
    d: np.ndarray
    scores: np.ndarray
    n_levels: int
    spec: DesignSpec | None = None
    column_names: tuple[str, ...] = field(default=())

    @property
    def n_obs(self) -> int:
        return self.scores.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]


def build_design(table: ObservationTable, spec: DesignSpec) -> Design:
    """Construct the per-row design view: group dummies then covariates.

    Raises :class:`RankDeficiencyError` when the columns, together with
    the implicit intercept carried by the thresholds, are linearly
    dependent (e.g. duplicated or constant covariate columns).
    """
    if spec.group_levels != table.group_levels:
        raise DataError("design spec group levels do not match the table")
    if spec.covariate_names != table.covariate_names:
        raise DataError("design spec covariate names do not match the table")
    x = np.hstack([spec.encode_groups(table.group_codes), table.covariates])
    names = spec.column_names
    _check_full_rank(x, names, n_obs=table.n_obs)
    return Design(
        x=_frozen(x),
        d=table.status,
        scores=table.scores,
        n_levels=table.n_levels,
        spec=spec,
        column_names=names,
    )


def _check_full_rank(x: np.ndarray, names: tuple[str, ...], n_obs: int) -> None:
    # The thresholds act as intercepts, so rank is checked on [1 | x]:
    # a constant covariate column is unidentified even though x alone
    # may have full column rank.
    if x.shape[1] == 0:
        return
    aug = np.hstack([np.ones((n_obs, 1)), x])
    if n_obs < aug.shape[1]:
        raise RankDeficiencyError(
            f"{n_obs} rows cannot identify {aug.shape[1]} design directions",
            list(names),
        )
    _, sv, vt = np.linalg.svd(aug, full_matrices=False)
    tol = sv[0] * max(aug.shape) * np.finfo(float).eps if sv.size else 0.0
    rank = int(np.sum(sv > tol))
    if rank == aug.shape[1]:
        return
    offending: list[str] = []
    aug_names = ("(intercept)",) + names
    for null_vec in vt[rank:]:
        involved = np.flatnonzero(np.abs(null_vec) > 1e-8 * np.abs(null_vec).max())
        for j in involved:
            if aug_names[j] not in offending:
                offending.append(aug_names[j])
    raise RankDeficiencyError(
        "design matrix (with implicit intercept) is rank deficient; "
        f"dependent columns: {', '.join(offending)}",
        offending,
    )


@dataclass(frozen=True)
class CsvSchema:
    """Column mapping for CSV ingestion.

    ``score_remap`` optionally declares the source scale as an inclusive
    integer range (lo, hi); scores are shifted affinely onto 1..L, e.g.
    a -3..+3 scale maps to 1..7.
    """

    score: str
    status: str
    group: str
    covariates: tuple[str, ...] = ()
    group_levels: tuple[str, ...] | None = None
    n_levels: int | None = None
    score_remap: tuple[int, int] | None = None


def load_csv(path, schema: CsvSchema) -> ObservationTable:
    """Read a UTF-8 CSV with a header row into an ObservationTable.

    Missing values are rejected; the scale size L is the declared
    ``n_levels`` (or the remap width) falling back to the maximum
    observed level.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"{path}: empty file")
        needed = [schema.score, schema.status, schema.group, *schema.covariates]
        missing = [c for c in needed if c not in reader.fieldnames]
        if missing:
            raise DataError(f"{path}: missing column(s): {', '.join(missing)}")
        scores, status, groups = [], [], []
        cov_rows = []
        for row_no, row in enumerate(reader, start=2):
            try:
                raw_score = row[schema.score].strip()
                score = int(raw_score)
                if float(raw_score) != score:
                    raise ValueError
            except (ValueError, AttributeError):
                raise DataError(
                    f"{path}:{row_no}: non-integer score {row.get(schema.score)!r}"
                ) from None
            try:
                d = int(row[schema.status].strip())
            except (ValueError, AttributeError):
                raise DataError(
                    f"{path}:{row_no}: non-integer status {row.get(schema.status)!r}"
                ) from None
            g = (row[schema.group] or "").strip()
            if not g:
                raise DataError(f"{path}:{row_no}: empty group label")
            covs = []
            for c in schema.covariates:
                cell = (row[c] or "").strip()
                if not cell:
                    raise DataError(f"{path}:{row_no}: missing value in column {c!r}")
                try:
                    covs.append(float(cell))
                except ValueError:
                    raise DataError(
                        f"{path}:{row_no}: non-numeric value {cell!r} in column {c!r}"
                    ) from None
            scores.append(score)
            status.append(d)
            groups.append(g)
            cov_rows.append(covs)

    scores_arr = np.asarray(scores, dtype=np.int64)
    n_levels = schema.n_levels
    if schema.score_remap is not None:
        lo, hi = schema.score_remap
        if hi <= lo:
            raise DataError("score_remap upper bound must exceed the lower bound")
        if scores_arr.size and (scores_arr.min() < lo or scores_arr.max() > hi):
            raise DataError(
                f"{path}: score outside declared source range {lo}..{hi}"
            )
        scores_arr = scores_arr - lo + 1
        if n_levels is None:
            n_levels = hi - lo + 1
    covariates = np.asarray(cov_rows, dtype=float) if schema.covariates else None
    try:
        return ObservationTable.create(
            scores_arr,
            status,
            groups,
            covariates,
            n_levels=n_levels,
            group_levels=schema.group_levels,
            covariate_names=schema.covariates or None,
        )
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from None
