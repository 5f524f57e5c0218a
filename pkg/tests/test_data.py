"""Ingestion, group coding, and design-matrix construction."""

import numpy as np
import pytest

from ordroc.data import (
    CovariateProfile,
    CsvSchema,
    DesignSpec,
    ObservationTable,
    build_design,
    load_csv,
)
from ordroc.errors import DataError, RankDeficiencyError


def write_csv(path, header, rows):
    lines = [",".join(header)] + [",".join(str(v) for v in r) for r in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def test_load_csv_basic(tmp_path):
    f = tmp_path / "scores.csv"
    write_csv(f, ["score", "status", "group", "x1"], [
        (1, 0, "a", 0.1), (2, 1, "a", 0.4), (3, 0, "b", 0.7), (3, 1, "b", 0.9),
    ])
    table = load_csv(f, CsvSchema("score", "status", "group", ("x1",), n_levels=7))
    assert table.n_levels == 7
    assert table.n_obs == 4
    assert table.n_groups == 2
    assert table.group_levels == ("a", "b")
    assert np.array_equal(table.scores, [1, 2, 3, 3])


def test_load_csv_face_shaped(tmp_path):
    # 184 raters x 20 pairs on the -3..+3 scale, five groups with the
    # published sizes; ingestion must see G=5, L=7, N=3680.
    sizes = {"Exam": 57, "Rev": 30, "Super": 13, "Finger": 53, "Stnt": 31}
    rng = np.random.default_rng(5)
    rows = []
    for group, n_raters in sizes.items():
        for _ in range(n_raters):
            for pair in range(20):
                d = pair % 2
                rows.append((int(rng.integers(-3, 4)), d, group))
    f = tmp_path / "face.csv"
    write_csv(f, ["rating", "same_source", "grp"], rows)
    schema = CsvSchema("rating", "same_source", "grp",
                       group_levels=tuple(sizes), score_remap=(-3, 3))
    table = load_csv(f, schema)
    assert table.n_groups == 5
    assert table.n_levels == 7
    assert table.n_obs == 3680
    assert table.scores.min() >= 1 and table.scores.max() <= 7


def test_load_csv_score_out_of_range(tmp_path):
    f = tmp_path / "bad.csv"
    write_csv(f, ["score", "status", "group"], [(9, 0, "a"), (1, 1, "b")])
    with pytest.raises(DataError, match="score outside 1..7"):
        load_csv(f, CsvSchema("score", "status", "group", n_levels=7))


def test_load_csv_missing_column(tmp_path):
    f = tmp_path / "cols.csv"
    write_csv(f, ["score", "status"], [(1, 0)])
    with pytest.raises(DataError, match="missing column"):
        load_csv(f, CsvSchema("score", "status", "group"))


def test_load_csv_non_integer_score(tmp_path):
    f = tmp_path / "float.csv"
    write_csv(f, ["score", "status", "group"], [(1.5, 0, "a")])
    with pytest.raises(DataError, match="non-integer score"):
        load_csv(f, CsvSchema("score", "status", "group"))


def test_load_csv_unknown_group(tmp_path):
    f = tmp_path / "grp.csv"
    write_csv(f, ["score", "status", "group"], [(1, 0, "a"), (2, 1, "c")])
    schema = CsvSchema("score", "status", "group", group_levels=("a", "b"))
    with pytest.raises(DataError, match="unknown group"):
        load_csv(f, schema)


def test_load_csv_missing_value_rejected(tmp_path):
    f = tmp_path / "mv.csv"
    f.write_text("score,status,group,x1\n1,0,a,\n", encoding="utf-8")
    with pytest.raises(DataError, match="missing value"):
        load_csv(f, CsvSchema("score", "status", "group", ("x1",)))


def test_dummy_coding_reference_last():
    table = ObservationTable.create(
        [1, 2, 3, 1, 2, 3], [0, 1, 0, 1, 0, 1],
        ["g1", "g2", "g3", "g1", "g2", "g3"],
        [[0.5], [0.2], [0.8], [0.1], [0.6], [0.3]],
        n_levels=3, covariate_names=("x1",),
    )
    spec = DesignSpec.for_table(table, reference_group="g3")
    design = build_design(table, spec)
    assert spec.p == 3
    assert np.allclose(design.x[0], [1.0, 0.0, 0.5])  # g1 row
    assert np.allclose(design.x[2], [0.0, 0.0, 0.8])  # reference row


def test_dummy_coding_two_groups_reference_row():
    table = ObservationTable.create(
        [1, 2, 2, 1], [0, 1, 0, 1], ["g1", "g2", "g1", "g2"],
        [[0.5], [0.2], [0.9], [0.4]],
        n_levels=2, covariate_names=("x1",),
    )
    design = build_design(table, DesignSpec.for_table(table, "g2"))
    assert np.allclose(design.x[1], [0.0, 0.2])


def test_dummy_round_trip_and_order_preserved(rng):
    labels = rng.choice(["a", "b", "c", "d"], size=40)
    table = ObservationTable.create(
        rng.integers(1, 5, size=40), rng.integers(0, 2, size=40), labels,
        rng.normal(size=(40, 1)), n_levels=4, group_levels=("a", "b", "c", "d"),
    )
    spec = DesignSpec.for_table(table)
    design = build_design(table, spec)
    dummies = design.x[:, :3]
    for i, lab in enumerate(labels):
        if lab == spec.reference_group:
            assert dummies[i].sum() == 0.0
        else:
            assert dummies[i].sum() == 1.0
            assert dummies[i, spec.dummy_levels.index(lab)] == 1.0
        assert design.scores[i] == table.scores[i]


def test_duplicated_constant_column_rank_error():
    n = 12
    covs = np.column_stack([np.full(n, 2.0), np.full(n, 2.0)])
    table = ObservationTable.create(
        np.tile([1, 2], 6), np.tile([0, 1], 6), ["a", "b"] * 6, covs,
        n_levels=2, covariate_names=("c1", "c2"),
    )
    # independent oracle: the two constant columns alone are rank 1
    assert np.linalg.matrix_rank(covs) == 1
    with pytest.raises(RankDeficiencyError) as err:
        build_design(table, DesignSpec.for_table(table))
    assert "c1" in err.value.columns and "c2" in err.value.columns


def test_profile_encoding_matches_design_rows():
    table = ObservationTable.create(
        [1, 2, 3, 1, 2, 3], [0, 1, 0, 1, 0, 1],
        ["g1", "g2", "g3", "g1", "g2", "g3"],
        [[0.5], [0.2], [0.8], [0.3], [0.7], [0.4]],
        n_levels=3, covariate_names=("x1",),
    )
    spec = DesignSpec.for_table(table)
    design = build_design(table, spec)
    for i, (g, v) in enumerate([("g1", 0.5), ("g2", 0.2), ("g3", 0.8)]):
        x = spec.encode_profile(CovariateProfile(g, (v,)))
        assert np.allclose(x, design.x[i])


def test_profile_arity_checked():
    spec = DesignSpec(("g1", "g2"), "g2", ("x1",))
    with pytest.raises(DataError, match="covariate value"):
        spec.encode_profile(CovariateProfile("g1", (0.1, 0.2)))


def test_tables_are_immutable():
    table = ObservationTable.create([1, 2], [0, 1], ["a", "b"], n_levels=2)
    with pytest.raises(ValueError):
        table.scores[0] = 2
