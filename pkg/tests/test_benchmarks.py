import math

import numpy as np
import pytest

from gsr.benchmarks import (
    BENCHMARKS,
    benchmark_names,
    generate_benchmark,
    grid_sample,
    load_airfoil,
    load_csv,
    make_airfoil_like,
    uniform_sample,
    write_dataset_csv,
)
from gsr.cli import shipped_data_path
from gsr.evaluator import evaluate, mse


def enumerate_grid_count(a: float, b: float, c: float) -> int:
    """Independent counting oracle: walk the grid until past b."""
    count = 0
    k = 0
    while a + k * c <= b + 1e-9:
        count += 1
        k += 1
    return count


def expected_rows(samplers) -> int:
    if all(s.kind == "U" for s in samplers):
        return int(samplers[0].c)
    sizes = [enumerate_grid_count(s.a, s.b, s.c) for s in samplers]
    return math.prod(sizes)


class TestSamplers:
    def test_uniform_bounds_and_count(self):
        rng = np.random.default_rng(0)
        values = uniform_sample(0, 2, 20, rng)
        assert len(values) == 20
        assert ((values >= 0) & (values <= 2)).all()

    def test_uniform_degenerate_interval(self):
        values = uniform_sample(1, 1, 5, np.random.default_rng(0))
        assert values.tolist() == [1.0] * 5

    def test_uniform_seeded_identical(self):
        a = uniform_sample(-1, 1, 10, np.random.default_rng(42))
        b = uniform_sample(-1, 1, 10, np.random.default_rng(42))
        assert np.array_equal(a, b)

    def test_uniform_invalid_bounds(self):
        with pytest.raises(ValueError):
            uniform_sample(2, 1, 5, np.random.default_rng(0))

    @pytest.mark.parametrize(
        "a,b,c,expected",
        [
            (1, 100, 1, 100),     # K7 train
            (-1, 1, 0.1, 21),     # K1 train
            (-5, 5, 0.4, 26),     # P1 per-dimension
            (0, 1, 0.01, 101),    # K10 test per-dimension
            (0.05, 10, 0.1, 100), # V2 train: endpoint not integral -> excluded
        ],
    )
    def test_grid_counts_match_enumeration(self, a, b, c, expected):
        values = grid_sample(a, b, c)
        assert len(values) == expected == enumerate_grid_count(a, b, c)
        assert values[0] == a
        assert values[-1] <= b + 1e-9

    def test_grid_endpoint_included_when_integral(self):
        values = grid_sample(1, 100, 1)
        assert values[-1] == pytest.approx(100.0, abs=1e-12)

    def test_grid_rejects_bad_step(self):
        with pytest.raises(ValueError):
            grid_sample(0, 1, 0)
        with pytest.raises(ValueError):
            grid_sample(1, 1, 0.5)


class TestGoldenCounts:
    def test_all_34_specs_match_enumeration_oracle(self):
        assert len(BENCHMARKS) == 34
        for name, spec in BENCHMARKS.items():
            train_ds, test_ds, _ = generate_benchmark(name, seed=0)
            assert train_ds.n_rows == expected_rows(spec.train), name
            assert test_ds.n_rows == expected_rows(spec.test), name
            assert train_ds.n_features == spec.n_vars == test_ds.n_features

    @pytest.mark.parametrize(
        "name,train_rows,test_rows",
        [
            ("N1", 20, 20),
            ("N9", 100, 100),
            ("K1", 21, 2001),
            ("K5", 1000, 10000),
            ("K6", 50, 120),
            ("K7", 100, 991),
            ("K10", 100, 101 * 101),
            ("P1", 26 * 26, 676),
            ("V3", 100 * 6, 100 * 23),
            ("V4", 1024, 5000),
            ("V5", 300, 15 * 12 * 15),
        ],
    )
    def test_frozen_counts(self, name, train_rows, test_rows):
        train_ds, test_ds, _ = generate_benchmark(name, seed=1)
        assert train_ds.n_rows == train_rows
        assert test_ds.n_rows == test_rows


class TestGroundTruth:
    def test_self_consistency_zero_train_mse(self):
        for name in benchmark_names():
            train_ds, _, truth = generate_benchmark(name, seed=2)
            y_hat = evaluate(truth, train_ds.X, train_ds.columns)
            assert mse(train_ds.y, y_hat) == 0.0, name

    def test_n9_is_sum_of_sines(self):
        train_ds, _, truth = generate_benchmark("N9", seed=5)
        expected = np.sin(train_ds.X[:, 0]) + np.sin(train_ds.X[:, 1])
        assert np.allclose(train_ds.y, expected, atol=0, rtol=0)

    def test_k6_is_harmonic_number(self):
        train_ds, _, _ = generate_benchmark("K6", seed=0)
        x = train_ds.X[:, 0]
        harmonic = np.array([sum(1.0 / i for i in range(1, int(n) + 1)) for n in x])
        assert np.allclose(train_ds.y, harmonic, atol=1e-12)

    def test_k5_flagged_excluded(self):
        assert BENCHMARKS["K5"].excluded_from_stats
        assert not BENCHMARKS["N1"].excluded_from_stats

    def test_v4_five_variables(self):
        train_ds, _, _ = generate_benchmark("V4", seed=0)
        assert train_ds.n_features == 5
        assert ((train_ds.X >= 0.05) & (train_ds.X <= 6.05)).all()

    def test_train_and_test_are_independent_redraws(self):
        train_ds, test_ds, _ = generate_benchmark("N1", seed=0)
        assert not np.array_equal(train_ds.X, test_ds.X)

    def test_generation_deterministic_per_seed(self):
        a_train, a_test, _ = generate_benchmark("K11", seed=9)
        b_train, b_test, _ = generate_benchmark("K11", seed=9)
        assert np.array_equal(a_train.X, b_train.X)
        assert np.array_equal(a_test.X, b_test.X)
        c_train, _, _ = generate_benchmark("K11", seed=10)
        assert not np.array_equal(a_train.X, c_train.X)

    def test_unknown_name_rejected(self):
        with pytest.raises(KeyError, match="unknown benchmark"):
            generate_benchmark("N99")


class TestCsvRoundTrip:
    def test_write_then_load_bit_exact(self, tmp_path):
        train_ds, _, _ = generate_benchmark("N9", seed=3)
        path = str(tmp_path / "n9.csv")
        write_dataset_csv(train_ds, path)
        loaded_train, loaded_test = load_csv(path, split_fraction=1.0, seed=0)
        merged = np.sort(loaded_train.X, axis=0)
        assert np.array_equal(merged, np.sort(train_ds.X, axis=0))

    def test_header_schema(self, tmp_path):
        train_ds, _, _ = generate_benchmark("N9", seed=3)
        path = str(tmp_path / "n9.csv")
        write_dataset_csv(train_ds, path)
        header = open(path).readline().strip()
        assert header == "x1,x2,y"


class TestLoadCsv:
    def test_split_fraction_row_counts(self, tmp_path):
        table, cols = make_airfoil_like(rows=100, seed=1)
        path = str(tmp_path / "a.csv")
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for row in table:
                fh.write(",".join(repr(v) for v in row) + "\n")
        train_ds, test_ds = load_csv(path, target="SSPL", split_fraction=0.7, seed=0)
        assert train_ds.n_rows == 70
        assert test_ds.n_rows == 30
        assert train_ds.columns == ("f", "alpha", "c", "U_infinity", "delta")

    def test_full_split_warns(self, tmp_path):
        table, cols = make_airfoil_like(rows=10, seed=2)
        path = str(tmp_path / "b.csv")
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for row in table:
                fh.write(",".join(repr(v) for v in row) + "\n")
        with pytest.warns(UserWarning, match="empty test set"):
            train_ds, test_ds = load_csv(path, split_fraction=1.0)
        assert train_ds.n_rows == 10
        assert test_ds.n_rows == 0

    def test_same_seed_same_split(self, tmp_path):
        table, cols = make_airfoil_like(rows=60, seed=3)
        path = str(tmp_path / "c.csv")
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for row in table:
                fh.write(",".join(repr(v) for v in row) + "\n")
        a_train, _ = load_csv(path, seed=5)
        b_train, _ = load_csv(path, seed=5)
        assert np.array_equal(a_train.X, b_train.X)
        c_train, _ = load_csv(path, seed=6)
        assert not np.array_equal(a_train.X, c_train.X)

    def test_missing_target_rejected(self, tmp_path):
        path = str(tmp_path / "d.csv")
        with open(path, "w") as fh:
            fh.write("a,b\n1,2\n")
        with pytest.raises(ValueError, match="target column"):
            load_csv(path, target="ghost")

    def test_malformed_row_rejected(self, tmp_path):
        path = str(tmp_path / "e.csv")
        with open(path, "w") as fh:
            fh.write("a,b\n1,2\n3\n")
        with pytest.raises(ValueError, match="row 2"):
            load_csv(path)

    def test_whitespace_separated_headerless(self, tmp_path):
        path = str(tmp_path / "f.dat")
        with open(path, "w") as fh:
            fh.write("800 0.0 0.3048 71.3 0.002 126.2\n" * 10)
        train_ds, test_ds = load_airfoil(path)
        assert train_ds.columns == ("f", "alpha", "c", "U_infinity", "delta")
        assert train_ds.n_rows + test_ds.n_rows == 10


class TestAirfoilFixture:
    def test_shipped_fixture_shape(self):
        train_ds, test_ds = load_airfoil(shipped_data_path("airfoil_synthetic.csv"))
        assert train_ds.n_rows == 1052  # floor(0.7 * 1503)
        assert test_ds.n_rows == 451
        assert train_ds.columns == ("f", "alpha", "c", "U_infinity", "delta")

    def test_fixture_matches_generator(self):
        table, cols = make_airfoil_like()
        assert table.shape == (1503, 6)
        loaded = np.loadtxt(
            shipped_data_path("airfoil_synthetic.csv"), delimiter=",", skiprows=1
        )
        assert np.array_equal(loaded, table)
