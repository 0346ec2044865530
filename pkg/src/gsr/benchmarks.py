"""Benchmark dataset generation and CSV ingestion.

Thirty-four classic symbolic-regression targets (Nguyen N1-N10, Keijzer
K1-K15, Vladislavleva V1-V8, Pagie P1) are generated from their ground
truth expressions and published sampling recipes:

* ``U[a, b, c]`` draws ``c`` joint rows, each variable uniform on [a, b];
* ``E[a, b, c]`` is an evenly spaced grid from ``a`` with step ``c``,
  including ``b`` when (b - a) / c is integral (within 1e-9); with
  several variables the per-variable grids are crossed (cartesian
  product).

Generation is deterministic: every (benchmark, split, seed) triple gets
its own RNG stream, so train and test draws are independent redraws.
"""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass

import numpy as np

from .evaluator import Dataset, Expression, evaluate, parse_expression

__all__ = [
    "VariableSampler",
    "BenchmarkSpec",
    "BENCHMARKS",
    "benchmark_names",
    "uniform_sample",
    "grid_sample",
    "generate_benchmark",
    "load_csv",
    "load_airfoil",
    "write_dataset_csv",
    "make_airfoil_like",
    "AIRFOIL_COLUMNS",
]


@dataclass(frozen=True)
class VariableSampler:
    kind: str  # "U" (uniform draws) or "E" (even grid)
    a: float
    b: float
    c: float

    def __post_init__(self):
        if self.kind not in ("U", "E"):
            raise ValueError(f"unknown sampler kind {self.kind!r}")


def U(a: float, b: float, c: float) -> VariableSampler:
    return VariableSampler("U", a, b, c)


def E(a: float, b: float, c: float) -> VariableSampler:
    return VariableSampler("E", a, b, c)


@dataclass(frozen=True)
class BenchmarkSpec:
    name: str
    expression_text: str
    n_vars: int
    train: tuple[VariableSampler, ...]
    test: tuple[VariableSampler, ...]
    excluded_from_stats: bool = False

    def ground_truth(self) -> Expression:
        return parse_expression(self.expression_text)


def _spec(name, expr, train, test, excluded=False) -> BenchmarkSpec:
    train = (train,) if isinstance(train, VariableSampler) else tuple(train)
    test = (test,) if isinstance(test, VariableSampler) else tuple(test)
    n_vars = len(train)
    if len(test) != n_vars:
        raise ValueError(f"{name}: train/test variable counts differ")
    return BenchmarkSpec(name, expr, n_vars, train, test, excluded)


_TWO_PI = 6.283185307179586
_KEIJZER4 = "x[1]^3*exp(-x[1])*cos(x[1])*sin(x[1])*(sin(x[1])^2*cos(x[1]) - 1)"

_SPECS = [
    _spec("N1", "x[1]^3 + x[1]^2 + x[1]", U(0, 2, 20), U(0, 2, 20)),
    _spec("N2", "x[1]^4 + x[1]^3 + x[1]^2 + x[1]", U(-1, 1, 20), U(-1, 1, 20)),
    _spec("N3", "x[1]^5 + x[1]^4 + x[1]^3 + x[1]^2 + x[1]", U(-1, 1, 20), U(-1, 1, 20)),
    _spec(
        "N4",
        "x[1]^6 + x[1]^5 + x[1]^4 + x[1]^3 + x[1]^2 + x[1]",
        U(-1, 1, 20),
        U(-1, 1, 20),
    ),
    _spec("N5", "sin(x[1]^2)*cos(x[1]) - 1", U(-1, 1, 20), U(-1, 1, 20)),
    _spec("N6", "sin(x[1]) + sin(x[1] + x[1]^2)", U(-1, 1, 20), U(-1, 1, 20)),
    _spec("N7", "log(x[1] + 1) + log(x[1]^2 + 1)", U(0, 2, 20), U(0, 2, 20)),
    _spec("N8", "sqrt(x[1])", U(0, 4, 20), U(0, 4, 20)),
    _spec("N9", "sin(x[1]) + sin(x[2])", [U(0, 2, 100)] * 2, [U(0, 2, 100)] * 2),
    _spec("N10", "2*sin(x[1])*cos(x[2])", [U(0, 2, 100)] * 2, [U(0, 2, 100)] * 2),
    _spec("K1", f"0.3*x[1]*sin({_TWO_PI}*x[1])", E(-1, 1, 0.1), E(-1, 1, 0.001)),
    _spec("K2", f"0.3*x[1]*sin({_TWO_PI}*x[1])", E(-2, 2, 0.1), E(-2, 2, 0.001)),
    _spec("K3", f"0.3*x[1]*sin({_TWO_PI}*x[1])", E(-3, 3, 0.1), E(-3, 3, 0.001)),
    _spec("K4", _KEIJZER4, E(0, 10, 0.05), E(0.05, 10.05, 0.05)),
    _spec(
        "K5",
        "30*x[1]*x[3]/((x[1] - 10)*x[2]^2)",
        [U(-1, 1, 1000), U(1, 2, 1000), U(-1, 1, 1000)],
        [U(-1, 1, 10000), U(1, 2, 10000), U(-1, 1, 10000)],
        excluded=True,  # all engines blow up here; kept out of aggregate stats
    ),
    _spec("K6", "harmonic(x[1])", E(1, 50, 1), E(1, 120, 1)),
    _spec("K7", "log(x[1])", E(1, 100, 1), E(1, 100, 0.1)),
    _spec("K8", "sqrt(x[1])", E(0, 100, 1), E(0, 100, 0.1)),
    _spec("K9", "arcsinh(x[1])", E(0, 100, 1), E(0, 100, 0.1)),
    _spec("K10", "x[1]^x[2]", [U(0, 1, 100)] * 2, [E(0, 1, 0.01)] * 2),
    _spec(
        "K11",
        "x[1]*x[2] + sin((x[1] - 1)*(x[2] - 1))",
        [U(-3, 3, 20)] * 2,
        [E(0, 1, 0.01)] * 2,
    ),
    _spec(
        "K12",
        "x[1]^4 - x[1]^3 + x[2]^2/2 - x[2]",
        [U(-3, 3, 20)] * 2,
        [E(0, 1, 0.01)] * 2,
    ),
    _spec("K13", "6*sin(x[1])*cos(x[2])", [U(-3, 3, 20)] * 2, [E(0, 1, 0.01)] * 2),
    _spec("K14", "8/(2 + x[1]^2 + x[2]^2)", [U(-3, 3, 20)] * 2, [E(0, 1, 0.01)] * 2),
    _spec(
        "K15",
        "x[1]^3/5 + x[2]^3/2 - x[2] - x[1]",
        [U(-3, 3, 20)] * 2,
        [E(0, 1, 0.01)] * 2,
    ),
    _spec(
        "V1",
        "exp(-(x[1] - 1)^2)/(1.2 + (x[2] - 2.5)^2)",
        [U(0.3, 4, 100)] * 2,
        [E(-0.2, 4.2, 0.1)] * 2,
    ),
    _spec("V2", _KEIJZER4, E(0.05, 10, 0.1), E(-0.5, 10.5, 0.05)),
    _spec(
        "V3",
        _KEIJZER4 + "*(x[2] - 5)",
        [E(0.05, 10, 0.1), E(0.05, 10.05, 2)],
        [E(0.05, 10, 0.1), E(-0.5, 10.5, 0.5)],
    ),
    _spec(
        "V4",
        "10/(5 + (x[1] - 3)^2 + (x[2] - 3)^2 + (x[3] - 3)^2 + (x[4] - 3)^2 + (x[5] - 3)^2)",
        [U(0.05, 6.05, 1024)] * 5,
        [U(-0.25, 6.35, 5000)] * 5,
    ),
    _spec(
        "V5",
        "30*(x[1] - 1)*(x[3] - 1)/(x[2]^2*(x[1] - 10))",
        [U(0.05, 2, 300), U(1, 2, 300), U(0.05, 2, 300)],
        [E(-0.05, 2.1, 0.15), E(0.95, 2.05, 0.1), E(-0.05, 2.1, 0.15)],
    ),
    _spec("V6", "6*sin(x[1])*cos(x[2])", [U(0.1, 5.9, 30)] * 2, [E(-0.05, 6.05, 0.02)] * 2),
    _spec(
        "V7",
        "(x[1] - 3)*(x[2] - 3) + 2*sin((x[1] - 4)*(x[2] - 4))",
        [U(0.05, 6.05, 300)] * 2,
        [U(-0.25, 6.35, 1000)] * 2,
    ),
    _spec(
        "V8",
        "((x[1] - 3)^4 + (x[2] - 3)^3 - (x[2] - 3))/((x[2] - 2)^4 + 10)",
        [U(0.05, 6.05, 50)] * 2,
        [E(-0.25, 6.35, 0.2)] * 2,
    ),
    _spec(
        "P1",
        "1/(1 + x[1]^(-4)) + 1/(1 + x[2]^(-4))",
        [E(-5, 5, 0.4)] * 2,
        [E(-5, 5, 0.4)] * 2,
    ),
]

BENCHMARKS: dict[str, BenchmarkSpec] = {s.name: s for s in _SPECS}


def benchmark_names() -> list[str]:
    return [s.name for s in _SPECS]


def uniform_sample(a: float, b: float, c: int, rng: np.random.Generator) -> np.ndarray:
    """``c`` independent uniform draws on [a, b]."""
    if a > b:
        raise ValueError(f"invalid bounds [{a}, {b}]")
    if c < 1:
        raise ValueError("need at least one sample")
    return rng.uniform(a, b, size=int(c))


def grid_sample(a: float, b: float, c: float) -> np.ndarray:
    """Evenly spaced values a, a+c, ...; includes b when (b-a)/c is integral."""
    if c <= 0:
        raise ValueError("grid step must be positive")
    if a >= b:
        raise ValueError(f"invalid bounds [{a}, {b}]")
    n_steps = int(np.floor((b - a) / c + 1e-9))
    return a + np.arange(n_steps + 1) * c


def _split_rng(name: str, split: str, seed: int) -> np.random.Generator:
    entropy = [int(seed) & 0xFFFFFFFF, 0 if split == "train" else 1, *name.encode()]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def _sample_matrix(
    samplers: tuple[VariableSampler, ...], rng: np.random.Generator
) -> np.ndarray:
    kinds = {s.kind for s in samplers}
    if kinds == {"U"}:
        counts = {int(s.c) for s in samplers}
        if len(counts) != 1:
            raise ValueError("uniform samplers must agree on the row count")
        rows = counts.pop()
        return np.column_stack(
            [uniform_sample(s.a, s.b, rows, rng) for s in samplers]
        )
    if kinds == {"E"}:
        grids = [grid_sample(s.a, s.b, s.c) for s in samplers]
        mesh = np.meshgrid(*grids, indexing="ij")
        return np.column_stack([m.ravel() for m in mesh])
    raise ValueError("mixing U and E samplers across variables is not supported")


def generate_benchmark(
    name: str, seed: int = 0
) -> tuple[Dataset, Dataset, Expression]:
    """Build (train, test, ground-truth expression) for one benchmark."""
    try:
        spec = BENCHMARKS[name]
    except KeyError:
        raise KeyError(
            f"unknown benchmark {name!r}; known: {', '.join(BENCHMARKS)}"
        ) from None
    truth = spec.ground_truth()
    columns = tuple(f"x{i + 1}" for i in range(spec.n_vars))
    datasets = []
    for split, samplers in (("train", spec.train), ("test", spec.test)):
        x = _sample_matrix(samplers, _split_rng(name, split, seed))
        y = evaluate(truth, x, columns)
        datasets.append(Dataset(X=x, y=y, columns=columns, split=split))
    return datasets[0], datasets[1], truth


# --- CSV ingestion -----------------------------------------------------------

AIRFOIL_COLUMNS = ("f", "alpha", "c", "U_infinity", "delta", "SSPL")


def _read_table(path: str) -> tuple[list[str] | None, np.ndarray]:
    """Read a CSV or whitespace-separated numeric table, header optional."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise ValueError(f"{path}: empty file")
    delim = "," if "," in lines[0] else None

    def split(line: str) -> list[str]:
        if delim is None:
            return line.split()
        return next(csv.reader(io.StringIO(line)))

    first = split(lines[0])
    header: list[str] | None
    try:
        [float(tok) for tok in first]
        header = None
        body = lines
    except ValueError:
        header = [tok.strip() for tok in first]
        body = lines[1:]

    rows = []
    width = len(first)
    for i, line in enumerate(body):
        toks = split(line)
        if len(toks) != width:
            raise ValueError(f"{path}: row {i + 1} has {len(toks)} fields, expected {width}")
        try:
            rows.append([float(tok) for tok in toks])
        except ValueError as exc:
            raise ValueError(f"{path}: row {i + 1}: {exc}") from None
    return header, np.asarray(rows, dtype=float)


def load_csv(
    path: str,
    target: str | None = None,
    split_fraction: float = 0.7,
    seed: int = 0,
    columns: tuple[str, ...] | None = None,
) -> tuple[Dataset, Dataset]:
    """Load a numeric table and split it into shuffled train/test Datasets.

    ``target`` names the target column (default: the last one); ``columns``
    overrides/provides names for headerless files.  The same seed always
    produces the same split.
    """
    if not 0.0 < split_fraction <= 1.0:
        raise ValueError("split_fraction must be in (0, 1]")
    header, table = _read_table(path)
    names = list(columns) if columns is not None else header
    if names is None:
        names = [f"x{i + 1}" for i in range(table.shape[1] - 1)] + ["y"]
    if len(names) != table.shape[1]:
        raise ValueError(
            f"{len(names)} column names for {table.shape[1]} columns in {path}"
        )
    target_name = target if target is not None else names[-1]
    if target_name not in names:
        raise ValueError(f"target column {target_name!r} not in {names}")
    t_idx = names.index(target_name)
    feature_idx = [i for i in range(table.shape[1]) if i != t_idx]
    feature_names = tuple(names[i] for i in feature_idx)

    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, 2]))
    order = rng.permutation(table.shape[0])
    n_train = int(np.floor(split_fraction * table.shape[0]))
    if n_train == table.shape[0]:
        warnings.warn("split_fraction leaves an empty test set")
    train_rows = order[:n_train]
    test_rows = order[n_train:]

    def subset(rows, split):
        return Dataset(
            X=table[np.sort(rows)][:, feature_idx],
            y=table[np.sort(rows)][:, t_idx],
            columns=feature_names,
            split=split,
        )

    return subset(train_rows, "train"), subset(test_rows, "test")


def load_airfoil(path: str, split_fraction: float = 0.7, seed: int = 0):
    """Airfoil self-noise table (UCI layout: 5 features then SSPL)."""
    header, _ = _read_table(path)
    columns = None if header is not None else AIRFOIL_COLUMNS
    return load_csv(
        path,
        target="SSPL",
        split_fraction=split_fraction,
        seed=seed,
        columns=columns,
    )


def write_dataset_csv(dataset: Dataset, path: str) -> None:
    """Write ``x1,...,xn,y`` CSV with full double precision."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join([*dataset.columns, "y"]) + "\n")
        for row, target in zip(dataset.X, dataset.y):
            fh.write(",".join(repr(v) for v in [*row, target]) + "\n")


def make_airfoil_like(rows: int = 1503, seed: int = 7) -> tuple[np.ndarray, tuple[str, ...]]:
    """Synthesize an airfoil-shaped table (same schema and size as the UCI
    set; the shipped ``data/airfoil_synthetic.csv`` is this function's
    output).  The target follows a Strouhal-style law plus mild noise so
    the unit grammar has real structure to find."""
    freqs = np.array([
        200, 250, 315, 400, 500, 630, 800, 1000, 1250, 1600, 2000, 2500,
        3150, 4000, 5000, 6300, 8000, 10000, 12500, 16000, 20000,
    ], dtype=float)
    alphas = np.array([0.0, 1.5, 3.0, 4.0, 5.3, 7.3, 9.9, 12.3, 15.6, 17.4, 22.2])
    chords = np.array([0.0254, 0.0508, 0.1016, 0.1524, 0.2286, 0.3048])
    speeds = np.array([31.7, 39.6, 55.5, 71.3])

    combos = np.array(
        [(f, a, c, u) for f in freqs for a in alphas for c in chords for u in speeds]
    )
    rng = np.random.default_rng(seed)
    if rows > len(combos):
        raise ValueError(f"at most {len(combos)} distinct rows available")
    picked = combos[np.sort(rng.choice(len(combos), size=rows, replace=False))]
    f, alpha, c, u = picked.T
    delta = 0.002 * c ** 0.8 * (1.0 + alpha / 8.0) ** 1.6 * (40.0 / u) ** 0.25
    strouhal = f * delta / u
    sspl = 127.0 - 11.0 * np.log10(1.0 + (strouhal / 0.11) ** 2) + 4.0 * np.log10(
        u / 40.0
    ) + rng.normal(0.0, 1.5, size=rows)
    table = np.column_stack([f, alpha, c, u, delta, sspl])
    return table, AIRFOIL_COLUMNS
