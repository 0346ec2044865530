"""Training loop: batched episode sampling, risk-seeking filtering, updates.

Each iteration samples a batch of derivations from the current policy,
scores the completed expressions on the training split (squashed MSE),
keeps the top quantile, and climbs the advantage-weighted log-likelihood
plus entropy bonus.  Single-process runs are bit-reproducible: every
episode draws from its own RNG stream derived from
(seed, iteration, episode index).
"""

from __future__ import annotations

import json
import math
import time
import zlib
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import policy as policy_mod
from .benchmarks import generate_benchmark
from .derivation import DerivationState, StateToggles
from .evaluator import (
    EXACT_RECOVERY_MSE,
    Dataset,
    complexity,
    evaluate,
    fit_constants,
    mse,
    parse_expression,
    r_squared,
    reward_from_mse,
    to_text,
)
from .grammar import Grammar, parse_grammar
from .policy import Adam, EpisodeTrace, PolicyParameters

__all__ = [
    "TrainConfig",
    "Episode",
    "RunResult",
    "TrainError",
    "ABLATIONS",
    "sample_episode",
    "quantile_filter",
    "train",
    "run_ablation",
    "run_benchmark_job",
    "derive_run_seed",
]


class TrainError(RuntimeError):
    """Raised when training cannot continue (e.g. non-finite loss)."""


@dataclass(frozen=True)
class TrainConfig:
    horizon: int = 50
    batch_size: int = 1000
    iterations: int = 2000
    epsilon: float = 0.05
    entropy_weight: float = 0.005
    learning_rate: float = 0.001
    seed: int = 0
    use_parent: bool = True
    use_siblings: bool = True
    use_past: bool = True
    use_depth: bool = True
    use_symbol: bool = True
    use_risk_seeking: bool = True
    use_entropy: bool = True
    hidden_size: int = 64
    embed_size: int = 8
    encoder_size: int = 16
    past_window: int = 10
    sibling_window: int = 4
    const_fit_budget: int = 30
    early_stop_on_recovery: bool = True

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if not 0.0 < self.epsilon <= 1.0:
            raise ValueError("epsilon must be in (0, 1]")
        if self.entropy_weight < 0.0:
            raise ValueError("entropy_weight must be >= 0")
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be > 0")

    def toggles(self) -> StateToggles:
        return StateToggles(
            use_parent=self.use_parent,
            use_siblings=self.use_siblings,
            use_past=self.use_past,
            use_depth=self.use_depth,
            use_symbol=self.use_symbol,
        )

    def to_dict(self) -> dict:
        return asdict(self)


ABLATIONS = {
    "baseline": {},
    "no_entropy": {"use_entropy": False},
    "no_risk_seeking": {"use_risk_seeking": False},
    "no_parent": {"use_parent": False},
    "no_siblings": {"use_siblings": False},
    "no_past_actions": {"use_past": False},
    "no_depth": {"use_depth": False},
    "no_symbol": {"use_symbol": False},
}


@dataclass
class Episode:
    """One sampled derivation plus everything needed to replay it."""

    trace: EpisodeTrace
    complete: bool
    expression_text: str | None  # raw grammar output
    fitted_text: str | None = None  # after constant fitting (== raw if none)
    reward: float = 0.0
    train_mse: float = math.inf

    @property
    def actions(self) -> list[int]:
        return [int(a) for a in self.trace.actions]


def _episode_rng(seed: int, iteration: int, index: int) -> np.random.Generator:
    entropy = [seed & 0xFFFFFFFF, iteration & 0xFFFFFFFF, index & 0xFFFFFFFF]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def derive_run_seed(base_seed: int, benchmark: str, index: int = 0) -> int:
    """Stable per-run substream id for experiment matrices."""
    return zlib.crc32(f"{base_seed}:{benchmark}:{index}".encode()) & 0x7FFFFFFF


class _EpisodeBuilder:
    """Accumulates per-step observation rows for one episode."""

    def __init__(self, h0: np.ndarray, c0: np.ndarray):
        self.past: list[np.ndarray] = []
        self.parent: list[int] = []
        self.siblings: list[np.ndarray] = []
        self.depth: list[int] = []
        self.symbol: list[int] = []
        self.mask: list[np.ndarray] = []
        self.actions: list[int] = []
        self.h0 = h0
        self.c0 = c0

    def add(self, obs, action: int) -> None:
        self.past.append(obs.past_actions)
        self.parent.append(obs.parent_action)
        self.siblings.append(obs.sibling_actions)
        self.depth.append(obs.depth)
        self.symbol.append(obs.symbol_index)
        self.mask.append(obs.mask)
        self.actions.append(action)

    def trace(self) -> EpisodeTrace:
        return EpisodeTrace(
            past=np.array(self.past, dtype=np.int64),
            parent=np.array(self.parent, dtype=np.int64),
            siblings=np.array(self.siblings, dtype=np.int64),
            depth=np.array(self.depth, dtype=np.int64),
            symbol=np.array(self.symbol, dtype=np.int64),
            mask=np.array(self.mask, dtype=bool),
            actions=np.array(self.actions, dtype=np.int64),
            h0=self.h0,
            c0=self.c0,
        )


def _pick_action(
    probs_row: np.ndarray, production: range, u: float
) -> int:
    """Inverse-CDF draw restricted to the symbol's production slice."""
    slice_probs = probs_row[production.start : production.stop]
    total = slice_probs.sum()
    cum = np.cumsum(slice_probs / total)
    j = int(np.searchsorted(cum, u, side="right"))
    return production.start + min(j, len(cum) - 1)


def sample_episode(
    params: PolicyParameters,
    grammar: Grammar,
    horizon: int,
    rng: np.random.Generator,
    toggles: StateToggles = StateToggles(),
    past_window: int = 10,
    sibling_window: int = 4,
) -> Episode:
    """Sample one derivation (observe, forward, draw, apply) up to ``horizon``."""
    hidden = policy_mod.init_hidden(params, rng)
    builder = _EpisodeBuilder(hidden.h.copy(), hidden.c.copy())
    state = DerivationState(grammar)
    for _ in range(horizon):
        if state.is_complete:
            break
        obs = state.observation(toggles, past_window, sibling_window)
        probs, hidden = policy_mod.forward(params, obs, hidden)
        production = grammar.productions[state.current_symbol]
        action = _pick_action(probs, production, rng.random())
        builder.add(obs, action)
        state.apply_action(action)
    complete = state.is_complete
    return Episode(
        trace=builder.trace(),
        complete=complete,
        expression_text=state.expression_text() if complete else None,
    )


def _sample_batch(
    params: PolicyParameters,
    grammar: Grammar,
    cfg: TrainConfig,
    iteration: int,
) -> list[Episode]:
    """Lockstep-vectorized version of :func:`sample_episode` for a batch."""
    toggles = cfg.toggles()
    b = cfg.batch_size
    d = cfg.hidden_size
    rngs = [_episode_rng(cfg.seed, iteration, i) for i in range(b)]
    states = [DerivationState(grammar) for _ in range(b)]
    builders = []
    h = np.empty((b, d))
    c = np.empty((b, d))
    for i, rng in enumerate(rngs):
        hid = policy_mod.init_hidden(params, rng)
        h[i] = hid.h
        c[i] = hid.c
        builders.append(_EpisodeBuilder(hid.h.copy(), hid.c.copy()))

    for _ in range(cfg.horizon):
        rows = [i for i in range(b) if not states[i].is_complete]
        if not rows:
            break
        observations = [
            states[i].observation(toggles, cfg.past_window, cfg.sibling_window)
            for i in rows
        ]
        obs = policy_mod.ObsArrays(
            past=np.stack([o.past_actions for o in observations]),
            parent=np.array([o.parent_action for o in observations]),
            siblings=np.stack([o.sibling_actions for o in observations]),
            depth=np.array([o.depth for o in observations]),
            symbol=np.array([o.symbol_index for o in observations]),
            mask=np.stack([o.mask for o in observations]),
        )
        probs, h_new, c_new, _ = policy_mod.forward_batch(params, obs, h[rows], c[rows])
        h[rows] = h_new
        c[rows] = c_new
        for j, i in enumerate(rows):
            production = grammar.productions[states[i].current_symbol]
            action = _pick_action(probs[j], production, rngs[i].random())
            builders[i].add(observations[j], action)
            states[i].apply_action(action)

    episodes = []
    for i in range(b):
        complete = states[i].is_complete
        episodes.append(
            Episode(
                trace=builders[i].trace(),
                complete=complete,
                expression_text=states[i].expression_text() if complete else None,
            )
        )
    return episodes


def quantile_filter(
    episodes: list[Episode], epsilon: float
) -> tuple[list[Episode], float]:
    """Keep the top max(1, ceil(epsilon * B)) episodes by reward.

    Ties break toward earlier-sampled episodes.  Returns the kept
    episodes and the filter level: the highest reward *not* kept (with
    epsilon = 1 the batch minimum), so kept advantages are >= 0.
    """
    if not episodes:
        raise ValueError("empty episode batch")
    if not 0.0 < epsilon <= 1.0:
        raise ValueError("epsilon must be in (0, 1]")
    b = len(episodes)
    keep = max(1, math.ceil(epsilon * b))
    order = sorted(range(b), key=lambda i: (-episodes[i].reward, i))
    kept = [episodes[i] for i in order[:keep]]
    if keep >= b:
        r_eps = min(ep.reward for ep in episodes)
    else:
        ascending = sorted(ep.reward for ep in episodes)
        r_eps = ascending[b - keep - 1]
    return kept, r_eps


class _RewardCache:
    """Memoizes expression scoring (and constant fitting) by raw text."""

    def __init__(self, train_ds: Dataset, seed: int, fit_budget: int):
        self.train = train_ds
        self.seed = seed
        self.fit_budget = fit_budget
        self.plain: dict[str, tuple[float, float]] = {}
        self.fitted: dict[str, tuple[str, float, float]] = {}

    def score(self, text: str) -> tuple[float, float]:
        hit = self.plain.get(text)
        if hit is None:
            expr = parse_expression(text)
            y_hat = evaluate(expr, self.train.X, self.train.columns)
            if np.all(np.isfinite(y_hat)):
                err = mse(self.train.y, y_hat)
                hit = (reward_from_mse(err), err)
            else:
                hit = (0.0, math.inf)
            self.plain[text] = hit
        return hit

    def score_fitted(self, text: str) -> tuple[str, float, float]:
        hit = self.fitted.get(text)
        if hit is None:
            expr = parse_expression(text)
            fit_seed = (self.seed ^ zlib.crc32(text.encode())) & 0x7FFFFFFF
            fitted = fit_constants(expr, self.train, self.fit_budget, fit_seed)
            fitted_text = to_text(fitted)
            y_hat = evaluate(fitted, self.train.X, self.train.columns)
            if np.all(np.isfinite(y_hat)):
                err = mse(self.train.y, y_hat)
                hit = (fitted_text, reward_from_mse(err), err)
            else:
                hit = (fitted_text, 0.0, math.inf)
            self.fitted[text] = hit
        return hit


def _score_episodes(
    episodes: list[Episode],
    cache: _RewardCache,
    epsilon: float,
    fit_constants_enabled: bool,
) -> None:
    for ep in episodes:
        if not ep.complete:
            ep.reward, ep.train_mse = 0.0, math.inf
            continue
        ep.fitted_text = ep.expression_text
        ep.reward, ep.train_mse = cache.score(ep.expression_text)

    if fit_constants_enabled:
        keep = max(1, math.ceil(epsilon * len(episodes)))
        order = sorted(
            (i for i, ep in enumerate(episodes) if ep.complete),
            key=lambda i: (-episodes[i].reward, i),
        )
        for i in order[:keep]:
            ep = episodes[i]
            ep.fitted_text, ep.reward, ep.train_mse = cache.score_fitted(
                ep.expression_text
            )


@dataclass
class RunResult:
    benchmark: str
    method: str
    seed: int
    config: dict
    best_expression: str | None = None
    best_actions: list[int] | None = None
    best_train_mse: float | None = None
    best_test_mse: float | None = None
    best_complexity: int | None = None
    test_r2: float | None = None
    recovered: bool = False
    iterations_run: int = 0
    expressions_sampled: int = 0
    reward_curve: list[dict] = field(default_factory=list)
    wall_time_s: float = 0.0

    def to_dict(self, include_timing: bool = False) -> dict:
        out = asdict(self)
        if not include_timing:
            out.pop("wall_time_s")
        return _sanitize(out)

    def to_json(self, include_timing: bool = False) -> str:
        return json.dumps(
            self.to_dict(include_timing), sort_keys=True, indent=1, allow_nan=False
        )


def _sanitize(value):
    """Replace non-finite floats with None so output is strict JSON."""
    if isinstance(value, float):
        return value if math.isfinite(value) else None
    if isinstance(value, dict):
        return {k: _sanitize(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_sanitize(v) for v in value]
    return value


def train(
    cfg: TrainConfig,
    grammar: Grammar,
    train_ds: Dataset,
    test_ds: Dataset | None = None,
    ledger_path: str | None = None,
    benchmark: str = "",
    method: str = "gsr",
) -> RunResult:
    """Run the full sampling/filtering/update loop; deterministic per seed."""
    started = time.perf_counter()
    if test_ds is None:
        test_ds = train_ds
    params = policy_mod.init_policy(
        action_count=grammar.action_count,
        nonterminal_count=len(grammar.nonterminals),
        hidden_size=cfg.hidden_size,
        seed=cfg.seed,
        embed_size=cfg.embed_size,
        encoder_size=cfg.encoder_size,
        past_window=cfg.past_window,
        sibling_window=cfg.sibling_window,
        horizon=cfg.horizon,
    )
    optimizer = Adam()
    fit_enabled = cfg.const_fit_budget > 0 and grammar.has_terminal_token("const")
    cache = _RewardCache(train_ds, cfg.seed, cfg.const_fit_budget)

    result = RunResult(
        benchmark=benchmark, method=method, seed=cfg.seed, config=cfg.to_dict()
    )
    best_reward = -math.inf
    best_episode: Episode | None = None

    ledger = open(ledger_path, "w", encoding="utf-8") if ledger_path else None
    try:
        for iteration in range(cfg.iterations):
            episodes = _sample_batch(params, grammar, cfg, iteration)
            _score_episodes(episodes, cache, cfg.epsilon, fit_enabled)
            result.expressions_sampled += len(episodes)
            result.iterations_run = iteration + 1

            for ep in episodes:
                if ep.reward > best_reward:
                    best_reward = ep.reward
                    best_episode = ep

            if cfg.use_risk_seeking:
                kept, r_eps = quantile_filter(episodes, cfg.epsilon)
                baseline = r_eps
            else:
                kept = episodes
                baseline = float(np.mean([ep.reward for ep in episodes]))
                r_eps = baseline
            batch = [(ep.trace, ep.reward - baseline) for ep in kept if len(ep.trace)]
            weight = cfg.entropy_weight if cfg.use_entropy else 0.0
            if batch:
                try:
                    grads = policy_mod.gradient(params, batch, weight)
                except ValueError as exc:
                    raise TrainError(f"iteration {iteration}: {exc}") from exc
                params = policy_mod.update(params, grads, cfg.learning_rate, optimizer)

            rewards = [ep.reward for ep in episodes]
            record = {
                "iteration": iteration,
                "mean_reward": float(np.mean(rewards)),
                "max_reward": float(np.max(rewards)),
                "r_eps": float(r_eps),
                "best_mse": None
                if best_episode is None
                else _sanitize(best_episode.train_mse),
                "best_expression": None
                if best_episode is None
                else best_episode.fitted_text,
            }
            result.reward_curve.append(record)
            if ledger:
                ledger.write(json.dumps(_sanitize(record), sort_keys=True) + "\n")

            if (
                cfg.early_stop_on_recovery
                and best_episode is not None
                and best_episode.train_mse < EXACT_RECOVERY_MSE
            ):
                break
    finally:
        if ledger:
            ledger.close()

    if best_episode is not None and best_episode.fitted_text is not None:
        expr = parse_expression(best_episode.fitted_text)
        y_hat = evaluate(expr, test_ds.X, test_ds.columns)
        finite = bool(np.all(np.isfinite(y_hat)))
        test_mse = mse(test_ds.y, y_hat) if finite else math.inf
        result.best_expression = best_episode.fitted_text
        result.best_actions = best_episode.actions
        result.best_train_mse = best_episode.train_mse
        result.best_test_mse = test_mse
        result.best_complexity = complexity(expr)
        result.test_r2 = r_squared(test_ds.y, y_hat) if finite else None
        result.recovered = finite and test_mse < EXACT_RECOVERY_MSE
    result.wall_time_s = time.perf_counter() - started
    return result


def run_ablation(
    cfg: TrainConfig,
    which: str,
    grammar: Grammar,
    train_ds: Dataset,
    test_ds: Dataset | None = None,
    **train_kwargs,
) -> RunResult:
    """Train with one named component disabled (or 'baseline' for none)."""
    try:
        overrides = ABLATIONS[which]
    except KeyError:
        raise ValueError(
            f"unknown ablation {which!r}; known: {', '.join(ABLATIONS)}"
        ) from None
    ablated = replace(cfg, **overrides)
    method = train_kwargs.pop(
        "method", "gsr" if which == "baseline" else f"gsr[{which}]"
    )
    return train(ablated, grammar, train_ds, test_ds, method=method, **train_kwargs)


def run_benchmark_job(
    benchmark: str,
    seed: int,
    cfg: TrainConfig,
    grammar_text: str,
    ablation: str = "baseline",
    ledger_path: str | None = None,
    method: str | None = None,
) -> RunResult:
    """Generate one benchmark with ``seed`` and train on it (pool-friendly)."""
    train_ds, test_ds, _ = generate_benchmark(benchmark, seed=seed)
    grammar = parse_grammar(grammar_text, nvar=train_ds.n_features)
    run_cfg = replace(cfg, seed=seed, **ABLATIONS[ablation])
    if method is None:
        method = "gsr" if ablation == "baseline" else f"gsr[{ablation}]"
    return train(
        run_cfg,
        grammar,
        train_ds,
        test_ds,
        ledger_path=ledger_path,
        benchmark=benchmark,
        method=method,
    )
