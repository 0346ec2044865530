"""Recurrent stochastic policy over grammar actions, in plain numpy.

The network encodes each observation component (recent-action window,
parent action, sibling actions, depth, current symbol) with a tanh
feed-forward layer, feeds the concatenation through an LSTM cell, and
maps the hidden state to one logit per grammar action.  Illegal actions
are pushed to probability zero by adding -1e9 to their logits before the
softmax.

Both the forward pass and the exact gradient of the training objective
(backpropagation through time over recorded episodes) are implemented
here by hand; the gradient is validated against central finite
differences in the test suite.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

__all__ = [
    "PolicyConfig",
    "PolicyParameters",
    "HiddenState",
    "EpisodeTrace",
    "ObsArrays",
    "Adam",
    "init_policy",
    "init_hidden",
    "masked_softmax",
    "step_entropy",
    "forward",
    "forward_batch",
    "episode_logprob_and_entropy",
    "objective_value",
    "gradient",
    "update",
    "save_policy",
    "load_policy",
]

MASK_PENALTY = -1e9

_GATES = ("i", "f", "o", "g")


@dataclass(frozen=True)
class PolicyConfig:
    action_count: int
    nonterminal_count: int
    hidden_size: int = 64
    embed_size: int = 8
    encoder_size: int = 16
    past_window: int = 10
    sibling_window: int = 4
    horizon: int = 50

    @property
    def lstm_input_size(self) -> int:
        return 5 * self.encoder_size

    def to_dict(self) -> dict:
        return {
            "action_count": self.action_count,
            "nonterminal_count": self.nonterminal_count,
            "hidden_size": self.hidden_size,
            "embed_size": self.embed_size,
            "encoder_size": self.encoder_size,
            "past_window": self.past_window,
            "sibling_window": self.sibling_window,
            "horizon": self.horizon,
        }


class PolicyParameters:
    """Named weight arrays plus the architecture description."""

    def __init__(self, config: PolicyConfig, arrays: dict[str, np.ndarray]):
        self.config = config
        self.arrays = arrays

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def copy(self) -> "PolicyParameters":
        return PolicyParameters(
            self.config, {k: v.copy() for k, v in self.arrays.items()}
        )

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.arrays.items()}


@dataclass
class HiddenState:
    """LSTM memory carried across the steps of one episode."""

    h: np.ndarray
    c: np.ndarray


@dataclass
class ObsArrays:
    """Batched observation: one row per episode, ids use -1 as null."""

    past: np.ndarray      # (B, W) int
    parent: np.ndarray    # (B,) int
    siblings: np.ndarray  # (B, S) int
    depth: np.ndarray     # (B,) float or int, raw step counter
    symbol: np.ndarray    # (B,) int, -1 when occluded
    mask: np.ndarray      # (B, A) bool


@dataclass
class EpisodeTrace:
    """Everything needed to replay one episode through the policy exactly."""

    past: np.ndarray      # (T, W)
    parent: np.ndarray    # (T,)
    siblings: np.ndarray  # (T, S)
    depth: np.ndarray     # (T,)
    symbol: np.ndarray    # (T,)
    mask: np.ndarray      # (T, A)
    actions: np.ndarray   # (T,)
    h0: np.ndarray        # (D,)
    c0: np.ndarray        # (D,)

    def __len__(self) -> int:
        return len(self.actions)


def init_policy(
    action_count: int,
    nonterminal_count: int,
    hidden_size: int = 64,
    seed: int = 0,
    embed_size: int = 8,
    encoder_size: int = 16,
    past_window: int = 10,
    sibling_window: int = 4,
    horizon: int = 50,
) -> PolicyParameters:
    """Seeded scaled-uniform initialization; identical seeds give identical weights."""
    if hidden_size < 1:
        raise ValueError("hidden_size must be >= 1")
    if action_count < 1 or nonterminal_count < 1:
        raise ValueError("need at least one action and one nonterminal")
    cfg = PolicyConfig(
        action_count=action_count,
        nonterminal_count=nonterminal_count,
        hidden_size=hidden_size,
        embed_size=embed_size,
        encoder_size=encoder_size,
        past_window=past_window,
        sibling_window=sibling_window,
        horizon=horizon,
    )
    rng = np.random.default_rng(seed)

    def uniform(shape: tuple[int, ...], fan_in: int) -> np.ndarray:
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    a, e, c, d = action_count, embed_size, encoder_size, hidden_size
    arrays: dict[str, np.ndarray] = {}
    arrays["embed"] = uniform((a + 1, e), e)  # last row encodes the null token
    arrays["enc_past_w"] = uniform((c, past_window * e), past_window * e)
    arrays["enc_past_b"] = np.zeros(c)
    arrays["enc_parent_w"] = uniform((c, e), e)
    arrays["enc_parent_b"] = np.zeros(c)
    arrays["enc_siblings_w"] = uniform((c, sibling_window * e), sibling_window * e)
    arrays["enc_siblings_b"] = np.zeros(c)
    arrays["enc_depth_w"] = uniform((c, 1), 1)
    arrays["enc_depth_b"] = np.zeros(c)
    arrays["enc_symbol_w"] = uniform((c, nonterminal_count), nonterminal_count)
    arrays["enc_symbol_b"] = np.zeros(c)
    n_in = d + cfg.lstm_input_size
    for gate in _GATES:
        arrays[f"lstm_{gate}_w"] = uniform((d, n_in), n_in)
        arrays[f"lstm_{gate}_b"] = np.zeros(d)
    arrays["lstm_f_b"] = np.ones(d)  # forget gate starts open
    arrays["head_w"] = uniform((a, d), d)
    arrays["head_b"] = np.zeros(a)
    return PolicyParameters(cfg, arrays)


def init_hidden(params: PolicyParameters, rng: np.random.Generator) -> HiddenState:
    """Per-episode random memory: standard normal scaled by 0.1."""
    d = params.config.hidden_size
    return HiddenState(
        h=0.1 * rng.standard_normal(d),
        c=0.1 * rng.standard_normal(d),
    )


def _sigmoid(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        return np.where(x >= 0, 1.0 / (1.0 + np.exp(-x)), np.exp(x) / (1.0 + np.exp(x)))


def masked_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Softmax of ``logits + (mask ? 0 : -1e9)``; masked entries get 0.

    Works on a single vector or on a batch (last axis = actions).
    """
    logits = np.asarray(logits, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any(axis=-1).all():
        raise ValueError("mask allows no action")
    shifted = np.where(mask, logits, logits + MASK_PENALTY)
    shifted = shifted - shifted.max(axis=-1, keepdims=True)
    with np.errstate(under="ignore"):
        z = np.exp(shifted)
    return z / z.sum(axis=-1, keepdims=True)


def step_entropy(probs: np.ndarray, mask: np.ndarray | None = None) -> float:
    """Shannon entropy over the allowed actions (natural log)."""
    p = np.asarray(probs, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(p > 0, p * np.log(p), 0.0)
    return float(-plogp.sum())


def _lookup(params: PolicyParameters, ids: np.ndarray) -> np.ndarray:
    """Embedding lookup mapping the -1 null id to the dedicated last row."""
    table = params["embed"]
    idx = np.where(ids < 0, table.shape[0] - 1, ids)
    return table[idx], idx


def _encode(params: PolicyParameters, obs: ObsArrays):
    """Per-component tanh encoders; returns the LSTM input and a cache."""
    cfg = params.config
    b = obs.past.shape[0]

    past_vecs, past_idx = _lookup(params, obs.past)
    past_flat = past_vecs.reshape(b, -1)
    parent_vecs, parent_idx = _lookup(params, obs.parent)
    sib_vecs, sib_idx = _lookup(params, obs.siblings)
    sib_flat = sib_vecs.reshape(b, -1)
    depth_in = (np.asarray(obs.depth, dtype=float) / cfg.horizon).reshape(b, 1)
    onehot = np.zeros((b, cfg.nonterminal_count))
    have_symbol = obs.symbol >= 0
    onehot[np.nonzero(have_symbol)[0], obs.symbol[have_symbol]] = 1.0

    segments = {}
    inputs = {
        "past": past_flat,
        "parent": parent_vecs,
        "siblings": sib_flat,
        "depth": depth_in,
        "symbol": onehot,
    }
    for name, x_in in inputs.items():
        z = np.tanh(x_in @ params[f"enc_{name}_w"].T + params[f"enc_{name}_b"])
        segments[name] = z
    x = np.concatenate([segments[n] for n in ("past", "parent", "siblings", "depth", "symbol")], axis=1)
    cache = {
        "inputs": inputs,
        "segments": segments,
        "past_idx": past_idx,
        "parent_idx": parent_idx,
        "sib_idx": sib_idx,
    }
    return x, cache


def forward_batch(
    params: PolicyParameters,
    obs: ObsArrays,
    h_prev: np.ndarray,
    c_prev: np.ndarray,
):
    """One LSTM step for a batch of episodes.

    Returns (probs (B, A), h (B, D), c (B, D), cache).  Rows whose mask
    is all-false are not allowed; pad finished episodes with a dummy
    all-true mask and ignore their output.
    """
    x, enc_cache = _encode(params, obs)
    hx = np.concatenate([h_prev, x], axis=1)
    gates = {}
    for gate in _GATES:
        pre = hx @ params[f"lstm_{gate}_w"].T + params[f"lstm_{gate}_b"]
        gates[gate] = np.tanh(pre) if gate == "g" else _sigmoid(pre)
    c = gates["f"] * c_prev + gates["i"] * gates["g"]
    tanh_c = np.tanh(c)
    h = gates["o"] * tanh_c
    logits = h @ params["head_w"].T + params["head_b"]
    probs = masked_softmax(logits, obs.mask)
    cache = {
        "enc": enc_cache,
        "hx": hx,
        "h_prev": h_prev,
        "c_prev": c_prev,
        "gates": gates,
        "c": c,
        "tanh_c": tanh_c,
        "h": h,
        "probs": probs,
        "mask": obs.mask,
    }
    return probs, h, c, cache


def forward(params: PolicyParameters, obs, hidden: HiddenState):
    """Single-episode step; ``obs`` is a derivation StateObservation."""
    batch = ObsArrays(
        past=obs.past_actions.reshape(1, -1),
        parent=np.array([obs.parent_action]),
        siblings=obs.sibling_actions.reshape(1, -1),
        depth=np.array([obs.depth]),
        symbol=np.array([obs.symbol_index]),
        mask=obs.mask.reshape(1, -1),
    )
    probs, h, c, _ = forward_batch(
        params, batch, hidden.h.reshape(1, -1), hidden.c.reshape(1, -1)
    )
    return probs[0], HiddenState(h=h[0], c=c[0])


def _stack_traces(traces: list[EpisodeTrace], cfg: PolicyConfig):
    """Pad traces to a common length; returns per-step ObsArrays plus masks."""
    k = len(traces)
    t_max = max(len(tr) for tr in traces)
    a = cfg.action_count
    past = np.full((t_max, k, cfg.past_window), -1, dtype=np.int64)
    parent = np.full((t_max, k), -1, dtype=np.int64)
    siblings = np.full((t_max, k, cfg.sibling_window), -1, dtype=np.int64)
    depth = np.zeros((t_max, k), dtype=np.int64)
    symbol = np.full((t_max, k), -1, dtype=np.int64)
    mask = np.ones((t_max, k, a), dtype=bool)  # padded steps: dummy all-true
    actions = np.zeros((t_max, k), dtype=np.int64)
    active = np.zeros((t_max, k), dtype=bool)
    h0 = np.stack([tr.h0 for tr in traces])
    c0 = np.stack([tr.c0 for tr in traces])
    for b, tr in enumerate(traces):
        t = len(tr)
        past[:t, b] = tr.past
        parent[:t, b] = tr.parent
        siblings[:t, b] = tr.siblings
        depth[:t, b] = tr.depth
        symbol[:t, b] = tr.symbol
        mask[:t, b] = tr.mask
        actions[:t, b] = tr.actions
        active[:t, b] = True
    return past, parent, siblings, depth, symbol, mask, actions, active, h0, c0


def _replay(params: PolicyParameters, traces: list[EpisodeTrace], keep_caches: bool):
    cfg = params.config
    past, parent, siblings, depth, symbol, mask, actions, active, h, c = _stack_traces(
        traces, cfg
    )
    t_max, k = actions.shape
    logprobs = np.zeros(k)
    entropies = np.zeros(k)
    caches = []
    for t in range(t_max):
        obs = ObsArrays(
            past=past[t], parent=parent[t], siblings=siblings[t],
            depth=depth[t], symbol=symbol[t], mask=mask[t],
        )
        probs, h, c, cache = forward_batch(params, obs, h, c)
        act_rows = np.nonzero(active[t])[0]
        p_taken = probs[act_rows, actions[t, act_rows]]
        if np.any(p_taken <= 0):
            bad = act_rows[p_taken <= 0][0]
            raise ValueError(
                f"recorded action {actions[t, bad]} has zero probability on "
                f"replay at step {t} (nondeterminism bug)"
            )
        logprobs[act_rows] += np.log(p_taken)
        with np.errstate(divide="ignore", invalid="ignore"):
            plogp = np.where(probs > 0, probs * np.log(probs), 0.0)
        entropies[act_rows] += -plogp[act_rows].sum(axis=1)
        if keep_caches:
            cache["actions"] = actions[t]
            cache["active"] = active[t]
            caches.append(cache)
    return logprobs, entropies, caches


def episode_logprob_and_entropy(
    params: PolicyParameters, trace: EpisodeTrace
) -> tuple[float, float]:
    """Replay one episode: (sum of log-probs of taken actions, sum of step entropies)."""
    logprobs, entropies, _ = _replay(params, [trace], keep_caches=False)
    return float(logprobs[0]), float(entropies[0])


def objective_value(
    params: PolicyParameters,
    batch: list[tuple[EpisodeTrace, float]],
    entropy_weight: float = 0.0,
) -> float:
    """The scalar the gradient climbs: mean over episodes of
    advantage * log-likelihood + entropy_weight * trajectory entropy."""
    traces = [tr for tr, _ in batch]
    advantages = np.array([adv for _, adv in batch], dtype=float)
    logprobs, entropies, _ = _replay(params, traces, keep_caches=False)
    return float(np.mean(advantages * logprobs + entropy_weight * entropies))


def gradient(
    params: PolicyParameters,
    batch: list[tuple[EpisodeTrace, float]],
    entropy_weight: float = 0.0,
) -> dict[str, np.ndarray]:
    """Exact ascent gradient of :func:`objective_value` via BPTT."""
    if not batch:
        raise ValueError("empty episode batch")
    advantages = np.array([adv for _, adv in batch], dtype=float)
    if not np.all(np.isfinite(advantages)):
        raise ValueError("non-finite advantage")
    traces = [tr for tr, _ in batch]
    cfg = params.config
    k = len(traces)
    _, _, caches = _replay(params, traces, keep_caches=True)

    grads = params.zeros_like()
    d = cfg.hidden_size
    dh = np.zeros((k, d))
    dc = np.zeros((k, d))

    for cache in reversed(caches):
        probs = cache["probs"]
        active = cache["active"]
        actions = cache["actions"]

        # d(objective)/d(logits): score function + entropy term, active rows only.
        onehot = np.zeros_like(probs)
        rows = np.nonzero(active)[0]
        onehot[rows, actions[rows]] = 1.0
        with np.errstate(divide="ignore", invalid="ignore"):
            logp = np.where(probs > 0, np.log(probs), 0.0)
        step_h = -(probs * logp).sum(axis=1, keepdims=True)
        dlogits = advantages[:, None] * (onehot - probs)
        dlogits += entropy_weight * (-probs * (logp + step_h))
        dlogits *= active[:, None] / k

        h = cache["h"]
        grads["head_w"] += dlogits.T @ h
        grads["head_b"] += dlogits.sum(axis=0)
        dh = dh + dlogits @ params["head_w"]

        gates = cache["gates"]
        i_g, f_g, o_g, g_g = gates["i"], gates["f"], gates["o"], gates["g"]
        tanh_c = cache["tanh_c"]
        do = dh * tanh_c
        dc = dc + dh * o_g * (1.0 - tanh_c**2)
        di = dc * g_g
        dg = dc * i_g
        df = dc * cache["c_prev"]
        dc_prev = dc * f_g

        pre_grads = {
            "i": di * i_g * (1.0 - i_g),
            "f": df * f_g * (1.0 - f_g),
            "o": do * o_g * (1.0 - o_g),
            "g": dg * (1.0 - g_g**2),
        }
        hx = cache["hx"]
        dhx = np.zeros_like(hx)
        for gate in _GATES:
            dpre = pre_grads[gate]
            grads[f"lstm_{gate}_w"] += dpre.T @ hx
            grads[f"lstm_{gate}_b"] += dpre.sum(axis=0)
            dhx += dpre @ params[f"lstm_{gate}_w"]
        dh = dhx[:, :d]
        dx = dhx[:, d:]
        dc = dc_prev

        enc = cache["enc"]
        c_size = cfg.encoder_size
        offsets = {name: idx * c_size for idx, name in enumerate(
            ("past", "parent", "siblings", "depth", "symbol")
        )}
        for name, x_in in enc["inputs"].items():
            z = enc["segments"][name]
            dz = dx[:, offsets[name]: offsets[name] + c_size] * (1.0 - z**2)
            grads[f"enc_{name}_w"] += dz.T @ x_in
            grads[f"enc_{name}_b"] += dz.sum(axis=0)
            if name in ("past", "parent", "siblings"):
                dflat = dz @ params[f"enc_{name}_w"]
                if name == "parent":
                    dvecs = dflat
                    idx = enc["parent_idx"]
                    np.add.at(grads["embed"], idx, dvecs)
                else:
                    e = cfg.embed_size
                    dvecs = dflat.reshape(dflat.shape[0], -1, e)
                    idx = enc["past_idx"] if name == "past" else enc["sib_idx"]
                    np.add.at(grads["embed"], idx.ravel(), dvecs.reshape(-1, e))

    for name, arr in grads.items():
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"non-finite gradient in parameter block {name!r}")
    return grads


class Adam:
    """Adaptive-moment ascent; state is keyed by parameter name."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def direction(self, grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        self.t += 1
        out = {}
        for name, g in grads.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g**2
            m_hat = self.m[name] / (1 - self.beta1**self.t)
            v_hat = self.v[name] / (1 - self.beta2**self.t)
            out[name] = m_hat / (np.sqrt(v_hat) + self.eps)
        return out


def update(
    params: PolicyParameters,
    grads: dict[str, np.ndarray],
    learning_rate: float,
    optimizer: Adam | None = None,
) -> PolicyParameters:
    """Ascent step; plain ``p + lr * g`` when no optimizer is given."""
    direction = optimizer.direction(grads) if optimizer is not None else grads
    arrays = {
        name: arr + learning_rate * direction[name]
        for name, arr in params.arrays.items()
    }
    return PolicyParameters(params.config, arrays)


def save_policy(params: PolicyParameters, path: str) -> None:
    """Binary checkpoint (npz); round-trips bit-exactly."""
    meta = json.dumps({"version": 1, "config": params.config.to_dict()})
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.frombuffer(meta.encode(), dtype=np.uint8), **params.arrays)


def load_policy(path: str) -> PolicyParameters:
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        if meta.get("version") != 1:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        cfg = PolicyConfig(**meta["config"])
        arrays = {k: data[k].copy() for k in data.files if k != "__meta__"}
    return PolicyParameters(cfg, arrays)
