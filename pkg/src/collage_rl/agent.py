"""Recurrent actor-critic in plain numpy, with hand-written backprop.

Network: observation -> 2 tanh layers -> stacked LSTM -> {policy heads, value}.
The layout phase uses one categorical head (every unordered image pair plus
"terminate"); the detail phase uses five independent heads (image, dx, dy,
layer, angle) whose log-probabilities and entropies add up.

Loss per transition, averaged over the batch:

    -log pi(a|s) * A  +  c_v * (R - V)^2  -  beta * H(pi)

with the advantage ``A = R - V`` held constant.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .env import Action, Detail, Switch, Terminate, switch_pairs
from .errors import InvalidMaskError, NumericError
from .geometry import ANGLE_OPTIONS, DX_OPTIONS, DY_OPTIONS, LAYER_OPTIONS, Phase

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
DETAIL_HEADS = ("image", "dx", "dy", "layer", "angle")
HEADS = ("layout",) + DETAIL_HEADS
PHASE_HEADS = {Phase.LAYOUT: ("layout",), Phase.DETAIL: DETAIL_HEADS}


@dataclass(frozen=True)
class AgentConfig:
    obs_dim: int = 64
    hidden: int = 128
    depth: int = 4
    max_images: int = 15
    # add log(#legal pairs) to the terminate logit: "stop" and "switch some pair" start equally likely
    balanced_terminate: bool = True

    def head_sizes(self) -> dict[str, int]:
        n = self.max_images
        return {
            "layout": n * (n - 1) // 2 + 1,
            "image": n,
            "dx": len(DX_OPTIONS),
            "dy": len(DY_OPTIONS),
            "layer": len(LAYER_OPTIONS),
            "angle": len(ANGLE_OPTIONS),
        }


def _zeros_like(d: dict) -> dict:
    return {k: np.zeros_like(v) for k, v in d.items()}


@dataclass
class AgentParams:
    """Weights with matching gradient buffers and Adam moments."""

    weights: dict[str, np.ndarray]
    config: AgentConfig | None = None
    grads: dict[str, np.ndarray] = field(default_factory=dict)
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    def __post_init__(self):
        self.grads = self.grads or _zeros_like(self.weights)
        self.m = self.m or _zeros_like(self.weights)
        self.v = self.v or _zeros_like(self.weights)

    def copy(self) -> "AgentParams":
        return AgentParams(
            {k: v.copy() for k, v in self.weights.items()},
            self.config,
            {k: v.copy() for k, v in self.grads.items()},
            {k: v.copy() for k, v in self.m.items()},
            {k: v.copy() for k, v in self.v.items()},
            self.step,
        )

    def is_finite(self) -> bool:
        return all(np.isfinite(w).all() for w in self.weights.values())


def init_params(cfg: AgentConfig = AgentConfig(), seed: int = 0, head_scale: float = 0.01) -> AgentParams:
    rng = np.random.default_rng(seed)
    H = cfg.hidden

    def dense(out, inp, scale=1.0):
        return rng.normal(0.0, scale / math.sqrt(inp), size=(out, inp))

    w = {
        "W1": dense(H, cfg.obs_dim), "b1": np.zeros(H),
        "W2": dense(H, H), "b2": np.zeros(H),
    }
    for l in range(cfg.depth):
        w[f"Wx{l}"] = dense(4 * H, H)
        w[f"Wh{l}"] = dense(4 * H, H)
        b = np.zeros(4 * H)
        b[H:2 * H] = 1.0  # forget gate
        w[f"bl{l}"] = b
    for name, k in cfg.head_sizes().items():
        w[f"head_{name}_W"] = dense(k, H, head_scale)
        w[f"head_{name}_b"] = np.zeros(k)
    w["value_W"] = dense(1, H, head_scale)
    w["value_b"] = np.zeros(1)
    return AgentParams(w, cfg)


@dataclass
class RecurrentState:
    h: list[np.ndarray]
    c: list[np.ndarray]

    @classmethod
    def zeros(cls, cfg: AgentConfig, batch: int = 1) -> "RecurrentState":
        return cls([np.zeros((batch, cfg.hidden)) for _ in range(cfg.depth)],
                   [np.zeros((batch, cfg.hidden)) for _ in range(cfg.depth)])

    def copy(self) -> "RecurrentState":
        return RecurrentState([a.copy() for a in self.h], [a.copy() for a in self.c])


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _trunk_step(w: dict, x: np.ndarray, state: RecurrentState, depth: int):
    """One time step for a (B, obs_dim) batch; returns top hidden, new state, cache."""
    h1 = np.tanh(x @ w["W1"].T + w["b1"])
    h2 = np.tanh(h1 @ w["W2"].T + w["b2"])
    H = h2.shape[1]
    inp = h2
    hs, cs, cache = [], [], []
    for l in range(depth):
        h_prev, c_prev = state.h[l], state.c[l]
        a = inp @ w[f"Wx{l}"].T + h_prev @ w[f"Wh{l}"].T + w[f"bl{l}"]
        i = _sigmoid(a[:, :H])
        f = _sigmoid(a[:, H:2 * H])
        g = np.tanh(a[:, 2 * H:3 * H])
        o = _sigmoid(a[:, 3 * H:])
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        cache.append((inp, h_prev, c_prev, i, f, g, o, tc))
        hs.append(h)
        cs.append(c)
        inp = h
    return inp, RecurrentState(hs, cs), (x, h1, h2, cache)


def masked_softmax(logits: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Probabilities and log-probabilities; masked entries get p=0, log p=-inf."""
    if not mask.any(axis=-1).all():
        raise InvalidMaskError("every head needs at least one legal option")
    z = np.where(mask, logits, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    ez = np.where(mask, np.exp(z), 0.0)
    p = ez / ez.sum(axis=-1, keepdims=True)
    logp = np.where(mask, z - np.log(ez.sum(axis=-1, keepdims=True)), -np.inf)
    return p, logp


def entropy(p: np.ndarray, logp: np.ndarray) -> np.ndarray:
    return -np.where(p > 0, p * np.where(p > 0, logp, 0.0), 0.0).sum(axis=-1)


def head_offset(name: str, mask: np.ndarray, cfg: AgentConfig) -> np.ndarray | float:
    """Constant logit offset for a head (no parameters involved)."""
    if name != "layout" or not cfg.balanced_terminate:
        return 0.0
    off = np.zeros(mask.shape)
    off[..., -1] = np.log(np.maximum(mask[..., :-1].sum(axis=-1), 1))
    return off


def legal_masks(phase: Phase, n_images: int, cfg: AgentConfig) -> dict[str, np.ndarray]:
    """Phase-legal options for every head the phase uses."""
    sizes = cfg.head_sizes()
    if phase is Phase.LAYOUT:
        pairs = switch_pairs(cfg.max_images)
        m = np.array([i < n_images and j < n_images for i, j in pairs] + [True])
        return {"layout": m}
    masks = {name: np.ones(sizes[name], dtype=bool) for name in DETAIL_HEADS}
    masks["image"] = np.arange(sizes["image"]) < n_images
    return masks


@dataclass(frozen=True, eq=False)
class Distribution:
    phase: Phase
    probs: dict[str, np.ndarray]
    log_probs: dict[str, np.ndarray]

    def entropy(self) -> float:
        return float(sum(entropy(self.probs[h], self.log_probs[h]) for h in self.probs))

    def log_prob(self, choice: dict[str, int]) -> float:
        return float(sum(self.log_probs[h][choice[h]] for h in self.probs))


@dataclass(frozen=True, eq=False)
class PolicyOutput:
    distribution: Distribution
    value: float
    state: RecurrentState


def policy_forward(params: AgentParams, observation: np.ndarray, state: RecurrentState,
                   phase: Phase, masks: dict[str, np.ndarray]) -> PolicyOutput:
    cfg = params.config
    w = params.weights
    x = np.asarray(observation, dtype=np.float64).reshape(1, -1)
    if x.shape[1] != cfg.obs_dim:
        raise ValueError(f"observation has dim {x.shape[1]}, expected {cfg.obs_dim}")
    top, new_state, _ = _trunk_step(w, x, state, cfg.depth)
    probs, logps = {}, {}
    for name in PHASE_HEADS[phase]:
        logits = top[0] @ w[f"head_{name}_W"].T + w[f"head_{name}_b"] + head_offset(name, masks[name], cfg)
        probs[name], logps[name] = masked_softmax(logits, masks[name])
    value = float(top[0] @ w["value_W"][0] + w["value_b"][0])
    if not (np.isfinite(value) and all(np.isfinite(p).all() for p in probs.values())):
        raise NumericError(f"non-finite policy output (value={value})")
    return PolicyOutput(Distribution(phase, probs, logps), value, new_state)


def choice_to_action(phase: Phase, choice: dict[str, int], cfg: AgentConfig) -> Action:
    if phase is Phase.LAYOUT:
        k = choice["layout"]
        pairs = switch_pairs(cfg.max_images)
        return Terminate() if k == len(pairs) else Switch(*pairs[k])
    return Detail(choice["image"], choice["dx"], choice["dy"], choice["layer"], choice["angle"])


def action_to_choice(action: Action, cfg: AgentConfig) -> dict[str, int]:
    if isinstance(action, Terminate):
        return {"layout": len(switch_pairs(cfg.max_images))}
    if isinstance(action, Switch):
        i, j = sorted((action.i, action.j))
        return {"layout": switch_pairs(cfg.max_images).index((i, j))}
    return {"image": action.image_id, "dx": action.dx_idx, "dy": action.dy_idx,
            "layer": action.layer_idx, "angle": action.angle_idx}


def sample_action(dist: Distribution, rng: np.random.Generator) -> tuple[dict[str, int], float]:
    """Draw one option per head; returns the choice and its joint log-probability."""
    choice = {h: int(rng.choice(p.size, p=p)) for h, p in dist.probs.items()}
    return choice, dist.log_prob(choice)


def greedy_action(dist: Distribution) -> tuple[dict[str, int], float]:
    choice = {h: int(np.argmax(p)) for h, p in dist.probs.items()}
    return choice, dist.log_prob(choice)


@dataclass
class Transition:
    observation: np.ndarray
    phase: Phase
    masks: dict[str, np.ndarray]
    choice: dict[str, int]
    log_prob: float
    value: float
    reward: float
    done: bool
    state: RecurrentState | None = None


def compute_returns(transitions: Sequence[Transition], bootstrap_value: float = 0.0,
                    gamma: float = 0.99, rewards: Sequence[float] | None = None) -> np.ndarray:
    """Discounted returns; a ``done`` flag restarts the recursion from zero."""
    rs = [t.reward for t in transitions] if rewards is None else list(rewards)
    out = np.zeros(len(rs))
    running = bootstrap_value
    for k in range(len(rs) - 1, -1, -1):
        if transitions[k].done:
            running = 0.0
        running = rs[k] + gamma * running
        out[k] = running
    return out


@dataclass
class LossResult:
    policy_loss: float
    value_loss: float
    entropy: float
    total: float
    gradients: dict[str, np.ndarray]


def _pack(episodes: Sequence[Sequence[Transition]], returns: Sequence[np.ndarray], cfg: AgentConfig):
    B = len(episodes)
    T = max(len(e) for e in episodes)
    sizes = cfg.head_sizes()
    obs = np.zeros((B, T, cfg.obs_dim))
    valid = np.zeros((B, T), dtype=bool)
    R = np.zeros((B, T))
    active = {h: np.zeros((B, T), dtype=bool) for h in HEADS}
    masks = {h: np.ones((B, T, sizes[h]), dtype=bool) for h in HEADS}
    chosen = {h: np.zeros((B, T), dtype=np.int64) for h in HEADS}
    for b, (ep, ret) in enumerate(zip(episodes, returns)):
        for t, tr in enumerate(ep):
            obs[b, t] = tr.observation
            valid[b, t] = True
            R[b, t] = ret[t]
            for h in PHASE_HEADS[tr.phase]:
                active[h][b, t] = True
                masks[h][b, t] = tr.masks[h]
                chosen[h][b, t] = tr.choice[h]
    return obs, valid, R, active, masks, chosen


def a2c_loss(params: AgentParams, episodes: Sequence[Sequence[Transition]],
             returns: Sequence[np.ndarray], entropy_weight: float = 0.01,
             value_coef: float = 1.0, advantages: Sequence[np.ndarray] | None = None,
             compute_grad: bool = True) -> LossResult:
    """A2C loss and its exact gradient via backprop through time.

    ``episodes`` are replayed from a zero recurrent state.  ``advantages``
    overrides ``R - V`` (used to freeze them for finite-difference checks).
    """
    cfg = params.config
    w = params.weights
    obs, valid, R, active, masks, chosen = _pack(episodes, returns, cfg)
    B, T, _ = obs.shape
    n = valid.sum()
    state = RecurrentState.zeros(cfg, B)
    tops, caches = [], []
    for t in range(T):
        top, state, cache = _trunk_step(w, obs[:, t], state, cfg.depth)
        tops.append(top)
        caches.append(cache)
    top = np.stack(tops, axis=1)  # (B, T, H)
    V = top @ w["value_W"][0] + w["value_b"][0]
    if not np.isfinite(V).all():
        raise NumericError(f"non-finite value estimate; max |top|={np.nanmax(np.abs(top)):.3g}")
    if advantages is None:
        A = np.where(valid, R - V, 0.0)
    else:
        A = np.zeros((B, T))
        for b, a in enumerate(advantages):
            A[b, :len(a)] = a

    logp_total = np.zeros((B, T))
    ent_total = np.zeros((B, T))
    dlogits = {}
    for h in HEADS:
        logits = top @ w[f"head_{h}_W"].T + w[f"head_{h}_b"] + head_offset(h, masks[h], cfg)
        act = active[h]
        m = masks[h]
        p, logp = masked_softmax(logits, m)
        onehot = np.zeros_like(p)
        np.put_along_axis(onehot, chosen[h][..., None], 1.0, axis=-1)
        lp = np.take_along_axis(np.where(m, logp, 0.0), chosen[h][..., None], axis=-1)[..., 0]
        ent = entropy(p, logp)
        logp_total += np.where(act, lp, 0.0)
        ent_total += np.where(act, ent, 0.0)
        if compute_grad:
            safe_logp = np.where(m, logp, 0.0)
            # d(-A log p_a)/dz = A (p - onehot); d(-beta H)/dz = beta p (log p + H)
            g = A[..., None] * (p - onehot) + entropy_weight * p * (safe_logp + ent[..., None])
            dlogits[h] = np.where(act[..., None], g, 0.0) / n
    if not np.isfinite(logp_total[valid]).all():
        raise NumericError("non-finite log-probability for a taken action")

    policy_loss = float(-(logp_total * A)[valid].sum() / n)
    value_loss = float(((R - V) ** 2)[valid].sum() / n)
    ent_mean = float(ent_total[valid].sum() / n)
    total = policy_loss + value_coef * value_loss - entropy_weight * ent_mean
    if not math.isfinite(total):
        raise NumericError(f"non-finite loss: policy={policy_loss} value={value_loss}")
    if not compute_grad:
        return LossResult(policy_loss, value_loss, ent_mean, total, {})

    grads = _zeros_like(w)
    dV = np.where(valid, -2.0 * value_coef * (R - V), 0.0) / n  # (B, T)
    grads["value_W"][0] = np.einsum("bt,bth->h", dV, top)
    grads["value_b"][0] = dV.sum()
    dtop = dV[..., None] * w["value_W"][0]
    for h, g in dlogits.items():
        grads[f"head_{h}_W"] += np.einsum("btk,bth->kh", g, top)
        grads[f"head_{h}_b"] += g.sum(axis=(0, 1))
        dtop += g @ w[f"head_{h}_W"]

    H = cfg.hidden
    dh_next = [np.zeros((B, H)) for _ in range(cfg.depth)]
    dc_next = [np.zeros((B, H)) for _ in range(cfg.depth)]
    for t in range(T - 1, -1, -1):
        x, h1, h2, cache = caches[t]
        dinp = dtop[:, t]
        for l in range(cfg.depth - 1, -1, -1):
            inp, h_prev, c_prev, i, f, gg, o, tc = cache[l]
            dh = dinp + dh_next[l]
            do = dh * tc
            dc = dc_next[l] + dh * o * (1.0 - tc * tc)
            da = np.concatenate([
                dc * gg * i * (1.0 - i),
                dc * c_prev * f * (1.0 - f),
                dc * i * (1.0 - gg * gg),
                do * o * (1.0 - o),
            ], axis=1)
            grads[f"Wx{l}"] += da.T @ inp
            grads[f"Wh{l}"] += da.T @ h_prev
            grads[f"bl{l}"] += da.sum(axis=0)
            dinp = da @ w[f"Wx{l}"]
            dh_next[l] = da @ w[f"Wh{l}"]
            dc_next[l] = dc * f
        da2 = dinp * (1.0 - h2 * h2)
        grads["W2"] += da2.T @ h1
        grads["b2"] += da2.sum(axis=0)
        da1 = (da2 @ w["W2"]) * (1.0 - h1 * h1)
        grads["W1"] += da1.T @ x
        grads["b1"] += da1.sum(axis=0)
    return LossResult(policy_loss, value_loss, ent_mean, total, grads)


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return math.sqrt(sum(float((g * g).sum()) for g in grads.values()))


def apply_update(params: AgentParams, gradients: dict[str, np.ndarray], lr: float = 1e-3,
                 weight_decay: float = 1e-5, max_grad_norm: float | None = 0.5,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8) -> AgentParams:
    """Adam step with decoupled weight decay and global-norm clipping.

    Returns a new AgentParams; a non-finite gradient skips the step.
    """
    norm = global_norm(gradients)
    if not math.isfinite(norm):
        log.warning("skipping update: non-finite gradient norm")
        return params
    scale = 1.0
    if max_grad_norm is not None and norm > max_grad_norm:
        scale = max_grad_norm / norm
    b1, b2 = betas
    out = params.copy()
    out.step = params.step + 1
    c1 = 1.0 - b1 ** out.step
    c2 = 1.0 - b2 ** out.step
    for k, w in out.weights.items():
        g = gradients[k] * scale
        out.grads[k] = g
        out.m[k] = b1 * params.m[k] + (1.0 - b1) * g
        out.v[k] = b2 * params.v[k] + (1.0 - b2) * g * g
        w *= 1.0 - lr * weight_decay
        w -= lr * (out.m[k] / c1) / (np.sqrt(out.v[k] / c2) + eps)
    return out


def config_hash(meta: dict) -> str:
    return hashlib.sha256(json.dumps(meta, sort_keys=True, default=str).encode()).hexdigest()[:16]


def save_checkpoint(params: AgentParams, path, meta: dict | None = None) -> None:
    """Weights, Adam moments and a hashed config snapshot in one ``.npz``."""
    meta = dict(meta or {})
    meta["agent"] = asdict(params.config) if params.config else None
    header = {"version": CHECKPOINT_VERSION, "step": params.step, "meta": meta,
              "config_hash": config_hash(meta)}
    arrays = {}
    for k in params.weights:
        arrays[f"w/{k}"] = params.weights[k]
        arrays[f"m/{k}"] = params.m[k]
        arrays[f"v/{k}"] = params.v[k]
    with open(path, "wb") as fh:
        np.savez(fh, __header__=np.frombuffer(json.dumps(header, default=str).encode(), dtype=np.uint8),
                 **arrays)


def load_checkpoint(path) -> tuple[AgentParams, dict]:
    with np.load(path) as data:
        header = json.loads(bytes(data["__header__"]).decode())
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')}")
        names = [k[2:] for k in data.files if k.startswith("w/")]
        weights = {k: data[f"w/{k}"].copy() for k in names}
        m = {k: data[f"m/{k}"].copy() for k in names}
        v = {k: data[f"v/{k}"].copy() for k in names}
    meta = header["meta"]
    if config_hash(meta) != header["config_hash"]:
        raise ValueError("checkpoint config hash mismatch")
    cfg = AgentConfig(**meta["agent"]) if meta.get("agent") else None
    return AgentParams(weights, cfg, None, m, v, header["step"]), meta
