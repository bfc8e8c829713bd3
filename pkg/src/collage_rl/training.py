"""Rollouts, the A2C training loop and greedy evaluation tables."""
from __future__ import annotations

import csv
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import agent as ag
from .agent import AgentConfig, AgentParams, RecurrentState, Transition
from .env import CollageEnv, EnvConfig, evaluate_collage, quick_init_baseline
from .errors import CollageError, ConfigError, InvalidInputError, NumericError
from .geometry import CollageState

log = logging.getLogger(__name__)

# Rollouts cycle through this many reset seeds so that seeded initializers
# (quick init draws per-image tilts) stay cheap to cache.
RESET_VARIANTS = 4
METHODS = ("baseline", "agent", "agent_no_attention", "agent_no_autocrop")
BUCKETS = ("6", "8", "<15")


@dataclass(frozen=True)
class TrainConfig:
    max_epoch: int = 50
    episodes_per_epoch: int = 64
    batch_size: int = 32  # episodes per gradient update
    gamma: float = 0.99
    entropy_weight: float = 0.01
    value_coef: float = 1.0
    lr: float = 1e-3
    weight_decay: float = 1e-5
    max_grad_norm: float = 0.5
    sign_reward_epochs: int = 20
    seed: int = 0
    eval_every: int = 10
    hidden: int = 128
    depth: int = 4

    def __post_init__(self):
        if self.max_epoch < 0:
            raise ConfigError("max_epoch must be >= 0")
        if self.batch_size < 1 or self.episodes_per_epoch < 1:
            raise ConfigError("batch_size and episodes_per_epoch must be >= 1")
        if self.sign_reward_epochs > self.max_epoch:
            raise ConfigError(
                f"sign_reward_epochs ({self.sign_reward_epochs}) exceeds max_epoch ({self.max_epoch})"
            )
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")


def shaped_rewards(rewards: Sequence[float], epoch: int, cfg: TrainConfig) -> np.ndarray:
    """Early epochs (1-based, up to ``sign_reward_epochs``) train on sign(r)."""
    r = np.asarray(rewards, dtype=np.float64)
    return np.sign(r) if epoch <= cfg.sign_reward_epochs else r


@dataclass
class RunLog:
    rows: list[dict] = field(default_factory=list)

    def append(self, row: dict) -> None:
        if self.rows and row["timestamp"] < self.rows[-1]["timestamp"]:
            raise ValueError("RunLog timestamps must not go backwards")
        self.rows.append(dict(row))

    def __len__(self):
        return len(self.rows)

    def write_csv(self, path) -> None:
        if not self.rows:
            Path(path).write_text("")
            return
        with open(path, "w", newline="") as fh:
            wr = csv.DictWriter(fh, fieldnames=list(self.rows[0]))
            wr.writeheader()
            wr.writerows(self.rows)

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.rows, indent=1))


@dataclass
class Episode:
    set_index: int
    transitions: list[Transition]
    final_state: CollageState
    final_info: dict

    @property
    def total_return(self) -> float:
        return float(sum(t.reward for t in self.transitions))


def default_agent_config(env_cfg: EnvConfig, cfg: TrainConfig = TrainConfig()) -> AgentConfig:
    return AgentConfig(obs_dim=2 * env_cfg.scorer.feature_dim, hidden=cfg.hidden, depth=cfg.depth)


def run_episode(params: AgentParams, env: CollageEnv, rng: np.random.Generator | None,
                reset_seed: int = 0, set_index: int = 0) -> Episode:
    """One episode; ``rng=None`` means greedy decoding."""
    cfg = params.config
    state, obs = env.reset(reset_seed)
    rec = RecurrentState.zeros(cfg)
    out_t: list[Transition] = []
    info: dict = {}
    while not env.is_done(state):
        masks = ag.legal_masks(state.phase, env.n_images, cfg)
        out = ag.policy_forward(params, obs, rec, state.phase, masks)
        if rng is None:
            choice, logp = ag.greedy_action(out.distribution)
        else:
            choice, logp = ag.sample_action(out.distribution, rng)
        action = ag.choice_to_action(state.phase, choice, cfg)
        new, res = env.step(state, action)
        out_t.append(Transition(obs, state.phase, masks, choice, logp, out.value, res.reward, res.done))
        state, obs, rec, info = new, res.observation, out.state, res.info
    return Episode(set_index, out_t, state, info)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("COLLAGE_RL_THREADS", "1")))
    except ValueError:
        return 1


def collect_rollouts(params: AgentParams, image_sets: Sequence[Sequence[np.ndarray]],
                     env_cfg: EnvConfig, n_episodes: int, seed: int, *, greedy: bool = False,
                     envs: dict | None = None, score_fn: Callable | None = None,
                     scorer=None) -> list[Episode]:
    """Episodes ``k = 0..n-1`` each draw an image set and actions from ``(seed, k)``.

    Work is grouped by image set so each worker owns its environments;
    results come back in episode order regardless of the thread count.
    Episodes that raise a collage error are logged and skipped.
    """
    if not image_sets:
        raise InvalidInputError("need at least one image set")
    picks = np.random.default_rng([seed, 0x5E7]).integers(len(image_sets), size=n_episodes)
    envs = {} if envs is None else envs
    for idx in set(int(i) for i in picks):
        if idx not in envs:
            envs[idx] = CollageEnv(image_sets[idx], env_cfg, scorer=scorer, score_fn=score_fn)

    def work(idx):
        done = []
        for k in np.flatnonzero(picks == idx):
            rng = None if greedy else np.random.default_rng([seed, int(k)])
            try:
                done.append((int(k), run_episode(params, envs[idx], rng, int(k) % RESET_VARIANTS, idx)))
            except NumericError:
                raise
            except CollageError as exc:
                log.warning("episode %d on set %d skipped: %s", k, idx, exc)
        return done

    groups = sorted(set(int(i) for i in picks))
    threads = min(_threads(), len(groups))
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(work, groups))
    else:
        parts = [work(g) for g in groups]
    return [ep for _, ep in sorted((p for part in parts for p in part), key=lambda p: p[0])]


def _epoch_row(epoch, episodes, losses, t0) -> dict:
    infos = [e.final_info for e in episodes]
    mean = lambda xs: float(np.mean(xs)) if len(xs) else float("nan")
    return {
        "epoch": epoch,
        "episodes": len(episodes),
        "mean_return": mean([e.total_return for e in episodes]),
        "mean_aesthetic_score": mean([i.get("aesthetic_score", np.nan) for i in infos]),
        "mean_proposal_count": mean([i.get("s_a", np.nan) for i in infos]),
        "mean_blank_fraction": mean([i.get("s_b", np.nan) for i in infos]),
        "policy_loss": mean([l.policy_loss for l in losses]),
        "value_loss": mean([l.value_loss for l in losses]),
        "entropy": mean([l.entropy for l in losses]),
        "total_loss": mean([l.total for l in losses]),
        "wall_time": time.perf_counter() - t0,
        "timestamp": time.time(),
    }


def train(cfg: TrainConfig, image_sets: Sequence[Sequence[np.ndarray]],
          env_cfg: EnvConfig = EnvConfig(), *, params: AgentParams | None = None,
          out_dir=None, score_fn: Callable | None = None, scorer=None,
          progress: Callable[[dict], None] | None = None) -> tuple[AgentParams, RunLog]:
    """On-policy A2C: each batch of episodes is collected with the current weights.

    An epoch whose loss turns non-finite is dropped and the weights from the
    start of that epoch are restored.
    """
    if not image_sets:
        raise InvalidInputError("training needs at least one image set")
    if params is None:
        params = ag.init_params(default_agent_config(env_cfg, cfg), seed=cfg.seed)
    runlog = RunLog()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    meta = {"train": asdict(cfg), "env": _env_meta(env_cfg)}
    envs: dict = {}
    for epoch in range(1, cfg.max_epoch + 1):
        t0 = time.perf_counter()
        start = params
        episodes_all, losses = [], []
        done = 0
        try:
            while done < cfg.episodes_per_epoch:
                n = min(cfg.batch_size, cfg.episodes_per_epoch - done)
                eps = collect_rollouts(params, image_sets, env_cfg, n,
                                       seed=cfg.seed * 1_000_003 + epoch * 10_007 + done,
                                       envs=envs, score_fn=score_fn, scorer=scorer)
                done += n
                if not eps:
                    continue
                seqs = [e.transitions for e in eps]
                rets = [ag.compute_returns(s, gamma=cfg.gamma,
                                           rewards=shaped_rewards([t.reward for t in s], epoch, cfg))
                        for s in seqs]
                loss = ag.a2c_loss(params, seqs, rets, cfg.entropy_weight, cfg.value_coef)
                params = ag.apply_update(params, loss.gradients, cfg.lr, cfg.weight_decay,
                                         cfg.max_grad_norm)
                if not params.is_finite():
                    raise NumericError("weights became non-finite")
                episodes_all += eps
                losses.append(loss)
        except NumericError as exc:
            log.error("epoch %d aborted (%s); restoring previous weights", epoch, exc)
            params = start
            continue
        row = _epoch_row(epoch, episodes_all, losses, t0)
        runlog.append(row)
        if progress:
            progress(row)
        if out is not None:
            runlog.write_csv(out / "runlog.csv")
            runlog.write_json(out / "runlog.json")
            if epoch % cfg.eval_every == 0 or epoch == cfg.max_epoch:
                ag.save_checkpoint(params, out / "checkpoint.npz", dict(meta, epoch=epoch))
    return params, runlog


def _env_meta(env_cfg: EnvConfig) -> dict:
    d = asdict(env_cfg)
    d["target_aspect"] = str(env_cfg.target_aspect)
    return json.loads(json.dumps(d, default=str))


def bucket_of(n_images: int) -> str:
    return {6: "6", 8: "8"}.get(n_images, "<15")


def final_state_for(method: str, images, env_cfg: EnvConfig, params: AgentParams | None,
                    seed: int = 0, scorer=None) -> CollageState:
    if method == "baseline":
        return quick_init_baseline(images, env_cfg, seed=seed, scorer=scorer)
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    if params is None:
        raise ValueError(f"method {method!r} needs trained parameters")
    cfg = env_cfg
    if method == "agent_no_attention":
        cfg = replace(env_cfg, attention=False)
    elif method == "agent_no_autocrop":
        cfg = replace(env_cfg, autocrop=False)
    env = CollageEnv(images, cfg, scorer=scorer)
    return run_episode(params, env, None, reset_seed=seed).final_state


def evaluate(params: AgentParams | None, image_sets: Sequence[Sequence[np.ndarray]],
             env_cfg: EnvConfig = EnvConfig(), methods: Sequence[str] = ("agent",),
             seed: int = 0, scorer=None) -> dict:
    """Greedy evaluation; final collages are always scored with attention on.

    Returns ``{"sets": [...], "rows": [...]}`` where each row holds one
    method's mean proposal count and aesthetic score per size bucket and
    overall.
    """
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise ValueError(f"unknown method(s) {unknown}; choose from {', '.join(METHODS)}")
    score_cfg = replace(env_cfg, attention=True)
    per_set = []
    for method in methods:
        for k, images in enumerate(image_sets):
            state = final_state_for(method, images, env_cfg, params, seed, scorer)
            ev = evaluate_collage(state, images, score_cfg, scorer)
            per_set.append({"method": method, "set": k, "n_images": len(images),
                            "bucket": bucket_of(len(images)),
                            "proposal_count": int(ev.proposal_count),
                            "aesthetic_score": float(ev.aesthetic_score),
                            "blank_fraction": float(ev.blank_fraction)})
    rows = []
    for method in methods:
        mine = [r for r in per_set if r["method"] == method]
        row = {"method": method}
        for b in BUCKETS + ("all",):
            sel = [r for r in mine if b == "all" or r["bucket"] == b]
            row[f"proposals_{b}"] = float(np.mean([r["proposal_count"] for r in sel])) if sel else None
            row[f"aesthetic_{b}"] = float(np.mean([r["aesthetic_score"] for r in sel])) if sel else None
        rows.append(row)
    return {"sets": per_set, "rows": rows}


def write_table_csv(table: dict, path) -> None:
    rows = table["rows"]
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=list(rows[0]))
        wr.writeheader()
        for r in rows:
            wr.writerow({k: ("" if v is None else (f"{v:.6f}" if isinstance(v, float) else v))
                         for k, v in r.items()})
