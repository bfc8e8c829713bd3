"""Brute-force reference implementations shared by unit and acceptance tests."""
from collections import Counter
from itertools import product

from collage_rl.env import (
    CollageEnv,
    Detail,
    Switch,
    Terminate,
    collage_score,
    crop_candidates,
    evaluate_collage,
    switch_pairs,
)
from collage_rl.geometry import crop_state


def exhaustive_crop(state, images, cfg):
    """Score every candidate view with no pruning or caching.

    Returns ``(best_rect, best_score, all_scores)`` using the documented
    tie-break: highest score, then larger area, then top-most, then left-most.
    """
    scores = []
    for rect in crop_candidates(state, images, cfg):
        full = rect.width == state.canvas.width_px and rect.height == state.canvas.height_px
        view = state if full else crop_state(state, rect)
        scores.append((rect, collage_score(evaluate_collage(view, images, cfg), cfg)))
    rect, score = min(scores, key=lambda rs: (-rs[1], -rs[0].area, rs[0].y, rs[0].x))
    return rect, score, scores


def all_detail_actions(n_images):
    return [Detail(i, a, b, c, d)
            for i, a, b, c, d in product(range(n_images), range(4), range(4), range(3), range(3))]


def enumerate_returns(env: CollageEnv):
    """Every action sequence's undiscounted return, grouped by identical states.

    Returns ``(best_return, mean_return_under_uniform_random_policy)``.  The
    random policy picks uniformly among legal actions at each step, the same
    way independent uniform heads would.
    """
    state, _ = env.reset()
    n = env.n_images
    layout = [Switch(i, j) for i, j in switch_pairs(n)] + [Terminate()]
    detail = all_detail_actions(n)
    frontier = Counter({(state, 0.0): 1.0})  # (state, return so far) -> probability
    while not all(env.is_done(s) for s, _ in frontier):
        nxt = Counter()
        for (s, ret), prob in frontier.items():
            if env.is_done(s):
                nxt[(s, ret)] += prob
                continue
            acts = layout if s.phase.value == "layout" else detail
            for a in acts:
                out = env.transition(s, a)
                nxt[(out.state, ret + out.reward)] += prob / len(acts)
        frontier = nxt
    mean = sum(ret * p for (_, ret), p in frontier.items())
    top = max(ret for _, ret in frontier)
    return top, mean


def gradient_check(seed, h=1e-4, entropy_weight=0.1, n_episodes=2, length=5):
    """Largest per-parameter relative error between analytic and central-difference gradients.

    Uses a small network and random rollouts that cross the layout/detail
    boundary.  Advantages are frozen at ``R - V`` of the unperturbed weights,
    matching the stop-gradient the analytic pass applies.
    """
    import numpy as np

    from collage_rl import agent as G
    from collage_rl.geometry import Phase

    cfg = G.AgentConfig(obs_dim=5, hidden=6, depth=2, max_images=4)
    params = G.init_params(cfg, seed, head_scale=0.5)
    rng = np.random.default_rng(seed)
    episodes, values = [], []
    for _ in range(n_episodes):
        state = G.RecurrentState.zeros(cfg)
        ep, vs = [], []
        for t in range(length):
            phase = Phase.LAYOUT if t < 2 else Phase.DETAIL
            masks = G.legal_masks(phase, 3, cfg)
            obs = rng.normal(size=cfg.obs_dim)
            out = G.policy_forward(params, obs, state, phase, masks)
            choice, lp = G.sample_action(out.distribution, rng)
            ep.append(G.Transition(obs, phase, masks, choice, lp, out.value, float(rng.normal()),
                                   t == length - 1))
            vs.append(out.value)
            state = out.state
        episodes.append(ep)
        values.append(np.array(vs))
    returns = [G.compute_returns(e) for e in episodes]
    adv = [r - v for r, v in zip(returns, values)]
    analytic = G.a2c_loss(params, episodes, returns, entropy_weight).gradients

    def loss():
        return G.a2c_loss(params, episodes, returns, entropy_weight, advantages=adv,
                          compute_grad=False).total

    worst = 0.0
    for name, w in params.weights.items():
        num = np.zeros_like(w)
        for idx in np.ndindex(w.shape):
            old = w[idx]
            w[idx] = old + h
            up = loss()
            w[idx] = old - h
            down = loss()
            w[idx] = old
            num[idx] = (up - down) / (2 * h)
        g = analytic[name]
        denom = max(np.linalg.norm(g) + np.linalg.norm(num), 1e-12)
        worst = max(worst, float(np.linalg.norm(g - num) / denom))
    return worst
