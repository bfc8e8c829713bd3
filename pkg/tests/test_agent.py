import logging
import math
from dataclasses import replace

import numpy as np
import pytest

from collage_rl import agent as G
from collage_rl.env import Detail, Switch, Terminate
from collage_rl.errors import InvalidMaskError
from collage_rl.geometry import Phase
from oracles import gradient_check

TINY = G.AgentConfig(obs_dim=6, hidden=8, depth=2, max_images=4)


def zero_params(cfg=TINY):
    p = G.init_params(cfg)
    for w in p.weights.values():
        w[...] = 0.0
    return p


def step(params, phase, n=3, obs=None, state=None):
    cfg = params.config
    obs = np.ones(cfg.obs_dim) if obs is None else obs
    state = G.RecurrentState.zeros(cfg) if state is None else state
    return G.policy_forward(params, obs, state, phase, G.legal_masks(phase, n, cfg))


# -- forward pass and distributions ----------------------------------------------------------

def test_head_sizes():
    sizes = G.AgentConfig().head_sizes()
    assert sizes == {"layout": 106, "image": 15, "dx": 4, "dy": 4, "layer": 3, "angle": 3}


def test_zero_weights_give_uniform_legal_distribution():
    out = step(zero_params(replace(TINY, balanced_terminate=False)), Phase.LAYOUT, n=3)
    p = out.distribution.probs["layout"]
    legal = G.legal_masks(Phase.LAYOUT, 3, TINY)["layout"]
    assert legal.sum() == 4  # three pairs plus terminate
    assert np.allclose(p[legal], 0.25) and np.all(p[~legal] == 0.0)
    assert out.value == 0.0
    d = step(zero_params(), Phase.DETAIL, n=3).distribution
    assert np.allclose(d.probs["image"], [1 / 3, 1 / 3, 1 / 3, 0])
    assert d.log_prob({"image": 0, "dx": 0, "dy": 0, "layer": 0, "angle": 0}) == pytest.approx(
        -math.log(3 * 4 * 4 * 3 * 3))


def test_balanced_terminate_prior():
    for n in (2, 3, 4):
        p = step(zero_params(), Phase.LAYOUT, n=n).distribution.probs["layout"]
        pairs = n * (n - 1) // 2
        assert p[-1] == pytest.approx(0.5)
        assert np.allclose(p[:-1][p[:-1] > 0], 0.5 / pairs) and np.count_nonzero(p[:-1]) == pairs


def test_masked_options_are_never_sampled():
    p = G.init_params(TINY, seed=3, head_scale=2.0)
    dist = step(p, Phase.LAYOUT, n=2).distribution
    legal = G.legal_masks(Phase.LAYOUT, 2, TINY)["layout"]
    rng = np.random.default_rng(0)
    seen = {G.sample_action(dist, rng)[0]["layout"] for _ in range(10_000)}
    assert seen <= set(np.flatnonzero(legal))


def test_heads_normalize():
    p = G.init_params(TINY, seed=4, head_scale=3.0)
    for phase in Phase:
        if phase not in G.PHASE_HEADS:
            continue
        for probs in step(p, phase).distribution.probs.values():
            assert probs.sum() == pytest.approx(1.0, abs=1e-6)


def test_forward_is_pure():
    p = G.init_params(TINY, seed=5, head_scale=1.0)
    a, b = step(p, Phase.DETAIL), step(p, Phase.DETAIL)
    for h in a.distribution.probs:
        assert np.array_equal(a.distribution.probs[h], b.distribution.probs[h])
    assert a.value == b.value


def test_recurrence_uses_memory_and_resets():
    p = G.init_params(TINY, seed=6, head_scale=1.0)
    obs = np.linspace(-1, 1, TINY.obs_dim)
    first = step(p, Phase.LAYOUT, obs=obs)
    second = step(p, Phase.LAYOUT, obs=obs, state=first.state)
    assert not np.allclose(first.distribution.probs["layout"], second.distribution.probs["layout"])
    again = step(p, Phase.LAYOUT, obs=obs)
    assert np.array_equal(first.distribution.probs["layout"], again.distribution.probs["layout"])


def test_all_false_mask_rejected():
    with pytest.raises(InvalidMaskError):
        G.masked_softmax(np.zeros(3), np.zeros(3, bool))


def test_wrong_observation_size():
    with pytest.raises(ValueError):
        step(zero_params(), Phase.LAYOUT, obs=np.zeros(3))


def test_entropy_bounds():
    rng = np.random.default_rng(0)
    for k in (2, 3, 4, 7):
        for _ in range(20):
            p, lp = G.masked_softmax(rng.normal(0, 3, k), np.ones(k, bool))
            h = G.entropy(p, lp)
            assert -1e-12 <= h <= math.log(k) + 1e-12


# -- sampling ---------------------------------------------------------------------------------

def one_head(p):
    p = np.asarray(p, float)
    with np.errstate(divide="ignore"):
        return G.Distribution(Phase.LAYOUT, {"layout": p}, {"layout": np.log(p)})


def test_deterministic_distribution():
    choice, lp = G.sample_action(one_head([0, 1, 0]), np.random.default_rng(0))
    assert choice == {"layout": 1} and lp == 0.0


def test_uniform_four_log_prob():
    _, lp = G.sample_action(one_head([0.25] * 4), np.random.default_rng(0))
    assert lp == pytest.approx(-1.3863, abs=1e-4)


def test_empirical_frequencies():
    p = np.array([0.1, 0.2, 0.3, 0.4])
    dist, rng, n = one_head(p), np.random.default_rng(7), 100_000
    counts = np.bincount([G.sample_action(dist, rng)[0]["layout"] for _ in range(n)], minlength=4)
    sigma = np.sqrt(n * p * (1 - p))
    assert np.all(np.abs(counts - n * p) <= 3 * sigma)


def test_greedy_picks_mode():
    assert G.greedy_action(one_head([0.2, 0.5, 0.3]))[0] == {"layout": 1}


@pytest.mark.parametrize("action", [Terminate(), Switch(0, 3), Switch(2, 1), Detail(2, 0, 3, 1, 2)])
def test_choice_round_trip(action):
    phase = Phase.DETAIL if isinstance(action, Detail) else Phase.LAYOUT
    back = G.choice_to_action(phase, G.action_to_choice(action, TINY), TINY)
    if isinstance(action, Switch):
        assert {back.i, back.j} == {action.i, action.j}
    else:
        assert back == action


# -- returns ------------------------------------------------------------------------------------

def transitions(rewards, done_last=True):
    return [G.Transition(np.zeros(1), Phase.LAYOUT, {}, {}, 0.0, 0.0, r,
                         done_last and k == len(rewards) - 1) for k, r in enumerate(rewards)]


def test_returns_hand_recursion():
    assert np.allclose(G.compute_returns(transitions([1.0, 1.0]), gamma=0.99), [1.99, 1.0])


def test_returns_without_discount():
    r = [0.5, -2.0, 3.0]
    assert np.array_equal(G.compute_returns(transitions(r), gamma=0.0), r)


def test_zero_rewards():
    assert np.array_equal(G.compute_returns(transitions([0.0] * 4)), np.zeros(4))


def test_bootstrap_and_done_cut():
    tr = transitions([1.0, 1.0], done_last=False)
    assert np.allclose(G.compute_returns(tr, bootstrap_value=10.0, gamma=0.5), [1 + 0.5 * 6, 6])
    tr[0].done = True
    assert np.allclose(G.compute_returns(tr, bootstrap_value=10.0, gamma=0.5), [1, 6])


# -- loss ----------------------------------------------------------------------------------------

def layout_episode(params, choice=0):
    cfg = params.config
    masks = G.legal_masks(Phase.LAYOUT, 2, cfg)
    obs = np.ones(cfg.obs_dim)
    out = G.policy_forward(params, obs, G.RecurrentState.zeros(cfg), Phase.LAYOUT, masks)
    lp = out.distribution.log_prob({"layout": choice})
    return [G.Transition(obs, Phase.LAYOUT, masks, {"layout": choice}, lp, out.value, 1.0, True)]


def test_loss_worked_example():
    cfg = G.AgentConfig(obs_dim=4, hidden=5, depth=1, max_images=2)
    p = zero_params(cfg)
    # two legal options: make the chosen one have probability exactly 1/e
    p.weights["head_layout_b"][1] = math.log(math.e - 1)
    ep = layout_episode(p, choice=0)
    assert ep[0].log_prob == pytest.approx(-1.0, abs=1e-12)
    res = G.a2c_loss(p, [ep], [np.array([1.0])], entropy_weight=0.0)
    assert res.policy_loss == pytest.approx(1.0, abs=1e-12)
    assert res.value_loss == pytest.approx(1.0, abs=1e-12)
    assert res.total == pytest.approx(2.0, abs=1e-12)


def test_zero_advantage_leaves_entropy_gradient():
    p = G.init_params(TINY, seed=2, head_scale=1.0)
    R, A0 = [np.array([1.0])], [np.zeros(1)]
    a = G.a2c_loss(p, [layout_episode(p, 0)], R, entropy_weight=0.1, value_coef=0.0, advantages=A0)
    b = G.a2c_loss(p, [layout_episode(p, 6)], R, entropy_weight=0.1, value_coef=0.0, advantages=A0)
    none = G.a2c_loss(p, [layout_episode(p, 0)], R, entropy_weight=0.0, value_coef=0.0, advantages=A0)
    assert a.policy_loss == 0.0
    # with the score term gone, which action was taken no longer matters
    for k in a.gradients:
        assert np.array_equal(a.gradients[k], b.gradients[k])
        assert not np.any(none.gradients[k])
    assert any(np.any(g) for g in a.gradients.values())


def test_uniform_four_way_entropy():
    p, lp = G.masked_softmax(np.zeros(4), np.ones(4, bool))
    assert G.entropy(p, lp) == pytest.approx(1.3863, abs=1e-4)


def test_policy_term_does_not_touch_value_head():
    p = G.init_params(TINY, seed=8, head_scale=1.0)
    res = G.a2c_loss(p, [layout_episode(p)], [np.array([2.0])], value_coef=0.0)
    assert not np.any(res.gradients["value_W"]) and res.gradients["value_b"][0] == 0.0


def test_padding_does_not_change_the_loss():
    p = G.init_params(TINY, seed=9, head_scale=1.0)
    short = layout_episode(p)
    long = layout_episode(p) + layout_episode(p)
    long[0].done = False
    alone = G.a2c_loss(p, [short], [np.array([1.0])])
    both = G.a2c_loss(p, [short, long], [np.array([1.0]), np.array([0.5, 1.0])])
    pair = G.a2c_loss(p, [long], [np.array([0.5, 1.0])])
    assert both.total * 3 == pytest.approx(alone.total + 2 * pair.total, rel=1e-10)


@pytest.mark.parametrize("seed", [0, 1])
def test_gradients_match_finite_differences(seed):
    assert gradient_check(seed) < 1e-4


# -- optimizer ----------------------------------------------------------------------------------

def scalar(x=1.0):
    return G.AgentParams({"x": np.array([x])})


def test_zero_gradient_no_decay_leaves_weights():
    p = G.init_params(TINY, seed=1)
    out = G.apply_update(p, {k: np.zeros_like(v) for k, v in p.weights.items()}, weight_decay=0.0)
    assert out.step == 1 and p.step == 0
    for k in p.weights:
        assert np.array_equal(out.weights[k], p.weights[k])


def test_adam_trajectory_by_hand():
    lr, wd, b1, b2, eps = 0.1, 0.01, 0.9, 0.999, 1e-8
    x, m, v = 1.0, 0.0, 0.0
    p = scalar(x)
    for t, g in enumerate([0.1, -0.2, 0.3], start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x = x * (1 - lr * wd) - lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
        p = G.apply_update(p, {"x": np.array([g])}, lr=lr, weight_decay=wd, max_grad_norm=None)
        assert p.weights["x"][0] == pytest.approx(x, abs=1e-12)


def test_clip_to_half():
    p = G.AgentParams({"a": np.zeros(2)})
    out = G.apply_update(p, {"a": np.array([3.0, 4.0])})
    assert G.global_norm(out.grads) == pytest.approx(0.5)
    assert np.allclose(out.grads["a"], [0.3, 0.4])


def test_non_finite_gradient_skips_update(caplog):
    p = scalar()
    with caplog.at_level(logging.WARNING, logger="collage_rl.agent"):
        out = G.apply_update(p, {"x": np.array([np.nan])})
    assert out is p and out.step == 0 and "skipping" in caplog.text


# -- checkpoints ----------------------------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    p = G.init_params(TINY, seed=11)
    p = G.apply_update(p, {k: np.ones_like(v) for k, v in p.weights.items()})
    path = tmp_path / "ck.npz"
    G.save_checkpoint(p, path, {"seed": 11})
    q, meta = G.load_checkpoint(path)
    assert q.config == TINY and q.step == p.step and meta["seed"] == 11
    for k in p.weights:
        assert np.array_equal(q.weights[k], p.weights[k])
        assert np.array_equal(q.m[k], p.m[k]) and np.array_equal(q.v[k], p.v[k])
    a, b = step(p, Phase.DETAIL), step(q, Phase.DETAIL)
    assert np.array_equal(a.distribution.probs["image"], b.distribution.probs["image"])
