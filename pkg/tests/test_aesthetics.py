from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from collage_rl import aesthetics as A
from collage_rl.errors import ConfigError, InvalidInputError
from collage_rl.geometry import Rect


def prop(x, y, w, h, score=None, feature=None):
    r = Rect(x, y, w, h)
    return A.PatchProposal(r, w * h, r.center, score, feature)


# -- proposals --------------------------------------------------------------------

def test_single_full_window():
    cfg = A.ScorerConfig(scales=(1.0,), aspect_ratios=(Fraction(1),))
    ps = A.generate_proposals((96, 96), cfg)
    assert [p.rect for p in ps] == [Rect(0, 0, 96, 96)]


def test_window_count_formula():
    cfg = A.ScorerConfig(scales=(0.5,), aspect_ratios=(Fraction(1),), stride_fraction=0.25)
    got = {tuple(p.rect) for p in A.generate_proposals((100, 100), cfg)}
    want = {(x, y, 50, 50) for x in range(0, 51, 25) for y in range(0, 51, 25)}
    assert got == want and len(got) == ((100 - 50) // 25 + 1) ** 2


@given(st.integers(64, 160), st.integers(64, 160),
       st.lists(st.sampled_from([0.3, 0.5, 0.7, 0.9, 1.0]), min_size=1, max_size=3, unique=True),
       st.lists(st.sampled_from([Fraction(1), Fraction(4, 3), Fraction(3, 4), Fraction(16, 9)]),
                min_size=1, max_size=3, unique=True),
       st.sampled_from([0.1, 0.125, 0.25]))
def test_proposals_in_bounds_and_unique(h, w, scales, ars, stride):
    cfg = A.ScorerConfig(scales=tuple(scales), aspect_ratios=tuple(ars), stride_fraction=stride)
    ps = A.generate_proposals((h, w), cfg)
    rects = [p.rect for p in ps]
    assert len(set(rects)) == len(rects) > 0
    for p in ps:
        x, y, rw, rh = p.rect
        assert 0 <= x and x + rw <= w and 0 <= y and y + rh <= h
        assert p.area_px == rw * rh


@pytest.mark.parametrize("kw", [dict(eta=0.0), dict(eta=1.0), dict(scales=()),
                                dict(aspect_ratios=()), dict(stride_fraction=0.0)])
def test_scorer_config_validation(kw):
    with pytest.raises(ConfigError):
        A.ScorerConfig(**kw)


# -- patch scoring ------------------------------------------------------------------

def test_blank_flat_patch_scores_minimum():
    px = np.full((20, 20, 3), 255, np.uint8)
    s, f = A.score_patch(px, np.ones((20, 20), bool))
    assert s == 0.0 and f.shape == (32,)


def test_blank_half_scores_lower(rng):
    px = rng.integers(0, 256, (40, 40, 3), dtype=np.uint8)
    half = np.zeros((40, 40), bool)
    half[:, :20] = True
    a, _ = A.score_patch(px, half)
    b, _ = A.score_patch(px, np.zeros((40, 40), bool))
    assert a < b


def test_score_patch_is_deterministic(rng):
    px = rng.integers(0, 256, (33, 47, 3), dtype=np.uint8)
    s1, f1 = A.score_patch(px)
    s2, f2 = A.score_patch(px.copy())
    assert s1 == s2 and np.array_equal(f1, f2)


@pytest.mark.parametrize("shape", [(0, 5, 3), (5, 0, 3), (5, 5)])
def test_empty_patch_rejected(shape):
    with pytest.raises(InvalidInputError):
        A.score_patch(np.zeros(shape, np.uint8))


@given(st.integers(1, 70), st.integers(1, 70), st.integers(0, 2**31 - 1))
def test_scores_stay_in_range(h, w, seed):
    r = np.random.default_rng(seed)
    px = r.integers(0, 256, (h, w, 3), dtype=np.uint8)
    blank = r.random((h, w)) < r.random()
    s, f = A.score_patch(px, blank)
    assert 0.0 <= s <= 10.0 and np.isfinite(f).all()


def test_score_many_matches_single_calls(rng):
    px = rng.integers(0, 256, (64, 80, 3), dtype=np.uint8)
    blank = rng.random((64, 80)) < 0.3
    scorer = A.HeuristicScorer()
    rects = [Rect(0, 0, 80, 64), Rect(8, 4, 50, 40), Rect(30, 20, 50, 44)]
    scores, feats = scorer.score_many(px, blank, rects)
    for k, (x, y, w, h) in enumerate(rects):
        s, f = scorer(px[y:y + h, x:x + w], blank[y:y + h, x:x + w])
        assert scores[k] == pytest.approx(s, abs=1e-12)
        assert np.allclose(feats[k], f)


def test_external_scorer_loading():
    cfg = A.ScorerConfig(scorer="external", external_scorer="collage_rl.aesthetics:HeuristicScorer")
    assert isinstance(A.make_scorer(cfg), A.HeuristicScorer)
    with pytest.raises(ConfigError):
        A.make_scorer(A.ScorerConfig(scorer="external", external_scorer="no_colon"))
    with pytest.raises(ConfigError):
        A.make_scorer(A.ScorerConfig(scorer="mystery"))


# -- attention, gate, fusion, metric -------------------------------------------------------

def test_centered_patch_weight_is_area_fraction():
    p = prop(20, 20, 60, 60, 5.0, np.ones(4))
    assert A.attention_weights([p], (100, 100))[0] == pytest.approx(0.36, abs=1e-12)


def test_off_center_weight():
    # center (25, 75), area 3000 on a 100x100 canvas: l = 0.25 + 0.25
    p = A.PatchProposal(Rect(0, 45, 50, 60), 3000, (25.0, 75.0), 5.0, np.ones(4))
    assert A.attention_weights([p], (100, 100))[0] == pytest.approx(0.15, abs=1e-9)


def test_gate_drops_small_patches():
    cfg = A.ScorerConfig(eta=0.6, feature_dim=2)
    big = prop(0, 0, 100, 70, 9.0, np.array([1.0, 0.0]))     # 0.7
    small = prop(0, 0, 50, 100, 9.0, np.array([0.0, 1.0]))   # 0.5
    feat = A.fuse([big, small], (100, 100), cfg)
    assert feat.fused_feature[1] == 0.0
    assert feat.proposal_count == 1
    assert feat.aesthetic_score == pytest.approx(0.7 * 9.0)


def test_two_proposal_metric():
    ps = [prop(0, 0, 100, 70, 6.0), prop(0, 0, 100, 90, 4.0)]
    assert A.aesthetic_metric(ps, (100, 100)) == pytest.approx(7.8, abs=1e-9)


def test_full_canvas_metric():
    assert A.aesthetic_metric([prop(0, 0, 100, 100, 8.0)], (100, 100)) == pytest.approx(8.0, abs=1e-12)


def test_nothing_passes():
    cfg = A.ScorerConfig(feature_dim=3)
    feat = A.fuse([prop(0, 0, 10, 10, 9.0, np.ones(3))], (100, 100), cfg)
    assert feat.proposal_count == 0 and feat.aesthetic_score == 0.0
    assert np.array_equal(feat.fused_feature, np.zeros(3))


def test_fused_feature_is_weighted_mean():
    cfg = A.ScorerConfig(feature_dim=2, tau=5.0)
    p1 = prop(0, 0, 100, 100, 7.0, np.array([1.0, 0.0]))      # alpha 1.0
    p2 = prop(0, 0, 80, 80, 3.0, np.array([0.0, 1.0]))        # centre (40,40): alpha .64*.8
    feat = A.fuse([p1, p2], (100, 100), cfg)
    a2 = 0.64 * (1 - 0.2)
    assert np.allclose(feat.fused_feature, np.array([1.0, a2]) / (1.0 + a2))
    assert feat.proposal_count == 1  # only the 7.0 patch reaches tau


def test_no_attention_uses_area_fraction():
    p = A.PatchProposal(Rect(0, 45, 50, 60), 3000, (25.0, 75.0), 5.0, np.ones(4))
    assert A.attention_weights([p], (100, 100), attention=False)[0] == pytest.approx(0.3)


def test_center_most_gets_more_weight():
    a = prop(10, 10, 70, 70, 5.0)
    b = prop(0, 0, 70, 70, 5.0)
    wa, wb = A.attention_weights([a, b], (100, 100))
    assert wa > wb


@given(st.integers(64, 128), st.integers(64, 128))
def test_attention_mirror_symmetry(h, w):
    ps = A.generate_proposals((h, w))
    mirrored = [A.PatchProposal(p.rect, p.area_px, (w - p.center[0], p.center[1])) for p in ps]
    assert np.allclose(np.sort(A.attention_weights(ps, (h, w))),
                       np.sort(A.attention_weights(mirrored, (h, w))))


@given(st.lists(st.floats(0, 10), min_size=1, max_size=6), st.data())
def test_metric_monotone_in_each_passing_score(scores, data):
    fracs = data.draw(st.lists(st.integers(61, 100), min_size=len(scores), max_size=len(scores)))
    ps = [prop(0, 0, 100, f, s) for f, s in zip(fracs, scores)]
    base = A.aesthetic_metric(ps, (100, 100))
    k = data.draw(st.integers(0, len(ps) - 1))
    bump = list(ps)
    bump[k] = prop(0, 0, 100, fracs[k], scores[k] + 0.5)
    assert A.aesthetic_metric(bump, (100, 100)) > base
    # additive over the passing set
    assert base == pytest.approx(sum(f / 100 * s for f, s in zip(fracs, scores)))


@given(st.floats(0.05, 0.95), st.integers(0, 2**31 - 1))
def test_gate_never_admits_small_areas(eta, seed):
    r = np.random.default_rng(seed)
    cfg = A.ScorerConfig(eta=eta, feature_dim=2)
    ps = []
    for _ in range(8):
        w, h = int(r.integers(1, 101)), int(r.integers(1, 101))
        ps.append(prop(0, 0, w, h, float(r.uniform(0, 10)), r.normal(size=2)))
    mask = A.gate(ps, (100, 100), eta)
    for p, ok in zip(ps, mask):
        assert ok == (p.area_px / 10000 > eta)
    passing = [p for p, ok in zip(ps, mask) if ok]
    feat = A.fuse(ps, (100, 100), cfg)
    assert feat.proposal_count == sum(p.score >= cfg.tau for p in passing)
    assert feat.aesthetic_score == pytest.approx(A.aesthetic_metric(passing, (100, 100), cfg))
