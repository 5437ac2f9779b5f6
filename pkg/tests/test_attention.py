import numpy as np
import pytest

from conftest import max_grad_error
from lstan.attention import (
    AttentionWeights,
    StaPair,
    attention,
    attention_apply,
    qkv_project,
    scaled_scores,
    sta_pair_forward,
    stack_forward,
)
from lstan.rope import SPATIAL, TEMPORAL, RopeConfig, RopePhases
from lstan.tensor import ShapeError, Tensor
from oracles import attention_loops


def weights(rng, d, scale=1.0):
    return AttentionWeights(*(Tensor(rng.normal(scale=scale, size=(d, d)), requires_grad=True) for _ in range(3)))


def phases_for(n, t, d, theta=128.0, enabled=True):
    return RopePhases(RopeConfig(embed_dim=d, window=t, node_count=n, theta_spatial=theta, theta_temporal=theta), enabled)


@pytest.mark.parametrize("variant", [SPATIAL, TEMPORAL])
@pytest.mark.parametrize("use_rope", [True, False])
def test_matches_loop_oracle(rng, variant, use_rope):
    for _ in range(5):
        n, t, d = rng.integers(2, 6), rng.integers(2, 6), 2 * rng.integers(1, 4)
        v = rng.normal(size=(n, t, d))
        w = weights(rng, d, 0.5)
        got = attention(Tensor(v), w, phases_for(n, t, d, 64.0, use_rope), variant).data
        want = attention_loops(v, w.wq.data, w.wk.data, w.wv.data, 64.0, variant == SPATIAL, use_rope)
        np.testing.assert_allclose(got, want, atol=1e-10, rtol=0)


def test_batched_equals_per_sample(rng):
    v = rng.normal(size=(3, 4, 5, 6))
    w = weights(rng, 6)
    phases = phases_for(4, 5, 6)
    batched = attention(Tensor(v), w, phases, SPATIAL).data
    for b in range(3):
        np.testing.assert_allclose(batched[b], attention(Tensor(v[b]), w, phases, SPATIAL).data, atol=1e-14)


def test_identity_projection_zero_phase():
    v = Tensor(np.arange(24.0).reshape(2, 3, 4))
    eye = Tensor(np.eye(4))
    q, k, val = qkv_project(v, AttentionWeights(eye, eye, eye), phases_for(2, 3, 4, enabled=False), TEMPORAL)
    for x in (q, k, val):
        np.testing.assert_array_equal(x.data, v.data)


def test_zero_value_map(rng):
    v = Tensor(rng.normal(size=(2, 3, 4)))
    w = AttentionWeights(Tensor(np.eye(4)), Tensor(np.eye(4)), Tensor(np.zeros((4, 4))))
    assert not qkv_project(v, w, phases_for(2, 3, 4), TEMPORAL)[2].data.any()


def test_projection_layout_checked(rng):
    with pytest.raises(ShapeError):
        qkv_project(Tensor(np.ones((3, 2, 4))), weights(rng, 4), phases_for(2, 3, 4), TEMPORAL)


def test_score_scaling():
    e1 = Tensor(np.array([[1.0, 0.0, 0.0, 0.0]]))
    e2 = Tensor(np.array([[0.0, 1.0, 0.0, 0.0]]))
    assert scaled_scores(e1, e1).item() == 0.5
    assert scaled_scores(e1, e2).item() == 0.0


def test_uniform_scores_average_values(rng):
    vals = Tensor(rng.normal(size=(4, 3)))
    out = attention_apply(Tensor(np.zeros((4, 4))), vals)
    np.testing.assert_allclose(out.data, np.tile(vals.data.mean(axis=0), (4, 1)), atol=1e-15)


def test_saturated_score_selects_row(rng):
    vals = Tensor(rng.normal(size=(3, 2)))
    scores = np.zeros((3, 3))
    scores[:, 1] = 1e4
    np.testing.assert_allclose(attention_apply(Tensor(scores), vals).data, np.tile(vals.data[1], (3, 1)), atol=1e-8)


def test_zero_weights_give_zero_output():
    zero = lambda: Tensor(np.zeros((4, 4)))  # noqa: E731
    pair = StaPair(AttentionWeights(zero(), zero(), zero()), AttentionWeights(zero(), zero(), zero()))
    v = Tensor(np.ones((2, 3, 4)))
    assert not sta_pair_forward(pair, v, phases_for(2, 3, 4)).data.any()


def test_disabled_spatial_equals_temporal_branch(rng):
    pair = StaPair.init(rng, 4)
    v = Tensor(rng.normal(size=(2, 3, 4)))
    phases = phases_for(2, 3, 4)
    only_t = sta_pair_forward(pair, v, phases, use_spatial=False)
    np.testing.assert_array_equal(only_t.data, attention(v, pair.temporal, phases, TEMPORAL).data)
    both = sta_pair_forward(pair, v, phases)
    only_s = attention(v, pair.spatial, phases, SPATIAL)
    np.testing.assert_allclose(both.data, only_t.data + only_s.data, atol=1e-15)


def test_residual_flag_adds_input(rng):
    pair = StaPair.init(rng, 4)
    v = Tensor(rng.normal(size=(2, 3, 4)))
    phases = phases_for(2, 3, 4)
    plain = sta_pair_forward(pair, v, phases).data
    np.testing.assert_allclose(sta_pair_forward(pair, v, phases, residual=True).data, plain + v.data)


def test_empty_stack_rejected(rng):
    with pytest.raises(ValueError):
        stack_forward([], Tensor(np.ones((2, 3, 4))), phases_for(2, 3, 4))


def test_stack_gradients(rng):
    pairs = [StaPair.init(rng, 4, k) for k in range(2)]
    v = Tensor(rng.normal(size=(3, 2, 4)), requires_grad=True)
    phases = phases_for(3, 2, 4)
    tensors = [v] + [t for p in pairs for t in p.tensors()]
    err = max_grad_error(lambda: _squared(stack_forward(pairs, v, phases)), tensors)
    assert err < 1e-5


def _squared(x):
    return (x * x).mean()
