"""Decoding heads: shape contracts, information flow through the cascade,
membership locality, and gradient checks."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from ligar import decoder, nn, taxonomy
from ligar.config import RunConfig, ScaleConfig
from ligar.errors import DataError
from ligar.tape import ComputationRecord, Tensor, sum_reduce

CFG = RunConfig(
    feature_dim=8,
    head_count=2,
    scales=(ScaleConfig(8, 0.8, 6), ScaleConfig(4, 1.6, 6), ScaleConfig(2, 3.0, 6)),
    frames=3,
)


def decoder_params(seed=0, cfg=CFG):
    params = {}
    decoder.init_decoder(params, np.random.default_rng(seed), cfg)
    return params


def sample_inputs(seed, t=3, n=5, m=8):
    rng = np.random.default_rng(seed)
    feats = rng.standard_normal((t, n, decoder.QUERY_FEATURES))
    anchor = Tensor(rng.standard_normal((t, m, CFG.feature_dim)))
    fused = Tensor(rng.standard_normal((t, 3 * CFG.feature_dim)))
    membership = np.zeros((2, n))
    membership[0, :3] = 1.0
    membership[1, 3:] = 1.0
    return feats, anchor, fused, membership


def run_cascade(params, feats, anchor, fused, membership):
    ind = decoder.decode_individual(feats, anchor, fused, params, CFG)
    grp = decoder.decode_group(ind, membership, fused, params)
    scn = decoder.decode_scene(grp, fused, params)
    return ind, grp, scn


def test_logit_shapes():
    params = decoder_params(1)
    feats, anchor, fused, membership = sample_inputs(2)
    with ComputationRecord():
        ind, grp, scn = run_cascade(params, feats, anchor, fused, membership)
    assert ind.shape == (3, 5, taxonomy.N_ACTIONS)
    assert grp.shape == (3, 2, taxonomy.N_GROUP_ACTIVITIES)
    assert scn.shape == (3, taxonomy.N_SCENE_LABELS)


def test_query_features_shape_and_velocity():
    tracks = np.zeros((2, 4, 3))
    tracks[0, :, 0] = np.arange(4) * 0.5  # 1 m/s with 0.5 s frames
    feats = decoder.agent_query_features(tracks, 0.5, 20.0)
    assert feats.shape == (4, 2, 6)
    assert_allclose(feats[:, 0, 3], np.ones(4), rtol=0, atol=1e-12)
    assert_allclose(feats[:, 1, 3:], np.zeros((4, 3)), rtol=0, atol=0)
    assert_allclose(feats[2, 0, 0], 1.0 / 20.0, rtol=0, atol=1e-15)


def test_duplicate_queries_get_identical_rows():
    params = decoder_params(3)
    feats, anchor, fused, membership = sample_inputs(4)
    feats[:, 2] = feats[:, 0]
    with ComputationRecord():
        ind = decoder.decode_individual(feats, anchor, fused, params, CFG)
    assert ind.data[:, 0].tobytes() == ind.data[:, 2].tobytes()


def test_non_member_agent_cannot_touch_group_row():
    """Perturbing an agent outside group 0 leaves group 0's logits bitwise
    unchanged (membership pooling is exactly local)."""
    params = decoder_params(5)
    feats, anchor, fused, membership = sample_inputs(6)
    edited = feats.copy()
    edited[:, 4] += 2.5  # agent 4 belongs to group 1 only
    with ComputationRecord():
        _, grp_a, _ = run_cascade(params, feats, anchor, fused, membership)
        _, grp_b, _ = run_cascade(params, edited, anchor, fused, membership)
    assert grp_a.data[:, 0].tobytes() == grp_b.data[:, 0].tobytes()
    assert np.abs(grp_a.data[:, 1] - grp_b.data[:, 1]).max() > 0.0


def test_cascade_carries_individual_evidence_to_scene():
    params = decoder_params(7)
    feats, anchor, fused, membership = sample_inputs(8)
    edited = feats.copy()
    edited[:, 1] -= 3.0
    with ComputationRecord():
        _, _, scn_a = run_cascade(params, feats, anchor, fused, membership)
        _, _, scn_b = run_cascade(params, edited, anchor, fused, membership)
    assert np.abs(scn_a.data - scn_b.data).max() > 0.0


def test_no_groups_gives_zero_prior_and_finite_scene():
    params = decoder_params(9)
    feats, anchor, fused, _ = sample_inputs(10)
    empty = np.zeros((0, 5))
    with ComputationRecord():
        ind, grp, scn = run_cascade(params, feats, anchor, fused, empty)
    assert grp.shape == (3, 0, taxonomy.N_GROUP_ACTIVITIES)
    assert np.isfinite(scn.data).all()


def test_membership_column_mismatch_rejected():
    params = decoder_params(11)
    feats, anchor, fused, _ = sample_inputs(12)
    with ComputationRecord():
        ind = decoder.decode_individual(feats, anchor, fused, params, CFG)
        with pytest.raises(DataError):
            decoder.decode_group(ind, np.ones((1, 7)), fused, params)


def test_aux_heads_shapes():
    params = decoder_params(13)
    rng = np.random.default_rng(14)
    anchors = [Tensor(rng.standard_normal((3, m, CFG.feature_dim)))
               for m in (8, 4, 2)]
    with ComputationRecord():
        aux = decoder.aux_scene_logits(anchors, params)
    assert len(aux) == 3
    for logits in aux:
        assert logits.shape == (3, taxonomy.N_SCENE_LABELS)


def test_decoder_gradients_match_central_differences():
    params = decoder_params(15)
    feats, anchor, fused, membership = sample_inputs(16)
    rng = np.random.default_rng(17)
    proj_s = rng.standard_normal(taxonomy.N_SCENE_LABELS)

    def run(theta):
        _, _, scn = run_cascade(params, feats, anchor, fused, membership)
        return sum_reduce(scn.__matmul__(Tensor(proj_s[:, None])))

    for name in ("dec.query.w", "dec.att.wv", "dec.ind.mlp.w1",
                 "dec.grp.mlp.w2", "dec.scn.mlp.w1", "dec.query.base"):
        err = nn.grad_check(run, params[name],
                            coords=np.arange(0, params[name].data.size, 5))
        assert err < 1e-5, f"{name}: {err}"
