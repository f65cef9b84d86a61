import numpy as np
import pytest

from cryoforge.apt import (
    PatchSize,
    SelectionProbabilities,
    SteerableSelectionNet,
    apt_forward,
    component_logits,
    gumbel_select,
    interleave,
    octahedral_rotations,
    polyphase_decompose,
    selection_probs,
    steerable_features,
    verify_equivariance,
)


def test_patch_size_validation():
    with pytest.raises(ValueError):
        PatchSize(0, 4, 4)
    assert PatchSize(2, 3, 4).count == 24


def test_decompose_shapes_and_exact_interleave(rng):
    data = rng.normal(size=(4, 4, 4))
    ps = polyphase_decompose(data, PatchSize(2, 2, 2))
    assert ps.components.shape == (2, 2, 2, 2, 2, 2)
    assert ps.count == 8
    assert np.array_equal(interleave(ps), data)


def test_decompose_indexing_follows_strides(rng):
    data = rng.normal(size=(8, 8, 8))
    ps = polyphase_decompose(data, PatchSize(4, 4, 4))
    assert np.array_equal(ps.components[1, 2, 3], data[1::4, 2::4, 3::4])


def test_decompose_constant_volume():
    ps = polyphase_decompose(np.full((8, 8, 8), 2.5), PatchSize(4, 4, 4))
    assert np.ptp(ps.components) == 0.0


def test_decompose_rejects_non_divisible():
    with pytest.raises(ValueError):
        polyphase_decompose(np.zeros((7, 8, 8)), PatchSize(4, 4, 4))


def test_shift_maps_components(rng):
    # Circular shift by (1,0,0) sends component (p,q,r) to ((p+1) mod 4, q, r)
    data = rng.normal(size=(16, 16, 16))
    ps = polyphase_decompose(data, PatchSize())
    shifted = polyphase_decompose(np.roll(data, 1, axis=0), PatchSize())
    for p in range(4):
        for q in range(4):
            for r in range(4):
                expect = np.roll(ps.components[p, q, r], (p + 1) // 4, axis=0)
                assert np.array_equal(shifted.components[(p + 1) % 4, q, r], expect)


def test_constant_component_logit_is_kernel_mass():
    nb = 3
    net = SteerableSelectionNet(
        w_scalar=np.array([1.0, 0.0, 0.0]), w_energy=np.zeros((2, nb))
    )
    logit = steerable_features(np.full((8, 8, 8), 2.0), net)
    assert logit == pytest.approx(2.0 * net.kernel_sum(J=0, m_index=0, radial_index=0), rel=1e-9)


def test_zero_weights_zero_logit(rng):
    net = SteerableSelectionNet(w_scalar=np.zeros(3), w_energy=np.zeros((2, 3)))
    assert steerable_features(rng.normal(size=(8, 8, 8)), net) == 0.0


def test_logit_rotation_invariance(rng):
    net = SteerableSelectionNet.random(rng)
    comp = rng.normal(size=(8, 8, 8))
    base = steerable_features(comp, net)
    scale = max(1.0, abs(base))
    for _, rot in octahedral_rotations():
        rotated = steerable_features(np.ascontiguousarray(rot(comp)), net)
        assert abs(rotated - base) < 1e-6 * scale


def test_net_requires_odd_kernel():
    with pytest.raises(ValueError):
        SteerableSelectionNet(kernel_extent=6)


def test_uniform_probs_for_constant_volume():
    net = SteerableSelectionNet()
    ps = polyphase_decompose(np.full((16, 16, 16), 1.0), PatchSize())
    probs = selection_probs(ps, net)
    assert np.abs(probs.probs - 1.0 / 64).max() < 1e-9
    assert probs.probs.sum() == pytest.approx(1.0, abs=1e-12)


def test_selection_probabilities_validation():
    with pytest.raises(ValueError):
        SelectionProbabilities(np.array([0.5, 0.4]))
    with pytest.raises(ValueError):
        SelectionProbabilities(np.array([0.5, 0.5]), mode="sampling")
    with pytest.raises(ValueError):
        SelectionProbabilities(np.array([0.5, 0.5]), temperature=0.0, mode="training")


def test_gumbel_inference_argmax_and_tie_break():
    probs = SelectionProbabilities(np.array([[0.2, 0.7], [0.1, 0.0]]).reshape(2, 2, 1))
    assert gumbel_select(probs) == (0, 1, 0)
    uniform = SelectionProbabilities(np.full((2, 2, 1), 0.25))
    assert gumbel_select(uniform) == (0, 0, 0)  # lexicographic tie-break


def test_gumbel_training_requires_rng():
    probs = SelectionProbabilities(np.full((2, 2, 1), 0.25), temperature=1.0, mode="training")
    with pytest.raises(ValueError):
        gumbel_select(probs)


def test_gumbel_training_sharp_logits(rng):
    p = np.exp([10.0, 0.0, 0.0])
    probs = SelectionProbabilities((p / p.sum()).reshape(3, 1, 1), temperature=0.1, mode="training")
    hits = sum(gumbel_select(probs, rng) == (0, 0, 0) for _ in range(10_000))
    assert hits / 10_000 >= 0.999


def test_gumbel_training_uniform_frequencies(rng):
    probs = SelectionProbabilities(np.full((3, 1, 1), 1.0 / 3), temperature=1.0, mode="training")
    n = 30_000
    counts = np.zeros(3)
    for _ in range(n):
        counts[gumbel_select(probs, rng)[0]] += 1
    # chi-square goodness of fit, df=2; 13.8 is the p~0.001 cutoff
    chi2 = float(np.sum((counts - n / 3) ** 2 / (n / 3)))
    assert chi2 < 13.8


def test_apt_forward_constant_volume():
    component, index, probs = apt_forward(
        np.full((16, 16, 16), 3.0), PatchSize(), SteerableSelectionNet()
    )
    assert index == (0, 0, 0)
    assert np.ptp(component) == 0.0
    assert probs.probs.shape == (4, 4, 4)


def test_octahedral_rotation_group_has_24_distinct_ops(rng):
    vol = rng.normal(size=(6, 6, 6))
    ops = octahedral_rotations()
    assert len(ops) == 24
    images = [rot(vol).tobytes() for _, rot in ops]
    assert len(set(images)) == 24


def test_verify_equivariance_passes():
    rng = np.random.default_rng(4)
    net = SteerableSelectionNet.random(rng)
    report = verify_equivariance(net, trials=2, seed=4, shifts_per_trial=8)
    assert report["pass"]
    assert report["translation"]["extraction_voxel_exact"]
    assert report["rotation"]["max_logit_deviation"] < 1e-6


def test_verify_equivariance_negative_control():
    rng = np.random.default_rng(4)
    net = SteerableSelectionNet.random(rng, break_rotation=True)
    report = verify_equivariance(net, trials=2, seed=4, shifts_per_trial=8)
    assert report["translation"]["pass"]
    assert not report["rotation"]["pass"]
    assert not report["pass"]


def test_verify_equivariance_trials_guard():
    with pytest.raises(ValueError):
        verify_equivariance(SteerableSelectionNet(), trials=0)


def test_component_logits_shape(rng):
    ps = polyphase_decompose(rng.normal(size=(8, 8, 8)), PatchSize(2, 2, 2))
    logits = component_logits(ps, SteerableSelectionNet.random(rng))
    assert logits.shape == (2, 2, 2)
