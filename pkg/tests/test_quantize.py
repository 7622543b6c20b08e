import numpy as np
import pytest

from splatfuse.core import Camera, RigidTransform
from splatfuse.errors import EmptyVoxel, MalformedFile, MixedVoxel, NonFinite, VoxelSizeMismatch
from splatfuse.quantize import (
    AnchorSet,
    AnchorStore,
    frustum_extract,
    frustum_mask,
    fuse_points,
    merge_incremental,
    merge_sets,
    pack_keys,
    quantize_frame,
    read_store,
    unpack_keys,
    voxel_key,
    voxel_keys,
    write_store,
)


def _cloud(rng, n=500, c=4):
    return rng.uniform(-0.5, 0.5, (n, 3)), rng.uniform(0.1, 2.0, n), rng.normal(size=(n, c))


def test_voxel_key_floors_negative():
    key, center = voxel_key((0.012, -0.003, 0.020), 0.01)
    assert tuple(key) == (1, -1, 2)
    assert np.allclose(center, (0.01, -0.01, 0.02))


def test_voxel_key_sweep():
    g = 0.01
    for x in np.linspace(-3 * g, 3 * g, 601, endpoint=False):
        _, c = voxel_key((x, 0, 0), g)
        assert c[0] <= x < c[0] + g


def test_voxel_key_errors():
    with pytest.raises(NonFinite):
        voxel_key((np.nan, 0, 0), 0.01)
    with pytest.raises(ValueError):
        voxel_keys(np.zeros((1, 3)), 0.0)


def test_pack_unpack(rng):
    k = rng.integers(-(1 << 20), 1 << 20, (1000, 3))
    assert np.array_equal(unpack_keys(pack_keys(k)), k)


def test_fuse_singleton_and_weighted():
    a = fuse_points([((0.001, 0.002, 0.003), 2.0, [1.0, 2.0])], 0.01)
    assert np.allclose(a.mu, (0.001, 0.002, 0.003)) and np.allclose(a.feature, [1, 2]) and a.sum_s == 2.0
    b = fuse_points([((0, 0, 0), 1.0, [0.0]), ((0.004, 0, 0), 3.0, [0.0])], 0.01)
    assert np.allclose(b.mu, (0.003, 0, 0), atol=1e-15)


def test_fuse_equal_saliency_is_centroid(rng):
    x = rng.uniform(0, 0.01, (10, 3))
    a = fuse_points([(p, 0.7, [0.0]) for p in x], 0.01)
    assert np.abs(a.mu - x.mean(0)).max() < 1e-12


def test_fuse_errors():
    with pytest.raises(EmptyVoxel):
        fuse_points([], 0.01)
    with pytest.raises(MixedVoxel):
        fuse_points([((0, 0, 0), 1.0, [0.0]), ((0.02, 0, 0), 1.0, [0.0])], 0.01)


def test_quantize_matches_fuse_points(rng):
    x, s, f = _cloud(rng, 300)
    A = quantize_frame(x, s, f, 0.2)
    keys = voxel_keys(x, 0.2)
    for i in range(len(A)):
        m = np.all(keys == A.keys[i], axis=1)
        ref = fuse_points(zip(x[m], s[m], f[m]), 0.2)
        assert np.allclose(A.mu[i], ref.mu) and np.allclose(A.features[i], ref.feature)


def test_quantize_counts(rng):
    x, s, f = _cloud(rng, 4096)
    assert len(quantize_frame(x, s, f, 0.1)) < 4096
    assert len(quantize_frame(x, s, f, 1e-6)) == 4096


def test_quantize_permutation_invariant(rng):
    x, s, f = _cloud(rng)
    p = rng.permutation(len(x))
    A, B = quantize_frame(x, s, f, 0.1), quantize_frame(x[p], s[p], f[p], 0.1)
    assert np.array_equal(A.codes, B.codes)
    assert np.abs(A.mu - B.mu).max() < 1e-9 and np.abs(A.features - B.features).max() < 1e-9


def test_mu_inside_voxel(rng):
    x, s, f = _cloud(rng, 2000)
    A = quantize_frame(x, s, f, 0.07)
    lo = A.keys * 0.07
    assert np.all(A.mu >= lo - 1e-12) and np.all(A.mu < lo + 0.07 + 1e-12)


def test_count_non_increasing_in_gamma(rng):
    x, s, f = _cloud(rng, 3000)
    counts = [len(quantize_frame(x, s, f, g)) for g in (0.01, 0.02, 0.05, 0.1, 0.3)]
    assert all(a >= b for a, b in zip(counts, counts[1:]))


def _cam():
    return Camera(100.0, 100.0, 50.0, 50.0, RigidTransform.identity(), 100, 100)


def test_frustum_axis_and_behind():
    A = quantize_frame(np.array([[0, 0, 1.0], [0, 0, -1.0]]), np.ones(2), np.zeros((2, 1)), 0.01)
    store = AnchorStore(0.01, 1, A)
    out = frustum_extract(store, _cam(), 0.15)
    assert len(out) == 1 and out.mu[0, 2] > 0 and len(store) == 1


def test_frustum_infinite_margin_bruteforce(rng):
    x, s, f = rng.normal(size=(400, 3)) * 3, np.ones(400), np.zeros((400, 1))
    A = quantize_frame(x, s, f, 0.01)
    m = frustum_mask(A, _cam(), np.inf, 0.0, np.inf)
    assert np.array_equal(m, A.mu[:, 2] > 0)


def test_frustum_partition(rng):
    x, s, f = _cloud(rng, 800)
    x[:, 2] += 1.0
    store = AnchorStore(0.05, 4, quantize_frame(x, s, f, 0.05))
    before = store.anchors.copy()
    out = frustum_extract(store, _cam(), 0.0)
    assert 0 < len(out) < len(before)
    assert not (set(out.codes.tolist()) & store.key_set())
    merged = merge_sets(store.anchors, out)
    assert np.array_equal(merged.codes, before.codes) and np.array_equal(merged.sum_sx, before.sum_sx)


def test_merge_self_doubles(rng):
    x, s, f = _cloud(rng)
    A = quantize_frame(x, s, f, 0.1)
    store = AnchorStore(0.1, 4, A.copy())
    merge_incremental(store, A)
    assert np.allclose(store.anchors.sum_s, 2 * A.sum_s) and np.allclose(store.anchors.mu, A.mu)


def test_merge_disjoint_counts(rng):
    x, s, f = _cloud(rng)
    A = quantize_frame(x, s, f, 0.1)
    B = quantize_frame(x + 10, s, f, 0.1)
    assert len(merge_sets(A, B)) == len(A) + len(B)


def test_streaming_equals_batch(rng):
    frames = [_cloud(rng, 300) for _ in range(5)]
    store = AnchorStore(0.05, 4)
    for x, s, f in frames:
        merge_incremental(store, quantize_frame(x, s, f, 0.05), len(x))
    batch = quantize_frame(*(np.concatenate(z) for z in zip(*frames)), 0.05)
    assert np.array_equal(store.anchors.codes, batch.codes)
    assert np.abs(store.anchors.mu - batch.mu).max() < 1e-6
    assert store.anchors_alive <= store.points_absorbed


def test_gamma_mismatch(rng):
    x, s, f = _cloud(rng)
    with pytest.raises(VoxelSizeMismatch):
        merge_incremental(AnchorStore(0.1, 4), quantize_frame(x, s, f, 0.2))


def test_store_roundtrip(tmp_path, rng):
    x, s, f = _cloud(rng)
    store = AnchorStore(0.1, 4, quantize_frame(x, s, f, 0.1), 500)
    write_store(store, tmp_path / "s.slna")
    back = read_store(tmp_path / "s.slna")
    assert back.gamma == 0.1 and back.points_absorbed == 500
    assert np.array_equal(back.anchors.codes, store.anchors.codes)
    assert np.array_equal(back.anchors.sum_sf, store.anchors.sum_sf)
    data = (tmp_path / "s.slna").read_bytes()
    (tmp_path / "t.slna").write_bytes(data[:-8])
    with pytest.raises(MalformedFile):
        read_store(tmp_path / "t.slna")


def test_empty_set():
    assert len(AnchorSet.empty(0.1, 3)) == 0
