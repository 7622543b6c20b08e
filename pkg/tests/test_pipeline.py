import numpy as np
import pytest

from splatfuse.ingest import desk_scene, plane_scene, synth_sequence
from splatfuse.pipeline import (
    CENSUS_COLUMNS,
    PipelineConfig,
    PipelineState,
    process_frame,
    read_census,
    reconstruct_sequence,
    write_census,
)
from splatfuse.quantize import quantize_frame
from splatfuse.refiner import HeadConfig, HeadParams


@pytest.fixture(scope="module")
def params():
    return HeadParams(HeadConfig(h_dim=8, heads=2), seed=0)


@pytest.fixture(scope="module")
def frames():
    return synth_sequence(desk_scene(n_views=4, size=(40, 30), focal=34.0))[0]


def test_config_validation():
    for bad in ({"gamma": 0}, {"beta": 1.0}, {"margin": -1}):
        with pytest.raises(ValueError):
            PipelineConfig(**bad)


def test_first_frame(params, frames):
    st = PipelineState(params, PipelineConfig(gamma=0.02))
    st, g = process_frame(st, frames[0])
    assert len(st.store) == len(quantize_frame(*frames[0].points(), 0.02))
    row = st.census[0]
    assert row.new_anchors == len(st.store) and row.extracted == 0
    assert row.grown_gaussians == len(g)
    assert row.grown_gaussians + row.pruned == params.config.m_grow * row.new_anchors


def test_same_frame_twice(params, frames):
    st = PipelineState(params, PipelineConfig(gamma=0.02))
    process_frame(st, frames[0])
    before = st.store.anchors.copy()
    process_frame(st, frames[0])
    assert np.array_equal(st.store.anchors.codes, before.codes)
    assert np.allclose(st.store.anchors.sum_s, 2 * before.sum_s)
    assert np.allclose(st.store.anchors.mu, before.mu)


def test_streaming_matches_batch_and_grows(params, frames):
    cfg = PipelineConfig(gamma=0.02, margin=np.inf)
    st = PipelineState(params, cfg)
    sizes = []
    for fr in frames:
        process_frame(st, fr)
        sizes.append(len(st.store))
    assert all(b >= a for a, b in zip(sizes, sizes[1:]))
    pts = [f.points() for f in frames]
    batch = quantize_frame(*(np.concatenate(z) for z in zip(*pts)), 0.02)
    assert np.array_equal(st.store.anchors.codes, batch.codes)
    assert np.abs(st.store.anchors.mu - batch.mu).max() < 1e-6
    assert np.abs(st.store.anchors.features - batch.features).max() < 1e-6
    for row in st.census:
        assert (row.grown_gaussians + row.pruned) % params.config.m_grow == 0


def test_one_frame_reconstruction_matches_process_frame(params, frames):
    cfg = PipelineConfig(gamma=0.02)
    rec = reconstruct_sequence(frames[:1], params, cfg)
    _, g = process_frame(PipelineState(params, cfg), frames[0])
    order_a, order_b = np.lexsort(rec.gaussians.mu.T), np.lexsort(g.mu.T)
    assert len(rec.gaussians) == len(g)
    assert np.allclose(rec.gaussians.mu[order_a], g.mu[order_b])


def test_overlapping_plane_redundancy(params):
    frames, _ = synth_sequence(plane_scene(n_views=10, size=(64, 64)))
    rec = reconstruct_sequence(frames, params, PipelineConfig(gamma=0.04))
    pixels = sum(int(f.valid.sum()) for f in frames)
    assert len(rec.state.store) < 0.5 * pixels


def test_census_csv(tmp_path, params, frames):
    rec = reconstruct_sequence(frames[:2], params, PipelineConfig(gamma=0.02))
    write_census(rec.census, tmp_path / "c.csv")
    rows = read_census(tmp_path / "c.csv")
    assert len(rows) == 2 and tuple(rows[0]) == CENSUS_COLUMNS


def test_store_gamma_must_match(params):
    from splatfuse.quantize import AnchorStore

    with pytest.raises(ValueError):
        PipelineState(params, PipelineConfig(gamma=0.02), AnchorStore(0.01, 32))


def test_empty_sequence(params):
    with pytest.raises(ValueError):
        reconstruct_sequence([], params)
