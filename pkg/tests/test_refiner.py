import numpy as np
import pytest
import torch

from conftest import tiny_params, toy_anchors
from splatfuse.core import GaussianSet
from splatfuse.errors import ConfigMismatch, MalformedFile, MaskShapeMismatch
from splatfuse.gradcheck import check_module_grads
from splatfuse.refiner import (
    HeadConfig,
    HeadParams,
    assemble_refined,
    build_hierarchy,
    fuse_opacity,
    fuse_opacity_and_mask,
    grow_gaussians,
    load_checkpoint,
    mlp_gs,
    mlp_grow,
    read_checkpoint_config,
    refine_and_grow,
    refiner_features,
    refiner_forward,
    save_checkpoint,
)


def _zero(params, *names):
    with torch.no_grad():
        for n in names:
            for p in getattr(params, n).parameters():
                p.zero_()


def test_config_widths():
    cfg = HeadConfig()
    assert cfg.widths == (64, 128, 128, 256, 256)
    assert cfg.grow_width == 3 + 4 + 3 + 1 + 12 + 1
    with pytest.raises(ValueError):
        HeadConfig(h_dim=10, heads=4)


def test_mlp_gs_zero_params(rng):
    p = tiny_params()
    _zero(p, "gs1", "gs2")
    out = mlp_gs(rng.standard_normal((5, 6)), p)
    assert torch.equal(out["quat"], torch.tensor([[1.0, 0, 0, 0]] * 5, dtype=torch.float64))
    assert not out["opacity_logit"].any() and not out["sh"].any()


def test_mlp_gs_unit_quat_and_clamp(rng):
    p = HeadParams(HeadConfig(latent_dim=6, h_dim=8, heads=2), seed=3).double()
    with torch.no_grad():
        p.gs2.weight.mul_(200)
    out = mlp_gs(rng.standard_normal((1000, 6)) * 3, p)
    assert torch.allclose(out["quat"].norm(dim=1), torch.ones(1000, dtype=torch.float64))
    ls = out["log_scale"]
    assert ls.min() >= -10 and ls.max() <= 2


def test_mlp_gs_gradients(rng):
    p = tiny_params()
    f = torch.tensor(rng.standard_normal((7, 6)))
    w = {k: torch.tensor(rng.standard_normal(v.shape)) for k, v in mlp_gs(f, p, 0.1).items()}

    def loss():
        return sum((w[k] * v).sum() for k, v in mlp_gs(f, p, 0.1).items())

    errs = check_module_grads(loss, dict(p.gs1.named_parameters(prefix="gs1")) | dict(p.gs2.named_parameters(prefix="gs2")), per_tensor=None)
    assert max(errs.values()) < 1e-4, errs


def _features(anchors, p):
    attrs = mlp_gs(anchors.features, p, anchors.gamma)
    return refiner_features(anchors.mu, attrs, anchors.sum_s, torch.float64).detach()


def test_refiner_single_anchor(rng):
    p = tiny_params()
    a = toy_anchors(rng, 1)
    x = _features(a, p)
    h = refiner_forward(a.mu, x, a.gamma, p)
    assert h.shape == (1, 8) and torch.isfinite(h).all()


def test_refiner_no_cross_mixing_for_far_anchors(rng):
    """Two anchors far apart never share a patch or a pooled cell at patch size 1."""
    p = tiny_params(patch_size=1)
    a = toy_anchors(rng, 2, spread=0.2)
    a.sum_sx[1] += a.sum_s[1] * 50.0
    x = _features(a, p)
    both = refiner_forward(a.mu, x, a.gamma, p)
    alone = refiner_forward(a.mu[:1], x[:1], a.gamma, p)
    assert torch.allclose(both[0], alone[0], atol=1e-12)


def test_refiner_permutation_equivariant(rng):
    p = tiny_params()
    a = toy_anchors(rng, 40)
    x = _features(a, p)
    h = refiner_forward(a.mu, x, a.gamma, p)
    perm = rng.permutation(40)
    hp = refiner_forward(a.mu[perm], x[perm], a.gamma, p)
    assert (hp - h[perm]).abs().max() < 1e-9


def test_refiner_gradients(rng):
    p = tiny_params()
    a = toy_anchors(rng, 20)
    x = _features(a, p).requires_grad_()
    hier = build_hierarchy(a.mu, a.gamma, p.config)
    w = torch.tensor(rng.standard_normal((20, 8)))
    tensors = {"features": x}
    for mod in ("embed", "enc", "down", "up", "dec"):
        tensors |= {f"{mod}.{n}": t for n, t in getattr(p, mod).named_parameters()}

    def loss():
        return (w * refiner_forward(a.mu, x, a.gamma, p, hier)).sum()

    errs = check_module_grads(loss, tensors, per_tensor=4)
    assert max(errs.values()) < 1e-4, max(errs.items(), key=lambda kv: kv[1])


def test_mlp_grow_zero_and_shapes(rng):
    for m in (1, 4, 8):
        p = tiny_params(m_grow=m)
        r = mlp_grow(torch.tensor(rng.standard_normal((5, 8))), p, 0.1)
        assert r["d_mu"].shape == (5, m, 3) and r["d_sh"].shape == (5, m, 4, 3) and r["d_s"].shape == (5, m)
    _zero(p, "grow1", "grow2")
    r = mlp_grow(torch.tensor(rng.standard_normal((5, 8))), p, 0.1)
    assert all(not v.any() for v in r.values())


def test_mlp_grow_offset_bound(rng):
    for seed in range(5):
        p = tiny_params(seed=seed)
        with torch.no_grad():
            p.grow2.weight.mul_(1000)
        r = mlp_grow(torch.tensor(rng.standard_normal((50, 8)) * 10), p, 0.07)
        assert r["d_mu"].abs().max() <= 0.07


def test_mlp_grow_gradients(rng):
    p = tiny_params()
    h = torch.tensor(rng.standard_normal((6, 8)), requires_grad=True)
    w = {k: torch.tensor(rng.standard_normal(v.shape)) for k, v in mlp_grow(h, p, 0.1).items()}

    def loss():
        return sum((w[k] * v).sum() for k, v in mlp_grow(h, p, 0.1).items())

    tensors = {"h": h} | {f"grow1.{n}": t for n, t in p.grow1.named_parameters()} | {f"grow2.{n}": t for n, t in p.grow2.named_parameters()}
    errs = check_module_grads(loss, tensors, per_tensor=12)
    assert max(errs.values()) < 1e-4, errs


def test_fuse_opacity_cases():
    assert fuse_opacity(0.3, 0.1, 0.0, 0.0) == pytest.approx(0.4)
    assert fuse_opacity(0.3, 0.0, 50.0, 0.0) == pytest.approx(0.6)
    a, keep = fuse_opacity_and_mask(0.5, 0.0, 0.0, 0.0, 0.5)
    assert a == 0.5 and not keep
    assert fuse_opacity(0.9, 0.0, 5.0, 0.0) == 1.0
    assert fuse_opacity(0.1, -0.5, 0.0, 0.0) == 0.0
    with pytest.raises(ValueError):
        fuse_opacity_and_mask(0.5, 0, 0, 0, 1.0)


def test_fuse_opacity_tanh_bound(rng):
    a, d = rng.uniform(0, 1, 1000), rng.uniform(-0.2, 0.2, 1000)
    raw = (a + d) * (1 + np.tanh(rng.normal(size=1000) * 3))
    pos = (a + d) >= 0
    assert np.all(raw[pos] <= 2 * (a + d)[pos] + 1e-15)
    fused = fuse_opacity(a, d, rng.normal(size=1000), 0.0)
    assert fused.min() >= 0 and fused.max() <= 1


def _zero_residual_grow(rng, k=6, m=3):
    p = tiny_params(m_grow=m)
    a = toy_anchors(rng, k)
    attrs = mlp_gs(a.features, p, a.gamma)
    zeros = mlp_grow(torch.zeros(k, 8, dtype=torch.float64), p, a.gamma)
    zeros = {n: torch.zeros_like(v) for n, v in zeros.items()}
    return a, attrs, grow_gaussians(a.mu, attrs, zeros, np.zeros(k))


def test_assemble_duplicates_and_prunes(rng):
    a, attrs, grown = _zero_residual_grow(rng)
    g = assemble_refined(grown, np.ones((6, 3), bool))
    assert len(g) == 18
    assert np.allclose(g.mu.reshape(6, 3, 3), a.mu[:, None])
    assert np.allclose(g.quat.reshape(6, 3, 4), attrs["quat"].detach().numpy()[:, None])
    assert np.allclose(g.opacity.reshape(6, 3), torch.sigmoid(attrs["opacity_logit"]).detach().numpy()[:, None])
    assert len(assemble_refined(grown, np.zeros((6, 3), bool))) == 0
    with pytest.raises(MaskShapeMismatch):
        assemble_refined(grown, np.ones(18, bool))


def test_count_identity_and_beta_monotone(rng):
    p = tiny_params(m_grow=4, seed=2)
    with torch.no_grad():
        p.grow2.weight.mul_(30)
    a = toy_anchors(rng, 30)
    prev = None
    for beta in (0.0, 0.25, 0.5, 0.8):
        r = refine_and_grow(a, p, beta)
        assert len(r.gaussians) == int((r.alpha_r > beta).sum())
        if prev is not None:
            assert not np.any(r.keep & ~prev.keep)
            assert len(r.gaussians) <= len(prev.gaussians)
        prev = r


def test_refine_zero_grow_no_pruning(rng):
    p = tiny_params(m_grow=4)
    _zero(p, "grow1", "grow2")
    a = toy_anchors(rng, 10)
    r = refine_and_grow(a, p, 0.0)
    assert len(r.gaussians) == 40
    assert np.array_equal(r.anchors.sum_s, a.sum_s)
    assert np.allclose(r.anchors.decoded["saliency"], a.sum_s)


def test_refine_deterministic(rng):
    p = tiny_params()
    a = toy_anchors(rng, 25)
    g1, g2 = refine_and_grow(a, p).gaussians, refine_and_grow(a, p).gaussians
    assert np.array_equal(g1.mu, g2.mu) and np.array_equal(g1.sh, g2.sh)


def test_refine_empty():
    p = tiny_params()
    from splatfuse.quantize import AnchorSet

    r = refine_and_grow(AnchorSet.empty(0.1, 6), p)
    assert isinstance(r.gaussians, GaussianSet) and len(r.gaussians) == 0


def test_checkpoint_roundtrip(tmp_path):
    p = HeadParams(HeadConfig(latent_dim=6, h_dim=8, heads=2), seed=4)
    save_checkpoint(p, tmp_path / "w.slnw")
    assert read_checkpoint_config(tmp_path / "w.slnw").h_dim == 8
    q = load_checkpoint(tmp_path / "w.slnw")
    for (n, a), (_, b) in zip(p.state_dict().items(), q.state_dict().items()):
        assert torch.equal(a, b), n
    with pytest.raises(ConfigMismatch):
        load_checkpoint(tmp_path / "w.slnw", expect=HeadConfig(latent_dim=6, h_dim=16, heads=2))
    data = (tmp_path / "w.slnw").read_bytes()
    (tmp_path / "t.slnw").write_bytes(data[:-4])
    with pytest.raises(MalformedFile):
        load_checkpoint(tmp_path / "t.slnw")
