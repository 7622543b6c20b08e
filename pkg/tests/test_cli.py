import json

import numpy as np
import pytest

from splatfuse.cli import main
from splatfuse.ingest import Manifest, load_depth
from splatfuse.pipeline import read_census
from splatfuse.ply import import_ply
from splatfuse.quantize import read_store
from splatfuse.render import read_ppm
from splatfuse.train import read_loss_log

SPEC = {
    "image_size": [32, 24],
    "focal": 30.0,
    "seed": 3,
    "trajectory": [
        {"eye": [0.0, -0.4, -1.0], "target": [0.0, 0.0, 0.4]},
        {"eye": [0.15, -0.4, -1.0], "target": [0.0, 0.0, 0.4]},
        {"eye": [-0.15, -0.4, -1.0], "target": [0.0, 0.0, 0.4]},
        {"eye": [0.3, -0.4, -0.9], "target": [0.0, 0.0, 0.4]},
    ],
    "primitives": [
        {"type": "plane", "center": [0, 0.3, 0], "normal": [0, -1, 0], "u_axis": [1, 0, 0], "half_size": [1.5, 1.5],
         "pattern": {"type": "sine", "base": [0.6, 0.5, 0.4], "amp": [0.15, 0.1, 0.1], "freq": [[2.0, 0.0, 1.5]]}},
        {"type": "sphere", "center": [0.1, 0.1, 0.4], "radius": 0.2,
         "pattern": {"type": "sine", "base": [0.3, 0.6, 0.4], "amp": [0.1, 0.1, 0.1], "freq": [[2.0, 3.0, 1.0]]}},
    ],
}


@pytest.fixture(scope="module")
def scene(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "spec.json").write_text(json.dumps(SPEC))
    assert main(["synth", str(root / "spec.json"), str(root / "frames")]) == 0
    return root


@pytest.fixture(scope="module")
def recon(scene):
    out = scene / "rec"
    assert main(["reconstruct", str(scene / "frames/manifest.json"), "--out", str(out), "--gamma", "0.02"]) == 0
    return out


def test_synth_outputs(scene, tmp_path):
    man = Manifest.load(scene / "frames/manifest.json")
    assert len(man) == 4 and all((scene / "frames" / e.path).exists() for e in man.entries)
    assert main(["synth", str(scene / "spec.json"), str(tmp_path / "again")]) == 0
    for e in man.entries:
        assert (tmp_path / "again" / e.path).read_bytes() == (scene / "frames" / e.path).read_bytes()


def test_synth_bad_spec(tmp_path):
    (tmp_path / "s.json").write_text(json.dumps({**SPEC, "trajectory": []}))
    assert main(["synth", str(tmp_path / "s.json"), str(tmp_path / "o")]) == 2
    assert main(["synth", "preset:nope", str(tmp_path / "o")]) == 2
    assert main(["synth", str(tmp_path / "missing.json"), str(tmp_path / "o")]) == 2


def test_reconstruct_outputs(recon):
    g = import_ply(recon / "gaussians.ply")
    store = read_store(recon / "store.slna")
    assert len(g) > 0 and store.gamma == 0.02
    assert len(read_census(recon / "census.csv")) == 4


def test_reconstruct_gamma_and_beta_trends(scene, recon, tmp_path):
    man = str(scene / "frames/manifest.json")
    ckpt = str(recon / "heads.slnw")
    counts = []
    for gamma in ("0.005", "0.01", "0.02"):
        out = tmp_path / gamma
        assert main(["reconstruct", man, "--out", str(out), "--gamma", gamma, "--checkpoint", ckpt, "--beta", "0.0"]) == 0
        counts.append(sum(int(r["grown_gaussians"]) for r in read_census(out / "census.csv")))
    assert counts[0] > counts[1] > counts[2]
    n = {}
    for beta in ("0.5", "0.8"):
        out = tmp_path / f"b{beta}"
        assert main(["reconstruct", man, "--out", str(out), "--gamma", "0.02", "--checkpoint", ckpt, "--beta", beta]) == 0
        n[beta] = len(import_ply(out / "gaussians.ply"))
    assert n["0.8"] < n["0.5"]


def test_reconstruct_config_mismatch(scene, recon, tmp_path):
    man = str(scene / "frames/manifest.json")
    rc = main(["reconstruct", man, "--out", str(tmp_path / "x"), "--checkpoint", str(recon / "heads.slnw"), "--sh-degree", "2"])
    assert rc == 3


def test_render_and_eval(scene, recon, tmp_path):
    man = str(scene / "frames/manifest.json")
    args = ["render", "--ply", str(recon / "gaussians.ply"), "--camera", man]
    assert main(args + ["--out", str(tmp_path / "r1")]) == 0
    assert main(args + ["--out", str(tmp_path / "r2")]) == 0
    a = (tmp_path / "r1/frame_0000.ppm").read_bytes()
    assert a == (tmp_path / "r2/frame_0000.ppm").read_bytes()
    assert load_depth(tmp_path / "r1/frame_0000.slnd").shape == (24, 32)
    # store path renders the same camera set
    assert main(["render", "--store", str(recon / "store.slna"), "--checkpoint", str(recon / "heads.slnw"),
                 "--camera", man, "--out", str(tmp_path / "r3")]) == 0
    assert read_ppm(tmp_path / "r3/frame_0001.ppm").shape == (24, 32, 3)
    assert main(["eval", str(tmp_path / "r1"), str(scene / "frames"), "--out", str(tmp_path / "e.csv")]) == 0
    rows = (tmp_path / "e.csv").read_text().splitlines()
    assert rows[0].startswith("name,psnr,ssim,abs_rel,delta1") and rows[-1].startswith("mean")
    assert main(["eval", str(scene / "frames"), str(scene / "frames"), "--out", str(tmp_path / "id.csv")]) == 0
    ident = (tmp_path / "id.csv").read_text().splitlines()[1].split(",")
    assert float(ident[1]) == 99.0 and float(ident[2]) == pytest.approx(1.0)
    assert float(ident[3]) == 0.0 and float(ident[4]) == 1.0


def test_eval_unpaired(tmp_path, scene):
    (tmp_path / "r").mkdir()
    (tmp_path / "r/zzz.ppm").write_bytes((scene / "frames/frame_0000.ppm").read_bytes())
    assert main(["eval", str(tmp_path / "r"), str(scene / "frames"), "--out", str(tmp_path / "e.csv")]) == 2


def test_render_missing_file(tmp_path, scene):
    rc = main(["render", "--ply", str(tmp_path / "none.ply"), "--camera", str(scene / "frames/manifest.json"), "--out", str(tmp_path)])
    assert rc == 2


def test_render_empty_store_is_black(tmp_path, scene):
    from splatfuse.quantize import AnchorStore, write_store

    write_store(AnchorStore(0.02, 32), tmp_path / "e.slna")
    assert main(["render", "--store", str(tmp_path / "e.slna"), "--camera", str(scene / "frames/frame_0000.slnf"),
                 "--out", str(tmp_path / "o")]) == 0
    assert not read_ppm(tmp_path / "o/frame_0000.ppm").any()


def test_export_ply(recon, tmp_path):
    assert main(["export-ply", "--ply", str(recon / "gaussians.ply"), "--out", str(tmp_path / "a.ply"), "--ascii"]) == 0
    a, b = import_ply(recon / "gaussians.ply"), import_ply(tmp_path / "a.ply")
    assert np.abs(a.mu - b.mu).max() < 1e-6
    assert main(["export-ply", "--store", str(recon / "store.slna"), "--checkpoint", str(recon / "heads.slnw"),
                 "--out", str(tmp_path / "s.ply")]) == 0
    assert len(import_ply(tmp_path / "s.ply")) > 0


def test_train_smoke_and_determinism(scene, tmp_path):
    cfg = {"iterations": 50, "n_views": 4, "max_context": 3, "warmup": 2, "lr": 1e-3, "gamma": 0.05,
           "head": {"h_dim": 8, "heads": 2}}
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    man = str(scene / "frames/manifest.json")
    for name in ("t1", "t2"):
        assert main(["train", man, "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / name)]) == 0
    l1, l2 = read_loss_log(tmp_path / "t1/loss.csv"), read_loss_log(tmp_path / "t2/loss.csv")
    assert len(l1) == 50
    assert [{k: v for k, v in r.items() if k != "seconds"} for r in l1] == [{k: v for k, v in r.items() if k != "seconds"} for r in l2]
    assert (tmp_path / "t1/heads.slnw").read_bytes() == (tmp_path / "t2/heads.slnw").read_bytes()


def test_train_bad_config(scene, tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"nonsense": 1}))
    assert main(["train", str(scene / "frames/manifest.json"), "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / "o")]) == 2


def test_threads_env(monkeypatch, scene, tmp_path):
    monkeypatch.setenv("SALON_THREADS", "x")
    assert main(["synth", str(scene / "spec.json"), str(tmp_path / "o")]) == 2


def test_bad_arguments():
    assert main(["reconstruct"]) == 2
    assert main(["--help"]) == 0
