import json

import numpy as np
import pytest

from maskfuse import mask_ops
from maskfuse.cli import image_features, main, region_agreement
from maskfuse.pnm import read_image, read_mask, write_image, write_mask


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, (json.loads(out) if code == 0 else json.loads(err))


def test_dataset_is_seeded(tmp_path, capsys):
    code, a = run(capsys, "dataset", "--out", tmp_path / "a", "--n", 5, "--seed", 4)
    assert code == 0 and a["written"] == 5
    _, b = run(capsys, "dataset", "--out", tmp_path / "b", "--n", 5, "--seed", 4)
    assert a["manifest_sha256"] == b["manifest_sha256"]
    _, c = run(capsys, "dataset", "--out", tmp_path / "c", "--n", 5, "--seed", 5)
    assert c["manifest_sha256"] != a["manifest_sha256"]


def test_dataset_defaults_and_config_precedence(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"out": str(tmp_path / "d"), "n": 7, "seed": 1}))
    code, res = run(capsys, "dataset", "--config", cfg, "--n", 3)
    assert code == 0 and res["written"] == 3
    code, res = run(capsys, "dataset", "--out", tmp_path / "e")
    assert code == 0 and res["written"] == 100


def test_dataset_rejects_bad_size_without_writing(tmp_path, capsys):
    code, err = run(capsys, "dataset", "--out", tmp_path / "x", "--size", 10, "--patch-size", 4)
    assert code == 2 and err["error"] == "ConfigurationError"
    assert not (tmp_path / "x").exists()


def test_mask_prep_examples(tmp_path, capsys):
    write_mask(tmp_path / "ones.pgm", np.ones((32, 32), np.uint8))
    code, _ = run(capsys, "mask-prep", "--mask", tmp_path / "ones.pgm", "--out", tmp_path / "o1")
    assert code == 0
    assert read_mask(tmp_path / "o1" / "patch.pgm").all()
    assert read_mask(tmp_path / "o1" / "latent.pgm").shape == (4, 4)

    rng = np.random.default_rng(0)
    m = (rng.random((32, 32)) < 0.5).astype(np.uint8)
    write_mask(tmp_path / "r.pgm", m)
    for tau in (0, 100, 128, 256):
        run(capsys, "mask-prep", "--mask", tmp_path / "r.pgm", "--out", tmp_path / f"t{tau}", "--tau", tau)
        np.testing.assert_array_equal(read_mask(tmp_path / f"t{tau}" / "patch.pgm"),
                                      mask_ops.rebinarize_patches(m, 16, tau))
    # patch-uniform input is a fixed point
    run(capsys, "mask-prep", "--mask", tmp_path / "t128" / "patch.pgm", "--out", tmp_path / "again", "--tau", 128)
    assert (tmp_path / "again" / "patch.pgm").read_bytes() == (tmp_path / "t128" / "patch.pgm").read_bytes()


def test_mask_prep_parse_error(tmp_path, capsys):
    (tmp_path / "bad.pgm").write_bytes(b"P5\n4 4\n255\n\0\0")
    code, err = run(capsys, "mask-prep", "--mask", tmp_path / "bad.pgm", "--out", tmp_path / "o")
    assert code == 3 and err["error"] == "ParseError" and err["offset"] == 13
    assert not (tmp_path / "o").exists()


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    assert main(["dataset", "--out", str(root / "data"), "--n", "20", "--size", "8"]) == 0
    cfg = {"model": {"image_size": 8, "width": 8, "key_dim": 8, "proj_size": 8, "n_text_tokens": 2},
           "T": 100, "batch_size": 4, "lr": 1e-3}
    (root / "train.json").write_text(json.dumps(cfg))
    code = main(["train", "--config", str(root / "train.json"), "--data", str(root / "data"),
                 "--out", str(root / "run"), "--steps", "6", "--save-every", "3"])
    assert code == 0
    return root


def test_train_outputs_and_resume(trained, capsys):
    rows = (trained / "run" / "loss.csv").read_text().splitlines()
    assert rows[0] == "step,loss,lr" and len(rows) == 7
    code, res = run(capsys, "train", "--config", trained / "train.json", "--data", trained / "data",
                    "--out", trained / "resumed", "--steps", 2, "--resume", trained / "run" / "checkpoint.bin")
    assert code == 0 and res["start_step"] == 6 and res["step"] == 8


def test_train_requires_dataset(tmp_path, capsys):
    code, err = run(capsys, "train", "--data", tmp_path / "nothing", "--out", tmp_path / "o")
    assert code == 2
    assert not (tmp_path / "o").exists()


def test_sample_is_reproducible(trained, tmp_path, capsys):
    write_image(tmp_path / "ref.ppm", np.zeros((8, 8, 3)))
    prompts = [
        {"text_color": [1, 0, 0], "image_color": [0, 0, 1], "mask": "left-half"},
        {"text_color": [0, 1, 0], "image": "ref.ppm", "mask": "full"},
    ]
    (tmp_path / "prompts.json").write_text(json.dumps(prompts))
    ck = trained / "run" / "checkpoint.bin"
    outs = {}
    for name, scale in (("a", 7.5), ("b", 7.5), ("c", 0.0)):
        code, res = run(capsys, "sample", "--checkpoint", ck, "--prompts", tmp_path / "prompts.json",
                        "--out", tmp_path / name, "--seed", 3, "--scale", scale, "--ddim-steps", 5)
        assert code == 0 and res["written"] == 2
        outs[name] = (tmp_path / name / "sample_00000.ppm").read_bytes()
    assert outs["a"] == outs["b"] and outs["a"] != outs["c"]
    side = json.loads((tmp_path / "a" / "prompts.json").read_text())
    assert side["seed"] == 3 and side["samples"][0]["image_color"] == [0, 0, 1]
    assert read_image(tmp_path / "a" / "sample_00001.ppm").shape == (8, 8, 3)


def test_sample_checkpoint_errors(trained, tmp_path, capsys):
    (tmp_path / "junk.bin").write_bytes(b"garbage!" + bytes(16))
    (tmp_path / "p.json").write_text(json.dumps([{"text_color": [0, 0, 0], "image_color": [1, 1, 1]}]))
    code, err = run(capsys, "sample", "--checkpoint", tmp_path / "junk.bin", "--prompts", tmp_path / "p.json",
                    "--out", tmp_path / "o")
    assert code == 4 and err["error"] == "CheckpointError"
    code, _ = run(capsys, "sample", "--checkpoint", trained / "run" / "checkpoint.bin",
                  "--prompts", tmp_path / "p.json", "--out", tmp_path / "o", "--ddim-steps", 1000)
    assert code == 2 and not (tmp_path / "o").exists()


def test_eval_report(tmp_path, capsys):
    rng = np.random.default_rng(1)
    for d in ("gen", "ref", "far"):
        (tmp_path / d).mkdir()
    for i in range(6):
        img = rng.uniform(-1, 0, size=(8, 8, 3))
        write_image(tmp_path / "gen" / f"s{i}.ppm", img)
        write_image(tmp_path / "ref" / f"s{i}.ppm", img)
        write_image(tmp_path / "far" / f"s{i}.ppm", rng.uniform(0.5, 1, size=(8, 8, 3)))
        write_mask(tmp_path / "gen" / f"mask_{i:05d}.pgm", np.ones((8, 8), np.uint8))
    (tmp_path / "probs.json").write_text(json.dumps(np.eye(3).tolist()))
    (tmp_path / "scores.json").write_text(json.dumps([1, 2, 3, 4]))
    code, rep = run(capsys, "eval", "--gen", tmp_path / "gen", "--ref", tmp_path / "ref", "--masks", tmp_path / "gen",
                    "--probs", tmp_path / "probs.json", "--scores", tmp_path / "scores.json",
                    "--out", tmp_path / "report.json")
    assert code == 0
    assert rep["frechet_distance"] <= 1e-6
    assert abs(rep["inception_score"] - 3.0) <= 1e-9 and rep["mean_of_score"] == 2.5
    assert rep["region_color_agreement"] <= 1e-12
    assert (tmp_path / "report.csv").read_text().startswith("metric,value")
    for kind in ("pixel", "random-projection"):
        code, rep = run(capsys, "eval", "--gen", tmp_path / "gen", "--ref", tmp_path / "far", "--features", kind,
                        "--out", tmp_path / f"{kind}.json")
        assert code == 0 and rep["frechet_distance"] > 0.1


def test_eval_empty_dirs(tmp_path, capsys):
    (tmp_path / "g").mkdir()
    code, err = run(capsys, "eval", "--gen", tmp_path / "g", "--ref", tmp_path / "g", "--out", tmp_path / "r.json")
    assert code == 2 and not (tmp_path / "r.json").exists()


def test_region_agreement_oracle():
    img = np.full((2, 4, 4, 3), -1.0)
    img[0, :, :2] = 1.0  # left half white in the first image
    masks = [np.zeros((4, 4), np.uint8)] * 2
    masks[0] = masks[0].copy()
    masks[0][:, :2] = 1
    masks[1] = np.ones((4, 4), np.uint8)
    # first: region mean 1 vs target 0.5 -> 0.5; second: region mean 0 vs target 0.25 -> 0.25
    got = region_agreement(img, masks, [np.full(3, 0.5), np.full(3, 0.25)])
    assert got == pytest.approx(0.375, abs=1e-15)


def test_pixel_features_are_block_means():
    img = np.arange(8 * 8 * 3, dtype=float).reshape(1, 8, 8, 3)
    f = image_features(img, "pixel")
    assert f.shape == (1, 48)
    np.testing.assert_allclose(f[0, :3], img[0, :2, :2].reshape(-1, 3).mean(axis=0))


def test_bad_thread_env(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("MASKFUSE_THREADS", "zero")
    code, err = run(capsys, "dataset", "--out", tmp_path / "o", "--n", 2)
    assert code == 2 and not (tmp_path / "o").exists()
    monkeypatch.setenv("MASKFUSE_THREADS", "2")
    code, _ = run(capsys, "dataset", "--out", tmp_path / "o", "--n", 2)
    assert code == 0
