import csv
import io
import json

import numpy as np
import pytest

from himamba.cli import main
from himamba.config import preset
from himamba.data import synthetic_textures
from himamba.imaging import load_png, rgb_to_y, save_png
from himamba.inference import run_eval
from himamba.metrics import psnr
from himamba.network import count_flops, count_params, init_weights, param_shapes, ModelWeights
from himamba.weightfile import load_weights, save_weights


@pytest.fixture
def hr_dir(tmp_path):
    d = tmp_path / "hr"
    d.mkdir()
    for i, img in enumerate(synthetic_textures(2, 24, seed=3)):
        save_png(img, d / f"img{i}.png")
    return d


@pytest.fixture
def small_weights(tmp_path):
    cfg = preset("tiny", groups=1, blocks_per_group=1)
    path = tmp_path / "w.himb"
    save_weights(init_weights(cfg, seed=0), path)
    return path


def test_count(capsys, tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({"preset": "tiny", "N2": 1}))
    assert main(["count", "--config", str(cfg_path), "--input-size", "32x48"]) == 0
    out = capsys.readouterr().out.split()
    cfg = preset("tiny", groups=1)
    assert out == ["params", str(count_params(cfg)), "flops@32x48", str(count_flops(cfg, 32, 48))]


def test_count_preset_name(capsys):
    assert main(["count", "--config", "tiny"]) == 0
    assert f"params {count_params(preset('tiny'))}" in capsys.readouterr().out


def test_count_bad_size():
    with pytest.raises(SystemExit):
        main(["count", "--config", "tiny", "--input-size", "32by48"])


def test_verify_filter(capsys):
    assert main(["verify", "--filter", "metrics"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 1 and lines[0].startswith("[PASS] metrics")


def test_verify_unknown_filter():
    assert main(["verify", "--filter", "no-such-check"]) == 2


def test_verify_reports_failure(monkeypatch, capsys):
    import himamba.verify as V
    monkeypatch.setitem(V.CHECKS, "always_fails", lambda: (False, "forced"))
    assert main(["verify", "--filter", "always_fails"]) == 1
    assert "[FAIL] always_fails" in capsys.readouterr().out


def test_sr(tmp_path, small_weights):
    src = tmp_path / "in.png"
    save_png(synthetic_textures(1, 12, seed=1)[0][:, :, :10], src)
    for flag in ([], ["--self-ensemble"]):
        out = tmp_path / "out.png"
        assert main(["sr", "--weights", str(small_weights), "--input", str(src), "--output", str(out)] + flag) == 0
        assert load_png(out).shape == (3, 24, 20)


def test_sr_missing_input(tmp_path, small_weights, capsys):
    rc = main(["sr", "--weights", str(small_weights), "--input", str(tmp_path / "nope.png"),
               "--output", str(tmp_path / "o.png")])
    assert rc == 1
    assert "error" in capsys.readouterr().err


def test_eval_csv(tmp_path, hr_dir, small_weights, capsys):
    csv_path = tmp_path / "m.csv"
    assert main(["eval", "--weights", str(small_weights), "--hr-dir", str(hr_dir), "--scale", "2",
                 "--csv", str(csv_path)]) == 0
    rows = list(csv.reader(io.StringIO(csv_path.read_text())))
    assert rows[0] == ["image", "psnr", "ssim", "psnr_bicubic", "ssim_bicubic"]
    assert [r[0] for r in rows[1:]] == ["img0.png", "img1.png", "mean"]
    assert capsys.readouterr().out.replace("\r\n", "\n") == csv_path.read_text().replace("\r\n", "\n")


def test_eval_zero_model_scores_black_image(hr_dir):
    cfg = preset("tiny", groups=0)
    zero = ModelWeights(cfg, {k: np.zeros(s) for k, s in param_shapes(cfg).items()})
    rows = run_eval(zero, str(hr_dir), 2)
    for r in rows:
        hr = load_png(hr_dir / r.name)
        want = psnr(rgb_to_y(np.zeros_like(hr)), rgb_to_y(hr), 2)
        assert r.psnr == pytest.approx(want, abs=1e-12)


def test_eval_identity_path_caps(hr_dir):
    from himamba.inference import evaluate_image
    for name in ("img0.png", "img1.png"):
        hr = load_png(hr_dir / name)
        p, s, _, _ = evaluate_image(hr, lambda lr: hr, 2)
        assert p == 100.0 and s == 1.0


def test_eval_empty_dir(tmp_path, small_weights):
    empty = tmp_path / "empty"
    empty.mkdir()
    assert main(["eval", "--weights", str(small_weights), "--hr-dir", str(empty), "--scale", "2"]) == 1


def test_eval_skips_unreadable(tmp_path, hr_dir, small_weights):
    (hr_dir / "broken.png").write_bytes(b"garbage")
    with pytest.warns(UserWarning):
        rows = run_eval(load_weights(small_weights), str(hr_dir), 2)
    assert [r.name for r in rows] == ["img0.png", "img1.png"]


def test_eval_scale_mismatch(hr_dir, small_weights):
    assert main(["eval", "--weights", str(small_weights), "--hr-dir", str(hr_dir), "--scale", "3"]) == 1


def test_train(tmp_path, hr_dir):
    out = tmp_path / "trained.himb"
    rc = main(["train", "--config", "tiny", "--data", str(hr_dir), "--iters", "3", "--seed", "1",
               "--out", str(out), "--batch-size", "2", "--patch-size", "8"])
    assert rc == 0
    w = load_weights(out)
    assert w.config == preset("tiny")
    lines = (tmp_path / "trained.himb.loss.csv").read_text().splitlines()
    assert lines[0] == "iteration,lr,loss" and len(lines) == 4
