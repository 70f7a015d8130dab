import hashlib
import json

import pytest
import yaml

import scsd.estimator
from scsd.cli import cmd_viz, main
from scsd.pipeline.train import NonFiniteLossError
from scsd.tdst import low_freq_mask

SMALL_MODEL = {"n_queries": 8, "d_model": 32, "d_emb": 16, "d_style": 16, "channels": [8, 16, 32, 32]}


def _digest(root):
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(root.rglob("*")) if p.is_file()}


def _config(tmp_path, steps=2, interval=1, **ablation):
    cfg = {
        "dataset": {"root": str(tmp_path / "data"), "n_per_domain": 2, "n_test_per_domain": 2},
        "model": SMALL_MODEL,
        "train": {"steps": steps, "batch": 2, "eval_interval": interval},
        "ablation": ablation,
    }
    path = tmp_path / f"cfg_{steps}_{len(ablation)}.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return str(path)


@pytest.fixture
def trained(tmp_path):
    cfg = _config(tmp_path)
    assert main(["generate", "--config", cfg, "--out", str(tmp_path / "data")]) == 0
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "run")]) == 0
    return tmp_path


def test_generate_default_and_deterministic(tmp_path):
    out = tmp_path / "d"
    assert main(["generate", "--out", str(out)]) == 0
    assert sorted(p.name for p in out.iterdir() if p.is_dir()) == ["clear", "dusk", "snow"]
    assert (out / "manifest.json").exists()
    first = _digest(out)
    assert main(["generate", "--out", str(out)]) == 0
    assert _digest(out) == first


def test_generate_missing_domain_is_config_error(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text(yaml.safe_dump({"dataset": {"target_domains": ["fog"]}}))
    assert main(["generate", "--config", str(bad), "--out", str(tmp_path / "d")]) == 2
    assert "dataset.target_domains" in capsys.readouterr().err


def test_train_writes_artifacts(trained):
    run = trained / "run"
    assert {"checkpoint.pt", "metrics.jsonl", "config.yaml"} <= {p.name for p in run.iterdir()}
    lines = [json.loads(x) for x in (run / "metrics.jsonl").read_text().splitlines()]
    steps = [r for r in lines if "L_cls" in r]
    assert [r["step"] for r in steps] == [1, 2]
    assert {"L_cls", "L_seg", "L_sc", "L_sa", "w_sc", "w_sa"} <= set(steps[0])
    assert any("mIoU" in r for r in lines)


def test_train_baseline_flags(tmp_path):
    cfg = _config(tmp_path, sqb_on=False, tdst_on=False, sso_on=False)
    main(["generate", "--config", cfg, "--out", str(tmp_path / "data")])
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "run")]) == 0
    first = json.loads((tmp_path / "run" / "metrics.jsonl").read_text().splitlines()[0])
    assert "L_sc" not in first


def test_resume_continues_step_counter(trained):
    cfg4 = _config(trained, steps=4)
    argv = ["train", "--config", cfg4, "--out", str(trained / "run"), "--checkpoint", str(trained / "run" / "checkpoint.pt")]
    assert main(argv) == 0
    steps = [json.loads(x)["step"] for x in (trained / "run" / "metrics.jsonl").read_text().splitlines()]
    assert steps[-1] == 4 and 3 in steps
    assert scsd.estimator.SCSDSegmenter.load(trained / "run" / "checkpoint.pt").step_ == 4


def test_non_finite_aborts_with_last_good_checkpoint(tmp_path, monkeypatch, capsys):
    cfg = _config(tmp_path, steps=4, interval=2)
    main(["generate", "--config", cfg, "--out", str(tmp_path / "data")])
    real = scsd.estimator.train_step
    calls = []

    def flaky(*args, **kwargs):
        calls.append(1)
        if len(calls) == 3:
            raise NonFiniteLossError("non-finite loss")
        return real(*args, **kwargs)

    monkeypatch.setattr(scsd.estimator, "train_step", flaky)
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "run")]) == 3
    assert "last good checkpoint" in capsys.readouterr().err
    assert scsd.estimator.SCSDSegmenter.load(tmp_path / "run" / "checkpoint.pt").step_ == 2


def test_eval_report_tagged_and_repeatable(trained, capsys):
    ckpt = str(trained / "run" / "checkpoint.pt")
    assert main(["eval", "--checkpoint", ckpt, "--split", "snow", "--out", str(trained / "a.json")]) == 0
    assert main(["eval", "--checkpoint", ckpt, "--split", "snow", "--out", str(trained / "b.json")]) == 0
    a, b = (json.loads((trained / n).read_text()) for n in ("a.json", "b.json"))
    assert a["domains"] == ["snow"] and "snow" in a["per_domain"]
    assert a["per_class"] == b["per_class"] and a["mIoU"] == b["mIoU"]
    assert "snow" in capsys.readouterr().out


def test_eval_class_mismatch(trained):
    manifest = trained / "data" / "manifest.json"
    m = json.loads(manifest.read_text())
    m["class_names"] = m["class_names"][:3]
    manifest.write_text(json.dumps(m))
    assert main(["eval", "--checkpoint", str(trained / "run" / "checkpoint.pt")]) == 2


def test_eval_missing_checkpoint(tmp_path):
    assert main(["eval", "--checkpoint", str(tmp_path / "nope.pt")]) == 3


def test_viz_kinds(trained):
    ckpt = str(trained / "run" / "checkpoint.pt")
    figs = trained / "figs"
    for kind in ("layer-masks", "similarity-map", "spectrum", "embedding-2d"):
        assert main(["viz", "--checkpoint", ckpt, "--kind", kind, "--out", str(figs)]) == 0
    assert len(list(figs.glob("*.png"))) == 4
    assert cmd_viz(ckpt, "layer-masks", str(figs))["panels"] == 2
    spec = cmd_viz(ckpt, "spectrum", str(figs))
    lf = low_freq_mask(*spec["shape"], 0.15)
    assert (spec["rows"], spec["cols"]) == (lf.rows, lf.cols)
    legend = cmd_viz(ckpt, "embedding-2d", str(figs))["domain_legend"]
    assert sorted(legend) == ["clear", "dusk", "snow"]


def test_viz_unknown_kind(trained):
    with pytest.raises(SystemExit) as exc:
        main(["viz", "--checkpoint", "x", "--kind", "histogram", "--out", "y"])
    assert exc.value.code == 2


def test_ablate_emits_table(tmp_path, capsys):
    cfg = _config(tmp_path, steps=1)
    assert main(["ablate", "--config", cfg, "--out", str(tmp_path / "abl"), "--seeds", "0"]) == 0
    out = capsys.readouterr().out
    for row in ("baseline", "+ SQB", "++ TDST", "+++ SSO"):
        assert f"| {row} |" in out
    summary = json.loads((tmp_path / "abl" / "ablation_components.json").read_text())
    assert summary["domains"] == ["snow"]
