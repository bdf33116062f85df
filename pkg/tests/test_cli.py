import json
import re

import pytest

from painseeker.cli import build_parser, main, parse_args
from painseeker.dataset import load_manifest

FAST = ["--epochs", "1", "--batch-size", "16"]


def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def _ann_fixture(tmp_path):
    """4 images: accepted x4, mixed with .5 rounding, stage-2 rescue, and unlabeled."""
    comps = ["eye", "ear", "whisker", "nose"]
    rows = ["image_id,component,annotator_id,stage,score"]

    def add(img, comp, s1, s2=()):
        rows.extend(f"{img},{comp},a{k},1,{v}" for k, v in enumerate(s1))
        rows.extend(f"{img},{comp},b{k},2,{v}" for k, v in enumerate(s2))

    for c in comps:
        add("im1", c, [2] * 5)
    for c, s in zip(comps, [0, 1, 0, 1]):
        add("im2", c, [s] * 5)  # mean 0.5 -> 1
    add("im3", "eye", [0, 1, 1, 0, 2], [1, 1, 1])  # stage 2: five 1s
    for c in comps[1:]:
        add("im3", c, [0] * 5)
    for c in comps[:2]:
        add("im4", c, [0, 1, 2, "uncertain", 0], [1, 2, 1])  # stage-2 reject
    for c in comps[2:]:
        add("im4", c, [1] * 5)
    p = tmp_path / "ann.csv"
    p.write_text("\n".join(rows) + "\n")
    return p


def test_aggregate(tmp_path, capsys):
    run = tmp_path / "run"
    assert main(["aggregate", str(_ann_fixture(tmp_path)), "--run-dir", str(run)]) == 0
    labels = (run / "labels.csv").read_text().splitlines()
    assert labels == ["image_id,raw_score", "im1,2", "im2,1", "im3,0", "im4,unlabeled"]
    assert "High Confidence" in capsys.readouterr().out
    assert (run / "config_resolved.txt").exists()


def test_aggregate_empty_file_exits_2(tmp_path):
    p = tmp_path / "empty.csv"
    p.write_text("")
    assert main(["aggregate", str(p), "--run-dir", str(tmp_path / "run")]) == 2


def test_missing_manifest_exits_2(tmp_path):
    assert main(["loro", "--manifest", str(tmp_path / "nope.csv"), "--run-dir", str(tmp_path / "r")]) == 2


def test_synth_defaults():
    args = parse_args(["synth", "--out", "x"])
    assert (args.rats, args.images_per_rat, args.grid, args.informative) == (6, 100, 4, [0, 1, 2, 3, 4])


def test_synth_deterministic_with_sidecar(tmp_path):
    for name in ("a", "b"):
        assert main(["synth", "--out", str(tmp_path / name), "--seed", "7", "--rats", "2",
                     "--images-per-rat", "3", "--informative", "0,1,2,3,4", "--grid", "4"]) == 0
    a, b = _tree(tmp_path / "a"), _tree(tmp_path / "b")
    # the resolved config records the output path itself
    a.pop("config_resolved.txt"), b.pop("config_resolved.txt")
    assert a == b
    truth = json.loads((tmp_path / "a" / "ground_truth.json").read_text())
    assert truth["informative_regions"] == [0, 1, 2, 3, 4] and truth["seed"] == 7


def test_synth_bad_region_exits_2(tmp_path):
    assert main(["synth", "--out", str(tmp_path / "s"), "--informative", "99"]) == 2


@pytest.fixture(scope="module")
def tiny_manifest(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_synth")
    assert main(["synth", "--out", str(root), "--rats", "3", "--images-per-rat", "8", "--seed", "1"]) == 0
    return root / "manifest.csv"


def test_lambda_zero_equals_no_prsc(tiny_manifest, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    base = ["loro", "--manifest", str(tiny_manifest), "--seed", "3", "--no-figures", *FAST]
    assert main([*base, "--method", "painseeker", "--lambda", "0", "--run-dir", str(a)]) == 0
    assert main([*base, "--method", "painseeker-no-prsc", "--run-dir", str(b)]) == 0
    for f in ("report.csv", "report.txt", "predictions.csv", "attention.csv"):
        assert (a / f).read_bytes() == (b / f).read_bytes()


def test_loro_painseeker_outputs(tiny_manifest, tmp_path, capsys):
    run = tmp_path / "run"
    assert main(["loro", "--manifest", str(tiny_manifest), "--run-dir", str(run), *FAST]) == 0
    out = capsys.readouterr().out
    assert "LORO" in out and re.search(r"\d\.\d{4} / \d+\.\d{2}", out)
    for f in ("report.csv", "report.txt", "predictions.csv", "attention.csv", "attention_hits.txt",
              "metrics.png", "attention_mean.png", "training_curves.png", "config_resolved.txt"):
        assert (run / f).exists(), f
    assert (run / "predictions.csv").read_text().startswith("image_id,rat_id,label,pred,beta_max_region\n")
    assert len(list((run / "attention").glob("*.pgm"))) == 24
    assert (run / "metrics.png").read_bytes()[:4] == b"\x89PNG"


def test_loro_lbp_r3_grid4(tiny_manifest, tmp_path):
    run = tmp_path / "run"
    assert main(["loro", "--manifest", str(tiny_manifest), "--method", "lbp-svm", "--radius", "3",
                 "--grid", "4", "--lbp-size", "64", "--cache-dir", str(tmp_path / "cache"),
                 "--run-dir", str(run)]) == 0
    text = (run / "report.txt").read_text()
    assert "LBP_R3P8 (4x4)" in text
    assert "radius = 3" in (run / "config_resolved.txt").read_text()
    assert not (run / "attention.csv").exists()


def test_train_and_report(tiny_manifest, tmp_path):
    run = tmp_path / "train"
    assert main(["train", "--manifest", str(tiny_manifest), "--train-rats", "rat1,rat2", "--run-dir", str(run), *FAST]) == 0
    assert (run / "checkpoint.npz").exists() and (run / "train_log.csv").exists()
    loro = tmp_path / "loro"
    assert main(["loro", "--manifest", str(tiny_manifest), "--method", "lbp-svm", "--lbp-size", "64",
                 "--run-dir", str(loro)]) == 0
    rep = tmp_path / "rep"
    assert main(["report", str(loro), str(loro), "--run-dir", str(rep)]) == 0
    assert (rep / "comparison.txt").exists() and (rep / "comparison.png").exists()


def test_help_lists_defaults(capsys):
    with pytest.raises(SystemExit):
        build_parser().parse_args(["loro", "--help"])
    text = capsys.readouterr().out
    for flag, default in [("--lambda", "0.1"), ("--delta", "0.05"), ("--kh", "5"), ("--lr", "0.0001"),
                          ("--batch-size", "64"), ("--epochs", "30"), ("--radius", "1"), ("--jobs", "1")]:
        # the option's help block runs until the next option line
        block = text[text.index(f"  {flag}"):]
        block = re.split(r"\n  -", block[2:], maxsplit=1)[0]
        assert f"(default: {default})" in " ".join(block.split()), flag


def test_config_precedence(tmp_path, monkeypatch):
    cfg = tmp_path / "c.txt"
    cfg.write_text("# run settings\nlambda = 0.3\nepochs = 4\nbatch_size = 8\nno-figures = true\n")
    args = parse_args(["loro", "--manifest", "m.csv", "--config", str(cfg), "--epochs", "2"])
    assert args.lam == 0.3 and args.epochs == 2 and args.batch_size == 8 and args.no_figures is True
    assert args.delta == 0.05
    bad = tmp_path / "bad.txt"
    bad.write_text("nonsense = 1\n")
    with pytest.raises(SystemExit):
        parse_args(["loro", "--manifest", "m.csv", "--config", str(bad)])


def test_seed_env_fallback(monkeypatch):
    monkeypatch.setenv("PAINSEEKER_SEED", "42")
    assert parse_args(["synth", "--out", "x"]).seed == 42
    assert parse_args(["synth", "--out", "x", "--seed", "5"]).seed == 5
    monkeypatch.delenv("PAINSEEKER_SEED")
    assert parse_args(["synth", "--out", "x"]).seed == 0


def test_run_dir_naming(tmp_path):
    assert main(["aggregate", str(_ann_fixture(tmp_path)), "--out-root", str(tmp_path / "runs"), "--seed", "9"]) == 0
    (run,) = (tmp_path / "runs").iterdir()
    assert re.fullmatch(r"\d{8}-\d{6}_aggregate_seed9", run.name)
