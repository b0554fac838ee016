import json
import os

import pytest

from apdraw.cli import HANDLERS, build_parser, run
from apdraw.ranking import PreferenceAnswer, append_answer

SUBCOMMANDS = sorted(HANDLERS)


def _seed_answers(path):
    triples = [
        ("d0", "d1", "d2"), ("d0", "d1", "d3"), ("d1", "d2", "d3"),
        ("d0", "d2", "d3"), ("d0", "d1", "d2"),
    ]
    rank = {"d0": 0, "d1": 1, "d2": 2, "d3": 3}
    for q, triple in enumerate(triples):
        order = tuple(sorted(triple, key=rank.get))
        append_answer(str(path), PreferenceAnswer(
            question_id=f"q{q}", style="style1", drawing_ids=triple, order=order,
        ))
    return str(path)


@pytest.fixture(scope="module")
def corpus_dir(toy_corpus_dir):
    return str(toy_corpus_dir[0])


@pytest.fixture(scope="module")
def answers_log(tmp_path_factory):
    return _seed_answers(tmp_path_factory.mktemp("answers") / "log.jsonl")


@pytest.fixture(scope="module")
def gan_checkpoint(tmp_path_factory, corpus_dir):
    out = tmp_path_factory.mktemp("ckpt") / "run1"
    manifest = os.path.join(corpus_dir, "manifest.tsv")
    code = run([
        "train-gan", "--profile", "toy", "--manifest", manifest,
        "--out", str(out), "--epochs", "1",
    ])
    assert code == 0
    return str(out)


def test_no_command_exits_1(capsys):
    assert run([]) == 1
    assert "usage" in capsys.readouterr().err.lower()


def test_unknown_command_exits_1(capsys):
    assert run(["frobnicate"]) == 1
    assert "usage" in capsys.readouterr().err.lower()


@pytest.mark.parametrize("command", SUBCOMMANDS)
def test_help_exits_0(command, capsys):
    with pytest.raises(SystemExit) as exc:
        run([command, "--help"])
    assert exc.value.code == 0
    assert "usage" in capsys.readouterr().out.lower()


def test_unknown_flag_exits_1_with_usage(capsys, answers_log, tmp_path):
    code = run(["rank", "--answers", answers_log, "--out", str(tmp_path / "s.csv"), "--bogus"])
    assert code == 1
    assert "usage" in capsys.readouterr().err.lower()


def test_missing_required_flag_exits_1(capsys):
    assert run(["rank"]) == 1
    assert "required" in capsys.readouterr().err.lower()


def test_parser_covers_all_handlers():
    parser = build_parser()
    actions = [a for a in parser._actions if hasattr(a, "choices") and a.choices]
    assert sorted(actions[0].choices) == SUBCOMMANDS


def test_missing_input_file_exits_1(capsys, tmp_path):
    code = run(["rank", "--answers", str(tmp_path / "nope.jsonl"), "--out", str(tmp_path / "s.csv")])
    assert code == 1
    assert "not found" in capsys.readouterr().err


def test_runtime_error_exits_2(monkeypatch, capsys, answers_log, tmp_path):
    def boom(args, cfg):
        raise RuntimeError("engine failure")

    monkeypatch.setitem(HANDLERS, "rank", boom)
    code = run(["rank", "--answers", answers_log, "--out", str(tmp_path / "s.csv")])
    assert code == 2
    assert "engine failure" in capsys.readouterr().err


def test_set_override_rejects_unknown_key(capsys, answers_log, tmp_path):
    code = run([
        "rank", "--answers", answers_log, "--out", str(tmp_path / "s.csv"),
        "--set", "train.no_such_knob=1", "--dry-run",
    ])
    assert code == 1
    assert "unknown config key" in capsys.readouterr().err


def test_dry_run_plans(capsys, corpus_dir, answers_log, tmp_path):
    manifest = os.path.join(corpus_dir, "manifest.tsv")
    photo = os.path.join(corpus_dir, "photo_000.png")
    drawing = os.path.join(corpus_dir, "drawing_000.png")
    dataset = tmp_path / "rows.tsv"
    dataset.write_text(f"{drawing}\t0.5\n")
    cases = {
        "train-classifier": ["--manifest", manifest, "--out", str(tmp_path / "c.pt")],
        "train-metric": ["--dataset", str(dataset), "--out", str(tmp_path / "m.pt")],
        "train-gan": ["--manifest", manifest, "--out", str(tmp_path / "g"), "--epochs", "2"],
        "infer": ["--photo", photo, "--checkpoint", "unused.pt", "--out", str(tmp_path / "o.png")],
        "rank": ["--answers", answers_log, "--out", str(tmp_path / "s.csv")],
        "metric-dataset": ["--answers", answers_log, "--manifest", manifest, "--out", str(tmp_path / "d.tsv")],
        "style-search": ["--photo", photo, "--target", drawing, "--checkpoint", "unused.pt",
                         "--out", str(tmp_path / "t.csv")],
        "dissect": ["--checkpoint", "unused.pt", "--manifest", manifest, "--out", str(tmp_path / "u.csv")],
        "eval-fid": ["--generated", corpus_dir, "--reference", corpus_dir],
        "eval-quality": ["--images", corpus_dir, "--checkpoint", "unused.pt"],
        "serve": [],
    }
    assert sorted(cases) == SUBCOMMANDS
    for command, extra in cases.items():
        code = run([command, "--profile", "toy", "--dry-run", *extra])
        out = capsys.readouterr().out
        assert code == 0, (command, out)
        plan = json.loads(out.strip().splitlines()[-1])
        assert plan["command"] == command
        assert plan["dry_run"] is True
    assert not (tmp_path / "s.csv").exists()


def test_train_gan_epochs_override_in_plan(capsys, corpus_dir, tmp_path):
    manifest = os.path.join(corpus_dir, "manifest.tsv")
    code = run(["train-gan", "--profile", "toy", "--dry-run", "--manifest", manifest,
                "--out", str(tmp_path / "g"), "--epochs", "7"])
    assert code == 0
    plan = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert plan["epochs"] == 7


def test_rank_writes_scores(capsys, answers_log, tmp_path):
    out = tmp_path / "scores.csv"
    assert run(["rank", "--answers", answers_log, "--out", str(out)]) == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "id,style,raw,normalized,n_appearances"
    assert len(lines) == 5  # d0..d3


def test_metric_dataset_and_train_metric(capsys, answers_log, corpus_dir, tmp_path):
    manifest = os.path.join(corpus_dir, "manifest.tsv")
    # the answer log references ids d0..d3 that are not in the manifest
    code = run(["metric-dataset", "--answers", answers_log, "--manifest", manifest,
                "--out", str(tmp_path / "d.tsv")])
    assert code == 1
    assert "missing" in capsys.readouterr().err

    # rebuild a log over real drawing ids
    from apdraw.corpus import load_manifest

    drawings = [r for r in load_manifest(manifest) if r.kind == "drawing"][:3]
    ids = tuple(r.id for r in drawings)
    log2 = tmp_path / "log2.jsonl"
    append_answer(str(log2), PreferenceAnswer(
        question_id="q0", style="style1", drawing_ids=ids, order=ids,
    ))
    out = tmp_path / "rows.tsv"
    code = run(["metric-dataset", "--answers", str(log2), "--manifest", manifest, "--out", str(out)])
    assert code == 0
    rows = [line.split("\t") for line in out.read_text().strip().splitlines()]
    assert len(rows) == 3
    for path, score in rows:
        assert os.path.exists(path)
        assert 0.1 <= float(score) <= 1.0

    ckpt = tmp_path / "m.pt"
    code = run(["train-metric", "--profile", "toy", "--dataset", str(out),
                "--out", str(ckpt), "--steps", "5"])
    assert code == 0
    assert ckpt.exists()

    code = run(["eval-quality", "--profile", "toy", "--images", corpus_dir,
                "--checkpoint", str(ckpt)])
    assert code == 0
    assert "quality" in capsys.readouterr().out


def test_train_classifier_cli(corpus_dir, tmp_path, capsys):
    manifest = os.path.join(corpus_dir, "manifest.tsv")
    ckpt = tmp_path / "c.pt"
    code = run(["train-classifier", "--profile", "toy", "--manifest", manifest,
                "--out", str(ckpt), "--steps", "3"])
    assert code == 0
    assert ckpt.exists()


def test_infer_single_and_all_styles(gan_checkpoint, corpus_dir, tmp_path, capsys):
    photo = os.path.join(corpus_dir, "photo_000.png")
    out = tmp_path / "drawing.png"
    code = run(["infer", "--profile", "toy", "--photo", photo,
                "--checkpoint", gan_checkpoint, "--style", "0,1,0", "--out", str(out)])
    assert code == 0
    assert out.exists()

    out_dir = tmp_path / "all"
    code = run(["infer", "--profile", "toy", "--photo", photo,
                "--checkpoint", gan_checkpoint, "--styles", "all", "--out", str(out_dir)])
    assert code == 0
    for name in ("style1", "style2", "style3"):
        assert (out_dir / f"{name}.png").exists()


def test_infer_rejects_bad_style(gan_checkpoint, corpus_dir, tmp_path, capsys):
    photo = os.path.join(corpus_dir, "photo_000.png")
    code = run(["infer", "--profile", "toy", "--photo", photo,
                "--checkpoint", gan_checkpoint, "--style", "2,0,0", "--out", str(tmp_path / "x.png")])
    assert code == 1
    assert "sum to 1" in capsys.readouterr().err
    code = run(["infer", "--profile", "toy", "--photo", photo,
                "--checkpoint", gan_checkpoint, "--style", "1,0", "--out", str(tmp_path / "x.png")])
    assert code == 1


def test_style_search_cli(gan_checkpoint, corpus_dir, tmp_path, capsys):
    photo = os.path.join(corpus_dir, "photo_000.png")
    target = os.path.join(corpus_dir, "drawing_000.png")
    out = tmp_path / "trace.csv"
    code = run(["style-search", "--profile", "toy", "--photo", photo, "--target", target,
                "--checkpoint", gan_checkpoint, "--out", str(out), "--steps", "2"])
    assert code == 0
    lines = out.read_text().strip().splitlines()
    assert len(lines) == 4  # header + initial + 2 steps
    assert "best style" in capsys.readouterr().out


def test_dissect_cli(gan_checkpoint, corpus_dir, tmp_path, capsys):
    manifest = os.path.join(corpus_dir, "manifest.tsv")
    out = tmp_path / "units.csv"
    code = run(["dissect", "--profile", "toy", "--checkpoint", gan_checkpoint,
                "--manifest", manifest, "--out", str(out)])
    assert code == 0
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert summary["units"] > 0
    assert out.exists()


def test_eval_fid_cli(corpus_dir, capsys):
    code = run(["eval-fid", "--profile", "toy", "--generated", corpus_dir,
                "--reference", corpus_dir])
    assert code == 0
    out = capsys.readouterr().out
    assert out.startswith("fid ")
    assert float(out.split()[1]) < 1e-3
