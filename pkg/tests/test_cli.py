import json

import numpy as np
import pytest

from gcnenhance import cli, config
from gcnenhance.audio_io import read_wav

TINY_SETS = [
    "encoder_channels=4,8", "scorer_hidden=8", "window_length=64", "hop=32", "batch_size=2",
    "chunk_len=8", "eval_every=0", "checkpoint_every=0", "metrics=sdr",
]


def sets(*extra):
    out = []
    for item in list(TINY_SETS) + list(extra):
        out += ["--set", item]
    return out


def test_help_lists_everything(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["--help"])
    assert exc.value.code == 0
    text = capsys.readouterr().out
    for command in ("simulate", "train", "evaluate", "enhance", "ablate"):
        assert f"gcnenhance {command}" in text
    for flag in ("--speech-dir", "--train-manifest", "--dump-adjacency", "--grid", "--resume"):
        assert flag in text
    for key in config.KEYS:
        assert f"  {key.name} = " in text


def test_no_command_is_usage_error(capsys):
    assert cli.main([]) == 2


def test_missing_required_flag_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["train", "--out", "x"])
    assert exc.value.code == 2
    assert "--train-manifest" in capsys.readouterr().err


def test_unknown_config_key_names_it(tmp_path, capsys):
    cfg = tmp_path / "c.txt"
    cfg.write_text("lr = 1e-3\nlearning_rate = 3\n")
    assert cli.main(["config", "--config", str(cfg)]) == 2
    assert "learning_rate" in capsys.readouterr().err
    assert cli.main(["config", "--set", "bogus=1"]) == 2
    assert "bogus" in capsys.readouterr().err


def test_bad_value_is_config_error(capsys):
    assert cli.main(["config", "--set", "batch_size=many"]) == 2
    assert "batch_size" in capsys.readouterr().err


def test_precedence(tmp_path, capsys):
    cfg = tmp_path / "c.txt"
    cfg.write_text("# comment\nlr = 0.001\nbatch_size = 7\n")
    assert cli.main(["config", "--config", str(cfg), "--set", "batch_size=3", "--seed", "9"]) == 0
    out = dict(line.split(" = ", 1) for line in capsys.readouterr().out.splitlines())
    assert out["lr"] == "0.001"          # file beats default
    assert out["batch_size"] == "3"      # override beats file
    assert out["seed"] == "9"
    assert out["hop"] == "512"           # default


def test_missing_input_is_usage_error(tmp_path, capsys):
    code = cli.main(["train", "--train-manifest", str(tmp_path / "nope.jsonl"), "--out", str(tmp_path / "r")])
    assert code == 2
    assert "not found" in capsys.readouterr().err


def test_version_string():
    assert cli.version_string().startswith(cli.__version__)


@pytest.fixture(scope="module")
def cli_run(corpus, tmp_path_factory):
    """simulate -> train -> evaluate through the CLI."""
    root = tmp_path_factory.mktemp("cli")
    speech, noise = corpus
    sim = ["simulate", "--speech-dir", str(speech), "--noise-dir", str(noise), "--out", str(root / "data"),
           "--set", "num_examples=3", "--set", "splits=train, dev", "--set", "mic_counts=2",
           "--set", "utterance_seconds=1.2"]
    assert cli.main(sim) == 0
    manifests = {s: root / "data" / s / "manifest.jsonl" for s in ("train", "dev")}
    train = ["train", "--train-manifest", str(manifests["train"]), "--dev-manifest", str(manifests["dev"]),
             "--out", str(root / "run")] + sets("steps=2")
    assert cli.main(train) == 0
    return root, manifests


def test_simulate_writes_manifest_and_config(cli_run):
    root, manifests = cli_run
    rows = [json.loads(line) for line in open(manifests["train"])]
    assert len(rows) == 3 and all(r["M"] == 2 for r in rows)
    header = (root / "data" / "config.txt").read_text()
    assert header.startswith("# gcnenhance ") and "num_examples = 3" in header


def test_train_outputs(cli_run):
    root, _ = cli_run
    run = root / "run"
    assert (run / "last.npz").exists() and (run / "loss_log.csv").exists()
    assert "encoder_channels = 4, 8" in (run / "config.txt").read_text()


def test_evaluate_with_adjacency_dump(cli_run, capsys):
    root, manifests = cli_run
    code = cli.main(["evaluate", "--checkpoint", str(root / "run" / "last.npz"), "--manifest",
                     str(manifests["dev"]), "--out", str(root / "eval"), "--dump-adjacency",
                     str(root / "adj")] + sets())
    assert code == 0
    assert "Enhanced" in capsys.readouterr().out
    assert len(list((root / "adj").glob("*.txt"))) == 3
    assert len(list((root / "adj").glob("*.png"))) == 3
    assert (root / "eval" / "snr_trend.png").exists()
    assert (root / "eval" / "summary.jsonl").exists()


def test_enhance_command(cli_run, tmp_path):
    root, manifests = cli_run
    row = json.loads(open(manifests["dev"]).readline())
    noisy = manifests["dev"].parent / row["noisy_path"]
    out = tmp_path / "enh.wav"
    assert cli.main(["enhance", "--checkpoint", str(root / "run" / "last.npz"), "--in", str(noisy),
                     "--out", str(out)]) == 0
    audio, fs = read_wav(out)
    assert audio.shape == (1, read_wav(noisy)[0].shape[1])
    assert np.isfinite(audio).all()


def test_runtime_failure_exits_1(cli_run, tmp_path, capsys):
    root, manifests = cli_run
    bogus = tmp_path / "bogus.npz"
    bogus.write_bytes(b"not a zip")
    code = cli.main(["evaluate", "--checkpoint", str(bogus), "--manifest", str(manifests["dev"]),
                     "--out", str(tmp_path / "e")])
    assert code == 1
    assert "failed" in capsys.readouterr().err


def test_ablate_command(cli_run, tmp_path, capsys):
    root, manifests = cli_run
    grid = tmp_path / "grid.txt"
    lines = [item.replace("=", " = ", 1) for item in TINY_SETS] + [
        "steps = 1",
        f"train_manifest = {manifests['train']}",
        f"dev_manifest = {manifests['dev']}",
        "grid.gcn_enabled = true; false",
    ]
    grid.write_text("\n".join(lines) + "\n")
    assert cli.main(["ablate", "--grid", str(grid), "--out", str(tmp_path / "abl")]) == 0
    out = capsys.readouterr().out
    assert "w/ GCN" in out and "w/o GCN" in out
    assert (tmp_path / "abl" / "ablation.png").exists()


def test_ablate_requires_grid_axis(tmp_path, capsys):
    grid = tmp_path / "g.txt"
    grid.write_text("lr = 0.1\n")
    assert cli.main(["ablate", "--grid", str(grid)]) == 2
    assert "grid" in capsys.readouterr().err


def test_make_corpus(tmp_path):
    assert cli.main(["make-corpus", "--out", str(tmp_path), "--n-speech", "1", "--n-noise", "1",
                     "--seconds", "0.5"]) == 0
    assert len(list((tmp_path / "speech").glob("*.wav"))) == 1
