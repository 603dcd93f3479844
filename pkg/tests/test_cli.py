import numpy as np
import pytest

from stylestego import codec
from stylestego.cli import ERROR_PREFIX, main
from stylestego.config import dump_config
from stylestego.data import make_toy_datasets, save_png

from conftest import tiny


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    dirs = make_toy_datasets(root / "data", seed=1, n_content=3, n_style=2, n_heldout=2, size=40)
    cfg = tiny(content_dir=str(dirs["content"]), style_dir=str(dirs["style"]), out_dir=str(root / "run"),
               iterations=2, save_every=1)
    (root / "cfg.txt").write_text(dump_config(cfg))
    assert main(["train", "--config", str(root / "cfg.txt"), "--preset", "full"]) == 0
    save_png(root / "content.png", np.random.default_rng(0).uniform(-1, 1, (32, 32, 3)))
    codec.write_message(root / "msg.hex", codec.random_bits(np.random.default_rng(1), 16))
    return root


def _err(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith(ERROR_PREFIX + ": ")
    return err[0]


def test_train_writes_run(run):
    assert sorted(p.name for p in (run / "run").iterdir()) == [
        "config.txt", "final.ckpt", "metrics.csv", "step_000001.ckpt", "step_000002.ckpt"]


def test_train_echoes_resolved_config(tmp_path, run, capsys):
    main(["train", "--config", str(run / "cfg.txt"), "--preset", "full", "--iterations", "1",
          "--out-dir", str(tmp_path), "--seed", "5", "--save-every", "0"])
    out = capsys.readouterr().out
    assert out.startswith("resolved config: ") and '"seed": 5' in out and '"iterations": 1' in out


def test_embed_extract_round_trip(run, capsys):
    ck = str(run / "run" / "final.ckpt")
    assert main(["embed", "--checkpoint", ck, "--content", str(run / "content.png"),
                 "--message", str(run / "msg.hex"), "--out", str(run / "stego.png")]) == 0
    assert "capacity 32 bits; payload 16 bits" in capsys.readouterr().out
    assert main(["extract", "--checkpoint", ck, "--stego", str(run / "stego.png"), "--len", "16",
                 "--out", str(run / "got.txt")]) == 0
    assert len(codec.read_message(run / "got.txt")) == 16


@pytest.mark.parametrize("argv,kind", [
    (["embed", "--message", "{run}/long.hex", "--out", "{run}/s.png"], "capacity"),
    (["embed", "--message", "{run}/empty.txt", "--out", "{run}/s.png"], "ValueError"),
    (["embed", "--message", "{run}/msg.hex", "--out", "{run}/s.jpg"], "format"),
    (["embed", "--message", "{run}/msg.hex", "--out", "{run}/s.png", "--content", "{run}/data/heldout/heldout_00.png"],
     "resolution"),
])
def test_embed_errors(run, capsys, argv, kind):
    codec.write_message(run / "long.hex", np.ones(40, dtype=np.uint8))
    (run / "empty.txt").write_text("\n")
    base = ["--checkpoint", str(run / "run" / "final.ckpt"), "--content", str(run / "content.png")]
    args = [a.format(run=run) for a in argv]
    if "--content" in args:
        base = base[:2]
    assert main(args[:1] + base + args[1:]) == 1
    assert f"{ERROR_PREFIX}: {kind}" in _err(capsys)


def test_extract_errors(run, capsys):
    ck = str(run / "run" / "final.ckpt")
    (run / "trunc.png").write_bytes((run / "content.png").read_bytes()[:50])
    assert main(["extract", "--checkpoint", ck, "--stego", str(run / "trunc.png"), "--len", "16",
                 "--out", str(run / "x.hex")]) == 1
    assert "decode" in _err(capsys)
    assert main(["extract", "--checkpoint", ck, "--stego", str(run / "content.png"), "--len", "0",
                 "--out", str(run / "x.hex")]) == 1
    _err(capsys)
    assert main(["extract", "--checkpoint", str(run / "nope.ckpt"), "--stego", str(run / "content.png"),
                 "--len", "8", "--out", str(run / "x.hex")]) == 1
    assert "checkpoint" in _err(capsys)


def test_corrupt_checkpoint_is_reported(run, capsys):
    bad = run / "bad.ckpt"
    blob = bytearray((run / "run" / "final.ckpt").read_bytes())
    blob[100] ^= 1
    bad.write_bytes(bytes(blob))
    assert main(["extract", "--checkpoint", str(bad), "--stego", str(run / "content.png"), "--len", "8",
                 "--out", str(run / "x.hex")]) == 1
    assert "checksum" in _err(capsys)


def test_scenario_needs_two_checkpoints(run, capsys):
    assert main(["eval", "--checkpoint", str(run / "run" / "final.ckpt"), "--images",
                 str(run / "data" / "heldout"), "--scenario", "ignorant"]) == 1
    assert "scenario" in _err(capsys)


def test_eval_without_scenario(run, capsys):
    assert main(["eval", "--run-dir", str(run / "run"), "--images", str(run / "data" / "heldout"),
                 "--trials", "4", "--report", str(run / "r.json")]) == 0
    out = capsys.readouterr().out
    assert "bit accuracy" in out and "ckpt divergence" in out and (run / "r.json").exists()


def test_usage_errors(capsys):
    with pytest.raises(SystemExit) as e:
        main(["bogus"])
    assert e.value.code == 2
    _err(capsys)
    with pytest.raises(SystemExit):
        main(["embed", "--checkpoint", "x", "--unknown-flag"])
    _err(capsys)


def test_ablate_prints_three_rows(run, tmp_path, capsys):
    assert main(["ablate", "--config", str(run / "cfg.txt"), "--preset", "full", "--iterations", "2",
                 "--out-dir", str(tmp_path), "--seeds", "0,1", "--eval-images", str(run / "data" / "heldout"),
                 "--trials", "2", "--report", str(tmp_path / "ab.json")]) == 0
    table = capsys.readouterr().out.splitlines()[1:]
    assert [line.split()[0] for line in table] == ["config", "attention_only", "filters_only", "both"]
    assert len(list(tmp_path.glob("*_s1/final.ckpt"))) == 3
