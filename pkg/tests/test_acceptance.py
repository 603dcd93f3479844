"""End-to-end acceptance criteria on the toy configuration.

Slow (about 80 minutes on one CPU core): one 4000-step toy run, nine more
for the ablation and a dozen detector fits.  Run alone with
``pytest -m slow -s tests/test_acceptance.py``.
"""
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest
import torch

from stylestego import checkpoint, codec, evaluation as ev
from stylestego.cli import main as cli_main
from stylestego.config import toy_config
from stylestego.data import ImageSet, load_image, make_toy_datasets, save_png, to_tensor
from stylestego.filter_bank import init_srm_bank, extract_texture
from stylestego.trainer import checkpoint_path, load_checkpoint, run_training

from conftest import ACCEPTANCE
from test_evaluation import _ssim_reference

pytestmark = pytest.mark.slow

ROOT = Path(__file__).resolve().parent.parent
TOY_ITERATIONS = 4000
ABLATION_ITERATIONS = 4000
HELDOUT_TRIALS = 50
EVAL_SEED = 12345


def record(criterion: str, ok: bool, detail: str) -> None:
    ACCEPTANCE.append((criterion, bool(ok), detail))
    print(f"[acceptance] {'PASS' if ok else 'FAIL'}  {criterion}: {detail}", flush=True)


@pytest.fixture(scope="session")
def toy_data(tmp_path_factory):
    return make_toy_datasets(tmp_path_factory.mktemp("toydata"), seed=0, n_content=8, n_style=4, n_heldout=8, size=96)


@pytest.fixture(scope="session")
def heldout(toy_data):
    return ImageSet(toy_data["heldout"], 64)


def _toy_cfg(toy_data, out, **kw):
    return toy_config(content_dir=str(toy_data["content"]), style_dir=str(toy_data["style"]), out_dir=str(out), **kw)


@pytest.fixture(scope="session")
def toy_run(toy_data, tmp_path_factory):
    out = tmp_path_factory.mktemp("toyrun")
    t0 = time.perf_counter()
    state, rows = run_training(_toy_cfg(toy_data, out, iterations=TOY_ITERATIONS, save_every=1000, seed=0))
    return {"dir": out, "state": state.eval(), "rows": rows, "seconds": time.perf_counter() - t0,
            "ckpts": [str(checkpoint_path(out, s)) for s in range(1000, TOY_ITERATIONS + 1, 1000)]}


def test_c1_gradient_suite():
    t0 = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", "-k", "gradient",
                           "tests/test_substrate.py", "tests/test_filter_bank.py", "tests/test_codec.py",
                           "tests/test_stylizer.py", "tests/test_extractor.py"],
                          cwd=ROOT, capture_output=True, text=True)
    secs = time.perf_counter() - t0
    summary = proc.stdout.strip().splitlines()[-1]
    ok = proc.returncode == 0 and secs < 120
    record("1 gradient suite", ok, f"{summary}; {secs:.0f}s (limit 120s)")
    assert ok, proc.stdout[-3000:]


def test_c2_codec_round_trip():
    grid = toy_config().grid_shape
    g = codec.Grid(*grid)
    rng = np.random.default_rng(0)
    failures = 0
    for _ in range(100):
        length, seed = int(rng.integers(1, g.capacity + 1)), int(rng.integers(0, 2**32))
        bits = codec.random_bits(rng, length)
        failures += not np.array_equal(codec.decide_bits(codec.map_bits(bits, g, seed), seed, length), bits)
    f = torch.randn(3, *grid)
    exact = torch.equal(codec.bind(torch.zeros_like(f), f), torch.zeros_like(f)) and \
        torch.equal(codec.bind(torch.ones_like(f), f), f)
    ok = failures == 0 and exact
    record("2 codec round trip", ok, f"{100 - failures}/100 (L, seed) pairs exact; bind(0,F)=0 and bind(1,F)=F: {exact}")
    assert ok


def test_c3_filter_bank_dc_invariance():
    bank = init_srm_bank()
    worst = 0.0
    for value in (-1.0, -0.37, 0.0, 0.5, 1.0):
        for shape in ((1, 3, 16, 16), (2, 3, 64, 48)):
            worst = max(worst, extract_texture(torch.full(shape, value), bank).abs().max().item())
    per_channel = torch.full((1, 3, 20, 20), 0.0)
    per_channel[:, 0], per_channel[:, 1], per_channel[:, 2] = 0.9, -0.2, 0.4
    worst = max(worst, extract_texture(per_channel, bank).abs().max().item())
    ok = worst <= 1e-8
    record("3 filter-bank DC invariance", ok, f"max |response| over 32 kernels = {worst:.2e} (limit 1e-8)")
    assert ok


def test_c4_toy_reliability(toy_run, heldout):
    acc = ev.bit_accuracy(toy_run["state"], heldout, HELDOUT_TRIALS, seed=EVAL_SEED)
    ok = acc >= 0.95
    record("4 toy reliability", ok,
           f"bit accuracy {acc:.4f} on {HELDOUT_TRIALS} held-out embeddings x 64 bits after {TOY_ITERATIONS} steps "
           f"({toy_run['seconds'] / 60:.1f} min; limit >= 0.95, reference 0.99 at full scale)")
    assert ok


def test_c5_ablation_direction(toy_data, tmp_path):
    base = _toy_cfg(toy_data, tmp_path, iterations=ABLATION_ITERATIONS)
    rows = ev.ablation_suite(base, [0, 1, 2], toy_data["heldout"], HELDOUT_TRIALS)
    print("\n" + ev.format_ablation(rows))
    means = {r["config"]: r["mean"] for r in rows}
    ok = all(means["both"] >= means[k] - 0.02 for k in ("attention_only", "filters_only"))
    record("5 ablation direction", ok,
           ", ".join(f"{k} {v:.4f}" for k, v in means.items())
           + f" ({ABLATION_ITERATIONS} steps x 3 seeds; need both >= each single - 0.02)")
    assert ok


def test_c6_ssim(toy_run, heldout):
    rng = np.random.default_rng(0)
    identity = max(abs(ev.ssim(x, x) - 1) for x in (rng.random((16, 16, 3)) for _ in range(5)))
    pairs = [(rng.random((18, 21, 3)), rng.random((18, 21, 3))) for _ in range(5)]
    asym = max(abs(ev.ssim(a, b) - ev.ssim(b, a)) for a, b in pairs)
    ref = max(abs(ev.ssim(a, b) - _ssim_reference(a, b)) for a, b in pairs)
    toy = ev.stego_cover_ssim(toy_run["state"], heldout, HELDOUT_TRIALS, seed=EVAL_SEED)
    ok = identity <= 1e-9 and asym <= 1e-12 and ref <= 1e-8
    record("6 SSIM correctness", ok, f"|ssim(x,x)-1| {identity:.1e}, asymmetry {asym:.1e}, vs brute force {ref:.1e}; "
                                     f"toy stego/cover SSIM {toy:.3f} (reported only, reference 0.93)")
    assert ok


def _watermark(x: torch.Tensor) -> torch.Tensor:
    y = x.clone()
    y[:, :, 4:12, 4:12] = (y[:, :, 4:12, 4:12] + 0.5).clamp(-1, 1)
    return ev.through_png(y)


def test_c7_security_harness(toy_run, heldout):
    state = toy_run["state"]
    cfg = ev.DetectorConfig()
    # identical distribution: two independent sets of covers labelled differently
    a_tr, b_tr = ev.make_pairs(state, heldout, cfg.n_train, seed=1)[0], ev.make_pairs(state, heldout, cfg.n_train, seed=2)[0]
    a_te, b_te = ev.make_pairs(state, heldout, cfg.n_test, seed=3)[0], ev.make_pairs(state, heldout, cfg.n_test, seed=4)[0]
    same = ev.detector_accuracy(ev.train_detector(a_tr, b_tr, cfg), a_te, b_te)
    planted = ev.detector_accuracy(ev.train_detector(a_tr, _watermark(a_tr), cfg), b_te, _watermark(b_te))
    det = ev.DetectorConfig(repeats=3, n_test=200)
    acc = {k: ev.run_scenario(ev.ScenarioSpec.standard(k, toy_run["ckpts"]), heldout, det)["accuracy"]
           for k in ev.SCENARIOS}
    ordered = acc["omniscient"] >= acc["knowledgeable"] >= acc["ignorant"] - 0.05
    ok = same <= 0.6 and planted >= 0.95 and ordered
    record("7 security harness", ok,
           f"identical-distribution {same:.3f} (<= 0.6), planted watermark {planted:.3f} (>= 0.95); "
           f"omniscient {acc['omniscient']:.3f} >= knowledgeable {acc['knowledgeable']:.3f} >= "
           f"ignorant {acc['ignorant']:.3f} - 0.05: {ordered} (reference 0.71 / 0.60 / 0.55)")
    assert ok


def test_c8_checkpoint_determinism(toy_data, tmp_path, heldout):
    for name in ("a", "b"):
        run_training(_toy_cfg(toy_data, tmp_path / name, iterations=30, seed=7))
    identical = (tmp_path / "a/final.ckpt").read_bytes() == (tmp_path / "b/final.ckpt").read_bytes()
    live, _ = run_training(_toy_cfg(toy_data, tmp_path / "c", iterations=30, seed=7))
    loaded = load_checkpoint(tmp_path / "c/final.ckpt")
    probe = heldout.sample(np.random.default_rng(0), 4)
    bits = codec.random_bits(np.random.default_rng(1), 64, 4)
    exact = torch.equal(ev.embed(live.eval(), probe, bits), ev.embed(loaded.eval(), probe, bits))
    blob = bytearray((tmp_path / "c/final.ckpt").read_bytes())
    blob[len(blob) // 3] ^= 0x10
    (tmp_path / "bad.ckpt").write_bytes(bytes(blob))
    try:
        load_checkpoint(tmp_path / "bad.ckpt")
        caught = False
    except checkpoint.IntegrityError:
        caught = True
    ok = identical and exact and caught
    record("8 checkpoint determinism", ok,
           f"same-seed bytes identical: {identical}; save/load forward bit-exact: {exact}; corruption detected: {caught}")
    assert ok


def test_c9_checkpoint_divergence(toy_run, heldout):
    probe = heldout.sample(np.random.default_rng(0), 1)
    bits = codec.random_bits(np.random.default_rng(1), 64)
    diffs = [ev.checkpoint_divergence(pair, probe, bits) for pair in zip(toy_run["ckpts"][:-1], toy_run["ckpts"][1:])]
    ok = all(d > 0 for d in diffs)
    record("9 checkpoint divergence", ok,
           "mean |pixel diff| between checkpoints 1000 steps apart: " + ", ".join(f"{d:.4f}" for d in diffs))
    assert ok


def test_c10_cli_contract(toy_run, toy_data, tmp_path):
    ck = str(checkpoint_path(toy_run["dir"]))
    state = toy_run["state"]
    rng = np.random.default_rng(EVAL_SEED)
    heldout = ImageSet(toy_data["heldout"], 64)
    mem_hits = file_hits = wrong_hits = n = 0
    for i in range(HELDOUT_TRIALS):
        content = heldout.sample(rng, 1)
        save_png(tmp_path / "c.png", content)
        content = to_tensor(load_image(tmp_path / "c.png"))  # the CLI sees the 8-bit content too
        bits = codec.random_bits(rng, 64)
        codec.write_message(tmp_path / "m.hex", bits)
        assert cli_main(["embed", "--checkpoint", ck, "--content", str(tmp_path / "c.png"),
                         "--message", str(tmp_path / "m.hex"), "--out", str(tmp_path / "s.png")]) == 0
        for key, out in ((None, "got.hex"), (99991, "wrong.hex")):
            argv = ["extract", "--checkpoint", ck, "--stego", str(tmp_path / "s.png"), "--len", "64",
                    "--out", str(tmp_path / out)]
            assert cli_main(argv + ([] if key is None else ["--key", str(key)])) == 0
        with torch.no_grad():
            mem = codec.decide_bits(state.extractor(ev.embed(state, content, bits)), state.cfg.key, 64)[0]
        mem_hits += int((mem == bits).sum())
        file_hits += int((codec.read_message(tmp_path / "got.hex") == bits).sum())
        wrong_hits += int((codec.read_message(tmp_path / "wrong.hex") == bits).sum())
        n += 64
    mem_acc, file_acc, wrong_acc = mem_hits / n, file_hits / n, wrong_hits / n
    lo, hi = ev.binomial_band(n)
    ok = mem_acc - file_acc <= 0.01 and lo <= wrong_acc <= hi
    record("10 CLI contract", ok,
           f"in-memory {mem_acc:.4f} vs PNG round trip {file_acc:.4f} (loss <= 0.01); "
           f"wrong key {wrong_acc:.4f} in [{lo:.3f}, {hi:.3f}]")
    assert ok
