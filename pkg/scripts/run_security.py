"""Steganalysis scenarios on the checkpoints of a toy run (see train_toy.py)."""
import argparse
import json
import logging
from pathlib import Path

from stylestego import evaluation as ev
from stylestego.data import ImageSet
from stylestego.trainer import load_checkpoint

p = argparse.ArgumentParser(description=__doc__)
p.add_argument("--run", default="runs/toy")
p.add_argument("--images", default="data/toy/heldout")
p.add_argument("--repeats", type=int, default=3)
p.add_argument("--test-pairs", type=int, default=200)
a = p.parse_args()
logging.basicConfig(level=logging.INFO, format="%(message)s")

ckpts = sorted(str(c) for c in Path(a.run).glob("step_*.ckpt"))
images = ImageSet(a.images, load_checkpoint(ckpts[-1]).cfg.crop_size)
det = ev.DetectorConfig(repeats=a.repeats, n_test=a.test_pairs)
results = {}
for kind in ev.SCENARIOS:
    results[kind] = ev.run_scenario(ev.ScenarioSpec.standard(kind, ckpts), images, det)
    ref = ev.FULL_SCALE_REFERENCE["detector_accuracy"]["1000"][kind]
    print(f"{kind:14s} {results[kind]['accuracy']:.3f}   (full-scale reference {ref})")
Path(a.run, "security.json").write_text(json.dumps(results, indent=2))
