"""Attention / filter-initialisation ablation on the toy data, several seeds."""
import argparse
import json
import logging

from stylestego import evaluation as ev
from stylestego.config import toy_config

p = argparse.ArgumentParser(description=__doc__)
p.add_argument("--data", default="data/toy")
p.add_argument("--out", default="runs/ablation")
p.add_argument("--iterations", type=int, default=4000)
p.add_argument("--seeds", default="0,1,2")
p.add_argument("--trials", type=int, default=50)
a = p.parse_args()
logging.basicConfig(level=logging.INFO, format="%(message)s")

base = toy_config(content_dir=f"{a.data}/content", style_dir=f"{a.data}/style", out_dir=a.out,
                  iterations=a.iterations)
rows = ev.ablation_suite(base, [int(s) for s in a.seeds.split(",")], f"{a.data}/heldout", a.trials)
print(ev.format_ablation(rows))
with open(f"{a.out}/ablation.json", "w") as fh:
    json.dump(rows, fh, indent=2)
