"""Train the toy model and report held-out bit accuracy and stego/cover SSIM.

    python3 scripts/make_toy_data.py
    python3 scripts/train_toy.py --iterations 4000 --save-every 1000
"""
import argparse
import logging

from stylestego import evaluation as ev
from stylestego.config import toy_config
from stylestego.data import ImageSet
from stylestego.trainer import run_training

p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
p.add_argument("--data", default="data/toy")
p.add_argument("--out", default="runs/toy")
p.add_argument("--iterations", type=int, default=4000)
p.add_argument("--save-every", type=int, default=1000)
p.add_argument("--seed", type=int, default=0)
p.add_argument("--trials", type=int, default=50)
a = p.parse_args()
logging.basicConfig(level=logging.INFO, format="%(message)s")

cfg = toy_config(content_dir=f"{a.data}/content", style_dir=f"{a.data}/style", out_dir=a.out,
                 iterations=a.iterations, save_every=a.save_every, seed=a.seed)
state, _ = run_training(cfg, progress_every=250)
held = ImageSet(f"{a.data}/heldout", cfg.crop_size)
state.eval()
print(f"held-out bit accuracy  {ev.bit_accuracy(state, held, a.trials, seed=12345):.4f} ({a.trials} x {cfg.msg_len} bits)")
print(f"stego/cover SSIM       {ev.stego_cover_ssim(state, held, a.trials):.4f}")
