"""Write the procedural toy corpus (content/, style/, heldout/)."""
import argparse

from stylestego.data import make_toy_datasets

p = argparse.ArgumentParser(description=__doc__)
p.add_argument("--root", default="data/toy")
p.add_argument("--seed", type=int, default=0)
p.add_argument("--size", type=int, default=96)
p.add_argument("--n-content", type=int, default=8)
p.add_argument("--n-style", type=int, default=4)
p.add_argument("--n-heldout", type=int, default=8)
a = p.parse_args()
dirs = make_toy_datasets(a.root, a.seed, a.n_content, a.n_style, a.n_heldout, a.size)
for name, d in dirs.items():
    print(f"{name:8s} {len(list(d.glob('*.png'))):3d} images in {d}")
