"""Short 25-Gaussians run for both critics, with sample/critic figures.

    python demos/toy_gaussians.py [iterations] [out_dir]

The full benchmark (5000 iterations, ~5 min on one core) is ``dacal toy``.
This demo defaults to 1000 iterations so it finishes in about a minute and
shows the early phase: both generators spread across the lattice, and the
adaptive penalty weight swings between its bounds while the critic is sharp.
"""
import sys
from pathlib import Path

from dacal.toy import ToyConfig, export_result, run_toy_experiment

iters = int(sys.argv[1]) if len(sys.argv) > 1 else 1000
out = Path(sys.argv[2] if len(sys.argv) > 2 else "runs/demo_toy")
checkpoints = sorted({max(1, iters // 4), iters // 2, iters})

for variant in ("wgan_gp", "adaswgan"):
    result = run_toy_experiment(ToyConfig(variant=variant, iterations=iters, checkpoints=checkpoints))
    lams = [h["lambda"] for h in result.history]
    print(variant)
    for it, (modes, hq) in sorted(result.coverage.items()):
        print(f"  iter {it:5d}: {modes:2d}/25 modes, high-quality fraction {hq:.3f}")
    print(f"  lambda range {min(lams):.3g} .. {max(lams):.3g}")
    for p in export_result(result, out):
        if p.suffix == ".png":
            print(f"  figure: {p}")
