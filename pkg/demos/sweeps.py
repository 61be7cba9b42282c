"""Full pipeline run followed by a lambda sweep over the trained potentials.

Outputs land in ``demo_run/`` (or the directory given as the first argument).

    python3 demos/sweeps.py [out_dir]
"""

import sys

import numpy as np

from scarcut.neural import load_model
from scarcut.pipeline import PipelineConfig, Runner, run_pipeline, sweep_lambda

out = sys.argv[1] if len(sys.argv) > 1 else "demo_run"
cfg = PipelineConfig.from_dict({"n_test": 4})
run_pipeline(cfg, out)
print(open(f"{out}/metrics.csv").read())

r = Runner(cfg, out)
cases = [r.case(e) for e in r.role("test")]
lams = cfg.data["sweep"]["lambdas"]
rows = sweep_lambda(cfg, cases, load_model(f"{out}/tnet.bin"), load_model(f"{out}/nnet.bin"), lams)
for lam in lams:
    d = [m.dice for l, m, _ in rows if l == lam]
    print(f"lambda {lam:4.1f}: mean Dice {np.mean(d):.3f}")
