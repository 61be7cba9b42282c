"""Train t-link and n-link networks on a few phantoms and segment a new one.

    python3 demos/learned_graphcut.py
"""

from scarcut.evaluation import compute_metrics
from scarcut.graphcut import segment_case
from scarcut.phantom import make_phantom, random_phantom_spec
from scarcut.pipeline import PipelineConfig, build_case, build_training_library, derive_seed, fit_potentials

cfg = PipelineConfig.from_dict({"seed": 3})
ph = cfg.data["phantom"]


def phantom_case(name):
    seed = derive_seed(cfg.seed, name)
    spec = random_phantom_spec(seed, noise_sigma=ph["noise_sigma"], delta=ph["delta"])
    img, lab = make_phantom(spec)
    return build_case(cfg, img, lab, name, seed)


train = [phantom_case(f"train{i}") for i in range(4)]
lib = build_training_library(cfg, train)
print(f"library: {lib.n_unary} unary patches, {lib.n_pairs} patch pairs, patch size {lib.size}")

tnet, nnet, reports = fit_potentials(cfg, lib)
for kind, rep in reports.items():
    print(f"{kind}: final training loss {rep.final_loss:.3f}")

test = phantom_case("test0")
for lam in (0.0, 0.6):
    res = segment_case(test, tnet, nnet, cfg.segment_config(lam=lam))
    m = compute_metrics(res.labels, test.gt)
    print(f"lambda {lam}: Dice {m.dice:.3f}, sensitivity {m.sensitivity:.3f}, "
          f"energy {res.report['energy']:.1f}")
