"""Otsu and two-component GMM baselines on wall intensities.

    python3 demos/baselines.py
"""

import numpy as np

from scarcut.baselines import (WallProbe, gmm_classify, gmm_em_fit, node_intensities, otsu_classify,
                               otsu_threshold)
from scarcut.case import prepare_case
from scarcut.evaluation import compute_metrics
from scarcut.phantom import make_phantom, random_phantom_spec

img, lab = make_phantom(random_phantom_spec(11, noise_sigma=0.6))
case = prepare_case(img, lab)
f = node_intensities(case.volume, case.mesh, WallProbe())
print(f"{len(f)} vertex features, range [{f.min():.2f}, {f.max():.2f}]")

thr = otsu_threshold(f)
print(f"Otsu threshold {thr:.3f}: Dice {compute_metrics(otsu_classify(f, thr), case.gt).dice:.3f}")

model, history = gmm_em_fit(f, 2)
print(f"GMM means {np.round(model.means, 3)}, {len(history)} EM iterations, "
      f"log-likelihood {history[0]:.1f} -> {history[-1]:.1f}")
print(f"GMM Dice {compute_metrics(gmm_classify(model, f), case.gt).dice:.3f}")
