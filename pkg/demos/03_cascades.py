"""Ruelle cascades and the Bolthausen-Sznitman invariance.

Draws a cascade for the one-step fixture, shows the weight profile and the
field variances on its leaves, then runs the KS invariance statistic.
"""

import numpy as np

from spinlab.cascade import bs_invariance_stat, sample_cascade, sample_fields
from spinlab.model import fixture_f1
from spinlab.seeding import derive_rng

if __name__ == "__main__":
    xi, zeta = fixture_f1()
    rng = derive_rng(3, 0)
    tree = sample_cascade(zeta, 4096, rng)
    w = np.sort(tree.weights)[::-1]
    print(f"{tree.n_leaves} leaves; top weights {np.round(w[:5], 4)}; sum of squares {np.sum(w**2):.3f}")

    fields = sample_fields(tree, xi, 2000, rng)
    print(f"Var Z = {fields.z[0].var():.4f} (expect 0.25), Var Y = {fields.y[0].var():.4f} (expect 0.125)")

    for m, t in ((0.5, 1.0), (0.9, 0.5)):
        rep = bs_invariance_stat(m, t, 4096, 10**4, derive_rng(3, 1))
        print(f"m={m}, t={t}: KS weight {rep.ks_max_weight:.4f}, KS mean field {rep.ks_mean_field:.4f}")
