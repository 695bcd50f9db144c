"""Tour of the probability heads, centered on the zero-inflated NB.

Sparse trip counts mix structural zeros (no demand at all) with
sampling zeros (demand exists, none materialized this window). The
ZINB head separates the two through its pi parameter.
Run with `python3 demos/02_distributions.py`.
"""

import numpy as np

from odcast import get_head, nb_log_pmf, zinb_log_pmf

pi, n, p = 0.6, 2.0, 0.4
ys = np.arange(8)

print(f"ZINB(pi={pi}, n={n}, p={p}) against plain NB(n, p):")
print("  y    P_zinb    P_nb")
for y, lz, ln in zip(ys, zinb_log_pmf(ys, pi, n, p), nb_log_pmf(ys, n, p)):
    print(f"  {y}   {np.exp(lz):7.4f}   {np.exp(ln):7.4f}")
print("the extra mass at zero comes from the structural-zero gate\n")

zinb = get_head("zinb")
params = (np.full(4, pi), np.full(4, n), np.full(4, p))
print("head API on a vector of parameter sets:")
print("  mean   ", zinb.mean(params))
print("  median ", zinb.median(params))
print("  q10/q90", zinb.quantile(0.1, params), zinb.quantile(0.9, params))

rng = np.random.default_rng(7)
samples = np.array([zinb.sample(params, rng) for _ in range(4000)])
print(f"\n4000 sampled vectors: zero rate {np.mean(samples == 0):.3f}"
      f" (theory {pi + (1 - pi) * p ** n:.3f}),"
      f" mean {samples.mean():.3f}"
      f" (theory {(1 - pi) * n * (1 - p) / p:.3f})")

print("\nall four heads on the same location/scale question:")
for name in ("zinb", "nb", "gaussian", "truncnormal"):
    head = get_head(name)
    print(f"  {name:12s} params={head.param_names}"
          f" discrete={head.discrete}")

# The discrete heads answer quantile queries by walking the pmf, so
# intervals are integer-valued; continuous heads invert a CDF.
nb = get_head("nb")
print("\nNB 80% interval at (n=2, p=0.4):",
      (int(nb.quantile(0.1, (n, p))), int(nb.quantile(0.9, (n, p)))))
gauss = get_head("gaussian")
print("Gaussian 80% interval at (mu=3, sigma=2):",
      tuple(round(float(gauss.quantile(q, (3.0, 2.0))), 2)
            for q in (0.1, 0.9)))
