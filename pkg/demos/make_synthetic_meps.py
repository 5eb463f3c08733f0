"""Write the 200-row synthetic fixture with the MEPS outpatient-expense schema.

The real 2001 MEPS extract (3,328 adults, distributed with the R package
``ssmrob`` as ``MEPS2001``) cannot be bundled. This script draws covariates
with roughly the same marginals and generates ``lambexp``/``dambexp`` from the
generalized selection model at coefficients close to the reference MEPS fit, so the
CLI and the test suite can exercise the full four-equation specification.

Usage::

    python demos/make_synthetic_meps.py tests/data/meps_synthetic.csv
"""

import csv
import sys

import numpy as np

from genheck.model import Theta
from genheck.simulate import gen_dataset

N = 200
SEED = 1  # at n = 200 many seeds put the correlation MLE on the boundary; this one is interior

rng = np.random.default_rng(SEED)
age = np.round(rng.uniform(2.1, 6.4, N), 1)  # tens of years
female = rng.binomial(1, 0.52, N)
educ = np.clip(np.round(rng.normal(12.4, 2.9, N)), 0, 17)
blhisp = rng.binomial(1, 0.32, N)
totchr = np.minimum(rng.poisson(0.5, N), 5)
ins = rng.binomial(1, 0.37, N)
income = np.round(rng.gamma(1.6, 14.0, N), 3)  # thousands of dollars

one = np.ones(N)
designs = {
    "X": np.column_stack([one, age, female, educ, blhisp, totchr, ins]),
    "W": np.column_stack([one, age, female, educ, blhisp, totchr, ins, income]),
    "E": np.column_stack([one, age, totchr, ins]),
    "V": np.column_stack([one, female, totchr]),
}
theta = Theta(
    beta=[5.70, 0.18, 0.25, 0.00, -0.13, 0.43, -0.10],
    gamma=[-0.59, 0.09, 0.63, 0.06, -0.34, 0.76, 0.17, 0.002],
    lam=[0.51, -0.03, -0.10, -0.11],
    kappa=[-0.65, -0.40, -0.44],
)
data = gen_dataset(theta, designs, seed=SEED)
lambexp = data.y

out = sys.argv[1] if len(sys.argv) > 1 else "meps_synthetic.csv"
with open(out, "w", newline="") as fh:
    w = csv.writer(fh)
    w.writerow(["ambexp", "lambexp", "dambexp", "age", "female", "educ", "blhisp", "totchr", "ins", "income"])
    for i in range(N):
        if data.u[i]:
            amb, lamb = f"{np.exp(lambexp[i]):.0f}", f"{lambexp[i]:.6f}"
        else:
            amb, lamb = "0", "NA"
        w.writerow([amb, lamb, int(data.u[i]), age[i], female[i], int(educ[i]), blhisp[i],
                    totchr[i], ins[i], income[i]])
print(f"wrote {out}: {N} rows, {N - int(data.u.sum())} with zero expenditure")
