"""Sample-size threshold for a Gaussian model and the finite-sample bound at that size.

Computes n*, simulates PCA at n*, and compares the empirical (1 - delta)
quantile of the excess risk with the bound 75 E||H||^2 / (n delta).
"""

import argparse

import numpy as np

from grassrisk.models import GaussianModel
from grassrisk.moments import (
    MaxDeviationEstimator,
    asymptotic_law,
    dimension_factor,
    gaussian_fourth_moments,
    gaussian_matrix_variance,
    sample_size_threshold,
    variance_params,
)
from grassrisk.montecarlo import finite_sample_check, run_trials


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--eigenvalues", default="2,1")
    ap.add_argument("-k", type=int, default=1)
    ap.add_argument("--delta", type=float, default=0.1)
    ap.add_argument("--replicates", type=int, default=200)
    ap.add_argument("--trials", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=20240607)
    args = ap.parse_args()

    model = GaussianModel(np.diag([float(x) for x in args.eigenvalues.split(",")]))
    spec = model.spectral_model(args.k)
    t = gaussian_fourth_moments(spec)
    law = asymptotic_law(spec, t)
    vp = variance_params(spec, t, seed=args.seed)
    s_param = dimension_factor(spec.d) * gaussian_matrix_variance(spec)
    r = MaxDeviationEstimator(model.sample, spec.matrix, replicates=args.replicates, seed=args.seed)
    res = sample_size_threshold(spec, vp.v_big, vp.nu, s_param, r, args.delta)
    print(f"V={vp.v_big:.6g} nu={vp.nu:.6g} S={s_param:.6g} n*={res.n_star} r(n*)={res.r_at_n_star:.4g}")
    chk = finite_sample_check(run_trials(model, res.n_star, args.trials, args.seed, args.k, jobs=4), law, args.delta)
    print(f"empirical quantile {chk.empirical_quantile:.4e} <= bound {chk.bound:.4e}: {chk.holds}")


if __name__ == "__main__":
    main()
