"""Same experiment, different goals, different best designs.

Three one-parameter problems share the observation model y = G(theta, d) + noise
but predict different quantities.  BM predicts theta itself, T2 a piecewise
linear function of it and T3 a narrow bump.  The script sweeps d over [0, 1]
with the nested Monte Carlo estimator and prints the expected utility next to
the parameter-EIG grid reference.

Run:  python3 demos/goals_change_designs.py  (about two minutes)
"""

import numpy as np

from gooed.core import seed_stream
from gooed.eig import STREAM_PRIOR, NmcConfig, expected_utility_grid, prior_predictive_setup, sweep_nmc
from gooed.problems import builtin_problem

DESIGNS = np.linspace(0.0, 1.0, 11)[:, None]


def sweep(name: str, n: int = 300) -> np.ndarray:
    p = builtin_problem(name)
    cfg = NmcConfig(n_out=n, n_in=n, seed=0)
    cache = prior_predictive_setup(p, n, cfg.bandwidth, seed_stream(cfg.seed, STREAM_PRIOR))
    return np.array([e.u for e in sweep_nmc(p, DESIGNS, cfg, cache)])


def main() -> None:
    theta_eig = np.array(
        [expected_utility_grid(builtin_problem("bm"), d, n_out=4000, rng=np.random.default_rng(0)) for d in DESIGNS]
    )
    curves = {name: sweep(name) for name in ("bm", "t2", "t3")}

    print("expected utility (nats)")
    print("   d   theta-EIG     BM      T2      T3")
    for k, d in enumerate(DESIGNS[:, 0]):
        row = "  ".join(f"{curves[n][k]:6.3f}" for n in ("bm", "t2", "t3"))
        print(f"{d:4.1f}   {theta_eig[k]:7.3f}   {row}")

    print()
    for name, u in curves.items():
        print(f"{name.upper():>3}: best d = {DESIGNS[np.argmax(u), 0]:.1f}")
    print(
        "\nBM and T2 follow the parameter EIG and peak at the right end. T3 only\n"
        "cares about theta near the bump, so it prefers a small d where the\n"
        "observation separates those values best."
    )


if __name__ == "__main__":
    main()
