"""The mutual-information bound on a case with a known answer.

For a correlated Gaussian pair the ground truth is MI = -0.5*ln(1-rho^2),
so we can watch the sampled bound do its job: near zero for independent
variables, increasingly positive as correlation grows.  The bound's gap
above the truth also grows with correlation — at a perfectly fitted
conditional it converges to rho^2/(1-rho^2), not to the truth — which is
exactly the regime chart below shows.  During training the penalty only
needs to push code dependence toward zero, where the bound is tight.
"""

import math

import numpy as np
import torch

from factorvc.mi import MISample, QNetPair, club_estimate, fit_qnet


def main():
    n = 4000
    print(f"{'rho':>5} {'true MI':>9} {'estimate':>9} {'bound limit':>12}")
    for rho in (0.0, 0.3, 0.5, 0.7, 0.9):
        rng = np.random.default_rng(int(rho * 100))
        x = rng.standard_normal(n)
        y = rho * x + math.sqrt(1 - rho * rho) * rng.standard_normal(n)
        xs = torch.tensor(x, dtype=torch.float32)[:, None]
        ys = torch.tensor(y, dtype=torch.float32)[:, None]

        q = QNetPair(1, 1)
        fit_qnet(q, xs, ys, steps=800, lr=1e-3, seed=int(rho * 100))
        est = float(club_estimate(q, MISample(xs, ys)))

        true = -0.5 * math.log(1 - rho * rho) if rho else 0.0
        limit = rho * rho / (1 - rho * rho) if rho else 0.0
        print(f"{rho:5.1f} {true:9.4f} {est:9.4f} {limit:12.4f}")

    print("\nindependent codes => estimate ~ 0; the training penalty "
          "(weight 0.01) therefore vanishes once the codes stop sharing "
          "information, and only bites while they do.")


if __name__ == "__main__":
    main()
