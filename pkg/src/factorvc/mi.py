"""Variational upper-bound estimation of mutual information between codes.

Each pairwise estimator carries a conditional diagonal Gaussian q(y|x)
(mean and log-variance nets).  The q-nets are fitted by maximum
likelihood on detached codes; the contrastive upper bound

    (1/N^2) sum_i sum_j [ log q(y_i|x_i) - log q(y_j|x_i) ]

is then used as a minimization target whose gradients reach the codes
but never the q parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
from torch.func import functional_call

LOG_TWO_PI = 1.8378770664093453  # ln(2*pi)
LOGVAR_CLAMP = 10.0

__all__ = ["MISample", "QNetPair", "qnet_loglik", "club_estimate",
           "CodeMIEstimator", "qnet_train_step", "fit_qnet"]


@dataclass
class MISample:
    x: torch.Tensor  # (N, d_x)
    y: torch.Tensor  # (N, d_y)

    def __post_init__(self):
        if self.x.dim() != 2 or self.y.dim() != 2:
            raise ValueError("samples must be (N, d) matrices")
        if self.x.shape[0] != self.y.shape[0] or self.x.shape[0] < 1:
            raise ValueError("x and y must pair N >= 1 rows")
        if not (torch.isfinite(self.x).all() and torch.isfinite(self.y).all()):
            raise ValueError("samples must be finite")


class QNetPair(nn.Module):
    """Conditional Gaussian q(y|x) with diagonal covariance."""

    def __init__(self, in_dim, out_dim, hidden=64):
        super().__init__()
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.mean_net = nn.Sequential(
            nn.Linear(in_dim, hidden), nn.Tanh(),
            nn.Linear(hidden, hidden), nn.Tanh(),
            nn.Linear(hidden, out_dim))
        self.logvar_net = nn.Sequential(
            nn.Linear(in_dim, hidden), nn.Tanh(),
            nn.Linear(hidden, hidden), nn.Tanh(),
            nn.Linear(hidden, out_dim))

    def forward(self, x):
        mu = self.mean_net(x)
        logvar = torch.clamp(self.logvar_net(x), -LOGVAR_CLAMP, LOGVAR_CLAMP)
        return mu, logvar


def _paired_log_density(mu, logvar, y):
    """log q(y_i | x_i) rowwise, summed over output dims -> (N,)."""
    return (-0.5 * (LOG_TWO_PI + logvar + (y - mu) ** 2 / logvar.exp())).sum(-1)


def _check_dims(q: QNetPair, s: MISample):
    if s.x.shape[1] != q.in_dim or s.y.shape[1] != q.out_dim:
        raise ValueError(
            f"sample dims ({s.x.shape[1]}, {s.y.shape[1]}) do not match "
            f"q-net ({q.in_dim}, {q.out_dim})")


def qnet_loglik(q: QNetPair, s: MISample):
    """Mean log-likelihood of paired rows; ascend this to fit q."""
    _check_dims(q, s)
    mu, logvar = q(s.x)
    return _paired_log_density(mu, logvar, s.y).mean()


def _frozen_forward(q: QNetPair, x):
    """Run q with parameters detached: gradients reach x, never q."""
    params = {name: p.detach() for name, p in q.named_parameters()}
    return functional_call(q, params, (x,))


def club_estimate(q: QNetPair, s: MISample):
    """Contrastive log-ratio upper bound on I(X; Y) from paired samples.

    q's parameters are held fixed here by construction; only the sample
    tensors receive gradients.  The negative (marginal) term uses the
    algebraic expansion of mean_j (y_j - mu_i)^2, which keeps the cost
    linear in N while matching the double sum exactly.
    """
    _check_dims(q, s)
    n = s.x.shape[0]
    if n == 1:
        # the double sum collapses: log q(y1|x1) - log q(y1|x1)
        return (s.x.sum() + s.y.sum()) * 0.0
    mu, logvar = _frozen_forward(q, s.x)
    var = logvar.exp()
    positive = _paired_log_density(mu, logvar, s.y).mean()
    m1 = s.y.mean(dim=0)
    m2 = (s.y ** 2).mean(dim=0)
    sq_to_marginal = m2 - 2.0 * mu * m1 + mu ** 2  # mean_j (y_j - mu_i)^2
    negative = (-0.5 * (LOG_TWO_PI + logvar + sq_to_marginal / var)).sum(-1).mean()
    return positive - negative


class CodeMIEstimator(nn.Module):
    """Three independent pairwise q-nets over the speaker-irrelevant codes.

    Pair keys condition on the first code: "rp" models q(z_p | z_r),
    "rc" models q(z_c | z_r), "pc" models q(z_c | z_p).
    """

    PAIRS = ("rp", "rc", "pc")

    def __init__(self, d_r, d_p, d_c, hidden=64):
        super().__init__()
        self.qnets = nn.ModuleDict({
            "rp": QNetPair(d_r, d_p, hidden),
            "rc": QNetPair(d_r, d_c, hidden),
            "pc": QNetPair(d_p, d_c, hidden),
        })

    @staticmethod
    def _flatten(codes):
        flat = lambda z: z.reshape(-1, z.shape[-1])
        return {"r": flat(codes.z_r), "p": flat(codes.z_p), "c": flat(codes.z_c)}

    def _samples(self, codes):
        f = self._flatten(codes)
        return {key: MISample(f[key[0]], f[key[1]]) for key in self.PAIRS}

    def mi_loss(self, codes):
        """Sum of the three pairwise upper bounds over per-frame samples."""
        samples = self._samples(codes)
        return sum(club_estimate(self.qnets[k], samples[k]) for k in self.PAIRS)

    def loglik(self, codes):
        samples = self._samples(codes)
        return sum(qnet_loglik(self.qnets[k], samples[k]) for k in self.PAIRS)


def qnet_train_step(estimator: CodeMIEstimator, codes, optimizer):
    """One likelihood-ascent step on detached codes; returns the NLL."""
    detached = type(codes)(z_r=codes.z_r.detach(), z_p=codes.z_p.detach(),
                           z_c=codes.z_c.detach(), z_t=codes.z_t.detach())
    optimizer.zero_grad()
    nll = -estimator.loglik(detached)
    nll.backward()
    optimizer.step()
    return float(nll.detach())


def fit_qnet(q: QNetPair, x, y, steps, lr=1e-3, seed=0):
    """Fit a single q-net to paired data by full-batch Adam; test harness."""
    torch.manual_seed(int(seed))
    sample = MISample(x, y)
    opt = torch.optim.Adam(q.parameters(), lr=lr)
    for _ in range(steps):
        opt.zero_grad()
        (-qnet_loglik(q, sample)).backward()
        opt.step()
    return q
