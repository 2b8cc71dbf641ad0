"""Gradient-based MCMC kernel and convergence diagnostics.

A fixed-trajectory-length Hamiltonian kernel with jittered leapfrog step
counts, dual-averaging step-size adaptation, and a diagonal metric learned
during warmup.  Everything is driven by an explicit generator, so a chain
is a deterministic function of (target, start, stream).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _rng

__all__ = ["hmc_chain", "rhat", "HmcResult"]

# Dual-averaging constants (Hoffman & Gelman 2014, as used by Stan).
_DA_GAMMA = 0.05
_DA_T0 = 10.0
_DA_KAPPA = 0.75

_DIVERGENCE_THRESHOLD = 1000.0


class _DualAveraging:
    def __init__(self, eps0: float, target: float):
        self.mu = math.log(10.0 * eps0)
        self.target = target
        self.log_eps = math.log(eps0)
        self.log_eps_bar = math.log(eps0)
        self.h_bar = 0.0
        self.m = 0

    def update(self, accept_prob: float) -> float:
        self.m += 1
        eta = 1.0 / (self.m + _DA_T0)
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (self.target - accept_prob)
        self.log_eps = self.mu - math.sqrt(self.m) / _DA_GAMMA * self.h_bar
        w = self.m ** (-_DA_KAPPA)
        self.log_eps_bar = w * self.log_eps + (1.0 - w) * self.log_eps_bar
        return math.exp(self.log_eps)

    @property
    def smoothed(self) -> float:
        return math.exp(self.log_eps_bar)


@dataclass
class HmcResult:
    draws: np.ndarray        # (n_kept, dim), unconstrained coordinates
    accept_rate: float       # over the sampling phase
    step_size: float
    n_divergent: int


def _leapfrog(logp_grad, x, p, grad, eps, n_steps, inv_metric):
    """Standard leapfrog integration; returns (x, p, logp, grad)."""
    p = p + 0.5 * eps * grad
    for i in range(n_steps):
        x = x + eps * inv_metric * p
        lp, grad = logp_grad(x)
        if not np.isfinite(lp):
            return x, p, -np.inf, grad
        if i < n_steps - 1:
            p = p + eps * grad
    p = p + 0.5 * eps * grad
    return x, p, lp, grad


def _find_reasonable_epsilon(logp_grad, x, lp, grad, rng, inv_metric) -> float:
    """Double/halve a trial step until the one-step acceptance crosses 1/2."""
    eps = 1.0
    mom_scale = 1.0 / np.sqrt(inv_metric)
    p = _rng.normal(rng, size=x.size) * mom_scale
    h0 = -lp + 0.5 * np.sum(p * p * inv_metric)
    _, p1, lp1, _ = _leapfrog(logp_grad, x, p, grad, eps, 1, inv_metric)
    log_ratio = (-(-lp1 + 0.5 * np.sum(p1 * p1 * inv_metric))) + h0
    if not np.isfinite(log_ratio):
        log_ratio = -np.inf
    direction = 1.0 if log_ratio > math.log(0.5) else -1.0
    for _ in range(60):
        if direction * log_ratio <= -direction * math.log(2.0):
            break
        eps *= 2.0**direction
        if not 1e-10 < eps < 1e3:
            break
        _, p1, lp1, _ = _leapfrog(logp_grad, x, p, grad, eps, 1, inv_metric)
        log_ratio = (-(-lp1 + 0.5 * np.sum(p1 * p1 * inv_metric))) + h0
        if not np.isfinite(log_ratio):
            log_ratio = -np.inf
    return eps


def hmc_chain(
    logp_grad,
    x0: np.ndarray,
    rng: np.random.Generator,
    *,
    n_burnin: int,
    n_samples: int,
    thin: int = 1,
    max_leapfrog: int = 32,
    target_accept: float = 0.8,
    adapt_metric: bool = True,
) -> HmcResult:
    """Run one chain and return draws thinned from the sampling phase.

    logp_grad(x) must return (log density, gradient).  During burn-in the
    step size follows dual averaging; the diagonal metric is set once from
    draw variances collected over the middle half of burn-in.  The number
    of leapfrog steps per iteration is drawn uniformly from 1..max_leapfrog
    to avoid resonant trajectories.
    """
    x = np.asarray(x0, dtype=float).copy()
    dim = x.size
    lp, grad = logp_grad(x)
    if not np.isfinite(lp):
        raise ValueError("initial point has non-finite log density")

    inv_metric = np.ones(dim)
    mom_scale = np.ones(dim)
    eps = _find_reasonable_epsilon(logp_grad, x, lp, grad, rng, inv_metric)
    da = _DualAveraging(eps, target_accept)

    win_lo, win_hi = n_burnin // 4, (3 * n_burnin) // 4
    mean_acc = np.zeros(dim)
    m2_acc = np.zeros(dim)
    n_acc = 0

    n_kept = n_samples // thin
    draws = np.empty((n_kept, dim))
    kept = 0
    accepted = 0
    n_divergent = 0

    for it in range(n_burnin + n_samples):
        p = _rng.normal(rng, size=dim) * mom_scale
        n_steps = int(rng.integers(1, max_leapfrog + 1))
        h0 = -lp + 0.5 * np.sum(p * p * inv_metric)
        x_new, p_new, lp_new, grad_new = _leapfrog(
            logp_grad, x, p, grad, eps, n_steps, inv_metric
        )
        if np.isfinite(lp_new):
            h1 = -lp_new + 0.5 * np.sum(p_new * p_new * inv_metric)
            log_accept = h0 - h1
            if log_accept < -_DIVERGENCE_THRESHOLD:
                n_divergent += 1
        else:
            log_accept = -np.inf
            n_divergent += 1
        alpha = min(1.0, math.exp(min(log_accept, 0.0)))
        if _rng.uniform_open(rng) < alpha:
            x, lp, grad = x_new, lp_new, grad_new

        if it < n_burnin:
            eps = da.update(alpha)
            if adapt_metric and win_lo <= it < win_hi:
                n_acc += 1
                delta = x - mean_acc
                mean_acc += delta / n_acc
                m2_acc += delta * (x - mean_acc)
                if it == win_hi - 1 and n_acc >= 10:
                    var = m2_acc / (n_acc - 1)
                    # Shrink toward a small floor so unexplored coordinates
                    # cannot zero out the metric.
                    var = (n_acc / (n_acc + 5.0)) * var + (5.0 / (n_acc + 5.0)) * 1e-3
                    inv_metric = var
                    mom_scale = 1.0 / np.sqrt(inv_metric)
                    eps = _find_reasonable_epsilon(logp_grad, x, lp, grad, rng, inv_metric)
                    da = _DualAveraging(eps, target_accept)
            if it == n_burnin - 1:
                eps = da.smoothed
        else:
            accepted += alpha
            k = it - n_burnin + 1
            if k % thin == 0 and kept < n_kept:
                draws[kept] = x
                kept += 1

    accept_rate = accepted / n_samples if n_samples else math.nan
    return HmcResult(
        draws=draws[:kept], accept_rate=accept_rate, step_size=eps, n_divergent=n_divergent
    )


def rhat(chains) -> float:
    """Split-chain potential scale reduction for one scalar parameter.

    Each chain is split in half (middle draw dropped when the length is
    odd); the statistic compares the variance of split-chain means with the
    pooled within-chain variance.  All-constant chains give 1.0 when the
    constants agree and +inf when they do not.
    """
    chains = np.atleast_2d(np.asarray(chains, dtype=float))
    m, n = chains.shape
    if m < 2 or n < 2:
        raise ValueError("rhat needs >= 2 chains with >= 2 draws each")
    half = n // 2
    if half >= 2:
        split = np.concatenate([chains[:, :half], chains[:, n - half :]], axis=0)
    else:
        split = chains
    n_split = split.shape[1]
    within = split.var(axis=1, ddof=1)
    w = within.mean()
    if w == 0.0:
        return 1.0 if np.all(split == split[0, 0]) else math.inf
    b_over_n = split.mean(axis=1).var(ddof=1)
    var_plus = (n_split - 1) / n_split * w + b_over_n
    return float(math.sqrt(var_plus / w))
