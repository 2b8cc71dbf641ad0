"""Hierarchical pooling of local diffusion estimates across box sizes.

For one thermodynamic condition, replicate local estimates for solvent and
solute share a single finite-size slope:

    dhat_i ~ N(d + alpha / L_i, shat_i + tau_i^2)

with bulk coefficients d, per-replicate excess scales tau_i drawn from
zero-truncated normals, half-Cauchy hyperpriors on the truncated-normal
location/scale, a half-normal prior on each d, and alpha uniform on
(0, 0.75).  Posterior simulation uses the Hamiltonian kernel from
``sampling`` over an unconstrained reparameterization with non-centered
tau.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, log_ndtr
from sklearn.base import BaseEstimator

from . import _rng
from .sampling import HmcResult, hmc_chain, rhat

__all__ = [
    "ConditionData",
    "HierParams",
    "SamplerConfig",
    "HierPosterior",
    "log_posterior_hier",
    "loglik_hier",
    "unconstrained_log_posterior",
    "constrain",
    "sample_posterior",
    "summarize",
    "HierarchicalDiffusion",
]

LOG_2PI = math.log(2.0 * math.pi)
ALPHA_MAX = 0.75
D_PRIOR_SCALE = 1.0  # half-normal scale on the bulk coefficients, A^2/ps
HC_SCALE = 1.0       # half-Cauchy scale on the tau hyperparameters


@dataclass
class ConditionData:
    """Replicate local estimates for one (temperature, pressure) condition.

    Arrays are aligned by replicate: box length L_i (A), solvent and solute
    estimates dhat (A^2/ps) with their local posterior variances shat.
    """

    box_lengths: np.ndarray
    dhat_solvent: np.ndarray
    shat_solvent: np.ndarray
    dhat_solute: np.ndarray
    shat_solute: np.ndarray
    temperature: float
    pressure: float
    # Internal switch for prior-predictive checks; regular data needs N >= 2.
    allow_empty: bool = field(default=False, repr=False, compare=False)

    def __post_init__(self):
        arrays = {}
        for name in ("box_lengths", "dhat_solvent", "shat_solvent", "dhat_solute", "shat_solute"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.ndim != 1:
                raise ValueError(f"{name} must be 1-D")
            arrays[name] = arr
            setattr(self, name, arr)
        n = arrays["box_lengths"].size
        if any(a.size != n for a in arrays.values()):
            raise ValueError("replicate arrays must have equal length")
        if n < 2 and not self.allow_empty:
            raise ValueError("need at least 2 replicates")
        if n:
            if not np.all(arrays["box_lengths"] > 0):
                raise ValueError("box lengths must be positive")
            if not (np.all(arrays["shat_solvent"] > 0) and np.all(arrays["shat_solute"] > 0)):
                raise ValueError("shat variances must be positive")
        if not all(np.all(np.isfinite(a)) for a in arrays.values()):
            raise ValueError("replicate arrays must be finite")

    @property
    def n(self) -> int:
        return self.box_lengths.size


@dataclass
class HierParams:
    """One point in the hierarchical model's (constrained) parameter space."""

    d_solute: float
    d_solvent: float
    alpha: float
    tau_solute: np.ndarray
    tau_solvent: np.ndarray
    mu_solute: float
    gamma_solute: float
    mu_solvent: float
    gamma_solvent: float

    def __post_init__(self):
        self.tau_solute = np.asarray(self.tau_solute, dtype=float)
        self.tau_solvent = np.asarray(self.tau_solvent, dtype=float)


def _log_half_cauchy(x: float, scale: float = HC_SCALE) -> float:
    if x < 0:
        return -math.inf
    return math.log(2.0 / (math.pi * scale)) - math.log1p((x / scale) ** 2)


def _log_half_normal(x: float, scale: float) -> float:
    if x < 0:
        return -math.inf
    return 0.5 * math.log(2.0 / math.pi) - math.log(scale) - 0.5 * (x / scale) ** 2


def _log_truncnorm0(tau: np.ndarray, mu: float, gamma: float) -> float:
    """Sum of log densities of a normal(mu, gamma^2) truncated to [0, inf)."""
    z = (tau - mu) / gamma
    norm = log_ndtr(mu / gamma)  # log P(X > 0) for X ~ N(mu, gamma^2)
    return float(np.sum(-0.5 * LOG_2PI - math.log(gamma) - 0.5 * z * z - norm))


def loglik_hier(p: HierParams, d: ConditionData) -> float:
    """Gaussian observation terms only (no priors)."""
    invl = 1.0 / d.box_lengths
    total = 0.0
    for dhat, shat, dd, tau in (
        (d.dhat_solute, d.shat_solute, p.d_solute, p.tau_solute),
        (d.dhat_solvent, d.shat_solvent, p.d_solvent, p.tau_solvent),
    ):
        var = shat + tau**2
        resid = dhat - (dd + p.alpha * invl)
        total += float(np.sum(-0.5 * (LOG_2PI + np.log(var)) - resid**2 / (2.0 * var)))
    return total


def log_posterior_hier(p: HierParams, d: ConditionData) -> float:
    """Joint log density (likelihood + priors); -inf outside the support."""
    values = [p.d_solute, p.d_solvent, p.alpha, p.mu_solute, p.gamma_solute,
              p.mu_solvent, p.gamma_solvent]
    if not all(math.isfinite(v) for v in values):
        return -math.inf
    if not (np.all(np.isfinite(p.tau_solute)) and np.all(np.isfinite(p.tau_solvent))):
        return -math.inf
    if p.d_solute < 0 or p.d_solvent < 0:
        return -math.inf
    if not 0.0 < p.alpha < ALPHA_MAX:
        return -math.inf
    if p.gamma_solute <= 0 or p.gamma_solvent <= 0:
        return -math.inf
    if p.mu_solute < 0 or p.mu_solvent < 0:
        return -math.inf
    if np.any(p.tau_solute < 0) or np.any(p.tau_solvent < 0):
        return -math.inf
    if p.tau_solute.size != d.n or p.tau_solvent.size != d.n:
        raise ValueError("tau arrays must have one entry per replicate")

    out = loglik_hier(p, d)
    out += _log_truncnorm0(p.tau_solute, p.mu_solute, p.gamma_solute)
    out += _log_truncnorm0(p.tau_solvent, p.mu_solvent, p.gamma_solvent)
    out += _log_half_cauchy(p.mu_solute) + _log_half_cauchy(p.gamma_solute)
    out += _log_half_cauchy(p.mu_solvent) + _log_half_cauchy(p.gamma_solvent)
    out += _log_half_normal(p.d_solute, D_PRIOR_SCALE)
    out += _log_half_normal(p.d_solvent, D_PRIOR_SCALE)
    out += -math.log(ALPHA_MAX)
    return out


# ---------------------------------------------------------------------------
# Unconstrained reparameterization for the sampler
#
# theta = [log d_solute, log d_solvent, logit(alpha/0.75),
#          log mu_r, log gamma_r, log mu_w, log gamma_w,
#          w_r (N), w_w (N)]
# with the non-centered tau_i = gamma * exp(w_i), equivalently
# tau_i = mu + gamma * z_i where z_i = exp(w_i) - mu/gamma is a standard
# normal truncated at -mu/gamma.
# ---------------------------------------------------------------------------

N_GLOBAL = 7
_HEAD_NAMES = ["d_solute", "d_solvent", "alpha", "mu_solute", "gamma_solute",
               "mu_solvent", "gamma_solvent"]


def parameter_names(n_replicates: int) -> list[str]:
    names = list(_HEAD_NAMES)
    names += [f"tau_solute[{i}]" for i in range(n_replicates)]
    names += [f"tau_solvent[{i}]" for i in range(n_replicates)]
    return names


def constrain(theta: np.ndarray, n_replicates: int) -> HierParams:
    """Map an unconstrained sampler state to model parameters."""
    theta = np.asarray(theta, dtype=float)
    if theta.size != N_GLOBAL + 2 * n_replicates:
        raise ValueError("theta has wrong length")
    gam_r = math.exp(theta[4])
    gam_w = math.exp(theta[6])
    w_r = theta[N_GLOBAL : N_GLOBAL + n_replicates]
    w_w = theta[N_GLOBAL + n_replicates :]
    return HierParams(
        d_solute=math.exp(theta[0]),
        d_solvent=math.exp(theta[1]),
        alpha=ALPHA_MAX * float(expit(theta[2])),
        tau_solute=gam_r * np.exp(w_r),
        tau_solvent=gam_w * np.exp(w_w),
        mu_solute=math.exp(theta[3]),
        gamma_solute=gam_r,
        mu_solvent=math.exp(theta[5]),
        gamma_solvent=gam_w,
    )


def log_jacobian(theta: np.ndarray, n_replicates: int) -> float:
    """Log |det| of the constraining map at theta."""
    theta = np.asarray(theta, dtype=float)
    s = float(expit(theta[2]))
    out = float(theta[0] + theta[1] + theta[3] + theta[4] + theta[5] + theta[6])
    out += math.log(ALPHA_MAX) + math.log(s) + math.log1p(-s)
    # d tau_i / d w_i = tau_i; with tau = gamma e^w the per-replicate terms
    # are log gamma + w_i.
    w = theta[N_GLOBAL:]
    out += float(np.sum(w)) + n_replicates * (theta[4] + theta[6])
    return out


class _HierTarget:
    """Unconstrained log posterior with analytic gradient for one condition."""

    def __init__(self, data: ConditionData):
        self.n = data.n
        n = self.n
        self.obs = np.concatenate([data.dhat_solute, data.dhat_solvent])
        self.svar = np.concatenate([data.shat_solute, data.shat_solvent])
        self.invl2 = np.tile(1.0 / data.box_lengths, 2)
        self.dim = N_GLOBAL + 2 * n
        self._splits = (slice(0, n), slice(n, 2 * n))

    def __call__(self, theta: np.ndarray):
        n = self.n
        grad = np.zeros(self.dim)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            # Clipping keeps exp finite; absurd states still land at -inf
            # through the priors and the finiteness checks below.
            d_r, d_w = np.exp(np.clip(theta[0:2], -700, 700))
            s = float(expit(theta[2]))
            alpha = ALPHA_MAX * s
            hyp = np.exp(np.clip(theta[3:7], -700, 700))
            mu_r, gam_r, mu_w, gam_w = hyp
            w = theta[N_GLOBAL:]
            ew = np.exp(np.clip(w, -700, 700))
            gam2 = np.repeat([gam_r, gam_w], n)
            mu2 = np.repeat([mu_r, mu_w], n)
            tau = gam2 * ew
            rho_r, rho_w = mu_r / gam_r, mu_w / gam_w
            z = ew - mu2 / gam2

            var = self.svar + tau * tau
            mean = np.repeat([d_r, d_w], n) + alpha * self.invl2
            resid = self.obs - mean

            # Observation terms.
            loglik = np.sum(-0.5 * (LOG_2PI + np.log(var)) - resid * resid / (2.0 * var))
            # Non-centered tau prior plus its Jacobian.
            log_norm_r = float(log_ndtr(rho_r))
            log_norm_w = float(log_ndtr(rho_w))
            lp = loglik + np.sum(-0.5 * LOG_2PI - 0.5 * z * z + w)
            lp -= n * (log_norm_r + log_norm_w)
            # Hyperpriors and remaining Jacobians.
            lp += 4 * math.log(2.0 / (math.pi * HC_SCALE)) \
                - np.log1p((hyp / HC_SCALE) ** 2).sum() + theta[3:7].sum()
            lp += 2 * (0.5 * math.log(2.0 / math.pi) - math.log(D_PRIOR_SCALE)) \
                - (d_r**2 + d_w**2) / (2.0 * D_PRIOR_SCALE**2) + theta[0] + theta[1]
            if s <= 0.0 or s >= 1.0:
                return -math.inf, grad
            lp += math.log(s) + math.log1p(-s)  # uniform(0,0.75) plus Jacobian

            if not np.isfinite(lp):
                return -math.inf, grad

            # Gradient.
            rv = resid / var
            a_term = (resid * resid - var) / (var * var)
            sl_r, sl_w = self._splits
            hc2 = HC_SCALE * HC_SCALE
            grad[0] = d_r * float(np.sum(rv[sl_r])) - d_r * d_r / D_PRIOR_SCALE**2 + 1.0
            grad[1] = d_w * float(np.sum(rv[sl_w])) - d_w * d_w / D_PRIOR_SCALE**2 + 1.0
            grad[2] = float(np.sum(rv * self.invl2)) * ALPHA_MAX * s * (1.0 - s) \
                + 1.0 - 2.0 * s
            lam_r = math.exp(-0.5 * rho_r * rho_r - 0.5 * LOG_2PI - log_norm_r)
            lam_w = math.exp(-0.5 * rho_w * rho_w - 0.5 * LOG_2PI - log_norm_w)
            zsum_r = float(np.sum(z[sl_r]))
            zsum_w = float(np.sum(z[sl_w]))
            tau2a = tau * tau * a_term
            grad[3] = mu_r * (zsum_r / gam_r - n * lam_r / gam_r
                              - 2.0 * mu_r / (hc2 + mu_r * mu_r)) + 1.0
            grad[5] = mu_w * (zsum_w / gam_w - n * lam_w / gam_w
                              - 2.0 * mu_w / (hc2 + mu_w * mu_w)) + 1.0
            grad[4] = float(np.sum(tau2a[sl_r])) - rho_r * zsum_r + n * lam_r * rho_r \
                - 2.0 * gam_r * gam_r / (hc2 + gam_r * gam_r) + 1.0
            grad[6] = float(np.sum(tau2a[sl_w])) - rho_w * zsum_w + n * lam_w * rho_w \
                - 2.0 * gam_w * gam_w / (hc2 + gam_w * gam_w) + 1.0
            grad[N_GLOBAL:] = tau2a - z * ew + 1.0

            if not np.all(np.isfinite(grad)):
                return -math.inf, np.zeros(self.dim)
        return float(lp), grad


def unconstrained_log_posterior(theta: np.ndarray, data: ConditionData):
    """(log density, gradient) of the sampler's unconstrained target."""
    return _HierTarget(data)(np.asarray(theta, dtype=float))


# ---------------------------------------------------------------------------
# Posterior simulation
# ---------------------------------------------------------------------------

@dataclass
class SamplerConfig:
    """Knobs for posterior simulation; defaults match the production budget."""

    chains: int = 4
    burnin: int = 100_000
    samples: int = 100_000
    thin: int = 100
    seed: int = 0
    max_leapfrog: int = 32
    target_accept: float = 0.8
    rhat_max: float = 1.05
    init_jitter: float = 0.5
    workers: int = 1

    def __post_init__(self):
        if self.chains < 1 or self.samples < 1 or self.thin < 1 or self.burnin < 0:
            raise ValueError("sampler budgets must be positive")


@dataclass
class HierPosterior:
    """Retained draws (constrained scale) with summaries and diagnostics."""

    names: list[str]
    draws_by_chain: np.ndarray  # (chains, kept_per_chain, n_params)
    rhat: dict[str, float]
    summaries: dict[str, dict[str, float]]
    converged: bool
    temperature: float
    pressure: float
    config: SamplerConfig
    accept_rates: list[float]
    step_sizes: list[float]

    @property
    def draws(self) -> np.ndarray:
        c, k, p = self.draws_by_chain.shape
        return self.draws_by_chain.reshape(c * k, p)

    def column(self, name: str) -> np.ndarray:
        return self.draws[:, self.names.index(name)]


def _initial_point(data: ConditionData, dim: int) -> np.ndarray:
    x0 = np.zeros(dim)
    if data.n:
        d_r0 = max(float(np.median(data.dhat_solute)), 1e-3)
        d_w0 = max(float(np.median(data.dhat_solvent)), 1e-3)
        spread = float(np.std(np.concatenate([data.dhat_solute, data.dhat_solvent])))
        scale0 = max(0.5 * spread, 1e-4)
    else:
        d_r0 = d_w0 = 0.5
        scale0 = 0.5
    x0[0], x0[1] = math.log(d_r0), math.log(d_w0)
    x0[2] = 0.0  # alpha at 0.375
    x0[3] = x0[5] = math.log(scale0)
    x0[4] = x0[6] = math.log(scale0)
    # w = 0 puts tau at gamma.
    return x0


def sample_posterior(data: ConditionData, cfg: SamplerConfig | None = None) -> HierPosterior:
    """Simulate the posterior for one condition.

    Chains are independent, each driven by a stream derived from
    (cfg.seed, chain index); identical configurations therefore reproduce
    identical draws.  The result is flagged non-converged (but still
    returned) when any parameter's split-chain diagnostic exceeds
    cfg.rhat_max.
    """
    cfg = cfg or SamplerConfig()
    target = _HierTarget(data)
    names = parameter_names(data.n)
    x0 = _initial_point(data, target.dim)

    def run_chain(c: int) -> HmcResult:
        rng = _rng.stream(cfg.seed, _rng.STREAM_HIER, c)
        start = x0 + cfg.init_jitter * _rng.normal(rng, size=target.dim)
        return hmc_chain(
            target,
            start,
            rng,
            n_burnin=cfg.burnin,
            n_samples=cfg.samples,
            thin=cfg.thin,
            max_leapfrog=cfg.max_leapfrog,
            target_accept=cfg.target_accept,
        )

    workers = cfg.workers
    env_cap = os.environ.get("DIFFTRACE_WORKERS")
    if env_cap:
        workers = max(1, min(workers, int(env_cap)))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_chain, range(cfg.chains)))
    else:
        results = [run_chain(c) for c in range(cfg.chains)]

    kept = min(r.draws.shape[0] for r in results)
    raw = np.stack([r.draws[:kept] for r in results])  # unconstrained

    # Transform to the constrained scale.
    con = np.empty_like(raw)
    n = data.n
    for c in range(cfg.chains):
        for k in range(kept):
            p = constrain(raw[c, k], n)
            con[c, k, :N_GLOBAL] = (p.d_solute, p.d_solvent, p.alpha, p.mu_solute,
                                    p.gamma_solute, p.mu_solvent, p.gamma_solvent)
            con[c, k, N_GLOBAL:N_GLOBAL + n] = p.tau_solute
            con[c, k, N_GLOBAL + n:] = p.tau_solvent

    rhats: dict[str, float] = {}
    for j, name in enumerate(names):
        rhats[name] = rhat(con[:, :, j]) if cfg.chains >= 2 and kept >= 2 else math.nan

    flat = con.reshape(cfg.chains * kept, len(names))
    summaries: dict[str, dict[str, float]] = {}
    for j, name in enumerate(names):
        col = flat[:, j]
        q_lo, q_hi = np.quantile(col, [0.025, 0.975])
        summaries[name] = {
            "mean": float(col.mean()),
            "sd": float(col.std(ddof=1)) if col.size > 1 else 0.0,
            "q025": float(q_lo),
            "q975": float(q_hi),
            "rhat": float(rhats[name]),
        }

    finite_rhats = [v for v in rhats.values() if not math.isnan(v)]
    converged = bool(finite_rhats) and all(v <= cfg.rhat_max for v in finite_rhats)
    return HierPosterior(
        names=names,
        draws_by_chain=con,
        rhat=rhats,
        summaries=summaries,
        converged=converged,
        temperature=data.temperature,
        pressure=data.pressure,
        config=cfg,
        accept_rates=[r.accept_rate for r in results],
        step_sizes=[r.step_size for r in results],
    )


def summarize(post: HierPosterior) -> dict:
    """Condition-level summary record (plot-ready)."""
    out = {"temperature": post.temperature, "pressure": post.pressure}
    for name in ("d_solute", "d_solvent", "alpha"):
        s = post.summaries[name]
        out[name] = {k: s[k] for k in ("mean", "sd", "q025", "q975", "rhat")}
    finite = [v for v in post.rhat.values() if not math.isnan(v)]
    out["rhat_max"] = max(finite) if finite else math.nan
    out["converged"] = post.converged
    return out


class HierarchicalDiffusion(BaseEstimator):
    """Estimator wrapper: fit() runs posterior simulation on a ConditionData.

    Exposes the pooled bulk coefficients and finite-size slope as fitted
    attributes; the full posterior is kept in ``posterior_``.
    """

    def __init__(self, chains: int = 4, burnin: int = 100_000, samples: int = 100_000,
                 thin: int = 100, seed: int = 0, max_leapfrog: int = 32,
                 target_accept: float = 0.8, rhat_max: float = 1.05, workers: int = 1):
        self.chains = chains
        self.burnin = burnin
        self.samples = samples
        self.thin = thin
        self.seed = seed
        self.max_leapfrog = max_leapfrog
        self.target_accept = target_accept
        self.rhat_max = rhat_max
        self.workers = workers

    def fit(self, X: ConditionData, y=None):
        cfg = SamplerConfig(
            chains=self.chains, burnin=self.burnin, samples=self.samples,
            thin=self.thin, seed=self.seed, max_leapfrog=self.max_leapfrog,
            target_accept=self.target_accept, rhat_max=self.rhat_max,
            workers=self.workers,
        )
        self.posterior_ = sample_posterior(X, cfg)
        self.d_solute_ = self.posterior_.summaries["d_solute"]["mean"]
        self.d_solvent_ = self.posterior_.summaries["d_solvent"]["mean"]
        self.alpha_ = self.posterior_.summaries["alpha"]["mean"]
        self.converged_ = self.posterior_.converged
        return self
