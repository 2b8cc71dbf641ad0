"""Ground-truth generators used as oracles for the estimators.

gen_brownian draws latent random-walk paths with additive observation noise
(the exact process the local model assumes); gen_condition draws replicate
estimate tables from the exact hierarchical generative model.  Both are
deterministic functions of their seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _rng
from .hier import ConditionData
from .trajectory import UnwrappedTrajectory, WrappedTrajectory

__all__ = ["SynthSpec", "gen_brownian", "gen_condition", "msd_estimate"]


@dataclass
class SynthSpec:
    """Settings for a synthetic Brownian trajectory.

    sigma2 is the step variance per dimension (A^2 per frame), a2 the
    observation-noise variance (A^2).  drift is a constant velocity in A/ps
    applied on top of the walk; box (A) requests a wrapped counterpart.
    """

    n_frames: int
    sigma2: float
    dt: float
    a2: float = 0.0
    n_mols: int = 1
    dims: int = 3
    drift: tuple[float, float, float] = (0.0, 0.0, 0.0)
    box: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n_frames < 2:
            raise ValueError("n_frames must be >= 2")
        if self.sigma2 < 0 or self.a2 < 0:
            raise ValueError("sigma2 and a2 must be non-negative")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not 1 <= self.dims <= 3:
            raise ValueError("dims must be 1, 2, or 3")


def gen_brownian(spec: SynthSpec, return_wrapped: bool = False):
    """Generate noisy Brownian paths; optionally also the wrapped trajectory.

    The latent path takes iid normal steps of variance sigma2 per active
    dimension; observations add iid normal noise of variance a2.  Inactive
    dimensions (when dims < 3) stay zero.  Returns an UnwrappedTrajectory,
    or (unwrapped, wrapped) when return_wrapped is set (requires box).
    """
    rng = _rng.stream(spec.seed, _rng.STREAM_SYNTH)
    T, M, d = spec.n_frames, spec.n_mols, spec.dims
    steps = np.sqrt(spec.sigma2) * _rng.normal(rng, size=(T - 1, M, d))
    x = np.zeros((T, M, 3))
    np.cumsum(steps, axis=0, out=x[1:, :, :d])
    y = x.copy()
    if spec.a2 > 0:
        y[:, :, :d] += np.sqrt(spec.a2) * _rng.normal(rng, size=(T, M, d))
    drift = np.asarray(spec.drift, dtype=float)
    if np.any(drift != 0):
        t = np.arange(T)[:, None, None] * spec.dt
        y = y + drift * t
    unwrapped = UnwrappedTrajectory(positions=y, dt=spec.dt)
    if not return_wrapped:
        return unwrapped
    if spec.box is None:
        raise ValueError("box is required for a wrapped counterpart")
    boxes = np.full((T, 3), float(spec.box))
    wrapped = WrappedTrajectory(
        positions=y,  # constructor canonicalizes into [0, box)
        boxes=boxes,
        dt=spec.dt,
        mols=np.arange(M),
        atoms=np.array(["O"] * M),
        roles=np.array(["O"] * M),
    )
    return unwrapped, wrapped


def gen_condition(
    true_d_solute: float,
    true_d_solvent: float,
    alpha: float,
    tau_params: tuple[float, float, float, float],
    n_replicates: int,
    box_range: tuple[float, float] = (20.0, 50.0),
    shat: float | tuple[float, float] = 1e-5,
    seed: int = 0,
    temperature: float = 298.0,
    pressure: float = 1.0,
):
    """Draw a replicate table from the exact hierarchical generative model.

    Box lengths are evenly spaced over box_range.  Per replicate, excess
    noise scales tau are drawn from zero-truncated normals with
    (mu_solute, gamma_solute, mu_solvent, gamma_solvent) = tau_params, the
    reported within-run variances are spread uniformly in
    [0.5, 1.5] * shat, and the estimates are drawn from
    N(d + alpha / L, shat_i + tau_i^2).

    Returns (ConditionData, truths) where truths records every latent draw.
    """
    mu_r, gamma_r, mu_w, gamma_w = tau_params
    if isinstance(shat, tuple):
        shat_r_mag, shat_w_mag = shat
    else:
        shat_r_mag = shat_w_mag = float(shat)
    rng = _rng.stream(seed, _rng.STREAM_SYNTH, 1)
    N = int(n_replicates)
    L = np.linspace(box_range[0], box_range[1], N)
    tau_r = np.asarray(_rng.truncated_normal(rng, mu_r, gamma_r, size=N))
    tau_w = np.asarray(_rng.truncated_normal(rng, mu_w, gamma_w, size=N))
    shat_r = shat_r_mag * (0.5 + _rng.uniform_open(rng, size=N))
    shat_w = shat_w_mag * (0.5 + _rng.uniform_open(rng, size=N))
    dhat_r = true_d_solute + alpha / L + np.sqrt(shat_r + tau_r**2) * _rng.normal(rng, size=N)
    dhat_w = true_d_solvent + alpha / L + np.sqrt(shat_w + tau_w**2) * _rng.normal(rng, size=N)
    data = ConditionData(
        box_lengths=L,
        dhat_solvent=dhat_w,
        shat_solvent=shat_w,
        dhat_solute=dhat_r,
        shat_solute=shat_r,
        temperature=temperature,
        pressure=pressure,
    )
    truths = {
        "d_solute": float(true_d_solute),
        "d_solvent": float(true_d_solvent),
        "alpha": float(alpha),
        "tau_params": [float(v) for v in tau_params],
        "tau_solute": tau_r.tolist(),
        "tau_solvent": tau_w.tolist(),
        "seed": int(seed),
    }
    return data, truths


def msd_estimate(u: UnwrappedTrajectory, max_lag: int, dims: int | None = None) -> float:
    """Diffusion coefficient from the mean-squared-displacement slope.

    Averages squared displacements over all time origins and molecules for
    lags 1..max_lag, fits a straight line (with intercept, which absorbs
    any observation-noise offset), and converts the slope to A^2/ps via
    slope / (2 * dims * dt).
    """
    if not 1 <= max_lag < u.n_frames:
        raise ValueError("max_lag must be in [1, n_frames)")
    if dims is None:
        dims = u.positions.shape[2]
    pos = u.positions
    lags = np.arange(1, max_lag + 1)
    msd = np.empty(max_lag)
    for i, lag in enumerate(lags):
        disp = pos[lag:] - pos[:-lag]
        msd[i] = np.mean(np.sum(disp**2, axis=2))
    design = np.column_stack([lags.astype(float), np.ones_like(msd)])
    slope, _ = np.linalg.lstsq(design, msd, rcond=None)[0]
    return float(slope / (2.0 * dims * u.dt))
