"""End-to-end orchestration: preprocess -> local estimates -> pooled
posterior -> condition summaries, with deterministic seeds and
machine-readable artifacts (estimates.json, posterior.json, summary.csv,
manifest.json)."""

from __future__ import annotations

import csv
import hashlib
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, _json, _rng
from .gp import DEFAULT_PRIOR_SCALE, dataset_from_segments, map_estimate
from .hier import ConditionData, SamplerConfig, sample_posterior, summarize
from .sizecorr import box_length
from .trajectory import downsample, load_trajectory, remove_drift, segment, unwrap

__all__ = ["PipelineConfig", "PipelineError", "run_pipeline", "version_and_provenance",
           "preprocess_one", "local_estimate_from_dir"]


class PipelineError(RuntimeError):
    """Stage-tagged pipeline failure."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass
class ReplicateSpec:
    solvent: str
    solute: str
    format: str = "csv"


@dataclass
class ConditionSpec:
    temperature: float
    pressure: float
    replicates: list[ReplicateSpec] = field(default_factory=list)


@dataclass
class PipelineConfig:
    """Validated run configuration.

    All randomness downstream derives from `seed`; per-condition sampler
    seeds come from SeedSequence(seed, (stage, condition index)).
    """

    out_dir: str
    conditions: list[ConditionSpec]
    dt: float = 0.25
    downsample_factor: int = 2
    segment_length: int = 1000
    role: str = "O"
    chains: int = 4
    burnin: int = 5000
    samples: int = 5000
    thin: int = 5
    seed: int = 0
    max_leapfrog: int = 32
    rhat_max: float = 1.05
    prior_scale: float = DEFAULT_PRIOR_SCALE
    keep_draws: bool = False
    workers: int = 1

    @classmethod
    def from_dict(cls, raw: dict, base_dir: str | Path = ".") -> "PipelineConfig":
        base = Path(base_dir)
        known = {
            "out_dir", "conditions", "dt", "downsample_factor", "segment_length",
            "role", "chains", "burnin", "samples", "thin", "seed", "max_leapfrog",
            "rhat_max", "prior_scale", "keep_draws", "workers",
        }
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        conds = []
        for c in raw.get("conditions", []):
            reps = [
                ReplicateSpec(
                    solvent=str(base / r["solvent"]),
                    solute=str(base / r["solute"]),
                    format=r.get("format", "csv"),
                )
                for r in c.get("replicates", [])
            ]
            conds.append(
                ConditionSpec(
                    temperature=float(c["temperature"]),
                    pressure=float(c["pressure"]),
                    replicates=reps,
                )
            )
        kwargs = {k: v for k, v in raw.items() if k != "conditions"}
        if "out_dir" in kwargs:
            kwargs["out_dir"] = str(base / kwargs["out_dir"])
        return cls(conditions=conds, **kwargs)

    def validate(self) -> None:
        if not self.conditions:
            raise ValueError("config lists no conditions")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        for v, name in ((self.downsample_factor, "downsample_factor"),
                        (self.segment_length, "segment_length"),
                        (self.chains, "chains"), (self.samples, "samples"),
                        (self.thin, "thin")):
            if v < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.burnin < 0:
            raise ValueError("burnin must be >= 0")
        for cond in self.conditions:
            if not cond.replicates:
                raise ValueError(
                    f"condition T={cond.temperature},P={cond.pressure} has no replicates"
                )
            for rep in cond.replicates:
                for p in (rep.solvent, rep.solute):
                    if not os.path.exists(p):
                        raise ValueError(f"input path not found: {p}")

    def to_dict(self) -> dict:
        return {
            "out_dir": self.out_dir,
            "dt": self.dt,
            "downsample_factor": self.downsample_factor,
            "segment_length": self.segment_length,
            "role": self.role,
            "chains": self.chains,
            "burnin": self.burnin,
            "samples": self.samples,
            "thin": self.thin,
            "seed": self.seed,
            "max_leapfrog": self.max_leapfrog,
            "rhat_max": self.rhat_max,
            "prior_scale": self.prior_scale,
            "keep_draws": self.keep_draws,
            "workers": self.workers,
            "conditions": [
                {
                    "temperature": c.temperature,
                    "pressure": c.pressure,
                    "replicates": [
                        {"solvent": r.solvent, "solute": r.solute, "format": r.format}
                        for r in c.replicates
                    ],
                }
                for c in self.conditions
            ],
        }


def config_hash(cfg: PipelineConfig) -> str:
    return hashlib.sha256(_json.dumps(cfg.to_dict()).encode()).hexdigest()


def version_and_provenance(cfg: PipelineConfig) -> dict:
    """Manifest record: version, config hash, seed derivation, defaults."""
    return {
        "tool": "difftrace",
        "version": __version__,
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "seed_derivation": "SeedSequence(seed, (stage, condition_index, chain))",
        "defaults": {
            "gp_prior_scale": cfg.prior_scale,
            "d_prior_scale": 1.0,
            "hyperprior_scale": 1.0,
            "alpha_support": [0.0, 0.75],
            "target_accept": 0.8,
        },
    }


def preprocess_one(path, fmt: str, dt: float, downsample_factor: int,
                   segment_length: int, role: str = "O"):
    """Load, unwrap, drift-correct, downsample, and segment one file.

    Returns (segments, box_length_A).
    """
    w = load_trajectory(path, format=fmt, dt=dt)
    u = remove_drift(unwrap(w, role=role))
    if downsample_factor > 1:
        u = downsample(u, downsample_factor)
    segments = segment(u, segment_length)
    return segments, box_length(w.volumes())


def local_estimate_from_dir(directory, dt: float | None = None,
                            prior_scale: float = DEFAULT_PRIOR_SCALE) -> dict:
    """Run the local MAP fit on a preprocessed directory (see the CLI's
    `preprocess`); returns the estimate record as a dict."""
    from .trajectory import load_unwrapped
    import json

    directory = Path(directory)
    meta = json.loads((directory / "meta.json").read_text())
    eff_dt = float(dt) if dt is not None else float(meta["dt"])
    segments = [
        load_unwrapped(directory / name, dt=eff_dt, drift_removed=True)
        for name in meta["segments"]
    ]
    data = dataset_from_segments(segments)
    est = map_estimate(data, prior_scale=prior_scale)
    return {
        "condition": meta.get("condition"),
        "species": meta.get("species"),
        "replicate": meta.get("replicate"),
        "box_length": meta.get("box_length"),
        "d_md": est.d_md,
        "s_md": est.s_md,
        "a2_hat": est.a2_hat,
        "n_obs": est.n_obs,
        "converged": est.converged,
    }


def _condition_seed(seed: int, index: int) -> int:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(_rng.STREAM_HIER, index))
    return int(ss.generate_state(1, np.uint64)[0] >> 1)


@dataclass
class PipelineResult:
    exit_code: int
    out_dir: str
    summary_rows: list[dict]


def run_pipeline(cfg: PipelineConfig) -> PipelineResult:
    """Execute all stages; artifacts land in cfg.out_dir.

    Exit code 0 only if every optimizer and every sampler converged.  On a
    stage failure, partial outputs are kept and the manifest records the
    failed stage.
    """
    try:
        cfg.validate()
    except ValueError as exc:
        raise PipelineError("validate", str(exc)) from exc

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = version_and_provenance(cfg)
    manifest["complete"] = False
    manifest["failed_stage"] = None
    _json.dump(manifest, out / "manifest.json")

    workers = cfg.workers
    env_cap = os.environ.get("DIFFTRACE_WORKERS")
    if env_cap:
        workers = max(1, min(workers, int(env_cap)))

    all_converged = True

    # Stage 1+2: preprocess and local estimation, per replicate and species.
    def one_estimate(args):
        cond_idx, rep_idx, species, path, fmt = args
        segments, L = preprocess_one(
            path, fmt, cfg.dt, cfg.downsample_factor, cfg.segment_length, cfg.role
        )
        data = dataset_from_segments(segments)
        est = map_estimate(data, prior_scale=cfg.prior_scale)
        cond = cfg.conditions[cond_idx]
        return {
            "condition": {"temperature": cond.temperature, "pressure": cond.pressure},
            "species": species,
            "replicate": rep_idx,
            "box_length": L,
            "d_md": est.d_md,
            "s_md": est.s_md,
            "a2_hat": est.a2_hat,
            "n_obs": est.n_obs,
            "converged": est.converged,
        }

    jobs = []
    for ci, cond in enumerate(cfg.conditions):
        for ri, rep in enumerate(cond.replicates):
            jobs.append((ci, ri, "solvent", rep.solvent, rep.format))
            jobs.append((ci, ri, "solute", rep.solute, rep.format))
    try:
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                records = list(pool.map(one_estimate, jobs))
        else:
            records = [one_estimate(j) for j in jobs]
    except Exception as exc:
        _fail(out, manifest, "estimate-local")
        raise PipelineError("estimate-local", str(exc)) from exc

    _json.dump(records, out / "estimates.json")
    all_converged &= all(r["converged"] for r in records)

    # Stage 3: hierarchical pooling per condition.
    posteriors = []
    summaries = []
    try:
        for ci, cond in enumerate(cfg.conditions):
            recs = [r for r in records
                    if r["condition"]["temperature"] == cond.temperature
                    and r["condition"]["pressure"] == cond.pressure]
            by_rep: dict[int, dict] = {}
            for r in recs:
                by_rep.setdefault(r["replicate"], {})[r["species"]] = r
            reps = sorted(by_rep)
            data = ConditionData(
                box_lengths=[by_rep[i]["solvent"]["box_length"] for i in reps],
                dhat_solvent=[by_rep[i]["solvent"]["d_md"] for i in reps],
                shat_solvent=[by_rep[i]["solvent"]["s_md"] for i in reps],
                dhat_solute=[by_rep[i]["solute"]["d_md"] for i in reps],
                shat_solute=[by_rep[i]["solute"]["s_md"] for i in reps],
                temperature=cond.temperature,
                pressure=cond.pressure,
            )
            scfg = SamplerConfig(
                chains=cfg.chains, burnin=cfg.burnin, samples=cfg.samples,
                thin=cfg.thin, seed=_condition_seed(cfg.seed, ci),
                max_leapfrog=cfg.max_leapfrog, rhat_max=cfg.rhat_max,
                workers=workers,
            )
            post = sample_posterior(data, scfg)
            summary = summarize(post)
            rec = {
                "condition": {"temperature": cond.temperature, "pressure": cond.pressure},
                "sampler_seed": scfg.seed,
                "summaries": post.summaries,
                "rhat_max": summary["rhat_max"],
                "converged": post.converged,
            }
            if cfg.keep_draws:
                rec["names"] = post.names
                rec["draws"] = post.draws
            posteriors.append(rec)
            summaries.append(summary)
            all_converged &= post.converged
    except Exception as exc:
        _fail(out, manifest, "estimate-hier")
        raise PipelineError("estimate-hier", str(exc)) from exc

    _json.dump(posteriors, out / "posterior.json")

    # Stage 4: one summary row per condition.
    with open(out / "summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([
            "temperature_K", "pressure_atm",
            "d_solute_mean", "d_solute_q025", "d_solute_q975",
            "d_solvent_mean", "d_solvent_q025", "d_solvent_q975",
            "alpha_mean", "alpha_q025", "alpha_q975",
            "rhat_max", "converged",
        ])
        for s in summaries:
            row = [format(s["temperature"], ".17g"), format(s["pressure"], ".17g")]
            for name in ("d_solute", "d_solvent", "alpha"):
                row += [format(s[name][k], ".17g") for k in ("mean", "q025", "q975")]
            row += [format(s["rhat_max"], ".17g"), str(bool(s["converged"])).lower()]
            writer.writerow(row)

    manifest["complete"] = True
    _json.dump(manifest, out / "manifest.json")
    return PipelineResult(
        exit_code=0 if all_converged else 1,
        out_dir=str(out),
        summary_rows=summaries,
    )


def _fail(out: Path, manifest: dict, stage: str) -> None:
    manifest["complete"] = False
    manifest["failed_stage"] = stage
    _json.dump(manifest, out / "manifest.json")
