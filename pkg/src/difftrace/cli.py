"""Command-line interface.

Every subcommand is a thin adapter over the library API; results obtained
here are identical to calling the corresponding functions directly.  A
--config file (TOML or JSON) may supply any option; explicit flags win.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, _json
from .calibration import (
    CandidateResult,
    LJParams,
    RadicalModel,
    WaterModel,
    are,
    halton_candidates,
    orientation_scan,
    winnow,
)
from .gp import dataset_from_segments, map_estimate
from .hier import ConditionData, SamplerConfig, sample_posterior, summarize
from .pipeline import (
    PipelineConfig,
    PipelineError,
    local_estimate_from_dir,
    preprocess_one,
    run_pipeline,
)
from .sizecorr import CorrectionInput, yeh_hummer
from .surface import REFERENCE_COEFFS, SurfaceCoeffs, eval_surface, fit_surface
from .synth import SynthSpec, gen_brownian, gen_condition
from .trajectory import save_trajectory, save_unwrapped


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.exists():
        raise SystemExit(f"config file not found: {path}")
    if p.suffix == ".toml":
        try:
            import tomllib
        except ImportError:
            import tomli as tomllib
        return tomllib.loads(p.read_text())
    return json.loads(p.read_text())


def _opt(args, config: dict, key: str, default=None):
    """Effective option value: explicit flag > config entry > default."""
    v = getattr(args, key, None)
    if v is not None:
        return v
    if key in config:
        return config[key]
    return default


def _emit(obj, out: str | None) -> None:
    if out:
        _json.dump(obj, out)
    else:
        print(_json.dumps(obj))


# ---------------------------------------------------------------------------
# Subcommand handlers
# ---------------------------------------------------------------------------

def cmd_preprocess(args) -> int:
    cfg = _load_config(args.config)
    in_path = _opt(args, cfg, "in_path")
    if not in_path:
        raise SystemExit("preprocess: --in is required")
    fmt = _opt(args, cfg, "format", "csv")
    dt = float(_opt(args, cfg, "dt", 0.25))
    factor = int(_opt(args, cfg, "downsample", 1))
    seg_len = int(_opt(args, cfg, "segment", 1000))
    role = _opt(args, cfg, "role", "O")
    out_dir = Path(_opt(args, cfg, "out", "preprocessed"))

    segments, L = preprocess_one(in_path, fmt, dt, factor, seg_len, role)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = []
    for i, seg in enumerate(segments):
        name = f"segment_{i:03d}.csv"
        save_unwrapped(seg, out_dir / name)
        names.append(name)
    temperature = _opt(args, cfg, "temperature")
    pressure = _opt(args, cfg, "pressure")
    condition = None
    if temperature is not None and pressure is not None:
        condition = {"temperature": float(temperature), "pressure": float(pressure)}
    meta = {
        "source": str(in_path),
        "dt": segments[0].dt,
        "segments": names,
        "box_length": L,
        "species": _opt(args, cfg, "species"),
        "replicate": _opt(args, cfg, "replicate"),
        "condition": condition,
    }
    _json.dump(meta, out_dir / "meta.json")
    print(f"wrote {len(names)} segments to {out_dir}")
    return 0


def cmd_estimate_local(args) -> int:
    cfg = _load_config(args.config)
    in_dir = Path(_opt(args, cfg, "in_path") or "")
    if not in_dir.name:
        raise SystemExit("estimate-local: --in is required")
    dt = _opt(args, cfg, "dt")
    dt = float(dt) if dt is not None else None
    prior_scale = float(_opt(args, cfg, "prior_scale", 0.5))
    if (in_dir / "meta.json").exists():
        dirs = [in_dir]
    else:
        dirs = sorted(d for d in in_dir.iterdir() if (d / "meta.json").exists())
        if not dirs:
            raise SystemExit(f"estimate-local: no preprocessed data under {in_dir}")
    records = [local_estimate_from_dir(d, dt=dt, prior_scale=prior_scale) for d in dirs]
    _emit(records, _opt(args, cfg, "out"))
    return 0 if all(r["converged"] for r in records) else 1


def _parse_condition(text: str) -> tuple[float, float]:
    try:
        parts = dict(kv.split("=") for kv in text.split(","))
        return float(parts["T"]), float(parts["P"])
    except (ValueError, KeyError):
        raise SystemExit(f"bad --condition {text!r}; expected T=<K>,P=<atm>") from None


def cmd_estimate_hier(args) -> int:
    cfg = _load_config(args.config)
    est_path = _opt(args, cfg, "estimates")
    if not est_path:
        raise SystemExit("estimate-hier: --estimates is required")
    records = json.loads(Path(est_path).read_text())
    cond_text = _opt(args, cfg, "condition")

    tagged = [r for r in records if r.get("condition")]
    if cond_text:
        T, P = _parse_condition(cond_text)
        if tagged:
            records = [
                r for r in tagged
                if abs(r["condition"]["temperature"] - T) < 1e-9
                and abs(r["condition"]["pressure"] - P) < 1e-9
            ]
            if not records:
                raise SystemExit(f"no estimates match condition {cond_text}")
    elif tagged:
        conds = {(r["condition"]["temperature"], r["condition"]["pressure"]) for r in tagged}
        if len(conds) > 1:
            raise SystemExit("estimates span several conditions; pass --condition")
        T, P = conds.pop()
    else:
        raise SystemExit("estimates carry no condition tags; pass --condition")

    by_rep: dict = {}
    for r in records:
        key = r.get("replicate")
        by_rep.setdefault(key, {})[r.get("species")] = r
    missing = [k for k, v in by_rep.items() if not {"solvent", "solute"} <= set(v)]
    if missing:
        raise SystemExit(f"replicates missing a species: {missing}")
    reps = sorted(by_rep)
    data = ConditionData(
        box_lengths=[by_rep[k]["solvent"]["box_length"] for k in reps],
        dhat_solvent=[by_rep[k]["solvent"]["d_md"] for k in reps],
        shat_solvent=[by_rep[k]["solvent"]["s_md"] for k in reps],
        dhat_solute=[by_rep[k]["solute"]["d_md"] for k in reps],
        shat_solute=[by_rep[k]["solute"]["s_md"] for k in reps],
        temperature=T,
        pressure=P,
    )
    scfg = SamplerConfig(
        chains=int(_opt(args, cfg, "chains", 4)),
        burnin=int(_opt(args, cfg, "burnin", 100_000)),
        samples=int(_opt(args, cfg, "samples", 100_000)),
        thin=int(_opt(args, cfg, "thin", 100)),
        seed=int(_opt(args, cfg, "seed", 0)),
        rhat_max=float(_opt(args, cfg, "rhat_max", 1.05)),
        workers=int(_opt(args, cfg, "workers", 1)),
    )
    post = sample_posterior(data, scfg)
    rec = {
        "condition": {"temperature": T, "pressure": P},
        "summaries": post.summaries,
        "rhat_max": summarize(post)["rhat_max"],
        "converged": post.converged,
    }
    if _opt(args, cfg, "keep_draws", False):
        rec["names"] = post.names
        rec["draws"] = post.draws
    _emit(rec, _opt(args, cfg, "out"))
    return 0 if post.converged else 1


def cmd_correct_size(args) -> int:
    cfg = _load_config(args.config)
    c = CorrectionInput(
        d_md=float(_opt(args, cfg, "dmd", 0.0)),
        temperature=float(_opt(args, cfg, "temp")),
        viscosity=float(_opt(args, cfg, "eta")),
        box_length=float(_opt(args, cfg, "box")),
        geometry_factor=float(_opt(args, cfg, "geometry_factor", 2.0)),
    )
    corrected = yeh_hummer(c)
    _emit(
        {
            "d_md": c.d_md,
            "d_corrected": corrected,
            "correction": corrected - c.d_md,
            "geometry_factor": c.geometry_factor,
        },
        _opt(args, cfg, "out"),
    )
    return 0


def _parse_ranges(text: str):
    pairs = []
    for chunk in text.split(","):
        lo, hi = chunk.split(":")
        pairs.append((float(lo), float(hi)))
    if len(pairs) != 4:
        raise SystemExit("--ranges needs 4 lo:hi pairs (eps_o,eps_h,rmin2_o,rmin2_h)")
    return tuple(pairs)


def cmd_halton(args) -> int:
    cfg = _load_config(args.config)
    n = int(_opt(args, cfg, "n", 250))
    ranges_text = _opt(args, cfg, "ranges")
    ranges = _parse_ranges(ranges_text) if ranges_text else None
    cands = halton_candidates(n, ranges) if ranges else halton_candidates(n)
    rows = [
        {"index": i + 1, "eps_o": c.eps_o, "eps_h": c.eps_h,
         "rmin2_o": c.rmin2_o, "rmin2_h": c.rmin2_h}
        for i, c in enumerate(cands)
    ]
    out = _opt(args, cfg, "out")
    if out:
        with open(out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["index", "eps_o", "eps_h", "rmin2_o", "rmin2_h"])
            for r in rows:
                writer.writerow([r["index"]] + [
                    format(r[k], ".17g") for k in ("eps_o", "eps_h", "rmin2_o", "rmin2_h")
                ])
    else:
        print(_json.dumps(rows))
    return 0


def _load_molecules(path) -> tuple[WaterModel, RadicalModel]:
    raw = json.loads(Path(path).read_text())
    try:
        return WaterModel(**raw["water"]), RadicalModel(**raw["radical"])
    except (KeyError, TypeError) as exc:
        raise SystemExit(f"bad charges file {path}: {exc}") from None


def cmd_ljscan(args) -> int:
    cfg = _load_config(args.config)
    params_path = _opt(args, cfg, "params")
    charges_path = _opt(args, cfg, "charges")
    if not params_path or not charges_path:
        raise SystemExit("ljscan: --params and --charges are required")
    params = LJParams(**json.loads(Path(params_path).read_text()))
    water, radical = _load_molecules(charges_path)
    orientation = _opt(args, cfg, "orientation", "HO")
    r = np.arange(
        float(_opt(args, cfg, "rmin", 1.0)),
        float(_opt(args, cfg, "rmax", 5.0)) + 0.5 * float(_opt(args, cfg, "step", 0.05)),
        float(_opt(args, cfg, "step", 0.05)),
    )
    from .calibration import SiteGeometry, pair_energy_terms

    rows = []
    for ri in r:
        e_lj, e_coul = pair_energy_terms(
            SiteGeometry(orientation, float(ri)), params, water, radical
        )
        rows.append((float(ri), e_lj, e_coul, e_lj + e_coul))
    out = _opt(args, cfg, "out")
    if out:
        with open(out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["R", "energy_lj", "energy_coulomb", "energy_total"])
            for row in rows:
                writer.writerow([format(v, ".17g") for v in row])
    else:
        for row in rows:
            print(",".join(format(v, ".17g") for v in row))
    return 0


def _parse_band(text: str) -> tuple[float, float]:
    lo, hi = text.split(":")
    return float(lo), float(hi)


def cmd_winnow(args) -> int:
    cfg = _load_config(args.config)
    cand_path = _opt(args, cfg, "candidates")
    if not cand_path:
        raise SystemExit("winnow: --candidates is required")
    reference = float(_opt(args, cfg, "reference", 0.23))
    band_text = _opt(args, cfg, "band")
    band = _parse_band(band_text) if band_text else None
    raw = json.loads(Path(cand_path).read_text())
    cands = []
    for i, rec in enumerate(raw):
        try:
            params = LJParams(**rec["params"])
            d_est = float(rec["d_estimate"])
            err = float(rec["are"]) if "are" in rec else are(d_est, reference)
            ok = bool(rec["orientation_ok"])
        except (KeyError, TypeError, ValueError) as exc:
            raise SystemExit(f"winnow: bad candidate record {i}: {exc}") from None
        cands.append(CandidateResult(params=params, d_estimate=d_est, are=err,
                                     orientation_ok=ok))
    ranked = winnow(cands, band=band)
    if not ranked:
        print("warning: no candidate passed the orientation filter", file=sys.stderr)
    out_rows = [
        {
            "rank": i + 1,
            "params": {"eps_o": c.params.eps_o, "eps_h": c.params.eps_h,
                       "rmin2_o": c.params.rmin2_o, "rmin2_h": c.params.rmin2_h},
            "d_estimate": c.d_estimate,
            "are": c.are,
        }
        for i, c in enumerate(ranked)
    ]
    _emit(out_rows, _opt(args, cfg, "out"))
    return 0


def cmd_fit_surface(args) -> int:
    cfg = _load_config(args.config)
    points_path = _opt(args, cfg, "points")
    if not points_path:
        raise SystemExit("fit-surface: --points is required")
    pts = []
    with open(points_path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"temperature_K", "pressure_atm", "d_mean"}
        if not reader.fieldnames or not need <= set(reader.fieldnames):
            raise SystemExit(
                f"points CSV needs columns temperature_K,pressure_atm,d_mean"
            )
        for row in reader:
            pts.append((float(row["temperature_K"]), float(row["pressure_atm"]),
                        float(row["d_mean"])))
    coeffs = fit_surface(pts)
    rec = {k: getattr(coeffs, k) for k in
           ("c0", "cT", "cP", "cT2", "cP2", "cTP", "cP3")}
    rec.update({"r2": coeffs.r2, "rmse": coeffs.rmse,
                "resid_se": coeffs.resid_se, "df": coeffs.df})
    _emit(rec, _opt(args, cfg, "out"))
    return 0


def cmd_eval_surface(args) -> int:
    cfg = _load_config(args.config)
    coeffs_path = _opt(args, cfg, "coeffs")
    if coeffs_path:
        raw = json.loads(Path(coeffs_path).read_text())
        coeffs = SurfaceCoeffs(**{
            k: raw[k] for k in ("c0", "cT", "cP", "cT2", "cP2", "cTP", "cP3")
        })
    else:
        coeffs = REFERENCE_COEFFS
    T = float(_opt(args, cfg, "temp"))
    P = float(_opt(args, cfg, "pressure"))
    _emit({"temperature": T, "pressure": P, "d": eval_surface(coeffs, T, P)},
          _opt(args, cfg, "out"))
    return 0


def cmd_synth_brownian(args) -> int:
    cfg = _load_config(args.config)
    spec_path = _opt(args, cfg, "spec")
    if not spec_path:
        raise SystemExit("synth brownian: --spec is required")
    raw = json.loads(Path(spec_path).read_text())
    raw.setdefault("drift", (0.0, 0.0, 0.0))
    raw["drift"] = tuple(raw["drift"])
    spec = SynthSpec(**raw)
    out = _opt(args, cfg, "out")
    if not out:
        raise SystemExit("synth brownian: --out is required")
    fmt = _opt(args, cfg, "format", "csv")
    if spec.box is None:
        raise SystemExit("synth brownian: spec needs a box to emit a wrapped file")
    _, wrapped = gen_brownian(spec, return_wrapped=True)
    save_trajectory(wrapped, out, format=fmt)
    print(f"wrote {wrapped.n_frames} frames to {out}")
    return 0


def cmd_synth_condition(args) -> int:
    cfg = _load_config(args.config)
    truths_path = _opt(args, cfg, "truths")
    if not truths_path:
        raise SystemExit("synth condition: --truths is required")
    raw = json.loads(Path(truths_path).read_text())
    shat = raw.get("shat", 1e-5)
    data, truths = gen_condition(
        true_d_solute=float(raw["d_solute"]),
        true_d_solvent=float(raw["d_solvent"]),
        alpha=float(raw["alpha"]),
        tau_params=tuple(raw["tau_params"]),
        n_replicates=int(raw["n_replicates"]),
        box_range=tuple(raw.get("box_range", (20.0, 50.0))),
        shat=tuple(shat) if isinstance(shat, list) else float(shat),
        seed=int(raw.get("seed", 0)),
        temperature=float(raw.get("temperature", 298.0)),
        pressure=float(raw.get("pressure", 1.0)),
    )
    rec = {
        "temperature": data.temperature,
        "pressure": data.pressure,
        "replicates": [
            {
                "box_length": data.box_lengths[i],
                "dhat_solvent": data.dhat_solvent[i],
                "shat_solvent": data.shat_solvent[i],
                "dhat_solute": data.dhat_solute[i],
                "shat_solute": data.shat_solute[i],
            }
            for i in range(data.n)
        ],
    }
    out = _opt(args, cfg, "out")
    if out:
        _json.dump(rec, out)
        _json.dump(truths, str(out) + ".truths.json")
    else:
        print(_json.dumps(rec))
    return 0


def cmd_run(args) -> int:
    raw = _load_config(args.config)
    if not raw:
        raise SystemExit("run: --config is required")
    base = Path(args.config).parent
    if args.out_dir is not None:
        raw["out_dir"] = args.out_dir
    if args.seed is not None:
        raw["seed"] = int(args.seed)
    pcfg = PipelineConfig.from_dict(raw, base_dir=base)
    try:
        result = run_pipeline(pcfg)
    except PipelineError as exc:
        print(str(exc), file=sys.stderr)
        return 3
    print(f"artifacts in {result.out_dir}")
    return result.exit_code


# ---------------------------------------------------------------------------
# Parser wiring
# ---------------------------------------------------------------------------

def _add_config(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML or JSON file supplying any option")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="difftrace",
        description="Diffusion coefficients from periodic-boundary MD trajectories",
    )
    parser.add_argument("--version", action="version", version=f"difftrace {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="unwrap, drift-correct, downsample, segment")
    p.add_argument("--in", dest="in_path")
    p.add_argument("--format", choices=["csv", "jsonl"])
    p.add_argument("--dt", type=float, help="frame spacing of the input, ps")
    p.add_argument("--downsample", type=int)
    p.add_argument("--segment", type=int, help="segment length in frames")
    p.add_argument("--role", help="atom role giving the molecule position")
    p.add_argument("--species", help="tag: solvent or solute")
    p.add_argument("--temperature", type=float)
    p.add_argument("--pressure", type=float)
    p.add_argument("--replicate", type=int)
    p.add_argument("--out")
    _add_config(p)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("estimate-local", help="MAP fit per preprocessed trajectory set")
    p.add_argument("--in", dest="in_path")
    p.add_argument("--dt", type=float, help="override the recorded observation spacing")
    p.add_argument("--prior-scale", dest="prior_scale", type=float)
    p.add_argument("--out")
    _add_config(p)
    p.set_defaults(func=cmd_estimate_local)

    p = sub.add_parser("estimate-hier", help="pool local estimates for one condition")
    p.add_argument("--estimates")
    p.add_argument("--condition", help="T=<K>,P=<atm>")
    p.add_argument("--chains", type=int)
    p.add_argument("--burnin", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--thin", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--rhat-max", dest="rhat_max", type=float)
    p.add_argument("--workers", type=int)
    p.add_argument("--keep-draws", dest="keep_draws", action="store_const", const=True)
    p.add_argument("--out")
    _add_config(p)
    p.set_defaults(func=cmd_estimate_hier)

    p = sub.add_parser("correct-size", help="analytical finite-size correction")
    p.add_argument("--dmd", type=float)
    p.add_argument("--temp", type=float)
    p.add_argument("--eta", type=float, help="shear viscosity, Pa*s")
    p.add_argument("--box", type=float, help="box length, A")
    p.add_argument("--geometry-factor", dest="geometry_factor", type=float)
    p.add_argument("--out")
    _add_config(p)
    p.set_defaults(func=cmd_correct_size)

    p = sub.add_parser("halton", help="quasi-random parameter candidates")
    p.add_argument("--n", type=int)
    p.add_argument("--ranges", help="4 lo:hi pairs, comma separated")
    p.add_argument("--out", help="CSV path (JSON to stdout otherwise)")
    _add_config(p)
    p.set_defaults(func=cmd_halton)

    p = sub.add_parser("ljscan", help="pair-energy curve for one orientation")
    p.add_argument("--params", help="JSON file with eps_o,eps_h,rmin2_o,rmin2_h")
    p.add_argument("--orientation", choices=["OO", "OH", "HO", "HH"])
    p.add_argument("--rmin", type=float)
    p.add_argument("--rmax", type=float)
    p.add_argument("--step", type=float)
    p.add_argument("--charges", help="JSON file with water/radical site constants")
    p.add_argument("--out")
    _add_config(p)
    p.set_defaults(func=cmd_ljscan)

    p = sub.add_parser("winnow", help="filter and rank candidate results")
    p.add_argument("--candidates", help="JSON list of candidate records")
    p.add_argument("--band", help="lo:hi distance band, A")
    p.add_argument("--reference", type=float, help="reference D for ARE, A^2/ps")
    p.add_argument("--out")
    _add_config(p)
    p.set_defaults(func=cmd_winnow)

    p = sub.add_parser("fit-surface", help="fit the log-log polynomial surface")
    p.add_argument("--points", help="CSV: temperature_K,pressure_atm,d_mean")
    p.add_argument("--out")
    _add_config(p)
    p.set_defaults(func=cmd_fit_surface)

    p = sub.add_parser("eval-surface", help="evaluate a fitted surface")
    p.add_argument("--coeffs", help="coeffs JSON (built-in reference if omitted)")
    p.add_argument("--temp", type=float)
    p.add_argument("--pressure", type=float)
    p.add_argument("--out")
    _add_config(p)
    p.set_defaults(func=cmd_eval_surface)

    p = sub.add_parser("synth", help="synthetic-data generators")
    synth_sub = p.add_subparsers(dest="synth_command", required=True)
    ps = synth_sub.add_parser("brownian", help="noisy Brownian trajectory file")
    ps.add_argument("--spec", help="JSON SynthSpec")
    ps.add_argument("--out")
    ps.add_argument("--format", choices=["csv", "jsonl"])
    _add_config(ps)
    ps.set_defaults(func=cmd_synth_brownian)
    ps = synth_sub.add_parser("condition", help="replicate table from the generative model")
    ps.add_argument("--truths", help="JSON with d_solute,d_solvent,alpha,tau_params,...")
    ps.add_argument("--out")
    _add_config(ps)
    ps.set_defaults(func=cmd_synth_condition)

    p = sub.add_parser("run", help="full pipeline from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_run)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
