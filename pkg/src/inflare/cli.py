"""Command-line front end.

Subcommands: gen-data, train, flow, roundtrip, coverage, hmc, pr,
residual-acf, oracle-check. Every run writes a manifest (config hash, seed,
versions) plus metrics.json, CSV artifacts, and optional SVG plots into the
output directory. Exit codes: 0 success, 1 runtime failure (diagnostic on
stderr), 2 usage error.

Configuration comes from an optional TOML or JSON file (--config) with
command-line flags taking precedence; unknown config keys are rejected.
Environment: INFLARE_THREADS caps worker threads (applied before numpy
loads), INFLARE_SEED sets the default seed.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

# Heavy imports happen inside handlers so INFLARE_THREADS can take effect
# before the BLAS runtime is loaded.


def _apply_thread_cap() -> None:
    cap = os.environ.get("INFLARE_THREADS")
    if cap:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
            os.environ.setdefault(var, cap)


def _default_seed() -> int:
    return int(os.environ.get("INFLARE_SEED", "0"))


def _load_config_file(path: str) -> dict:
    text = Path(path).read_bytes()
    if path.endswith(".json"):
        return json.loads(text)
    import tomli

    return tomli.loads(text.decode("utf-8"))


def _resolve_config(args: argparse.Namespace, defaults: dict) -> dict:
    """defaults < config file < explicit flags; unknown file keys rejected."""
    resolved = dict(defaults)
    if getattr(args, "config", None):
        file_cfg = _load_config_file(args.config)
        unknown = sorted(set(file_cfg) - set(defaults))
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        resolved.update(file_cfg)
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            resolved[key] = value
    if resolved.get("seed") is None:
        resolved["seed"] = _default_seed()
    return resolved


def _config_hash(cfg: dict) -> str:
    blob = json.dumps({k: v for k, v in cfg.items() if k != "out"}, sort_keys=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _write_outputs(out: Path, command: str, cfg: dict, metrics: dict, artifacts: list[str]) -> None:
    import numpy

    from . import __version__

    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "config": {k: v for k, v in cfg.items() if k != "out"},
        "config_hash": _config_hash(cfg),
        "seed": cfg.get("seed"),
        "versions": {
            "inflare": __version__,
            "numpy": numpy.__version__,
            "python": ".".join(str(v) for v in sys.version_info[:3]),
        },
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    payload = {
        "command": command,
        "config_hash": _config_hash(cfg),
        "seed": cfg.get("seed"),
        "metrics": {k: float(v) for k, v in metrics.items()},
        "artifacts": sorted(artifacts),
    }
    (out / "metrics.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _parse_radii(spec: str) -> list[float]:
    import numpy as np

    if ":" in spec:
        lo, hi, count = spec.split(":")
        return [float(r) for r in np.linspace(float(lo), float(hi), int(count))]
    return [float(r) for r in spec.split(",")]


def _build_schedule(cfg: dict):
    from .schedule import InflationSchedule

    kind = cfg["schedule"]
    if kind == "prp":
        rho = cfg["rho"] if cfg["rho"] is not None else 2.0
        t_max = cfg["t_max"] if cfg["t_max"] is not None else 7.01
        return InflationSchedule.prp(int(cfg["d"]), t_max=float(t_max), rho=float(rho))
    if kind == "prr":
        rho = cfg["rho"] if cfg["rho"] is not None else 1.0
        t_max = cfg["t_max"] if cfg["t_max"] is not None else 11.01
        return InflationSchedule.prr(
            int(cfg["d"]),
            preserved=int(cfg["preserved"]),
            gap=float(cfg["gap"]),
            t_max=float(t_max),
            rho=float(rho),
            top_rate=float(cfg["top_rate"]),
        )
    raise ValueError(f"unknown schedule kind {kind!r}")


def _build_grid(cfg: dict, t_max: float, network: bool):
    from .pfode import shifted_grid, uniform_grid

    grid = cfg.get("grid")
    h = float(cfg.get("h") or 0.01)
    eps = float(cfg.get("eps") or 0.01)
    if grid is None:
        grid = "edm" if network else "uniform"
    if grid == "uniform":
        return uniform_grid(h, t_max)
    if grid == "edm":
        n_steps = cfg.get("n_steps")
        n = int(n_steps) if n_steps else int(round((t_max - eps) / h)) + 1
        return shifted_grid(n, eps, t_max)
    raise ValueError(f"unknown grid kind {grid!r}")


def _whiten_with_model(model, raw_points):
    import numpy as np

    from .datasets import whiten

    x = np.asarray(raw_points, dtype=float)
    if model.preprocess is not None:
        x = (x - np.asarray(model.preprocess["mean"])) / np.asarray(model.preprocess["scale"])
    return whiten(x, model.frame)


# ---------------------------------------------------------------- commands


def cmd_gen_data(args: argparse.Namespace) -> int:
    from . import analysis, datasets, svg

    defaults = {
        "kind": "circles", "n": 10_000, "noise_sd": 0.0, "thickness_sd": 0.0,
        "seed": None, "out": args.out,
    }
    cfg = _resolve_config(args, defaults)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)

    pc = datasets.generate(
        datasets.DatasetKind(
            cfg["kind"], int(cfg["n"]), float(cfg["noise_sd"]), int(cfg["seed"]), float(cfg["thickness_sd"])
        )
    )
    datasets.save_csv(pc, out / "data.csv")
    svg.scatter(pc.points, out / "data.svg", title=cfg["kind"])
    import numpy as np

    cov = np.cov(pc.points.T)
    metrics = {"n": pc.n, "d": pc.d, "cov_pr": analysis.participation_ratio(np.atleast_2d(cov))}
    _write_outputs(out, "gen-data", cfg, metrics, ["data.csv", "data.svg"])
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    import numpy as np

    from . import checkpoint, datasets, denoiser, svg

    defaults = {
        "data": None, "schedule": "prp", "d": 2, "rho": None, "t_max": None,
        "preserved": 1, "gap": 1.02, "top_rate": 2.0,
        "steps": 20_000, "batch": 512, "lr": 1e-3, "ema_half_life": 5e5,
        "hidden": "128,128,128", "embed_dim": 64, "standardize": True,
        "seed": None, "out": args.out,
    }
    cfg = _resolve_config(args, defaults)
    if cfg["data"] is None:
        raise ValueError("train requires --data pointing at a point-cloud CSV")
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)

    pc = datasets.load_csv(cfg["data"])
    preprocess = None
    if cfg["standardize"]:
        pc, mean, scale = datasets.standardize(pc)
        preprocess = {"mean": mean.tolist(), "scale": scale.tolist()}
    frame = datasets.estimate_eigenframe(pc)
    whitened = datasets.whiten(pc.points, frame)

    cfg["d"] = pc.d
    schedule = _build_schedule(cfg)
    train_cfg = denoiser.TrainConfig(
        lr=float(cfg["lr"]),
        batch_size=int(cfg["batch"]),
        steps=int(cfg["steps"]),
        ema_half_life=float(cfg["ema_half_life"]),
        seed=int(cfg["seed"]),
        hidden=tuple(int(w) for w in str(cfg["hidden"]).split(",")),
        embed_dim=int(cfg["embed_dim"]),
    )
    model = denoiser.train(whitened, schedule, train_cfg)
    model.frame = frame
    model.preprocess = preprocess
    checkpoint.save(model, out / "checkpoint.ckpt")

    losses = np.asarray(model.loss_curve)
    lines = ["step,loss"] + [f"{i + 1},{repr(float(v))}" for i, v in enumerate(losses)]
    (out / "loss.csv").write_text("\n".join(lines) + "\n")
    svg.line({"loss": (np.arange(1, losses.size + 1), losses)}, out / "loss.svg", log_y=True, title="training loss")

    metrics = {
        "final_loss": float(losses[-1]),
        "mean_loss_last_100": float(losses[-100:].mean()),
        "n_params": model.net.n_params,
    }
    _write_outputs(out, "train", cfg, metrics, ["checkpoint.ckpt", "loss.csv", "loss.svg"])
    return 0


def _load_flow_source(cfg: dict):
    """Returns (schedule, source, model-or-None) from a checkpoint or oracle flags."""
    from .pfode import NetworkScore, OracleGaussian

    if cfg.get("ckpt"):
        from . import checkpoint

        model = checkpoint.load(cfg["ckpt"])
        return model.schedule, NetworkScore(model), model
    if not cfg.get("oracle"):
        raise ValueError("need --ckpt or --oracle")
    schedule = _build_schedule(cfg)
    return schedule, OracleGaussian(schedule), None


def cmd_flow(args: argparse.Namespace) -> int:
    import numpy as np

    from . import datasets, pfode, svg
    from .core import RngStream
    from .schedule import sample_latent

    defaults = {
        "ckpt": None, "oracle": False, "schedule": "prp", "d": 2, "rho": None,
        "t_max": None, "preserved": 1, "gap": 1.02, "top_rate": 2.0,
        "direction": "inflate", "data": None, "n": 2000,
        "grid": None, "h": None, "n_steps": None, "eps": None,
        "solver": "heun", "save_trajectory": False, "seed": None, "out": args.out,
    }
    cfg = _resolve_config(args, defaults)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    schedule, source, model = _load_flow_source(cfg)
    disc = _build_grid(cfg, schedule.t_max, network=model is not None)
    artifacts = []

    if cfg["direction"] == "inflate":
        if cfg["data"] is None:
            raise ValueError("inflate requires --data")
        pc = datasets.load_csv(cfg["data"])
        points = _whiten_with_model(model, pc.points) if model is not None else pc.points
        traj = pfode.inflate(points, schedule, source, disc, cfg["solver"], keep_trajectory=bool(cfg["save_trajectory"]))
        endpoints = traj.final
        label = "latent"
    elif cfg["direction"] == "generate":
        rng = RngStream(int(cfg["seed"]))
        latents = sample_latent(schedule, int(cfg["n"]), rng)
        traj = pfode.generate(latents, schedule, source, disc, cfg["solver"], keep_trajectory=bool(cfg["save_trajectory"]))
        endpoints = pfode.unscale(traj.final, schedule, float(disc.times[0]))
        label = "generated_whitened"
    else:
        raise ValueError(f"unknown direction {cfg['direction']!r}")

    datasets.save_csv(datasets.PointCloud(label, endpoints), out / f"{label}.csv")
    svg.scatter(endpoints, out / f"{label}.svg", title=label)
    artifacts += [f"{label}.csv", f"{label}.svg"]
    if cfg["save_trajectory"]:
        pfode.save_trajectory(traj, out / "trajectory.bin")
        artifacts.append("trajectory.bin")

    metrics = {
        "n_points": endpoints.shape[0],
        "n_grid": disc.n,
        "mean_sq_norm": float(np.mean(np.sum(endpoints**2, axis=1))),
    }
    _write_outputs(out, "flow", cfg, metrics, artifacts)
    return 0


def cmd_roundtrip(args: argparse.Namespace) -> int:
    from . import analysis, datasets, pfode

    defaults = {
        "ckpt": None, "oracle": False, "schedule": "prp", "d": 2, "rho": None,
        "t_max": None, "preserved": 1, "gap": 1.02, "top_rate": 2.0,
        "data": None, "grid": None, "h": None, "n_steps": None, "eps": None,
        "solver": "heun", "seed": None, "out": args.out,
    }
    cfg = _resolve_config(args, defaults)
    if cfg["data"] is None:
        raise ValueError("roundtrip requires --data with held-out points")
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    schedule, source, model = _load_flow_source(cfg)
    disc = _build_grid(cfg, schedule.t_max, network=model is not None)

    pc = datasets.load_csv(cfg["data"])
    points = _whiten_with_model(model, pc.points) if model is not None else pc.points
    recon, latents = pfode.roundtrip(points, schedule, source, disc, cfg["solver"])
    mse = analysis.roundtrip_mse(points, recon)

    datasets.save_csv(datasets.PointCloud("reconstructed_whitened", recon), out / "reconstructed.csv")
    datasets.save_csv(datasets.PointCloud("latents", latents), out / "latents.csv")
    _write_outputs(
        out, "roundtrip", cfg,
        {"roundtrip_mse": mse, "n_points": points.shape[0], "n_grid": disc.n},
        ["reconstructed.csv", "latents.csv"],
    )
    return 0


def cmd_coverage(args: argparse.Namespace) -> int:
    import numpy as np

    from . import analysis, svg
    from .core import RngStream

    defaults = {
        "ckpt": None, "oracle": False, "schedule": "prp", "d": 2, "rho": None,
        "t_max": None, "preserved": 1, "gap": 1.02, "top_rate": 2.0,
        "radii": "0.5:3.5:7", "n_test": 5000, "n_boundary": 200,
        "grid": None, "h": None, "n_steps": None, "eps": None,
        "solver": "heun", "seed": None, "out": args.out,
    }
    cfg = _resolve_config(args, defaults)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    schedule, source, model = _load_flow_source(cfg)
    disc = _build_grid(cfg, schedule.t_max, network=model is not None)

    reports = analysis.coverage_experiment(
        source, schedule, _parse_radii(cfg["radii"]), int(cfg["n_test"]),
        cfg["solver"], disc, RngStream(int(cfg["seed"])), int(cfg["n_boundary"]),
    )
    (out / "coverage.json").write_text(
        json.dumps([r.to_json() for r in reports], indent=2, sort_keys=True) + "\n"
    )
    gen = [r for r in reports if r.direction == "generate"]
    inf = [r for r in reports if r.direction == "inflate"]
    svg.line(
        {
            "before (latent)": (np.array([r.radius for r in gen]), np.array([r.frac_before for r in gen])),
            "after generate": (np.array([r.radius for r in gen]), np.array([r.frac_after for r in gen])),
            "after round trip": (np.array([r.radius for r in inf]), np.array([r.frac_after for r in inf])),
        },
        out / "coverage.svg",
        title="coverage fraction vs radius",
    )
    metrics = {
        "max_abs_change_generate": max(abs(r.frac_after - r.frac_before) for r in gen),
        "max_abs_change_inflate": max(abs(r.frac_after - r.frac_before) for r in inf),
        "n_test": int(cfg["n_test"]),
    }
    _write_outputs(out, "coverage", cfg, metrics, ["coverage.json", "coverage.svg"])
    return 0


def cmd_hmc(args: argparse.Namespace) -> int:
    from . import hmc as hmc_mod
    from .core import RngStream
    from .pfode import shifted_grid

    defaults = {
        "ckpt": None, "oracle": False, "schedule": "prp", "d": 2, "rho": None,
        "t_max": None, "preserved": 1, "gap": 1.02, "top_rate": 2.0,
        "prior": "prp", "observations": 200, "samples": 300, "burn_in": 500,
        "thin": 5, "step_size": None, "leapfrog": 15, "n_steps": 32,
        "noise_var": 1e-2, "seed": None, "out": args.out,
    }
    cfg = _resolve_config(args, defaults)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    schedule, source, model = _load_flow_source(cfg)
    eps = 1e-2 if model is not None else min(1e-2, schedule.t_max / 100)
    disc = shifted_grid(int(cfg["n_steps"]), eps, schedule.t_max)
    flow = hmc_mod.GenerativeFlow(schedule, source, disc)

    prior = hmc_mod.prp_prior() if cfg["prior"] == "prp" else hmc_mod.prr_prior()
    step = cfg["step_size"]
    if step is None:
        step = 1e-2 if cfg["prior"] == "prp" else 1e-3
    hmc_cfg = hmc_mod.HmcConfig(
        step_size=float(step), leapfrog_steps=int(cfg["leapfrog"]),
        n_samples=int(cfg["samples"]), burn_in=int(cfg["burn_in"]),
        thinning=int(cfg["thin"]), seed=int(cfg["seed"]),
    )
    obs, chain, summary = hmc_mod.weight_posterior_experiment(
        prior, flow, int(cfg["observations"]), hmc_cfg, RngStream(int(cfg["seed"])), float(cfg["noise_var"])
    )
    hmc_mod.save_chain_csv(chain, out / "chain.csv")
    hmc_mod.save_summary_json(summary, out / "summary.json")

    metrics = {"acceptance_rate": summary["acceptance_rate"], "n_samples": summary["n_samples"]}
    for i, (mean, sd) in enumerate(zip(summary["w_mean"], summary["w_sd"])):
        metrics[f"w{i}_mean"] = mean
        metrics[f"w{i}_sd"] = sd
        metrics[f"w{i}_abs_error"] = abs(mean - obs.w_true[i])
    _write_outputs(out, "hmc", cfg, metrics, ["chain.csv", "summary.json"])
    return 0


def cmd_pr(args: argparse.Namespace) -> int:
    import numpy as np

    from . import analysis, datasets

    defaults = {"eigvals": None, "data": None, "seed": None, "out": None}
    cfg = _resolve_config(args, defaults)
    if cfg["eigvals"] is not None:
        value = analysis.participation_ratio(np.array([float(v) for v in cfg["eigvals"].split(",")]))
    elif cfg["data"] is not None:
        pc = datasets.load_csv(cfg["data"])
        value = analysis.participation_ratio(np.atleast_2d(np.cov(pc.points.T)))
    else:
        raise ValueError("pr requires --eigvals or --data")
    print(value)
    if cfg["out"]:
        _write_outputs(Path(cfg["out"]), "pr", cfg, {"pr": value}, [])
    return 0


def cmd_residual_acf(args: argparse.Namespace) -> int:
    import numpy as np

    from . import analysis, checkpoint, datasets, svg
    from .core import RngStream
    from .schedule import sample_latent

    defaults = {
        "ckpt": None, "data": None, "n": 1000, "grid": None, "h": None,
        "n_steps": None, "eps": None, "seed": None, "out": args.out,
    }
    cfg = _resolve_config(args, defaults)
    if cfg["ckpt"] is None:
        raise ValueError("residual-acf requires --ckpt")
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    model = checkpoint.load(cfg["ckpt"])
    disc = _build_grid(cfg, model.schedule.t_max, network=True)

    if cfg["data"] is not None:
        pc = datasets.load_csv(cfg["data"])
        points = _whiten_with_model(model, pc.points)[: int(cfg["n"])]
    else:
        # fall back to samples generated by the model itself
        from .pfode import NetworkScore, generate, unscale

        rng = RngStream(int(cfg["seed"]))
        latents = sample_latent(model.schedule, int(cfg["n"]), rng)
        traj = generate(latents, model.schedule, NetworkScore(model), disc)
        points = unscale(traj.final, model.schedule, float(disc.times[0]))

    report = analysis.residual_autocorrelation(model, points, model.schedule, disc)
    lines = ["lag_time,acf"] + [
        f"{repr(float(t))},{repr(float(a))}" for t, a in zip(report.lag_times, report.acf)
    ]
    (out / "acf.csv").write_text("\n".join(lines) + "\n")
    svg.line({"acf": (report.lag_times, report.acf)}, out / "acf.svg", title="residual autocorrelation")

    beyond = report.acf[10:]
    metrics = {
        "lag0": float(report.acf[0]),
        "mean_abs_beyond_10_steps": float(np.mean(np.abs(beyond))),
        "max_abs_beyond_10_steps": float(np.max(np.abs(beyond))),
    }
    _write_outputs(out, "residual-acf", cfg, metrics, ["acf.csv", "acf.svg"])
    return 0


def cmd_oracle_check(args: argparse.Namespace) -> int:
    import numpy as np

    from .core import RngStream
    from .pfode import (
        OracleGaussian, conditional_vf, integrate, isotropic_rhs, rhs, uniform_grid,
    )
    from .denoiser import precondition
    from .schedule import InflationSchedule, pr_trajectory, sample_latent

    defaults = {"seed": None, "out": args.out}
    cfg = _resolve_config(args, defaults)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    rng = RngStream(int(cfg["seed"]))
    checks: dict[str, tuple[float, float]] = {}  # name -> (value, tolerance)

    prp = InflationSchedule.prp(2, t_max=7.01)
    prr = InflationSchedule.prr(3, preserved=2, gap=1.02, t_max=15.01)

    # Zero field: PRP + oracle leaves every point fixed.
    pts = rng.normal((2000, 2))
    traj = integrate(pts, uniform_grid(1e-2, prp.t_max), "inflate", "heun", prp, OracleGaussian(prp))
    checks["prp_zero_field_max_move"] = (float(np.max(np.abs(traj.final - pts))), 1e-12)

    # Preconditioner identities on a 100-point grid.
    worst = 0.0
    for t in np.linspace(1e-7, prr.t_max, 100):
        pre = precondition(prr, float(t))
        gamma = prr.at(float(t)).gamma
        worst = max(
            worst,
            float(np.max(np.abs(pre.c_in**2 * (1 + gamma) - 1))),
            float(np.max(np.abs(pre.loss_weight * pre.c_out - 1))),
            float(np.max(np.abs(pre.c_skip + pre.c_out**2 - 1))),
        )
    checks["preconditioner_identity_max_dev"] = (worst, 1e-12)

    # Flow matching: single-point score reproduces the conditional field.
    class PointScore:
        min_time = 0.0

        def __init__(self, schedule, x1):
            self.schedule, self.x1 = schedule, x1

        def score(self, x, t):
            return -(x - self.x1) / self.schedule.at(t).gamma

    worst = 0.0
    for _ in range(1000):
        t = float(rng.uniform(1e-3, prr.t_max))
        x1 = rng.normal((3,))
        x = rng.normal((3,))
        v1 = rhs(x, t, prr, PointScore(prr, x1))[0]
        v2 = conditional_vf(x, t, x1, prr)
        worst = max(worst, float(np.max(np.abs(v1 - v2))))
    checks["flow_matching_max_dev"] = (worst, 1e-10)

    # Isotropic reduction.
    worst = 0.0
    oracle = OracleGaussian(prp)
    for _ in range(200):
        t = float(rng.uniform(1e-3, prp.t_max))
        x = rng.normal((2,))
        worst = max(worst, float(np.max(np.abs(rhs(x, t, prp, oracle) - isotropic_rhs(x, t, prp, oracle)))))
    checks["isotropic_form_max_dev"] = (worst, 1e-12)

    # Solver order on the PRR oracle field.
    start = rng.normal((64, 3))
    o = OracleGaussian(prr)
    lam = -prr.rho * (prr.rate_star - prr.rates) / 2.0
    exact = start * np.exp(lam * 5.0)

    def endpoint_err(solver, h):
        endq = integrate(start, uniform_grid(h, 5.0), "inflate", solver, prr, o).final
        return float(np.max(np.abs(endq - exact)))

    checks["euler_halving_ratio"] = (endpoint_err("euler", 0.05) / endpoint_err("euler", 0.025), 0.0)
    checks["heun_halving_ratio"] = (endpoint_err("heun", 0.05) / endpoint_err("heun", 0.025), 0.0)

    # Latent compressed variance against the closed form.
    compressed = prr.latent_cov()[2]
    checks["latent_compressed_var_rel_err"] = (
        abs(compressed - np.exp(-1.02 * 15.01)) / np.exp(-1.02 * 15.01), 1e-12,
    )

    # PR dynamics: constant under PRP, truncated limit under PRR.
    prs = [pr_trajectory(np.array([2.0, 1.0]), np.ones(2), 2.0, t) for t in np.linspace(0, 7, 40)]
    checks["prp_pr_drift"] = (float(np.max(np.abs(np.array(prs) - prs[0]))), 1e-12)
    checks["prr_pr_limit_err"] = (
        abs(pr_trajectory(np.ones(3), prr.rates, 1.0, 30.0) - 2.0), 1e-8,
    )

    # Stationarity: the PRR oracle field vanishes on preserved dimensions.
    latents = sample_latent(prr, 500, rng)
    vel = rhs(latents, prr.t_max, prr, o)
    checks["stationarity_preserved_max_vel"] = (float(np.max(np.abs(vel[:, prr.preserved]))), 1e-6)

    passed = True
    metrics = {}
    for name, (value, tol) in checks.items():
        if name.endswith("_ratio"):
            lo, hi = (1.8, 2.2) if name.startswith("euler") else (3.5, 4.5)
            ok = lo <= value <= hi
        else:
            ok = value <= tol
        passed = passed and ok
        metrics[name] = value
        print(f"  [{'PASS' if ok else 'FAIL'}] {name} = {value:.3g}")
    _write_outputs(out, "oracle-check", cfg, metrics, [])
    print("oracle-check:", "all checks passed" if passed else "FAILURES present")
    return 0 if passed else 1


# ---------------------------------------------------------------- parser


def _add_common(p: argparse.ArgumentParser, *, out_required: bool = True) -> None:
    p.add_argument("--config", help="TOML or JSON config file; flags override")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=out_required, default=None, help="output directory")


def _add_schedule_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--schedule", choices=["prp", "prr"], default=None)
    p.add_argument("--d", type=int, default=None)
    p.add_argument("--rho", type=float, default=None)
    p.add_argument("--t-max", dest="t_max", type=float, default=None)
    p.add_argument("--preserved", type=int, default=None)
    p.add_argument("--gap", type=float, default=None)
    p.add_argument("--top-rate", dest="top_rate", type=float, default=None)


def _add_source_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--ckpt", default=None, help="trained checkpoint path")
    p.add_argument("--oracle", action="store_true", default=None, help="use the whitened-Gaussian oracle score")
    _add_schedule_flags(p)


def _add_grid_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--grid", choices=["uniform", "edm"], default=None)
    p.add_argument("--h", type=float, default=None, help="uniform step size")
    p.add_argument("--n-steps", dest="n_steps", type=int, default=None, help="node count for the shifted grid")
    p.add_argument("--eps", type=float, default=None, help="start time of the shifted grid")
    p.add_argument("--solver", choices=["euler", "heun"], default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="inflare", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a toy dataset")
    _add_common(p)
    p.add_argument("--kind", default=None)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--noise-sd", dest="noise_sd", type=float, default=None)
    p.add_argument("--thickness-sd", dest="thickness_sd", type=float, default=None)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a denoiser on a point-cloud CSV")
    _add_common(p)
    p.add_argument("--data", default=None)
    _add_schedule_flags(p)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--ema-half-life", dest="ema_half_life", type=float, default=None)
    p.add_argument("--hidden", default=None, help="comma-separated hidden widths")
    p.add_argument("--embed-dim", dest="embed_dim", type=int, default=None)
    p.add_argument("--no-standardize", dest="standardize", action="store_false", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("flow", help="integrate the flow in either direction")
    _add_common(p)
    _add_source_flags(p)
    _add_grid_flags(p)
    p.add_argument("--direction", choices=["inflate", "generate"], default=None)
    p.add_argument("--data", default=None, help="CSV of points to inflate")
    p.add_argument("--n", type=int, default=None, help="latent draws to generate")
    p.add_argument("--save-trajectory", dest="save_trajectory", action="store_true", default=None)
    p.set_defaults(func=cmd_flow)

    p = sub.add_parser("roundtrip", help="inflate then generate held-out points")
    _add_common(p)
    _add_source_flags(p)
    _add_grid_flags(p)
    p.add_argument("--data", default=None)
    p.set_defaults(func=cmd_roundtrip)

    p = sub.add_parser("coverage", help="transported-boundary coverage experiment")
    _add_common(p)
    _add_source_flags(p)
    _add_grid_flags(p)
    p.add_argument("--radii", default=None, help="comma list or lo:hi:count")
    p.add_argument("--n-test", dest="n_test", type=int, default=None)
    p.add_argument("--n-boundary", dest="n_boundary", type=int, default=None)
    p.set_defaults(func=cmd_coverage)

    p = sub.add_parser("hmc", help="posterior calibration over mixture weights")
    _add_common(p)
    _add_source_flags(p)
    p.add_argument("--prior", choices=["prp", "prr"], default=None)
    p.add_argument("--observations", type=int, default=None)
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--burn-in", dest="burn_in", type=int, default=None)
    p.add_argument("--thin", type=int, default=None)
    p.add_argument("--step-size", dest="step_size", type=float, default=None)
    p.add_argument("--leapfrog", type=int, default=None)
    p.add_argument("--n-steps", dest="n_steps", type=int, default=None)
    p.add_argument("--noise-var", dest="noise_var", type=float, default=None)
    p.set_defaults(func=cmd_hmc)

    p = sub.add_parser("pr", help="participation ratio of a spectrum or dataset")
    _add_common(p, out_required=False)
    p.add_argument("--eigvals", default=None, help="comma-separated eigenvalues")
    p.add_argument("--data", default=None, help="point-cloud CSV")
    p.set_defaults(func=cmd_pr)

    p = sub.add_parser("residual-acf", help="denoiser residual autocorrelation")
    _add_common(p)
    p.add_argument("--ckpt", default=None)
    p.add_argument("--data", default=None)
    p.add_argument("--n", type=int, default=None)
    _add_grid_flags(p)
    p.set_defaults(func=cmd_residual_acf)

    p = sub.add_parser("oracle-check", help="run the analytic invariant suite")
    _add_common(p)
    p.set_defaults(func=cmd_oracle_check)

    return parser


def main(argv: list[str] | None = None) -> int:
    _apply_thread_cap()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as err:  # noqa: BLE001 - single CLI diagnostic funnel
        print(f"inflare: error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
