"""Batch command line driver: parse flags, run voxels in parallel, write maps."""

from __future__ import annotations

import argparse
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from hashlib import blake2b
from pathlib import Path

import numpy as np

from . import __version__
from .design import Dataset, DesignPair, PriorConfig, build_design
from .io import (
    FORMAT_FLOAT,
    RunManifest,
    load_binary_flags,
    load_dataset,
    load_mask,
    load_matrix,
    parse_keyvalue_file,
    write_dataset,
    write_matrix,
    write_truth,
)
from .sampler import SamplerConfig, run_voxel
from .simulate import SimulationSpec, make_simulation_design, simulate_dataset
from .wls import wls_analyze

__all__ = ["CliError", "parse_cli", "run_batch", "replay", "main", "voxel_rng"]

N_TRENDS_DEFAULT = 3


class CliError(ValueError):
    """Aggregated configuration problems, one per line."""


@dataclass
class RunPlan:
    """Validated, fully loaded description of one batch run."""

    dataset: Dataset
    design: DesignPair
    priors: PriorConfig
    sampler: SamplerConfig
    mask: np.ndarray
    threads: int
    output_dir: Path
    run_wls: bool
    seed: int
    argv: list[str]
    flags: dict
    input_paths: dict
    simulation: tuple | None = None  # (spec, truth, encoding) when -simulate


def build_arg_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hetglm",
        allow_abbrev=False,
        description=(
            "Voxel-wise Bayesian GLM with heteroscedastic AR noise and variable "
            "selection. Intercept and polynomial trends are added internally."
        ),
    )
    parser.add_argument("data", nargs="?", help="dataset header file")
    parser.add_argument("-designfiles", help="activity covariates, T rows x a columns")
    parser.add_argument(
        "-gammacovariates",
        help="0/1 per design column: which columns enter the variance design Z "
        "(omit for a homoscedastic run)",
    )
    parser.add_argument("-ontrialbeta", help="0/1 per design column: 1 = selection on")
    parser.add_argument("-ontrialgamma", help="0/1 per Z column: 1 = selection on")
    parser.add_argument("-ontrialrho", help="0/1 per AR lag: 1 = selection on")
    parser.add_argument("-mask", help="0/1 per voxel")
    parser.add_argument("-regressmotion", help="motion parameters, T rows")
    parser.add_argument(
        "-regressmotionderiv",
        nargs="?",
        const=True,
        default=None,
        metavar="FILE",
        help="add motion-derivative columns (optionally from FILE)",
    )
    parser.add_argument("-draws", type=int, default=1000)
    parser.add_argument("-burnin", type=int, default=1000)
    parser.add_argument("-savefullposterior", action="store_true")
    parser.add_argument("-updateinclusionprob", action="store_true")
    parser.add_argument("-seed", type=int, default=0)
    parser.add_argument("-threads", type=int, default=1)
    parser.add_argument("-output", default="hetglm_results")
    parser.add_argument("-arorder", type=int, default=4)
    parser.add_argument("-simulate", metavar="SPECFILE", help="simulate a slice, then analyze it")
    parser.add_argument("-wls", action="store_true", help="also run the WLS baseline")
    return parser


def voxel_rng(seed: int, voxel_id: str) -> np.random.Generator:
    """Deterministic per-voxel generator, independent of scheduling order."""
    digest = blake2b(str(voxel_id).encode(), digest_size=8).digest()
    mixed = int.from_bytes(digest, "little")
    return np.random.default_rng(np.random.SeedSequence([int(seed), mixed]))


def _parse_simulation_file(path, errors: list[str]):
    try:
        kv = parse_keyvalue_file(path)
    except (OSError, ValueError) as err:
        errors.append(str(err))
        return None
    opts = {
        "n_time": 160,
        "width": 32,
        "height": 32,
        "seed": 0,
        "n_activity": 1,
        "n_motion": 2,
        "n_trends": 2,
        "hetero": "none",
        "hetero_fraction": 0.5,
        "active_fraction": 0.5,
        "rho": "0.4 0.2 0.1 0.05",
        "baseline": 800.0,
        "encoding": "text",
    }
    unknown = set(kv) - set(opts)
    if unknown:
        errors.append(f"{path}: unknown simulation keys {sorted(unknown)}")
        return None
    opts.update(kv)
    try:
        gamma_config: dict[str, float] = {}
        hetero = str(opts["hetero"]).strip()
        if hetero and hetero != "none":
            for part in hetero.split(","):
                kind, _, level = part.partition(":")
                kind = kind.strip()
                lvl = float(level) if level else 1.0
                if kind == "all":
                    gamma_config["activity"] = lvl
                    gamma_config["motion"] = lvl
                    gamma_config["motion_derivative"] = 1.25
                else:
                    gamma_config[kind] = lvl
        design = make_simulation_design(
            int(opts["n_time"]),
            n_activity=int(opts["n_activity"]),
            n_motion=int(opts["n_motion"]),
            n_trends=int(opts["n_trends"]),
            motion_seed=int(opts["seed"]),
        )
        spec = SimulationSpec(
            design=design,
            width=int(opts["width"]),
            height=int(opts["height"]),
            gamma_config=gamma_config,
            rho_true=np.array([float(v) for v in str(opts["rho"]).split()]),
            active_fraction=float(opts["active_fraction"]),
            hetero_fraction=float(opts["hetero_fraction"]),
            baseline=float(opts["baseline"]),
            seed=int(opts["seed"]),
        )
    except (ValueError, KeyError) as err:
        errors.append(f"{path}: {err}")
        return None
    return spec, str(opts["encoding"])


def parse_cli(argv: list[str]) -> RunPlan:
    parser = build_arg_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        raise CliError(f"argument parsing failed (exit {err.code})") from err

    errors: list[str] = []
    input_paths: dict[str, str] = {}

    def existing(flag: str, value) -> Path | None:
        if value is None or value is True:
            return None
        path = Path(value)
        if not path.exists():
            errors.append(f"{flag}: file {path} does not exist")
            return None
        input_paths[flag] = str(path)
        return path

    for name, value in (
        ("-draws", args.draws),
        ("-burnin", args.burnin),
        ("-threads", args.threads),
        ("-arorder", args.arorder),
        ("-seed", args.seed),
    ):
        if value < 0 or (name in ("-draws", "-threads") and value < 1):
            errors.append(f"{name}: invalid value {value}")

    simulation = None
    dataset = None
    design = None

    if args.simulate:
        if args.data or args.designfiles or args.regressmotion:
            errors.append("-simulate cannot be combined with a dataset or design files")
        sim_path = existing("-simulate", args.simulate)
        if sim_path is not None:
            parsed = _parse_simulation_file(sim_path, errors)
            if parsed is not None:
                spec, encoding = parsed
                dataset, truth = simulate_dataset(spec)
                design = spec.design
                simulation = (spec, truth, encoding)
    else:
        if not args.data:
            errors.append("a dataset header file (or -simulate) is required")
        if not args.designfiles:
            errors.append("-designfiles is required")
        data_path = existing("dataset", args.data) if args.data else None
        design_path = existing("-designfiles", args.designfiles) if args.designfiles else None
        motion_path = existing("-regressmotion", args.regressmotion)
        deriv_arg = args.regressmotionderiv
        deriv_path = existing("-regressmotionderiv", deriv_arg) if isinstance(deriv_arg, str) else None

        if data_path is not None:
            try:
                dataset = load_dataset(data_path)
            except ValueError as err:
                errors.append(str(err))
        if dataset is not None and design_path is not None:
            try:
                activity = load_matrix(design_path, what="design")
                motion = load_matrix(motion_path, what="motion") if motion_path else None
                deriv = load_matrix(deriv_path, what="motion derivative") if deriv_path else None
                t = dataset.n_time
                for what, arr in (("design", activity), ("motion", motion), ("motion derivative", deriv)):
                    if arr is not None and arr.shape[0] != t:
                        errors.append(
                            f"{what} file has {arr.shape[0]} rows but the dataset has {t} time points"
                        )
                if not errors:
                    design = build_design(
                        activity,
                        motion,
                        n_trends=N_TRENDS_DEFAULT,
                        use_motion_derivative=deriv_arg is not None,
                        raw_motion_derivative=deriv,
                    )
            except ValueError as err:
                errors.append(str(err))

    mask = None
    if dataset is not None:
        mask = np.ones(dataset.n_voxel, dtype=bool)
        mask_path = existing("-mask", args.mask)
        if mask_path is not None:
            try:
                mask = load_mask(mask_path, dataset.n_voxel)
            except ValueError as err:
                errors.append(str(err))

    forced_rho: tuple = ()
    if design is not None:
        try:
            gcov_path = existing("-gammacovariates", args.gammacovariates)
            if gcov_path is not None:
                keep = load_binary_flags(gcov_path, design.p, what="-gammacovariates")
            else:
                keep = np.zeros(design.p, dtype=bool)  # intercept-only Z
            design = design.restrict_variance_design(keep)

            tb_path = existing("-ontrialbeta", args.ontrialbeta)
            if tb_path is not None:
                on_trial = load_binary_flags(tb_path, design.p, what="-ontrialbeta")
                forced = ~on_trial
                forced[design.intercept_index] = True
                design.forced_in_mean = forced
            tg_path = existing("-ontrialgamma", args.ontrialgamma)
            if tg_path is not None:
                on_trial = load_binary_flags(tg_path, design.q, what="-ontrialgamma")
                forced = ~on_trial
                forced[design.z_intercept_index] = True
                design.forced_in_var = forced
            tr_path = existing("-ontrialrho", args.ontrialrho)
            if tr_path is not None and args.arorder > 0:
                on_trial = load_binary_flags(tr_path, args.arorder, what="-ontrialrho")
                forced_rho = tuple(bool(b) for b in ~on_trial)
            design.validate()
        except ValueError as err:
            errors.append(str(err))

    if dataset is not None and design is not None and design.n_time != dataset.n_time:
        errors.append(
            f"design has {design.n_time} rows but the dataset has {dataset.n_time} time points"
        )

    if errors:
        raise CliError("\n".join(errors))
    assert dataset is not None and design is not None and mask is not None

    priors = PriorConfig.for_design(design, args.arorder, update_pi=args.updateinclusionprob)
    sampler = SamplerConfig(
        n_burnin=args.burnin,
        n_draws=args.draws,
        ar_order=args.arorder,
        update_pi=args.updateinclusionprob,
        seed=args.seed,
        store_full_posterior=args.savefullposterior,
        forced_in_rho=forced_rho,
    )
    flags = {
        key: (str(val) if isinstance(val, Path) else val)
        for key, val in vars(args).items()
    }
    return RunPlan(
        dataset=dataset,
        design=design,
        priors=priors,
        sampler=sampler,
        mask=mask,
        threads=args.threads,
        output_dir=Path(args.output),
        run_wls=args.wls,
        seed=args.seed,
        argv=list(argv),
        flags=flags,
        input_paths=input_paths,
        simulation=simulation,
    )


# Worker-side state installed once per process by the pool initializer.
_WORKER: dict = {}


def _worker_init(payload: dict) -> None:
    os.environ["OMP_NUM_THREADS"] = "1"
    _WORKER.update(payload)


def _worker_run(task):
    idx, voxel_id = task
    try:
        post = run_voxel(
            _WORKER["values"][:, idx],
            _WORKER["design"],
            _WORKER["priors"],
            _WORKER["config"],
            voxel_rng(_WORKER["seed"], voxel_id),
        )
        return idx, post, None
    except Exception as err:  # per-voxel failure: log and continue
        return idx, None, f"{type(err).__name__}: {err}"


def run_voxel_batch(dataset, design, priors, config, *, seed, mask=None, threads=1):
    """Run masked-in voxels, in parallel when threads > 1.

    Returns (results, error_log): results maps voxel index -> VoxelPosterior.
    """
    if mask is None:
        mask = np.ones(dataset.n_voxel, dtype=bool)
    tasks = [(i, dataset.voxel_ids[i]) for i in np.flatnonzero(mask)]
    payload = {
        "values": dataset.values,
        "design": design,
        "priors": priors,
        "config": config,
        "seed": seed,
    }
    results: dict[int, object] = {}
    error_log: list[list] = []
    if threads <= 1:
        _worker_init(payload)
        outs = map(_worker_run, tasks)
    else:
        pool = ProcessPoolExecutor(
            max_workers=threads, initializer=_worker_init, initargs=(payload,)
        )
        outs = pool.map(_worker_run, tasks, chunksize=max(1, len(tasks) // (threads * 4)))
    for idx, post, err in outs:
        if err is None:
            results[idx] = post
        else:
            error_log.append([dataset.voxel_ids[idx], err])
    if threads > 1:
        pool.shutdown()
    return results, error_log


def _nan_map(results, n_voxel: int, dim: int, attr: str) -> np.ndarray:
    out = np.full((n_voxel, dim), np.nan)
    for idx, post in results.items():
        out[idx] = getattr(post, attr)
    return out


def _write_outputs(plan: RunPlan, results, error_log, wls_fit, out: Path) -> None:
    design = plan.design
    v = plan.dataset.n_voxel
    p, q, k = design.p, design.q, plan.sampler.ar_order
    maps = {
        "beta_mean": _nan_map(results, v, p, "beta_mean"),
        "beta_std": _nan_map(results, v, p, "beta_std"),
        "ind_beta_mean": _nan_map(results, v, p, "incl_beta"),
        "gamma_mean": _nan_map(results, v, q, "gamma_mean"),
        "gamma_std": _nan_map(results, v, q, "gamma_std"),
        "ind_gamma_mean": _nan_map(results, v, q, "incl_gamma"),
    }
    if k:
        maps["rho_mean"] = _nan_map(results, v, k, "rho_mean")
        maps["rho_std"] = _nan_map(results, v, k, "rho_std")
        maps["ind_rho_mean"] = _nan_map(results, v, k, "incl_rho")
    for name, arr in maps.items():
        np.savetxt(out / f"{name}.txt", arr, fmt=FORMAT_FLOAT)

    with np.errstate(divide="ignore", invalid="ignore"):
        bayes_t = maps["beta_mean"] / maps["beta_std"]
    np.savetxt(out / "bayes_t.txt", bayes_t, fmt=FORMAT_FLOAT)

    ppm_all = _nan_map(results, v, p, "ppm_beta")
    for j, kind in enumerate(design.column_kinds):
        if kind == "activity":
            np.savetxt(
                out / f"ppm_{design.column_names[j]}.txt", ppm_all[:, j], fmt=FORMAT_FLOAT
            )

    lines = ["# voxel_id\tanalyzed\taccept_gamma\taccept_gamma_fixed\tnonstationary_exhausted\tstationarity_violations"]
    for i, vid in enumerate(plan.dataset.voxel_ids):
        post = results.get(i)
        if post is None:
            lines.append(f"{vid}\t0\tnan\tnan\t0\t0")
        else:
            lines.append(
                f"{vid}\t1\t{post.accept_rate_gamma:.6f}\t{post.accept_rate_gamma_fixed:.6f}"
                f"\t{post.rejected_nonstationary_count}\t{post.stationarity_violations}"
            )
    (out / "voxel_summary.txt").write_text("\n".join(lines) + "\n")

    if plan.sampler.store_full_posterior and results:
        order = sorted(results)
        np.savetxt(out / "posterior_voxels.txt", np.asarray(order), fmt="%d")
        np.save(out / "draws_beta.npy", np.stack([results[i].draws_beta for i in order]))
        np.save(out / "draws_gamma.npy", np.stack([results[i].draws_gamma for i in order]))
        if k:
            np.save(out / "draws_rho.npy", np.stack([results[i].draws_rho for i in order]))
        np.save(out / "draws_pi.npy", np.stack([results[i].draws_pi for i in order]))

    if wls_fit is not None:
        np.savetxt(out / "wls_weights.txt", wls_fit.weights, fmt=FORMAT_FLOAT)
        np.savetxt(out / "wls_beta.txt", wls_fit.beta_hat, fmt=FORMAT_FLOAT)
        np.savetxt(out / "wls_t.txt", wls_fit.t, fmt=FORMAT_FLOAT)


def run_batch(plan: RunPlan) -> int:
    """Execute the plan and write all outputs; returns the process exit code."""
    start = time.time()
    out = plan.output_dir
    out.mkdir(parents=True, exist_ok=True)

    if plan.simulation is not None:
        spec, truth, encoding = plan.simulation
        write_dataset(out / "simulated.dataset", plan.dataset, encoding=encoding)
        for name, arr in plan.dataset.masks.items():
            np.savetxt(out / f"mask_{name}.txt", arr.astype(int), fmt="%d")
        write_truth(out / "truth.txt", truth, spec.design)
        activity = [
            j for j, kind in enumerate(spec.design.column_kinds) if kind == "activity"
        ]
        write_matrix(out / "activity.txt", spec.design.x[:, activity])
        motion = [j for j, kind in enumerate(spec.design.column_kinds) if kind == "motion"]
        if motion:
            write_matrix(out / "motion.txt", spec.design.x[:, motion])

    results, error_log = run_voxel_batch(
        plan.dataset,
        plan.design,
        plan.priors,
        plan.sampler,
        seed=plan.seed,
        mask=plan.mask,
        threads=plan.threads,
    )

    wls_fit = None
    if plan.run_wls:
        keep = [
            j
            for j, kind in enumerate(plan.design.column_kinds)
            if kind in ("activity", "intercept", "trend")
        ]
        wls_fit = wls_analyze(plan.dataset, plan.design.x[:, keep])

    _write_outputs(plan, results, error_log, wls_fit, out)
    manifest = RunManifest(
        version=__version__,
        argv=plan.argv,
        flags=plan.flags,
        input_paths=plan.input_paths,
        seed=plan.seed,
        n_time=plan.dataset.n_time,
        n_voxel=plan.dataset.n_voxel,
        output_dir=str(out),
        wall_time_s=time.time() - start,
        error_log=error_log,
    )
    manifest.save(out / "manifest.json")
    return 1 if error_log else 0


def replay(manifest_path, output_dir) -> int:
    """Re-run a recorded invocation into a fresh output directory."""
    manifest = RunManifest.load(manifest_path)
    argv = list(manifest.argv)
    if "-output" in argv:
        pos = argv.index("-output")
        argv[pos + 1] = str(output_dir)
    else:
        argv += ["-output", str(output_dir)]
    return main(argv)


def main(argv: list[str] | None = None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    try:
        plan = parse_cli(list(argv))
    except CliError as err:
        print(f"hetglm: configuration errors:\n{err}", file=sys.stderr)
        return 2
    code = run_batch(plan)
    if code:
        print("hetglm: some voxels failed; see manifest error log", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
