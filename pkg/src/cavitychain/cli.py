"""Batch front-end: subcommands over a shared key-value configuration.

Exit codes: 0 success, 2 configuration problems, 3 numeric failures,
4 capacity refusals.  Failures print one machine-readable JSON object to
stderr.  Data artifacts (CSV and JSON) are byte-deterministic for a fixed
config and seed, independent of the thread count; the manifest records wall
time and is exempt.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
import types
from pathlib import Path

import numpy as np

from . import __version__, observables as obs
from .config import RunConfig, config_hash, parse_config, with_overrides
from .dynamics import oracle_evolution, snapshot_hash
from .estimators import (
    TruncationSpec,
    density_matrix_bytes,
    lmax_lower,
    lmax_mode_splitting,
    trajectory_budget,
    wavefunction_bytes,
)
from .exceptions import CapacityError, CavityChainError, ConfigError
from .hilbert import build_space, qubit_marginal
from .protocol import (
    OBSERVABLE_NAMES,
    EnsembleSpec,
    error_fidelity_study,
    generate_instance,
    instance_seed,
    run_ensemble,
)

CSV_UNITS_COMMENT = (
    "# cycle durations in ns; rates in 1/ns; observables dimensionless\n")


def _f(x) -> str:
    """Shortest round-trip decimal of a 64-bit float."""
    return repr(float(x))


def _hex_width(L: int) -> int:
    return (L + 3) // 4


# ---------------------------------------------------------------------------
# artifact writers


def _write_observables_csv(path: Path, instances, aggregate) -> None:
    lines = [CSV_UNITS_COMMENT, "instance,cycle,observable,value,stderr\n"]
    for idx, run in enumerate(instances):
        for name in run.observables:
            for k, value in enumerate(run.observables[name]):
                lines.append(f"{idx},{k + 1},{name},{_f(value)},\n")
    for name, (mean, se) in aggregate.items():
        for k in range(len(mean)):
            lines.append(f"all,{k + 1},{name},{_f(mean[k])},{_f(se[k])}\n")
    path.write_text("".join(lines))


def _write_distribution_json(path: Path, dist, digest: str, seed: int,
                             cycle: int, instance: int) -> None:
    width = _hex_width(dist.L)
    payload = {
        "config_hash": digest,
        "L": dist.L,
        "instance": instance,
        "instance_seed": seed,
        "cycle": cycle,
        "probs": {f"{k:0{width}x}": float(p)
                  for k, p in enumerate(dist.probs) if p > 0.0},
    }
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _write_manifest(path: Path, cfg: RunConfig, digest: str, seeds,
                    t0: float) -> None:
    payload = {
        "config_hash": digest,
        "code_version": __version__,
        "mode": cfg.mode,
        "master_seed": cfg.seed,
        "instance_seeds": list(seeds),
        "threads": cfg.threads,
        "wall_time_s": round(time.monotonic() - t0, 3),
    }
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# subcommand bodies


def _run(cfg: RunConfig) -> int:
    t0 = time.monotonic()
    out = Path(cfg.directory)
    out.mkdir(parents=True, exist_ok=True)
    digest = config_hash(cfg)
    spec = EnsembleSpec(
        L=cfg.L,
        parametrization=cfg.parametrization,
        n_instances=cfg.instances,
        n_cycles=cfg.cycles,
        trajectories_per_instance=cfg.trajectories,
        master_seed=cfg.seed,
        cavity_cap=cfg.cavity_cap,
        dt=cfg.dt,
        jump_tol=cfg.jump_tolerance,
    )
    result = run_ensemble(spec, threads=cfg.threads)

    _write_observables_csv(out / "observables.csv", result.instances,
                           result.aggregate)
    with (out / "trajectories.ndjson").open("w") as fh:
        for idx, run in enumerate(result.instances):
            for t_idx, tr in enumerate(run.trajectories):
                record = {
                    "instance": idx,
                    "seed": run.instance.seed,
                    "index": t_idx,
                    "jumps": [[float(t), site] for t, site in tr.jumps],
                    "final_snapshot": snapshot_hash(tr.snapshots[-1])
                    if tr.snapshots else None,
                }
                fh.write(json.dumps(record, sort_keys=True) + "\n")
    for idx, run in enumerate(result.instances):
        _write_distribution_json(
            out / f"distribution_{idx:03d}.json", run.distributions[-1],
            digest, run.instance.seed, cfg.cycles, idx)

    if cfg.error_count >= 1:
        study = error_fidelity_study(
            cfg.L, kind=cfg.error_kind, n_errors=cfg.error_count,
            n_cycles=cfg.cycles, seed=instance_seed(cfg.seed, 0),
            n_samples=cfg.error_samples,
            parametrization=cfg.parametrization, dt=cfg.dt)
        (out / "error_study.json").write_text(json.dumps({
            "config_hash": digest,
            "kind": cfg.error_kind,
            "count": cfg.error_count,
            "fidelity": study.fidelity,
            "abs_distance": study.abs_distance,
            "reference_deltaN": study.reference_deltaN,
            "n_samples": study.n_samples,
            "n_redraws": study.n_redraws,
        }, indent=2, sort_keys=True) + "\n")

    if cfg.figures:
        from . import figures
        figures.save_observable_figures(result.aggregate, out / "figures")
        figures.save_distribution_figure(
            result.instances[0].distributions[-1], out / "figures")

    seeds = [r.instance.seed for r in result.instances]
    _write_manifest(out / "manifest.json", cfg, digest, seeds, t0)
    print(f"run: {cfg.instances} instance(s) x {spec.n_trajectories} "
          f"trajectories, {cfg.cycles} cycles -> {out}")
    return 0


def _oracle_observables(space, evo):
    part = obs.default_partition(space.L)
    series = obs.number_series(evo)
    dists = [qubit_marginal(space, s.populations()) for s in evo.snapshots]
    vals = {name: np.empty(len(evo.snapshots)) for name in OBSERVABLE_NAMES}
    for k, snap in enumerate(evo.snapshots):
        vals["negativity"][k] = obs.negativity(snap, part)
        vals["qubit_negativity"][k] = obs.qubit_negativity(snap, space.L)
        vals["kl_porter_thomas"][k] = obs.kl_from_porter_thomas(dists[k])
        vals["ipr"][k] = obs.ipr(dists[k])
        vals["heavy_fraction"][k] = obs.heavy_fraction(dists[k])
        vals["photons_added"][k] = series.photons_added[k]
        vals["cavity_population"][k] = series.cavity_population[k]
        vals["cumulative_losses"][k] = series.cumulative_losses[k]
    return vals, dists


def _oracle(cfg: RunConfig) -> int:
    t0 = time.monotonic()
    out = Path(cfg.directory)
    out.mkdir(parents=True, exist_ok=True)
    digest = config_hash(cfg)
    seed = instance_seed(cfg.seed, 0)
    space = build_space(cfg.L, cfg.cavity_cap)
    inst = generate_instance(cfg.L, cfg.parametrization, seed, cfg.cycles)
    evo = oracle_evolution(space, inst, cfg.dt)

    vals, dists = _oracle_observables(space, evo)
    shim = types.SimpleNamespace(observables=vals)
    aggregate = {name: (vals[name], np.zeros_like(vals[name]))
                 for name in vals}
    _write_observables_csv(out / "observables.csv", [shim], aggregate)
    _write_distribution_json(out / "distribution_000.json", dists[-1],
                             digest, seed, cfg.cycles, 0)
    if cfg.figures:
        from . import figures
        figures.save_observable_figures(aggregate, out / "figures")
        figures.save_distribution_figure(dists[-1], out / "figures")
    _write_manifest(out / "manifest.json", cfg, digest, [seed], t0)
    print(f"oracle: L={cfg.L} cap={cfg.cavity_cap} seed={seed} "
          f"({space.dim}-dim density matrix) -> {out}")
    return 0


def _load_distribution(path: str) -> tuple[int, np.ndarray]:
    try:
        payload = json.loads(Path(path).read_text())
        L = int(payload["L"])
        probs = np.zeros(2**L)
        for key, p in payload["probs"].items():
            probs[int(key, 16)] = float(p)
    except (OSError, ValueError, KeyError, TypeError) as e:
        raise ConfigError(f"cannot read distribution file {path}: {e}") \
            from None
    return L, probs


def _stats(file_a: str, file_b: str) -> int:
    la, pa = _load_distribution(file_a)
    lb, pb = _load_distribution(file_b)
    if la != lb:
        raise ConfigError(
            f"distributions disagree on the chain length: {la} vs {lb}")
    print(f"kl_ab = {_f(obs.kl_divergence(pa, pb))}")
    print(f"kl_ba = {_f(obs.kl_divergence(pb, pa))}")
    print(f"abs_distance = {_f(obs.abs_distance(pa, pb))}")
    return 0


ESTIMATE_CAPS = ((2, 1), (3, 2))
ESTIMATE_DIVISOR = 8.0


def _estimate(cfg: RunConfig) -> int:
    t0 = time.monotonic()
    out = Path(cfg.directory)
    out.mkdir(parents=True, exist_ok=True)
    header = (
        "# storage in bytes; trajectory budget at N_c = 12 cycles\n"
        f"# lmax_lower(1/3.5, 0.1, 0.01) = "
        f"{_f(lmax_lower(1 / 3.5, 0.1, 0.01))}\n"
        f"# lmax_mode_splitting(2*pi*0.04, 0.01) = "
        f"{_f(lmax_mode_splitting(2 * np.pi * 0.04, 0.01))}\n"
        "L,density_matrix_cap2,wavefunction_caps21,wavefunction_caps32,"
        "trajectory_budget\n")
    lines = [header]
    for L in cfg.sites:
        wf21 = wavefunction_bytes(TruncationSpec(L, 2, 1, ESTIMATE_DIVISOR))
        wf32 = wavefunction_bytes(TruncationSpec(L, 3, 2, ESTIMATE_DIVISOR))
        lines.append(f"{L},{density_matrix_bytes(L, 2)},{wf21},{wf32},"
                     f"{trajectory_budget(L, 12)}\n")
    text = "".join(lines)
    (out / "estimate.csv").write_text(text)
    _write_manifest(out / "manifest.json", cfg, config_hash(cfg), [], t0)
    sys.stdout.write(text)
    return 0


def _instance(cfg: RunConfig) -> int:
    seed = instance_seed(cfg.seed, 0)
    inst = generate_instance(cfg.L, cfg.parametrization, seed, cfg.cycles)
    print(f"instance seed = {seed} (master {cfg.seed}, index 0)")
    print(f"L = {inst.L}  parametrization = {inst.parametrization}  "
          f"n0 = {inst.n0}")
    print(f"gamma_c = {_f(inst.gamma_c)} 1/ns")
    print("h [rad/ns] = " + " ".join(_f(x) for x in inst.h))
    print("h_c [rad/ns] = " + " ".join(_f(x) for x in inst.h_c))
    print("durations [ns] = " + " ".join(_f(x) for x in inst.durations))
    return 0


# ---------------------------------------------------------------------------
# argument handling


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cavitychain",
        description="Simulate and analyze pulsed, lossy qubit-cavity chains.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", metavar="PATH",
                       help="configuration file (defaults apply without it)")
        p.add_argument("--seed", type=int, metavar="U64",
                       help="master seed, overrides the config file")
        p.add_argument("--out", metavar="DIR",
                       help="output directory, overrides the config file")
        p.add_argument("--threads", type=int, metavar="N",
                       help="worker processes; never changes the results")

    common(sub.add_parser("run", help="trajectory ensemble with observables"))
    common(sub.add_parser("oracle",
                          help="density-matrix reference run (small L)"))
    stats = sub.add_parser("stats", help="compare two distribution files")
    common(stats)
    stats.add_argument("file_a")
    stats.add_argument("file_b")
    common(sub.add_parser("estimate", help="classical-difficulty table"))
    common(sub.add_parser("instance", help="print one generated instance"))
    return parser


def _load_config(args) -> RunConfig:
    if args.config is not None:
        try:
            text = Path(args.config).read_text()
        except OSError as e:
            raise ConfigError(f"cannot read config {args.config}: {e}") \
                from None
        cfg = parse_config(text)
    else:
        cfg = RunConfig()
    return with_overrides(cfg, mode=args.command, seed=args.seed,
                          out_dir=args.out, threads=args.threads)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args)
        if cfg.mode == "run":
            return _run(cfg)
        if cfg.mode == "oracle":
            return _oracle(cfg)
        if cfg.mode == "stats":
            return _stats(args.file_a, args.file_b)
        if cfg.mode == "estimate":
            return _estimate(cfg)
        return _instance(cfg)
    except CavityChainError as e:
        if isinstance(e, ConfigError):
            code = 2
        elif isinstance(e, CapacityError):
            code = 4
        else:
            code = 3
        payload = {
            "error": type(e).__name__,
            "exit_code": code,
            "message": str(e),
        }
        if isinstance(e, ConfigError):
            payload["problems"] = e.problems
        print(json.dumps(payload, sort_keys=True), file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
