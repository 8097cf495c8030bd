"""Command-line pipeline: entangle, dataset, gram, train and scaling.

Each command reads a JSON :class:`~kerrkernel.config.RunConfig`, writes
comma-separated CSV and key-sorted JSON outputs atomically, renders PNG
figures next to them (unless ``--no-plots``) and records a manifest with
the config echo, seeds and code version.

Output columns
--------------
``entangle_n{n}_kerr{K}.csv``   t_us, fidelity, log_negativity
``pulses.csv``                  t_us, pulse_1_mhz, pulse_2_mhz, ...
``dataset.csv``                 id, x1, x2, label
``gram.csv``                    row_id, col_id, value
``accuracy_vs_size.csv``        size, seed, quantum_accuracy, quantum_C, rbf_accuracy, rbf_C, rbf_gamma
``accuracy_vs_kerr.csv``        kerr_mhz, size, seed, quantum_accuracy, quantum_C, rbf_accuracy, rbf_C, rbf_gamma
``scaling.csv``                 n, n_dim, n_q, t_c_seconds, t_c_std, repeats, config_hash
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, bench, plotting
from .config import ConfigError, RunConfig
from .dynamics import fidelity_trace
from .iohelpers import write_csv, write_json
from .kernel import (
    KernelMatrix,
    RhoCache,
    Sample,
    fill_cache,
    gram_from_cache,
    load_states,
    save_states,
)
from .ml import LabeledDataset, generate_labels, make_mesh, pick_references, run_trial
from .model import gaussian_schedule, mhz, pulse_envelope

log = logging.getLogger("kerrkernel")

DATASET_CSV = "dataset.csv"
LABELS_JSON = "dataset_labels.json"
STATES_NPZ = "states.npz"
GRAM_CSV = "gram.csv"
GRAM_JSON = "gram.json"


def _manifest(out: Path, command: str, cfg: RunConfig, seeds: dict, timing: dict | None = None,
              **extra):
    write_json(out / f"manifest_{command}.json", {
        **extra,
        "command": command,
        "config": cfg.to_dict(),
        "seeds": seeds,
        "version": __version__,
        "numpy": np.__version__,
        "timing_seconds": timing or {},
    })


def _require(path: Path, made_by: str) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"expected input file not found: {path} (run `kerrkernel {made_by}` first)")
    return path


def _fingerprint(cfg: RunConfig) -> str:
    payload = {
        "device": cfg.device.__dict__,
        "encoding": cfg.encoding.__dict__,
        "propagator": cfg.propagator.__dict__,
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True, default=list).encode()).hexdigest()[:16]


def _kerr_tag(kerr: float) -> str:
    return f"{kerr:g}".replace(".", "p")


# ---------------------------------------------------------------------------
# entangle


def cmd_entangle(cfg: RunConfig, threads: int = 1, plots: bool = True) -> list[Path]:
    """Fidelity-to-reference and log-negativity trajectories for each (n, K) case."""
    out = Path(cfg.output_dir)
    ent = cfg.experiment.entangle
    sched_cfg = cfg.schedule
    prop = cfg.propagator.config()
    written, traces = [], {}
    t0 = time.perf_counter()
    n_max = max(c.n for c in ent.cases)
    for case in ent.cases:
        device = ent.device.device(kerr_mhz=case.kerr_mhz, n_modes=case.n)
        det = device.deltas if sched_cfg.drive_detunings_mhz is None else [
            mhz(d) for d in sched_cfg.drive_detunings_mhz[: case.n]]
        schedule = gaussian_schedule([mhz(a) for a in sched_cfg.amplitudes_mhz[: case.n]], det,
                                     sched_cfg.sigma_us)
        times = np.linspace(schedule.pulse_end, ent.t_max_us, ent.n_times)
        partition = ent.partition if case.n >= 2 else (0,)
        tr = fidelity_trace(device, schedule, times, prop, partition)
        path = out / f"entangle_n{case.n}_kerr{_kerr_tag(case.kerr_mhz)}.csv"
        write_csv(path, ["t_us", "fidelity", "log_negativity"],
                  zip(tr.times.tolist(), tr.fidelity.tolist(), tr.log_negativity.tolist()))
        written.append(path)
        traces[f"n={case.n}, K={case.kerr_mhz:g} MHz"] = (tr.times, tr.fidelity, tr.log_negativity)
        log.info("entangle n=%d K=%g MHz: min F %.4f", case.n, case.kerr_mhz, tr.fidelity.min())

    width = sched_cfg.sigma_us
    t_pulse = np.linspace(0.0, 6 * width, 241)
    demo = gaussian_schedule([mhz(a) for a in sched_cfg.amplitudes_mhz[:n_max]], [0.0] * n_max, width)
    envs = [pulse_envelope(p, t_pulse) / mhz(1.0) for p in demo.pulses]
    path = out / "pulses.csv"
    write_csv(path, ["t_us"] + [f"pulse_{k + 1}_mhz" for k in range(n_max)],
              zip(t_pulse.tolist(), *[e.tolist() for e in envs]))
    written.append(path)
    if plots:
        written.append(plotting.plot_entangle(traces, (t_pulse, envs), out / "entangle.png"))
    _manifest(out, "entangle", cfg, {}, {"total": time.perf_counter() - t0})
    return written


# ---------------------------------------------------------------------------
# dataset


def _references(cfg: RunConfig, mesh) -> tuple[Sample, Sample]:
    refs = cfg.experiment.references
    if refs is None:
        return pick_references(mesh, cfg.experiment.seed)
    return Sample("ref1", refs[0]), Sample("ref2", refs[1])


def build_dataset(cfg: RunConfig, kerr_mhz: float | None = None, threads: int = 1,
                  cache: RhoCache | None = None) -> tuple[LabeledDataset, RhoCache]:
    device = cfg.device.device(kerr_mhz=kerr_mhz)
    enc = cfg.encoding.encoding()
    mesh = make_mesh(cfg.experiment.mesh_resolution)
    r1, r2 = _references(cfg, mesh)
    cache = RhoCache() if cache is None else cache
    ds = generate_labels(mesh, r1, r2, enc, device, cfg.propagator.config(), cache, threads,
                         seed=cfg.experiment.seed)
    ds.meta = {"kerr_mhz": cfg.device.kerr_mhz if kerr_mhz is None else kerr_mhz}
    return ds, cache


def cmd_dataset(cfg: RunConfig, threads: int = 1, plots: bool = True) -> list[Path]:
    """Label the mesh by kernel proximity to two references; cache the states."""
    out = Path(cfg.output_dir)
    t0 = time.perf_counter()
    ds, cache = build_dataset(cfg, threads=threads)
    ds.save(out / DATASET_CSV, out / LABELS_JSON)
    save_states(out / STATES_NPZ, cache, _fingerprint(cfg))
    written = [out / DATASET_CSV, out / LABELS_JSON, out / STATES_NPZ]
    if plots:
        refs = [(s.features, lab) for s, lab in ds.references]
        written.append(plotting.plot_dataset(ds.features, ds.labels, refs, out / "dataset.png"))
    _manifest(out, "dataset", cfg, {"references": cfg.experiment.seed},
              {"total": time.perf_counter() - t0})
    return written


def _load_dataset(out: Path) -> LabeledDataset:
    return LabeledDataset.load(_require(out / DATASET_CSV, "dataset"),
                               _require(out / LABELS_JSON, "dataset"))


def _states_for(cfg: RunConfig, ds: LabeledDataset, threads: int) -> RhoCache:
    """Cached states from ``states.npz`` if they match the config, else recompute."""
    path = Path(cfg.output_dir) / STATES_NPZ
    cache = None
    if path.exists():
        try:
            cache = load_states(path, _fingerprint(cfg))
        except ValueError:
            log.warning("%s does not match the config; recomputing states", path)
    pts, _ = ds.eval_points()
    return fill_cache(pts, cfg.encoding.encoding(), cfg.device.device(), cfg.propagator.config(),
                      cache, threads)


# ---------------------------------------------------------------------------
# gram


def cmd_gram(cfg: RunConfig, threads: int = 1, plots: bool = True) -> list[Path]:
    """Square Gram matrix over the dataset points plus references."""
    out = Path(cfg.output_dir)
    t0 = time.perf_counter()
    ds = _load_dataset(out)
    cache = _states_for(cfg, ds, threads)
    ids = [p.id for p in ds.eval_points()[0]]
    if cfg.experiment.gram_limit is not None:
        ids = ids[: cfg.experiment.gram_limit]
    km = KernelMatrix(ids, ids, gram_from_cache(cache, ids, ids))
    km.to_csv(out / GRAM_CSV)
    km.to_json(out / GRAM_JSON)
    written = [out / GRAM_CSV, out / GRAM_JSON]
    if plots:
        written.append(plotting.plot_gram(km.values, out / "gram.png"))
    _manifest(out, "gram", cfg, {}, {"total": time.perf_counter() - t0},
              states_fingerprint=_fingerprint(cfg))
    return written


# ---------------------------------------------------------------------------
# train

_ACC_HEADER = ["size", "seed", "quantum_accuracy", "quantum_C", "rbf_accuracy", "rbf_C", "rbf_gamma"]


def _trial_row(tr) -> list:
    return [tr.size, tr.seed, tr.quantum.accuracy, tr.quantum.C, tr.rbf.accuracy, tr.rbf.C,
            tr.rbf.gamma]


def _quantum_source(cfg: RunConfig, ds: LabeledDataset, threads: int):
    """A precomputed ``gram.json`` when it matches the config and covers every
    evaluation id, else cached or recomputed states."""
    out = Path(cfg.output_dir)
    path, manifest = out / GRAM_JSON, out / "manifest_gram.json"
    if path.exists() and manifest.exists():
        with open(manifest) as fh:
            if json.load(fh).get("states_fingerprint") != _fingerprint(cfg):
                return _states_for(cfg, ds, threads)
        km = KernelMatrix.from_json(path)
        need = {p.id for p in ds.eval_points()[0]}
        if km.is_square and need <= set(km.row_ids):
            return km
    return _states_for(cfg, ds, threads)


def cmd_train(cfg: RunConfig, threads: int = 1, plots: bool = True) -> list[Path]:
    """Tuned quantum-kernel vs RBF accuracy per training size and per Kerr value."""
    out = Path(cfg.output_dir)
    exp = cfg.experiment
    grid = exp.grid.spec()
    seeds = exp.seeds()
    t0 = time.perf_counter()
    ds = _load_dataset(out)
    source = _quantum_source(cfg, ds, threads)
    base_kerr = float(ds.meta.get("kerr_mhz", cfg.device.kerr_mhz))

    def quantum_c(kerr):
        if kerr == 0 and exp.grid.extend_c_at_zero_kerr:
            return grid.all_c()
        return grid.c_values

    size_rows = []
    for size in exp.training_sizes:
        for seed in seeds:
            tr = run_trial(ds, source, size, seed, grid, quantum_c(base_kerr))
            size_rows.append(_trial_row(tr))
            log.info("size %d seed %d: Q %.4f RBF %.4f", size, seed, tr.quantum.accuracy,
                     tr.rbf.accuracy)
    write_csv(out / "accuracy_vs_size.csv", _ACC_HEADER, size_rows)
    written = [out / "accuracy_vs_size.csv"]

    kerr_rows = []
    for kerr in exp.kerr_sweep_mhz:
        if kerr == base_kerr:
            ds_k, src_k = ds, source
        else:
            ds_k, src_k = build_dataset(cfg, kerr_mhz=kerr, threads=threads)
        for seed in exp.kerr_sweep_seeds():
            tr = run_trial(ds_k, src_k, exp.kerr_sweep_size, seed, grid, quantum_c(kerr))
            kerr_rows.append([kerr] + _trial_row(tr))
    if exp.kerr_sweep_mhz:
        write_csv(out / "accuracy_vs_kerr.csv", ["kerr_mhz"] + _ACC_HEADER, kerr_rows)
        written.append(out / "accuracy_vs_kerr.csv")

    if plots:
        sizes = list(exp.training_sizes)
        q = [[r[2] for r in size_rows if r[0] == s] for s in sizes]
        c = [[r[4] for r in size_rows if r[0] == s] for s in sizes]
        written.append(plotting.plot_accuracy(sizes, q, c, "training size", out / "accuracy_vs_size.png"))
        if kerr_rows:
            ks = list(exp.kerr_sweep_mhz)
            q = [[r[3] for r in kerr_rows if r[0] == k] for k in ks]
            c = [[r[5] for r in kerr_rows if r[0] == k] for k in ks]
            written.append(plotting.plot_accuracy(ks, q, c, "Kerr (MHz)", out / "accuracy_vs_kerr.png"))
    seeds_used = {"training_subsets": list(seeds),
                  "kerr_sweep_subsets": list(exp.kerr_sweep_seeds()),
                  "references": exp.seed}
    _manifest(out, "train", cfg, seeds_used, {"total": time.perf_counter() - t0})
    return written


# ---------------------------------------------------------------------------
# scaling


def cmd_scaling(cfg: RunConfig, threads: int = 1, plots: bool = True) -> list[Path]:
    """Single-threaded wall-clock cost of one kernel entry per (n, n_dim) row."""
    out = Path(cfg.output_dir)
    sc = cfg.experiment.scaling
    protocol = sc.protocol(cfg.propagator.config())
    rows = bench.run_scaling(
        sc.rows, protocol,
        progress=lambda r: log.info("n=%d n_dim=%d: %.3f s", r.n, r.n_dim, r.t_c),
    )
    write_csv(out / "scaling.csv",
              ["n", "n_dim", "n_q", "t_c_seconds", "t_c_std", "repeats", "config_hash"],
              [[r.n, r.n_dim, r.n_q, r.t_c, r.t_c_std, r.repeats, r.config_hash] for r in rows])
    write_json(out / "machine.json", bench.machine_metadata())
    written = [out / "scaling.csv", out / "machine.json"]
    if plots:
        written.append(plotting.plot_scaling(rows, out / "scaling.png"))
    _manifest(out, "scaling", cfg, {}, {"rows": {f"{r.n}x{r.n_dim}": r.t_c for r in rows}})
    return written


COMMANDS = {
    "entangle": cmd_entangle,
    "dataset": cmd_dataset,
    "gram": cmd_gram,
    "train": cmd_train,
    "scaling": cmd_scaling,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kerrkernel", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="JSON run configuration (MHz / us units)")
    parser.add_argument("--out", help="output directory (overrides config output_dir)")
    parser.add_argument("--threads", type=int, default=1, help="worker processes for simulations")
    parser.add_argument("--seed", type=int, help="override experiment.seed")
    parser.add_argument("--no-plots", action="store_true", help="skip PNG figures")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def load_config(path: str | None, out: str | None = None, seed: int | None = None) -> RunConfig:
    cfg = RunConfig.load(path) if path else RunConfig()
    if out is not None:
        cfg = cfg.with_output_dir(out)
    if seed is not None:
        cfg = cfg.with_seed(seed)
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        cfg = load_config(args.config, args.out, args.seed)
        written = COMMANDS[args.command](cfg, threads=args.threads, plots=not args.no_plots)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
