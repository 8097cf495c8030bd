"""End-to-end acceptance criteria, each at its stated tolerance.

Every test prints one ``criterion N: PASS/FAIL (...)`` line; the lines are
repeated in the terminal summary.  Run with ``pytest -m acceptance``.
"""

import functools

import numpy as np
import pytest
from oracles import coherent_amplitudes, midpoint_exponential
from scipy.signal import find_peaks

from kerrkernel import cli
from kerrkernel.bench import (
    ScalingProtocol,
    growth_ratios,
    qubits_required,
    run_scaling,
)
from kerrkernel.config import RunConfig
from kerrkernel.dynamics import (
    KrylovPropagator,
    SpectralPropagator,
    excitation_blocks,
    fidelity_trace,
    integrate_tdse,
)
from kerrkernel.hilbert import ModeLayout, excitation_numbers, vacuum
from kerrkernel.kernel import EncodingConfig, Sample, encode_sample, gram_matrix
from kerrkernel.ml import run_trial
from kerrkernel.model import DeviceParams, gaussian_schedule, h_static, mhz
from kerrkernel.qinfo import DensityMatrix, log_negativity, uhlmann_fidelity

pytestmark = pytest.mark.acceptance

SIGMA = 0.08
PULSE_END = 6 * SIGMA
AMPLITUDES_MHZ = (8.75, 9.25, 9.75)


def entangle_device(kerr_mhz, n, mode_dim=9):
    return DeviceParams.from_mhz(kerr_mhz, 100.0, [10.0, -10.0, -30.0][:n], 8.0, mode_dim=mode_dim)


@functools.lru_cache(maxsize=None)
def trace(kerr_mhz, n, tau_max, n_points, negativity=True):
    """Fidelity/negativity trace at PULSE_END + linspace(0, tau_max, n_points)."""
    dev = entangle_device(kerr_mhz, n)
    sched = gaussian_schedule([mhz(a) for a in AMPLITUDES_MHZ[:n]], dev.deltas, SIGMA)
    times = sched.pulse_end + np.linspace(0.0, tau_max, n_points)
    return fidelity_trace(dev, sched, times, negativity=negativity)


def first_dip(fid):
    # fast ripples of ~1e-4 ride on the slow decay; a dip needs real prominence
    peaks, _ = find_peaks(-fid, prominence=0.05)
    return int(peaks[0])


def first_below(tr, level=0.9):
    idx = np.flatnonzero(tr.fidelity < level)
    return tr.times[idx[0]] - PULSE_END if idx.size else np.inf


def infidelity(a, b):
    return 1.0 - abs(np.vdot(a, b)) ** 2


# the published qubit-count column, as printed
PUBLISHED_QUBITS = {
    (2, 6): 7, (2, 9): 8, (2, 12): 9,
    (3, 6): 9, (3, 9): 11, (3, 12): 13,
    (4, 6): 12, (4, 9): 14, (4, 12): 16,
}


@pytest.mark.xfail(strict=True, reason="published (3, 12) count is 13; the ceiling formula gives 12")
def test_criterion_01_qubit_counts(report):
    bad = {k: (qubits_required(*k), v) for k, v in PUBLISHED_QUBITS.items() if qubits_required(*k) != v}
    ok = report(1, not bad, f"mismatches (computed, published): {bad}")
    assert ok


def test_criterion_02_zero_kerr_invariance(report):
    tr = trace(0.0, 2, 10.0 - PULSE_END, 1001)
    dev = float(np.max(np.abs(tr.fidelity - 1.0)))
    ok = report(2, dev <= 1e-6, f"max |F - 1| = {dev:.2e} up to t = 10 us, tol 1e-6")
    assert ok


def test_criterion_03_kerr_entanglement(report):
    zero = trace(0.0, 2, 10.0 - PULSE_END, 1001)
    kerr = trace(400.0, 2, 2.0 - PULSE_END, 501)
    floor = float(np.max(zero.log_negativity))
    spread = float(np.ptp(zero.log_negativity))
    peak = float(np.max(kerr.log_negativity))
    # at K = 0 the state is frozen in the interaction picture, so E_N stays on its floor
    ok = peak > 100 * floor and spread <= 1e-6
    report(3, ok, f"peak E_N {peak:.4f} = {peak / floor:.1f} x floor {floor:.2e}; "
                  f"K=0 spread {spread:.1e}")
    assert ok


def test_criterion_04_effective_kerr_monotonicity(report):
    by_kerr = [first_below(trace(k, 2, 80.0, 4001, False)) for k in (6.25, 25.0, 100.0, 400.0)]
    by_n = [first_below(trace(400.0, n, 20.0, 4001, False)) for n in (1, 2, 3)]
    ok = bool(np.all(np.diff(by_kerr) < 0) and np.all(np.diff(by_n) < 0))
    fmt = ", ".join
    report(4, ok, f"tau(F<0.9) vs K: [{fmt(f'{t:.2f}' for t in by_kerr)}] us; "
                  f"vs n: [{fmt(f'{t:.3f}' for t in by_n)}] us")
    assert ok


@pytest.mark.xfail(strict=True, reason="the 100 MHz trace matches the 400 MHz trace at scale ~1.6, not 4")
def test_criterion_05_speedup_only(report):
    tau = np.linspace(0.0, 200.0, 10001)
    fast = trace(400.0, 2, 200.0, 10001, False).fidelity
    slow = trace(100.0, 2, 200.0, 10001, False).fidelity
    k = first_dip(fast)
    window = tau[: k + 1]
    assert 4 * window[-1] <= tau[-1]

    def deviation(scale):
        return float(np.max(np.abs(np.interp(scale * window, tau, slow) - fast[: k + 1])))

    scales = np.linspace(1.0, 4.0, 61)
    best = min(scales, key=deviation)
    dev = deviation(4.0)
    ok = report(5, dev <= 0.05, f"max deviation {dev:.3f} at scale 4 over tau <= {window[-1]:.1f} us, "
                                f"tol 0.05; best scale {best:.2f} gives {deviation(best):.3f}")
    assert ok


def test_criterion_06_single_mode_recovery(report):
    fid = trace(400.0, 1, 150.0, 7501, False).fidelity
    k = first_dip(fid)
    recovered = float(fid[k:].max())
    ok = report(6, recovered >= 0.95, f"first dip F = {fid[k]:.3f}, later max F = {recovered:.4f}")
    assert ok


def test_criterion_07_propagator_oracles(report):
    worst = 0.0
    for dims in ((2, 3), (3, 3)):
        rng = np.random.default_rng(sum(dims))
        dev = DeviceParams(
            kerr=float(rng.uniform(0, 40)), delta_q=float(rng.uniform(-60, 60)),
            deltas=(float(rng.uniform(-60, 60)),), couplings=(float(rng.uniform(10, 50)),),
            layout=ModeLayout(dims),
        )
        sched = gaussian_schedule([float(rng.uniform(20, 60))], [dev.deltas[0]], SIGMA)
        psi = integrate_tdse(vacuum(dev.layout), dev, sched, 0.0, sched.pulse_end)
        ref = midpoint_exponential(vacuum(dev.layout), dev, sched, 0.0, sched.pulse_end, 1e-4)
        worst = max(worst, infidelity(psi, ref))

    gap = 0.0
    for dims in ((2, 3), (3, 3), (4, 5, 5)):
        dev = DeviceParams.from_mhz(400.0, 100.0, [10.0, -10.0][: len(dims) - 1], 8.0,
                                    mode_dim=dims[1], qubit_dim=dims[0])
        h = h_static(dev, sparse=True)
        rng = np.random.default_rng(len(dims))
        psi = rng.normal(size=h.shape[0]) + 1j * rng.normal(size=h.shape[0])
        psi /= np.linalg.norm(psi)
        spec = SpectralPropagator(h, excitation_blocks(h, excitation_numbers(dev.layout)))
        kry = KrylovPropagator(h, tol=1e-11)
        dts = [0.01, 0.3, 2.0, 10.0]
        for a, b in zip(spec.evolve_many(psi, dts), kry.evolve_many(psi, dts)):
            gap = max(gap, float(np.linalg.norm(a - b)))
    ok = worst <= 1e-6 and gap <= 1e-8
    report(7, ok, f"integrator vs midpoint infidelity {worst:.1e} (tol 1e-6); "
                  f"spectral vs Krylov {gap:.1e} (tol 1e-8)")
    assert ok


def test_criterion_08_unit_values(report):
    def pure(v, dims):
        v = np.asarray(v, dtype=complex)
        return DensityMatrix(np.outer(v, v.conj()), dims)

    rng = np.random.default_rng(0)
    m = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    rho = DensityMatrix(m @ m.conj().T / np.trace(m @ m.conj().T).real, (3,))
    bell = pure(np.array([1, 0, 0, 1]) / np.sqrt(2), (2, 2))
    prod = pure(np.kron([0.6, 0.8], [1, 1j]) / np.sqrt(2), (2, 2))
    errors = {
        "F(rho,rho)": abs(uhlmann_fidelity(rho, rho) - 1),
        "F(orthogonal)": abs(uhlmann_fidelity(pure([1, 0], (2,)), pure([0, 1], (2,)))),
        "F(I/2,pure)": abs(uhlmann_fidelity(DensityMatrix(np.eye(2) / 2, (2,)), pure([1, 0], (2,)))
                           - 1 / np.sqrt(2)),
        "E_N(Bell)": abs(log_negativity(bell, [0]) - 1),
        "E_N(product)": abs(log_negativity(prod, [0])),
    }
    worst = max(errors.values())
    ok = report(8, worst <= 1e-9, f"worst error {worst:.1e} ({max(errors, key=errors.get)}), tol 1e-9")
    assert ok


def test_criterion_09_rbf_limit(report):
    # mode_dim 12 keeps Fock truncation of the coherent states below 1e-8
    dev = DeviceParams.from_mhz(0.0, 70.0, [10.0, -15.0], 10.0, mode_dim=12)
    enc = EncodingConfig.default()
    xs = [Sample(i, f) for i, f in enumerate([(0.1, 0.9), (0.6, 0.2), (1.0, 0.0), (0.35, 0.5)])]
    values = gram_matrix(xs, xs, enc, dev).values
    shifted = gram_matrix(xs, xs, EncodingConfig.from_mhz(7.5, 7.6, 20.0, 40.0), dev).values
    t_dev = float(np.max(np.abs(values - shifted)))

    alphas = [coherent_amplitudes(dev, encode_sample(x, enc, dev)) for x in xs]
    # per readout |<a|b>| = exp(-|a - b|^2 / 2); two readouts per sample
    overlap = np.array([[np.exp(-np.sum(np.abs(a - b) ** 2)) for b in alphas] for a in alphas])
    o_dev = float(np.max(np.abs(values - overlap)))

    steps = np.linspace(0.0, 1.0, 6)
    monotone = True
    for axis in (0, 1):
        line = [Sample(f"g{axis}_{k}", (s, 0.5) if axis == 0 else (0.5, s)) for k, s in enumerate(steps)]
        row = gram_matrix(line[:1], line, enc, dev).values[0]
        monotone &= bool(np.all(np.diff(row) < 0))
    ok = t_dev <= 1e-8 and o_dev <= 1e-8 and monotone
    report(9, ok, f"T-dependence {t_dev:.1e}, overlap-product error {o_dev:.1e} (tol 1e-8); "
                  f"monotone along grid lines: {monotone}")
    assert ok


PILOT_SEEDS = (0, 1, 2)


@functools.lru_cache(maxsize=None)
def pilot(kerr_mhz):
    """Mean tuned mesh accuracies (quantum, RBF) at training size 64 on a 25 x 25 mesh."""
    cfg = RunConfig.from_dict({"device": {"kerr_mhz": kerr_mhz, "mode_dim": 7},
                               "experiment": {"mesh_resolution": 25}})
    ds, cache = cli.build_dataset(cfg)
    grid = cfg.experiment.grid.spec()
    quantum_c = grid.all_c() if kerr_mhz == 0 else None
    trials = [run_trial(ds, cache, 64, seed, grid, quantum_c) for seed in PILOT_SEEDS]
    q = [t.quantum.accuracy for t in trials]
    r = [t.rbf.accuracy for t in trials]
    return float(np.mean(q)), float(np.mean(r)), q, r


@pytest.mark.slow
def test_criterion_10_quantum_beats_rbf(report):
    q, r, qs, rs = pilot(400.0)
    ok = report(10, q > r, f"K=400 MHz mean accuracy quantum {q:.3f} vs RBF {r:.3f} "
                           f"(per seed {np.round(qs, 3).tolist()} vs {np.round(rs, 3).tolist()})")
    assert ok


@pytest.mark.slow
def test_criterion_11_gap_grows_with_kerr(report):
    q4, r4, _, _ = pilot(400.0)
    q0, r0, _, _ = pilot(0.0)
    gap4, gap0 = q4 - r4, q0 - r0
    ok = gap4 > gap0 and abs(gap0) <= 0.05
    report(11, ok, f"gap at 400 MHz {gap4:+.3f}, gap at 0 {gap0:+.3f} (|gap0| tol 0.05)")
    assert ok


# (4, 12) needs hours per entry on a desk machine and is left out
SCALING_ROWS = ((2, 6), (2, 9), (2, 12), (3, 6), (3, 9), (3, 12), (4, 6), (4, 9))


@pytest.mark.slow
def test_criterion_12_scaling_trend(report):
    rows = run_scaling(SCALING_ROWS, ScalingProtocol(repeats=3))
    t = {(r.n, r.n_dim): r.t_c for r in rows}
    in_n = all(t[(n, d)] < t[(n + 1, d)] for (n, d) in t if (n + 1, d) in t)
    in_dim = all(t[(n, a)] < t[(n, b)] for (n, a) in t for (m, b) in t if m == n and b > a)
    ratios = growth_ratios(rows, 9)
    grows = len(ratios) == 2 and ratios[1] > ratios[0]
    ok = in_n and in_dim and grows
    times = ", ".join(f"{k}: {v:.2f}s" for k, v in sorted(t.items()))
    report(12, ok, f"increasing in n {in_n}, in n_dim {in_dim}; ratios at n_dim=9 "
                   f"{np.round(ratios, 2).tolist()}; {times}")
    assert ok
