import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import coherent_amplitudes

from kerrkernel.dynamics import run_schedule
from kerrkernel.kernel import (
    EncodingConfig,
    EncodingError,
    KernelMatrix,
    RhoCache,
    Sample,
    clip_negative_spectrum,
    encode_sample,
    fill_cache,
    gram_matrix,
    kernel_entry,
    load_states,
    sample_states,
    save_states,
)
from kerrkernel.model import DeviceParams, mhz
from kerrkernel.qinfo import DensityMatrix, uhlmann_fidelity

ENC = EncodingConfig.default()


def device(kerr, mode_dim=5):
    return DeviceParams.from_mhz(kerr, 70.0, [10.0, -15.0], 10.0, mode_dim=mode_dim)


@pytest.fixture(scope="module")
def kerr_device():
    return device(400.0, mode_dim=4)


def test_encoding_endpoints():
    dev = device(0.0)
    lo = encode_sample(Sample("a", (0.0, 0.0)), ENC, dev)
    hi = encode_sample(Sample("b", (1.0, 1.0)), ENC, dev)
    mid = encode_sample(Sample("c", (0.5, 0.5)), ENC, dev)
    assert [p.amplitude for p in lo.pulses] == pytest.approx([mhz(7.5)] * 2)
    assert lo.measure_times == pytest.approx((5.24, 5.24))
    assert [p.amplitude for p in hi.pulses] == pytest.approx([mhz(7.6)] * 2)
    assert hi.measure_times == pytest.approx((95.24, 95.24))
    assert [p.amplitude for p in mid.pulses] == pytest.approx([mhz(7.55)] * 2)
    assert mid.measure_times == pytest.approx((50.24, 50.24))
    # pulses are resonant with the modes and share one center
    assert [p.drive_detuning for p in lo.pulses] == pytest.approx(list(dev.deltas))
    assert all(p.center == pytest.approx(0.24) for p in lo.pulses)


def test_encoding_validation():
    with pytest.raises(EncodingError):
        Sample("x", (1.2, 0.0))
    with pytest.raises(EncodingError):
        Sample("x", (-0.01, 0.0))
    with pytest.raises(EncodingError):
        encode_sample(Sample("x", (0.2,)), ENC, device(0.0))
    with pytest.raises(ValueError):
        EncodingConfig(2.0, 1.0, 1.0, 2.0)
    with pytest.raises(ValueError):
        EncodingConfig(1.0, 2.0, 0.3, 2.0)  # readout before the pulse ends
    with pytest.raises(ValueError):
        EncodingConfig(1.0, 2.0, 3.0, 3.0)


def test_kernel_entry_basics():
    rng = np.random.default_rng(0)
    states = []
    for _ in range(4):
        v = rng.normal(size=4) + 1j * rng.normal(size=4)
        states.append(DensityMatrix.pure(v / np.linalg.norm(v), (2, 2)))
    a, b = states[:2], states[2:]
    assert kernel_entry(a, a) == pytest.approx(1.0, abs=1e-8)
    assert kernel_entry(a, b) == pytest.approx(kernel_entry(b, a), abs=1e-9)
    assert kernel_entry(a[:1], b[:1]) == pytest.approx(uhlmann_fidelity(a[0], b[0]))
    with pytest.raises(ValueError):
        kernel_entry(a, b[:1])


def test_sample_states_invariants(kerr_device):
    rhos = sample_states(Sample("s", (0.3, 0.3)), ENC, kerr_device)
    assert len(rhos) == 2
    for rho in rhos:
        rho.validate(1e-9)
    assert np.allclose(rhos[0].data, rhos[1].data, atol=1e-12)


def test_single_mode_zero_kerr_snapshot_is_reference():
    dev = DeviceParams.from_mhz(0.0, 70.0, [10.0], 10.0, mode_dim=6)
    enc = EncodingConfig.from_mhz(7.5, 7.6, 5.24, 95.24)
    sched = encode_sample(Sample("s", (0.8,)), enc, dev)
    traj = run_schedule(dev, sched)
    rho = sample_states(Sample("s", (0.8,)), enc, dev)[0]
    assert uhlmann_fidelity(rho, traj.reference_state) == pytest.approx(1.0, abs=1e-8)


def test_zero_kerr_kernel_matches_coherent_state_overlaps():
    # mode_dim 12 keeps truncation error of the reduced states below 1e-8
    dev = device(0.0, mode_dim=12)
    xs = [Sample(0, (0.1, 0.9)), Sample(1, (0.6, 0.2)), Sample(2, (1.0, 0.0))]
    km = gram_matrix(xs, xs, ENC, dev)
    alphas = [coherent_amplitudes(dev, encode_sample(x, ENC, dev)) for x in xs]
    for i in range(3):
        for j in range(3):
            # |<a|b>| = exp(-|a - b|^2 / 2) per readout, two readouts
            expected = np.exp(-np.sum(np.abs(alphas[i] - alphas[j]) ** 2))
            assert km.values[i, j] == pytest.approx(expected, abs=1e-8)
    shifted = EncodingConfig.from_mhz(7.5, 7.6, 20.0, 40.0)
    km2 = gram_matrix(xs, xs, shifted, dev)
    assert np.max(np.abs(km.values - km2.values)) < 1e-8


def test_gram_matrix_properties(kerr_device):
    xs = [Sample(i, f) for i, f in enumerate([(0.1, 0.2), (0.5, 0.5), (0.9, 0.3)])]
    cache = RhoCache()
    km = gram_matrix(xs, xs, ENC, kerr_device, cache=cache)
    assert len(cache) == 3
    assert km.is_square
    assert np.allclose(np.diag(km.values), 1.0, atol=1e-8)
    assert np.array_equal(km.values, km.values.T)
    assert np.all((km.values >= 0) & (km.values <= 1))
    for i in range(3):
        for j in range(3):
            assert km.values[i, j] == pytest.approx(kernel_entry(cache[i], cache[j]), abs=1e-12)
    perm = [2, 0, 1]
    km_p = gram_matrix([xs[k] for k in perm], [xs[k] for k in perm], ENC, kerr_device, cache=cache)
    assert np.allclose(km_p.values, km.values[np.ix_(perm, perm)], atol=1e-12)
    rect = gram_matrix(xs[:2], xs, ENC, kerr_device, cache=cache)
    assert rect.values.shape == (2, 3) and not rect.is_square


def test_cache_computes_each_id_once(kerr_device, monkeypatch):
    import kerrkernel.kernel as kn

    calls = []
    real = kn.sample_states

    def counting(x, *a, **k):
        calls.append(x.id)
        return real(x, *a, **k)

    monkeypatch.setattr(kn, "sample_states", counting)
    xs = [Sample("a", (0.2, 0.2)), Sample("b", (0.4, 0.1)), Sample("a", (0.2, 0.2))]
    cache = fill_cache(xs, ENC, kerr_device)
    fill_cache(xs, ENC, kerr_device, cache=cache)
    assert sorted(calls) == ["a", "b"]
    assert len(cache) == 2


def test_parallel_fill_matches_serial(kerr_device):
    xs = [Sample(i, (0.1 * i, 0.3)) for i in range(4)]
    serial = gram_matrix(xs, xs, ENC, kerr_device)
    parallel = gram_matrix(xs, xs, ENC, kerr_device, workers=2)
    assert np.array_equal(serial.values, parallel.values)


def test_kernel_matrix_serialization(tmp_path):
    values = np.array([[1, 0.2, 0.3], [0.2, 1, 0.4], [0.3, 0.4, 1.0]])
    km = KernelMatrix([0, 1, "ref1"], [0, 1, "ref1"], values)
    km.to_csv(tmp_path / "g.csv")
    km.to_json(tmp_path / "g.json")
    for back in (KernelMatrix.from_csv(tmp_path / "g.csv"), KernelMatrix.from_json(tmp_path / "g.json")):
        assert back.row_ids == km.row_ids
        assert np.array_equal(back.values, km.values)
    header = (tmp_path / "g.csv").read_text().splitlines()[0]
    assert header == "row_id,col_id,value"


def test_state_archive_round_trip(tmp_path, kerr_device):
    xs = [Sample(0, (0.1, 0.2)), Sample("ref1", (0.5, 0.5))]
    cache = fill_cache(xs, ENC, kerr_device)
    save_states(tmp_path / "s.npz", cache, "abc")
    back = load_states(tmp_path / "s.npz", "abc")
    assert set(back.keys()) == {0, "ref1"}
    expected = kernel_entry(cache[0], cache["ref1"])
    assert kernel_entry(back[0], cache["ref1"]) == pytest.approx(expected, abs=1e-14)
    with pytest.raises(ValueError):
        load_states(tmp_path / "s.npz", "other")


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(2, 6))
def test_clip_negative_spectrum(seed, n):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(n, n))
    out = clip_negative_spectrum(a + a.T)
    assert np.linalg.eigvalsh(out).min() >= -1e-10
    assert np.allclose(out, out.T)


def test_gram_clip_flag(kerr_device):
    xs = [Sample(i, (0.2 * i, 0.5)) for i in range(3)]
    plain = gram_matrix(xs, xs, ENC, kerr_device)
    clipped = gram_matrix(xs, xs, ENC, kerr_device, clip_negative=True)
    assert np.linalg.eigvalsh(clipped.values).min() >= -1e-10
    if np.linalg.eigvalsh(plain.values).min() >= 0:
        assert np.allclose(plain.values, clipped.values, atol=1e-10)
