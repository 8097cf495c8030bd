import math

import pytest

from kerrkernel import bench
from kerrkernel.bench import (
    SCALING_ROWS,
    ScalingProtocol,
    extended_detunings,
    growth_ratios,
    qubits_required,
    qubits_required_closed_form,
)

FORMULA_QUBITS = {
    (2, 6): 7, (2, 9): 8, (2, 12): 9,
    (3, 6): 9, (3, 9): 11, (3, 12): 12,
    (4, 6): 12, (4, 9): 14, (4, 12): 16,
}


def test_scaling_rows_and_qubit_counts():
    assert set(SCALING_ROWS) == set(FORMULA_QUBITS)
    for (n, d), nq in FORMULA_QUBITS.items():
        assert qubits_required(n, d) == nq
    assert qubits_required(1, 2) == 2


def test_closed_forms_agree():
    for n in range(1, 9):
        for d in range(2, 17):
            assert qubits_required(n, d) == qubits_required_closed_form(n, d)
            assert qubits_required(n, d) == math.ceil(math.log2(2 * d**n))


def test_invalid_inputs():
    with pytest.raises(ValueError):
        qubits_required(0, 4)
    with pytest.raises(ValueError):
        qubits_required(2, 1)


def test_extended_detunings():
    assert extended_detunings(2) == [10.0, -15.0]
    assert extended_detunings(4) == [10.0, -15.0, 35.0, -40.0]


def test_protocol_device_and_hash():
    p = ScalingProtocol()
    dev = p.device(3, 6)
    assert dev.layout.dims == (4, 6, 6, 6)
    assert p.config_hash(3, 6) == ScalingProtocol().config_hash(3, 6)
    assert p.config_hash(3, 6) != p.config_hash(3, 9)


def test_time_kernel_entry_small():
    p = ScalingProtocol(repeats=2)
    row = bench.time_kernel_entry(1, 3, p)
    assert row.n_q == 3 and row.t_c > 0 and row.repeats == 2


def test_growth_ratios():
    rows = [bench.ScalingRow(n, 9, 0, t, 0.0, 1, "") for n, t in [(2, 1.0), (3, 4.0), (4, 40.0)]]
    assert growth_ratios(rows, 9) == [4.0, 10.0]
