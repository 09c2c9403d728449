import csv
import math

import numpy as np
import pytest

from pimpes.diagnostics import (
    CSV_HEADER,
    EtaAccumulator,
    MassLedger,
    cfl_number,
    eta_metric,
    front_position,
)
from pimpes.mesh import build_structured_triangulation, no_flow
from pimpes.physics import FluidPair, RockModel
from pimpes.schemes import Problem, SchemeConfig, initial_state, run_time_loop

DAY = 86400.0


def test_eta_all_in_bounds_is_zero():
    assert eta_metric([np.array([0.0, 0.5, 1.0])] * 3, np.ones(3), [1.0] * 3) == 0.0


def test_eta_all_out_of_bounds_is_one():
    assert eta_metric([np.array([-0.1, 1.2])], np.ones(2), [1.0]) == 1.0


def test_eta_two_step_example():
    eta = eta_metric([np.array([1.5]), np.array([0.5])], [1.0], [1.0, 1.0])
    assert math.isclose(eta, 1 - 0.5 / math.sqrt(2.5), rel_tol=1e-15)
    assert abs(eta - 0.6838) < 1e-4


def test_eta_weights_area_and_time():
    # cell areas 1 and 3, steps 2 and 1
    hist = [np.array([0.5, 2.0]), np.array([-1.0, 0.2])]
    num = 2 * (1 * 0.25) + 1 * (3 * 0.04)
    den = 2 * (1 * 0.25 + 3 * 4.0) + 1 * (1 * 1.0 + 3 * 0.04)
    assert math.isclose(eta_metric(hist, [1.0, 3.0], [2.0, 1.0]), 1 - math.sqrt(num / den), rel_tol=1e-14)


def test_eta_needs_history():
    with pytest.raises(ValueError):
        eta_metric([], [1.0], [])
    with pytest.raises(ValueError):
        EtaAccumulator().value


def test_cfl_examples():
    u = np.array([6.0 / DAY, -2.0 / DAY])
    assert math.isclose(cfl_number(u, 0.1 * DAY, 3.0), 0.2, rel_tol=1e-14)
    assert cfl_number(np.zeros(4), 10.0, 1.0) == 0.0
    assert cfl_number(u, 0.2 * DAY, 3.0) == 2 * cfl_number(u, 0.1 * DAY, 3.0)


def test_front_position():
    c = np.array([[0.5, 0.5], [1.5, 0.5], [2.5, 0.5], [0.5, 1.5], [1.5, 1.5], [2.5, 1.5]])
    assert front_position(c, np.ones(6), 0.5) == 2.5  # farthest centroid
    assert front_position(c, np.zeros(6), 0.5) == 0.0
    s = np.array([1, 1, 0, 1, 0, 0.0])
    assert front_position(c, s, 0.5) == 1.5
    strata = np.array([1, 1, 1, 50, 50, 50])
    assert front_position(c, s, 0.5, strata=strata) == {1.0: 1.5, 50.0: 0.5}
    assert front_position(c, s, 0.5, direction=(0, 1)) == 1.5
    with pytest.raises(ValueError):
        front_position(c, s, 1.0)


def _box(rate=None):
    m = no_flow(build_structured_triangulation(2, 2, 2.0, 2.0))
    pr = Problem(m, FluidPair(1000.0, 800.0, 1e-3, 1e-3, g=0.0), RockModel(perm=1e-12), source_rate=rate)
    return pr


def test_ledger_constant_without_flow():
    pr = _box()
    st = initial_state(pr, np.linspace(0.1, 0.8, pr.mesh.n_cells))
    _, led = run_time_loop(pr, st, SchemeConfig(dt=DAY, steps=3))
    mean = float(pr.pore_volume @ st.s_w) / pr.pore_volume.sum()
    for r in led.rows:
        assert r.s_io_w == pytest.approx(mean, abs=1e-15) and r.s_nd_w == pytest.approx(mean, abs=1e-15)
        assert r.s_o_n == pytest.approx(1 - mean, abs=1e-15)


def test_ledger_counts_injection():
    # inject in cell 0 and produce the same volume in the last cell
    q = 1e-6
    rate = np.zeros(8)
    rate[0], rate[-1] = q / 0.5, -q / 0.5
    pr = _box(rate)
    st = initial_state(pr, 0.2)
    dt = 1000.0
    _, led = run_time_loop(pr, st, SchemeConfig(dt=dt, steps=2))
    pv = pr.pore_volume.sum()
    assert led.rows[0].s_io_w - 0.2 == pytest.approx(q * dt / pv, rel=1e-12)
    assert led.rows[1].s_io_w - 0.2 == pytest.approx(2 * q * dt / pv, rel=1e-12)
    assert np.abs(led.defects()).max() <= 1e-14


def test_ledger_telescopes():
    rate = np.zeros(8)
    rate[0], rate[-1] = 2e-6, -2e-6
    pr = _box(rate)
    _, led = run_time_loop(pr, initial_state(pr, 0.3), SchemeConfig(dt=2000.0, steps=6))
    # cumulative rows: the last defect is the sum of the per-step increments
    d = led.defects()[:, 0]
    inc = np.diff(np.concatenate([[0.0], d]))
    assert math.isclose(inc.sum(), d[-1], rel_tol=0, abs_tol=1e-16)


def test_csv_format_and_determinism(tmp_path):
    rate = np.zeros(8)
    rate[0], rate[-1] = 2e-6, -2e-6
    outputs = []
    for k in range(2):
        pr = _box(rate)
        _, led = run_time_loop(pr, initial_state(pr, 0.3), SchemeConfig(dt=2000.0, steps=4))
        led.write_csv(tmp_path / f"d{k}.csv")
        outputs.append((tmp_path / f"d{k}.csv").read_bytes())
    assert outputs[0] == outputs[1]
    rows = list(csv.reader(outputs[0].decode().splitlines()))
    assert tuple(rows[0]) == CSV_HEADER
    assert len(rows) == 5
    # at least twelve significant digits survive
    assert float(rows[2][2]) == led.rows[1].s_io_w


def test_empty_ledger_eta_is_zero():
    assert MassLedger(_box()).eta == 0.0
