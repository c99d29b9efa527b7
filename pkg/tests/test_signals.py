import numpy as np
import pytest

from dynident.errors import LogFormatError, PaddingError
from dynident.signals import (
    FilterSpec,
    TrajectoryLog,
    build_problem,
    differentiate,
    read_log,
    write_log,
    zero_phase_filter,
)


def synthetic_log(n=600, rate=200.0, seed=0):
    rng = np.random.default_rng(seed)
    t = np.arange(n) / rate
    q = np.cumsum(rng.normal(scale=1e-3, size=(n, 7)), axis=0)
    qd = differentiate(q, rate)
    tau = rng.normal(size=(n, 7))
    return TrajectoryLog(t, q, qd, tau)


def test_log_round_trip(tmp_path):
    log = synthetic_log()
    path = str(tmp_path / "log.csv")
    write_log(path, log)
    back = read_log(path)
    assert np.array_equal(back.t, log.t)
    assert np.array_equal(back.q, log.q)
    assert np.array_equal(back.qd, log.qd)
    assert np.array_equal(back.tau, log.tau)
    assert back.rate == pytest.approx(200.0)


def test_read_log_reports_line_numbers(tmp_path):
    path = tmp_path / "log.csv"
    good = ",".join(["0.0"] + ["0"] * 21)
    good2 = ",".join(["0.005"] + ["0"] * 21)
    header = read_log.__globals__["LOG_HEADER"]

    path.write_text("")
    with pytest.raises(LogFormatError, match=":1:"):
        read_log(str(path))

    path.write_text("wrong,header\n" + good + "\n")
    with pytest.raises(LogFormatError, match=":1:.*header"):
        read_log(str(path))

    path.write_text(header + "\n" + good + "\n1.0,2.0\n")
    with pytest.raises(LogFormatError, match=":3:.*22 fields"):
        read_log(str(path))

    path.write_text(header + "\n" + good + "\n" + good2.replace("0,", "x,", 1) + "\n")
    with pytest.raises(LogFormatError, match=":3:.*non-numeric"):
        read_log(str(path))

    path.write_text(header + "\n" + good + "\n" + good2.replace("0.005", "inf") + "\n")
    with pytest.raises(LogFormatError, match=":3:.*non-finite"):
        read_log(str(path))

    path.write_text(header + "\n" + good2 + "\n" + good + "\n")
    with pytest.raises(LogFormatError, match=":3:.*increasing"):
        read_log(str(path))

    path.write_text(header + "\n" + good + "\n")
    with pytest.raises(LogFormatError, match="fewer than two"):
        read_log(str(path))


def test_window_selects_inclusive_range():
    log = synthetic_log()
    cut = log.window(0.5, 1.5)
    assert cut.t[0] >= 0.5 and cut.t[-1] <= 1.5
    assert len(cut) < len(log)


def test_filter_preserves_dc():
    x = np.full((800, 7), 3.7)
    y = zero_phase_filter(x, 200.0)
    assert np.abs(y - x).max() < 1e-9


def test_filter_has_zero_lag_in_band():
    rate = 200.0
    t = np.arange(4000) / rate
    x = np.sin(2 * np.pi * 0.5 * t)[:, None] * np.ones((1, 7))
    y = zero_phase_filter(x, rate)
    mid = slice(1000, 3000)
    lags = np.arange(-20, 21)
    xc = [np.dot(y[mid, 0], np.roll(x[:, 0], lag)[mid]) for lag in lags]
    assert lags[int(np.argmax(xc))] == 0
    # passband amplitude survives
    assert np.abs(y[mid, 0]).max() == pytest.approx(1.0, abs=1e-3)


def test_filter_attenuates_out_of_band():
    rate = 200.0
    t = np.arange(2000) / rate
    x = np.sin(2 * np.pi * 40.0 * t)[:, None] * np.ones((1, 7))
    y = zero_phase_filter(x, rate)
    assert np.abs(y[500:1500]).max() < 1e-3


def test_filter_rejects_short_input():
    with pytest.raises(PaddingError):
        zero_phase_filter(np.zeros((5, 7)), 200.0)


def test_differentiate_is_second_order():
    rates = (100.0, 200.0)
    errs = []
    for rate in rates:
        t = np.arange(int(rate) + 1) / rate
        x = np.sin(2 * np.pi * 1.3 * t)[:, None]
        d = differentiate(x, rate)
        ref = 2 * np.pi * 1.3 * np.cos(2 * np.pi * 1.3 * t)[:, None]
        errs.append(np.abs(d - ref)[1:-1].max())
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.15)


def test_build_problem_shapes(model, base, true_params, limits):
    import dynident

    traj = dynident.random_trajectory(limits, seed=30)
    log = dynident.simulate_excitation_log(model, true_params, traj, periods=1,
                                           noise_frac=0.005, seed=30)
    prob = build_problem(model, log, base=base)
    n = len(log)
    assert prob.W.shape[1] == prob.active.size == 94
    assert prob.W.shape[0] % 7 == 0
    assert 0 < prob.W.shape[0] < n * 7  # edge samples trimmed away
    assert prob.b.shape == (prob.W.shape[0],)
    assert prob.weights.shape == (7,)
    assert prob.base is base
    assert prob.rate == pytest.approx(log.rate)
