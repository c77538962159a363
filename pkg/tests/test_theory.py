"""Update-rate-ratio analysis: closed forms, finite differences, and the
trajectory report."""

import csv
import json
import math

import numpy as np
import pytest

from prefalign.data import StepRecord, TrajectoryLog
from prefalign.theory import (
    RatioPoint,
    bias_trajectory_report,
    dpo_loss_t,
    dpo_partials,
    update_rate_ratio,
    write_trajectory_csv,
    write_trajectory_summary,
)


def test_loss_ln2_at_equal_ratios():
    for beta in (0.1, 1.0, 3.0):
        assert abs(dpo_loss_t(RatioPoint(0.7, 0.7, beta)) - math.log(2.0)) <= 1e-12


def test_loss_vanishes_as_t2_goes_to_zero():
    assert abs(dpo_loss_t(RatioPoint(1.0, 1e-12, 1.0))) <= 1e-9


def test_loss_direct_value():
    # -log(2 / 2.5) at t1=2, t2=0.5, beta=1
    assert dpo_loss_t(RatioPoint(2.0, 0.5, 1.0)) == pytest.approx(-math.log(0.8), abs=1e-12)


def test_partials_at_symmetric_point():
    d1, d2 = dpo_partials(RatioPoint(1.0, 1.0, 1.0))
    assert d1 == pytest.approx(-0.5, abs=1e-15)
    assert d2 == pytest.approx(0.5, abs=1e-15)


def test_partials_signs_everywhere():
    rng = np.random.default_rng(0)
    for _ in range(200):
        pt = RatioPoint(float(rng.uniform(0.05, 10)), float(rng.uniform(0.05, 10)),
                        float(rng.uniform(0.1, 3)))
        d1, d2 = dpo_partials(pt)
        assert d1 < 0.0 and d2 > 0.0


def test_partials_match_central_differences():
    h = 1e-6
    for t1, t2, beta in [(2.0, 0.5, 2.0), (0.3, 1.7, 0.5), (1.1, 1.1, 1.0)]:
        d1, d2 = dpo_partials(RatioPoint(t1, t2, beta))
        fd1 = (dpo_loss_t(RatioPoint(t1 + h, t2, beta)) - dpo_loss_t(RatioPoint(t1 - h, t2, beta))) / (2 * h)
        fd2 = (dpo_loss_t(RatioPoint(t1, t2 + h, beta)) - dpo_loss_t(RatioPoint(t1, t2 - h, beta))) / (2 * h)
        assert d1 == pytest.approx(fd1, rel=1e-7)
        assert d2 == pytest.approx(fd2, rel=1e-7)


def test_update_rate_ratio_examples():
    assert update_rate_ratio(RatioPoint(0.4, 0.4, 1.3)) == pytest.approx(1.0, abs=1e-12)
    assert update_rate_ratio(RatioPoint(4.0, 1.0, 1.0)) == pytest.approx(0.25, abs=1e-12)


def test_update_rate_ratio_sweep_identity():
    rng = np.random.default_rng(1)
    betas = [0.1, 0.5, 1.0, 2.0]
    for i in range(1000):
        pt = RatioPoint(float(rng.uniform(0.05, 20)), float(rng.uniform(0.05, 20)),
                        betas[i % 4])
        assert abs(update_rate_ratio(pt) - pt.t2 / pt.t1) <= 1e-10


def test_ratio_point_validation():
    with pytest.raises(ValueError):
        RatioPoint(0.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        RatioPoint(1.0, -1.0, 1.0)
    with pytest.raises(ValueError):
        RatioPoint(1.0, 1.0, 0.0)


def _log_from_ratios(pairs):
    log = TrajectoryLog()
    for i, (t1, t2) in enumerate(pairs):
        log.append(StepRecord(step=i, loss=0.0, lr=0.0, mean_chosen_logprob=0.0,
                              mean_rejected_logprob=0.0, t1=t1, t2=t2, p_dpo=0.0))
    return log


def test_trajectory_report_rising_t1_falling_t2():
    log = _log_from_ratios([(1.0 + 0.1 * i, 1.0 / (1.0 + 0.1 * i)) for i in range(1, 21)])
    report = bias_trajectory_report(log)
    assert report["summary"]["fraction_ratio_below_1"] == 1.0
    assert report["summary"]["n_steps"] == 20
    assert report["summary"]["warmup_steps"] == 2  # 10% default warmup


def test_trajectory_report_constant_equal_ratios():
    log = _log_from_ratios([(1.0, 1.0)] * 10)
    report = bias_trajectory_report(log)
    assert report["summary"]["fraction_ratio_below_1"] == 0.0  # ratio 1 is not < 1


def test_trajectory_report_skips_non_dpo_steps_and_rejects_empty():
    log = TrajectoryLog()
    log.append(StepRecord(step=0, loss=1.0, lr=0.1, mean_chosen_logprob=-1.0,
                          mean_rejected_logprob=-2.0))
    with pytest.raises(ValueError):
        bias_trajectory_report(log)
    log.append(StepRecord(step=1, loss=1.0, lr=0.1, mean_chosen_logprob=-1.0,
                          mean_rejected_logprob=-2.0, t1=2.0, t2=1.0))
    report = bias_trajectory_report(log)
    assert len(report["per_step"]) == 1
    assert report["per_step"][0]["ratio"] == pytest.approx(0.5)


def test_trajectory_writers_round_trip(tmp_path):
    log = _log_from_ratios([(2.0, 1.0), (4.0, 1.0)])
    report = bias_trajectory_report(log)
    csv_path = tmp_path / "traj.csv"
    json_path = tmp_path / "traj.json"
    write_trajectory_csv(report, csv_path)
    write_trajectory_summary(report, json_path)
    with open(csv_path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["step", "t1", "t2", "ratio"]
    assert float(rows[1][3]) == pytest.approx(0.5)
    summary = json.loads(json_path.read_text())
    assert summary["fraction_ratio_below_1"] == 1.0
