import csv
import json

import numpy as np
import pytest

from mosfet_pinn import network as nw
from mosfet_pinn import validation as va
from mosfet_pinn.errors import ConfigurationError
from mosfet_pinn.oracle import ToyPlateProblem


def intro_field():
    def fn(X):
        x, t = X[:, 0], X[:, 1]
        u = va.intro_exact(x, t)
        return {"u": u, "x": np.pi * np.exp(-t) * np.cos(np.pi * x), "y": -u, "xx": -np.pi ** 2 * u}
    return va.FieldModel(nw.AnalyticField(fn))


def toy_field(toy):
    bi = toy.biot

    def fn(X):
        theta = 1.0 - bi / (1.0 + bi) * X[:, 0]
        return {"u": theta, "x": -bi / (1.0 + bi)}
    return va.FieldModel(nw.AnalyticField(fn), 0.0, bi)


def test_unknown_study_is_rejected():
    with pytest.raises(ConfigurationError):
        va.ValidationSpec("table9")


def test_intro_source_makes_the_exact_solution_a_solution():
    x, t, d = 0.37, 0.61, 1e-4
    u = va.intro_exact
    ut = (u(x, t + d) - u(x, t - d)) / (2 * d)
    uxx = (u(x + d, t) - 2 * u(x, t) + u(x - d, t)) / d ** 2
    assert ut - uxx - va.intro_source(x, t) == pytest.approx(0.0, abs=1e-6)


def test_intro_exact_injection_scores_zero():
    r = va.run_intro1d(va.ValidationSpec("intro1d"), intro_field())
    assert r["mse"] == 0.0 and r["initial_max_abs_error"] < 1e-15


def test_intro_loss_vanishes_on_the_exact_solution():
    m = intro_field()
    loss = va.IntroLoss(m)
    terms, total, _ = loss.run(m.arrays(), np.ones(7), grad=False)
    assert total < 1e-25


def test_toy_loss_vanishes_on_the_exact_solution():
    toy = ToyPlateProblem(h_true=1000.0)
    m = toy_field(toy)
    for uniqueness in (True, False):
        loss = va.ToyLoss(toy, m, 200, 20, 0, uniqueness, m.h_unit)
        terms, total, g = loss.run(m.arrays(), np.ones(7))
        assert total < 1e-25
        assert abs(float(g["log_h"])) < 1e-12


def test_toy_uniqueness_term_separates_wrong_h():
    # a field exact for h = 100 but paired with its own Bi fits the Robin term
    # perfectly; only the uniqueness term notices it is the wrong problem
    truth = ToyPlateProblem(h_true=1000.0)
    m = toy_field(ToyPlateProblem(h_true=100.0))
    with_u = va.ToyLoss(truth, m, 200, 20, 0, True, m.h_unit).run(m.arrays(), np.ones(7), grad=False)[0]
    without = va.ToyLoss(truth, m, 200, 20, 0, False, m.h_unit).run(m.arrays(), np.ones(7), grad=False)[0]
    assert without.sum() < 1e-25
    assert with_u[5] > 1e-3


def test_toy_field_error_of_the_exact_field():
    toy = ToyPlateProblem(h_true=10.0)
    assert va.toy_field_error(toy, toy_field(toy).predict) < 1e-12


def test_convergence_probe_exact_injection():
    toy = ToyPlateProblem(h_true=100.0)
    r = va.run_convergence_probe(va.ValidationSpec("convergence_probe"), toy_field(toy))
    assert r["monotone"] and all(row["field_l2_error"] < 1e-12 for row in r["rows"])


def test_log_log_r2():
    t = [10.0, 100.0, 1000.0, 10000.0]
    assert va.log_log_r2(t, t) == pytest.approx(1.0)
    assert va.log_log_r2(t, [2 * v for v in t]) == pytest.approx(1.0)
    assert va.log_log_r2(t, [10.0, 1000.0, 100.0, 10000.0]) < 0.9


def test_short_intro_run_reports_its_fields():
    r = va.run_intro1d(va.ValidationSpec("intro1d", {"epochs": 30, "widths": (2, 6, 1), "n_grid": 8}))
    assert r["epochs"] == 30 and r["field"].shape == (101, 101)
    assert np.isfinite(r["mse"])


def test_short_sweep_has_all_rows():
    spec = va.ValidationSpec("toy_h_sweep", {"h_values": (10.0, 1000.0), "epochs": 20, "widths": (2, 6, 1),
                                             "n_interior": 50, "n_edge": 10})
    r = va.run_toy_h_sweep(spec)
    modes = [row["mode"] for row in r["rows"]]
    assert modes == ["with_uniqueness"] * 2 + ["without_uniqueness"] * 2
    assert all(np.isfinite(row["h_pred"]) for row in r["rows"])


def test_short_probe_flags_unreached_thresholds():
    spec = va.ValidationSpec("convergence_probe", {"epochs": 20, "widths": (2, 6, 1), "n_interior": 50,
                                                   "n_edge": 10, "epsilons": (1e3, 1e-12)})
    r = va.run_convergence_probe(spec)
    hit, miss = r["rows"]
    assert hit["achieved"] and hit["loss"] <= 1e3
    assert not miss["achieved"] and miss["field_l2_error"] is None


def test_write_study(tmp_path):
    r = va.run_intro1d(va.ValidationSpec("intro1d"), intro_field())
    csv_path, man_path = va.write_study(r, tmp_path)
    with open(csv_path) as fh:
        rows = list(csv.DictReader(fh))
    assert rows[0]["schema_version"] == "1" and float(rows[0]["mse"]) == 0.0
    man = json.loads(man_path.read_text())
    assert man["study"] == "intro1d" and "field" not in man
