import json
from dataclasses import asdict

import numpy as np
import pytest

from openmhd.cli_io import (
    build_density_problem,
    build_simulation_data,
    config_from_dict,
    convergence_study,
    eval_scalar_profile,
    exponent_condition,
    get_scenario,
    load_config,
    main,
    run_scenario,
    scenario_library,
    validate_config,
    write_config,
)
from openmhd.core_fields import make_grid, read_field_dump
from openmhd.errors import (
    CompatibilityViolated,
    ExponentConditionViolated,
    ParseError,
)


def mini_full_config(**overrides):
    raw = {
        "name": "mini",
        "mode": "full",
        "grid": {"nx": 9, "ny": 9, "extent": [0.0, 1.0, 0.0, 1.0]},
        "material": {"mu": 0.1},
        "boundary": {
            "u": {"x": {"family": "constant", "value": 1.0}},
            "rho": {"family": "constant", "value": 1.0},
            "theta": {"family": "constant", "value": 1.0},
            "b": {"z": {"family": "bump2d", "amp": 0.3}},
        },
        "initial": {
            "rho": {"family": "constant", "value": 1.0},
            "u": {"x": {"family": "constant", "value": 1.0}},
            "theta": {"family": "constant", "value": 1.0},
            "b": {"z": {"family": "bump2d", "amp": 0.3}},
        },
        "time": {"horizon": 0.004, "dt": 1e-3, "window": 0.004},
        "fixed_point": {"tol": 1e-6, "max_iter": 20, "max_shrinks": 3},
        "output_cadence": 2,
    }
    raw.update(overrides)
    return config_from_dict(raw)


class TestProfiles:
    def test_constant_and_linear(self):
        grid = make_grid(5, 5)
        c = eval_scalar_profile({"family": "constant", "value": 2.5}, grid,
                                0.0, grid.xg, grid.yg)
        np.testing.assert_allclose(c, 2.5)
        lin = eval_scalar_profile({"family": "linear", "a": 1.0, "bx": 2.0,
                                   "bt": 3.0}, grid, 0.5, grid.xg, grid.yg)
        np.testing.assert_allclose(lin, 1.0 + 2.0 * grid.xg + 1.5)

    def test_unknown_family_rejected(self):
        grid = make_grid(5, 5)
        with pytest.raises(ParseError):
            eval_scalar_profile({"family": "nope"}, grid, 0.0, grid.xg, grid.yg)


class TestConfigValidation:
    def test_minimal_config_loads(self, tmp_path):
        cfg = mini_full_config()
        path = tmp_path / "mini.json"
        write_config(cfg, path)
        back = load_config(path)
        assert back == cfg

    def test_round_trip_field_for_field(self, tmp_path):
        cfg = get_scenario("inflow-channel")
        path = tmp_path / "chan.json"
        write_config(cfg, path)
        back = load_config(path)
        assert asdict(back) == asdict(cfg)

    def test_incompatible_density_reported_by_name(self):
        cfg = mini_full_config()
        cfg.boundary = dict(cfg.boundary)
        cfg.boundary["rho"] = {"family": "constant", "value": 2.0}
        with pytest.raises(CompatibilityViolated) as err:
            validate_config(cfg)
        assert any("rho_0 != rho_B(0)" in v for v in err.value.violations)

    def test_all_violations_collected(self):
        cfg = mini_full_config()
        cfg.boundary = dict(cfg.boundary)
        cfg.boundary["rho"] = {"family": "constant", "value": 2.0}
        cfg.boundary["theta"] = {"family": "constant", "value": 3.0}
        with pytest.raises(CompatibilityViolated) as err:
            validate_config(cfg)
        assert len(err.value.violations) >= 2

    def test_exponent_condition_example(self):
        # p = 2, q = 4: 2q/(2q-3) = 8/5 < 2 holds but 2q/(q-1) = 8/3 > 2 fails
        ok, bound = exponent_condition(2.0, 4.0)
        assert not ok and bound == pytest.approx(8.0 / 3.0)
        cfg = mini_full_config(norms={"p": 2.0, "q": 4.0})
        with pytest.raises(ExponentConditionViolated):
            validate_config(cfg)
        validate_config(cfg, override_exponent_check=True)

    def test_default_exponents_satisfy_condition(self):
        ok, _ = exponent_condition(4.0, 4.0)
        assert ok

    def test_bad_json_raises_parse_error(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        with pytest.raises(ParseError):
            load_config(p)

    def test_unknown_keys_rejected(self):
        with pytest.raises(ParseError):
            config_from_dict({"name": "x", "mode": "full",
                              "grid": {"nx": 8, "ny": 8, "extent": [0, 1, 0, 1]},
                              "bogus": 1})

    def test_non_object_section_rejected(self):
        with pytest.raises(ParseError):
            config_from_dict({"name": "x", "mode": "full", "grid": "tiny"})

    def test_transport_without_density_data(self):
        cfg = config_from_dict({
            "name": "x", "mode": "transport",
            "grid": {"nx": 8, "ny": 8, "extent": [0, 1, 0, 1]},
            "velocity": {"x": {"family": "constant", "value": 1.0}},
        })
        with pytest.raises(ParseError, match="initial 'rho'"):
            validate_config(cfg)


class TestScenarioLibrary:
    def test_all_builtins_validate(self):
        for name, cfg in scenario_library().items():
            validate_config(cfg)

    def test_listing_sorted_and_stable(self):
        names = list(scenario_library())
        assert names == sorted(names)
        assert names == list(scenario_library())
        assert "inflow-channel" in names and "stationary" in names

    def test_unknown_name(self):
        with pytest.raises(ParseError):
            get_scenario("")

    def test_builders_dispatch_by_mode(self):
        prob = build_density_problem(get_scenario("uniform-divergence"))
        assert prob.nt == 200
        data = build_simulation_data(get_scenario("stationary"))
        assert data.initial.rho.shape == (33, 33)


class TestRunScenario:
    def test_mini_run_writes_artifacts(self, tmp_path):
        cfg = mini_full_config()
        status = run_scenario(cfg, tmp_path, plots=True)
        assert status == 0
        report = json.loads((tmp_path / "report.json").read_text())
        assert report["fixed_point"]["converged"]
        assert report["diagnostics"]["passed"]
        assert (tmp_path / "fixed_point.png").exists()
        assert (tmp_path / "diagnostics.png").exists()
        assert (tmp_path / "fields_final.png").exists()
        # cadence 2 on 4 steps: dumps at 0, 2 and the final step
        for step in ("00000", "00002", "00004"):
            name, meta, arr = read_field_dump(tmp_path / f"rho_{step}.dat")
            assert name == "rho" and meta["nx"] == 9
        assert not (tmp_path / "rho_00001.dat").exists()

    def test_report_schema(self, tmp_path):
        cfg = mini_full_config()
        run_scenario(cfg, tmp_path, plots=False)
        report = json.loads((tmp_path / "report.json").read_text())
        assert set(report) == {"scenario", "mode", "config", "fixed_point",
                               "diagnostics", "estimates", "exit_status"}
        fp = report["fixed_point"]
        assert {"converged", "final_time", "iterate_count", "iterates",
                "windows", "radii"} <= set(fp)
        for it in fp["iterates"]:
            assert {"window_index", "iterate", "distance", "ratio",
                    "residuals", "ball"} <= set(it)
            assert {"momentum", "temperature", "induction"} \
                <= set(it["residuals"])
        for w in fp["windows"]:
            assert set(w) == {"length", "outcome"}
            assert w["outcome"] in ("CONVERGED", "SHRUNK", "FAILED")
        for c in report["diagnostics"]["checks"]:
            assert {"name", "lhs", "rhs", "tol", "passed", "series"} <= set(c)

    def test_reports_bit_identical(self, tmp_path):
        cfg = mini_full_config()
        run_scenario(cfg, tmp_path / "a", plots=False)
        run_scenario(cfg, tmp_path / "b", plots=False)
        assert (tmp_path / "a/report.json").read_bytes() \
            == (tmp_path / "b/report.json").read_bytes()

    def test_transport_run(self, tmp_path):
        cfg = get_scenario("uniform-divergence")
        cfg.time = dict(cfg.time)
        cfg.time["horizon"] = 0.02
        cfg.time["window"] = 0.02
        status = run_scenario(cfg, tmp_path, plots=True)
        assert status == 0
        report = json.loads((tmp_path / "report.json").read_text())
        assert report["mode"] == "transport"
        assert report["diagnostics"]["passed"]
        assert (tmp_path / "diagnostics.png").exists()
        assert (tmp_path / "fields_final.png").exists()

    def test_failed_run_exits_nonzero_with_report(self, tmp_path):
        # an absurd window/tolerance combination runs out of shrinks
        cfg = mini_full_config()
        cfg.fixed_point = dict(cfg.fixed_point)
        cfg.fixed_point.update({"tol": 1e-16, "max_iter": 3, "max_shrinks": 1})
        status = run_scenario(cfg, tmp_path, plots=False)
        assert status == 1
        report = json.loads((tmp_path / "report.json").read_text())
        assert report["exit_status"] == 1
        assert report["fixed_point"]["windows"]


class TestConvergenceStudy:
    def test_transport_orders(self):
        cfg = get_scenario("translation-inflow")
        cfg.time = dict(cfg.time)
        cfg.time.update({"horizon": 0.05, "window": 0.05})
        rows, orders = convergence_study(cfg, levels=2)
        assert len(rows) == 2
        assert orders["rho"][0] >= 0.85

    def test_coupled_manufactured_orders(self):
        # the forced manufactured run exercises all four solvers through the
        # Picard pipeline; backward Euler plus upwind drift give first order
        # in (h + dt) for rho, u, theta, and the induction solve (whose drift
        # sits on the right-hand side) converges faster
        rows, orders = convergence_study(get_scenario("manufactured-full"),
                                         levels=2)
        for name in ("rho", "u", "theta", "b"):
            assert orders[name][0] >= 0.9, (name, orders)

    def test_no_reference_rejected(self):
        cfg = get_scenario("stationary")
        with pytest.raises(ParseError):
            convergence_study(cfg, levels=2)


class TestCLI:
    def test_list(self, capsys):
        assert main(["list-scenarios"]) == 0
        out = capsys.readouterr().out
        assert "inflow-channel" in out

    def test_check_builtin(self, capsys):
        assert main(["check", "stationary"]) == 0

    def test_check_bad_config(self, tmp_path, capsys):
        p = tmp_path / "broken.json"
        p.write_text("{}")
        assert main(["check", str(p)]) == 2

    def test_run_from_file(self, tmp_path):
        cfg = mini_full_config()
        path = tmp_path / "mini.json"
        write_config(cfg, path)
        out = tmp_path / "out"
        assert main(["run", str(path), "--out", str(out), "--no-plots"]) == 0
        assert (out / "report.json").exists()

    def test_env_default_outdir(self, tmp_path, monkeypatch):
        monkeypatch.setenv("OPENMHD_OUT", str(tmp_path / "envout"))
        cfg = mini_full_config()
        path = tmp_path / "mini.json"
        write_config(cfg, path)
        assert main(["run", str(path), "--no-plots"]) == 0
        assert (tmp_path / "envout" / "mini" / "report.json").exists()

    def test_convergence_command(self, tmp_path):
        cfg = get_scenario("translation-inflow")
        cfg.time = dict(cfg.time)
        cfg.time.update({"horizon": 0.05, "window": 0.05})
        path = tmp_path / "tr.json"
        write_config(cfg, path)
        out = tmp_path / "conv"
        assert main(["convergence", str(path), "--levels", "2",
                     "--out", str(out)]) == 0
        table = (out / "convergence.txt").read_text()
        assert "# order rho" in table
        assert (out / "convergence.png").exists()
