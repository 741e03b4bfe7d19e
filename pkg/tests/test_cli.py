import json
import os
import time

import numpy as np
import pytest

from hypexp import cli
from hypexp.cli import main
from hypexp.config import (ConfigError, RunManifest, config_fields,
                           parse_config)
from hypexp.rng import stream, stream_key
from hypexp.runner import run_tasks, thread_count

T_STRONG = "0.0388"


class TestRng:
    def test_same_key_same_draws(self):
        a = stream(42, 3, "start").random(8)
        b = stream(42, 3, "start").random(8)
        assert np.array_equal(a, b)

    def test_distinct_tasks_and_purposes_differ(self):
        base = stream(42, 0, "start").random(4)
        assert not np.array_equal(base, stream(42, 1, "start").random(4))
        assert not np.array_equal(base, stream(42, 0, "disk").random(4))
        assert not np.array_equal(base, stream(43, 0, "start").random(4))

    def test_key_layout(self):
        key = stream_key(7, 2, "x")
        assert key.dtype == np.uint64
        assert key[0] == 7
        assert key[1] >> np.uint64(32) == 2

    def test_key_validation(self):
        with pytest.raises(ValueError):
            stream_key(-1)
        with pytest.raises(ValueError):
            stream_key(2 ** 64)
        with pytest.raises(ValueError):
            stream_key(0, task=2 ** 32)


class TestRunner:
    def test_results_in_submission_order(self):
        def slow_identity(i):
            time.sleep(0.01 * (4 - i))
            return i

        got = run_tasks(slow_identity, [(i,) for i in range(5)],
                        threads=4)
        assert got == [0, 1, 2, 3, 4]

    def test_serial_path(self):
        assert run_tasks(lambda x: x * x, [(3,), (4,)], threads=1) \
            == [9, 16]

    def test_errors_propagate(self):
        def boom(i):
            if i == 2:
                raise RuntimeError("task failed")
            return i

        with pytest.raises(RuntimeError):
            run_tasks(boom, [(i,) for i in range(4)], threads=3)

    def test_thread_count_sources(self, monkeypatch):
        assert thread_count(6) == 6
        monkeypatch.setenv("HYPEXP_THREADS", "3")
        assert thread_count() == 3
        monkeypatch.delenv("HYPEXP_THREADS")
        assert thread_count() == 1
        with pytest.raises(ValueError):
            thread_count(0)


class TestConfig:
    def test_all_defaults_without_file(self):
        cfg = parse_config(None)
        fields = config_fields()
        for name, (default, _help) in fields.items():
            assert getattr(cfg, name) == default

    def test_file_values_and_comments(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("# header\n\neps = 0.02  # trailing\nsteps=500\n"
                     "chart_base = 0.1, 0.2, 0.3\n")
        cfg = parse_config(str(p))
        assert cfg.eps == 0.02
        assert cfg.steps == 500
        assert cfg.chart_base == (0.1, 0.2, 0.3)

    def test_unknown_key_lists_valid_ones(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("eps = 0.02\nbogus = 1\n")
        with pytest.raises(ConfigError) as err:
            parse_config(str(p))
        msg = str(err.value)
        assert "line 2" in msg and "bogus" in msg and "eps" in msg

    def test_type_error_carries_line_number(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("# c\nsteps = few\n")
        with pytest.raises(ConfigError, match="line 2"):
            parse_config(str(p))
        p.write_text("steps 500\n")
        with pytest.raises(ConfigError, match="key = value"):
            parse_config(str(p))

    def test_flags_override_file(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("eps = 0.02\nsteps = 500\n")
        cfg = parse_config(str(p), {"eps": "0.04", "orbits": 3})
        assert cfg.eps == 0.04
        assert cfg.steps == 500
        assert cfg.orbits == 3

    def test_t_auto_and_validation(self):
        assert parse_config(None, {"t": "auto"}).t == "auto"
        assert parse_config(None, {"t": "0.01"}).t == 0.01
        with pytest.raises(ConfigError):
            parse_config(None, {"t": "-0.1"})
        with pytest.raises(ConfigError):
            parse_config(None, {"seed": str(2 ** 64)})

    def test_manifest_round_trip(self, tmp_path):
        m = RunManifest(subcommand="central", config={"eps": 0.05},
                        derived={"C": 5.79}, outputs=["a.csv"],
                        version="0.3.0", wall_clock_s=1.5)
        path = tmp_path / "m.json"
        m.write(str(path))
        back = RunManifest.read(str(path))
        assert back == m


def _run(tmp_path, *argv):
    return main([*argv, "--out-dir", str(tmp_path / "runs")])


def _load(tmp_path, name):
    with open(tmp_path / "runs" / name) as fh:
        if name.endswith(".json"):
            return json.load(fh)
        return fh.read()


class TestCliRuns:
    def test_spectrum_geodesic(self, tmp_path):
        code = _run(tmp_path, "spectrum", "--system", "geodesic",
                    "--steps", "2000", "--orbits", "2")
        assert code == 0
        summary = _load(tmp_path, "spectrum_summary.json")
        assert summary["top"] == pytest.approx(1.0, abs=0.05)
        assert summary["central"] == pytest.approx(0.0, abs=0.02)
        assert summary["bottom"] == pytest.approx(-1.0, abs=0.05)

    def test_central_schema_and_determinism(self, tmp_path):
        args = ("central", "--steps", "4000", "--orbits", "2",
                "--t", T_STRONG, "--seed", "7")
        assert _run(tmp_path, *args) == 0
        first = {name: _load(tmp_path, name) for name in
                 ("central.csv", "central_xi_hist.dat")}
        summary1 = _load(tmp_path, "central_summary.json")
        assert _run(tmp_path, *args) == 0
        assert _load(tmp_path, "central.csv") == first["central.csv"]
        assert _load(tmp_path, "central_xi_hist.dat") \
            == first["central_xi_hist.dat"]
        assert _load(tmp_path, "central_summary.json") == summary1
        header = first["central.csv"].splitlines()[0]
        assert header == ("orbit_id,q0_coords,estimate,stderr,"
                          "min_summand,visits_V,case_histogram")

    def test_thread_count_invariance(self, tmp_path):
        base = ("central", "--steps", "4000", "--orbits", "3",
                "--t", T_STRONG, "--seed", "11")
        assert _run(tmp_path, *base, "--threads", "1") == 0
        one = _load(tmp_path, "central.csv")
        assert _run(tmp_path, *base, "--threads", "3") == 0
        assert _load(tmp_path, "central.csv") == one

    def test_verify_bump_certificate(self, tmp_path):
        code = _run(tmp_path, "verify", "--suite", "bump")
        assert code == 0
        cert = _load(tmp_path, "verify.json")
        assert set(cert) >= {"C", "C2", "s0", "flags"}
        assert all(cert["flags"].values())

    def test_perturb_audit(self, tmp_path):
        code = _run(tmp_path, "perturb-audit", "--grid", "16",
                    "--out", str(tmp_path / "runs" / "audit.json"))
        assert code == 0
        payload = _load(tmp_path, "audit.json")
        assert payload["ok"]
        assert payload["closeness"]["det_min"] >= 0.5
        assert payload["inversion_max_error"] <= 1e-12

    def test_ugibbs_structure(self, tmp_path):
        code = _run(tmp_path, "ugibbs", "--samples", "32",
                    "--iters", "10", "--t", T_STRONG)
        assert code == 0
        lines = _load(tmp_path, "ugibbs.csv").splitlines()
        assert lines[0] == "x,y,s,weight"
        assert len(lines) == 1 + 32 * 10
        summary = _load(tmp_path, "ugibbs_summary.json")
        assert summary["weight_sum"] == pytest.approx(1.0, abs=1e-12)

    def test_visits_support_region(self, tmp_path):
        code = _run(tmp_path, "visits", "--region", "support",
                    "--steps", "20000", "--t", T_STRONG)
        assert code == 0
        summary = _load(tmp_path, "visits_summary.json")
        assert summary["region"] == "V"
        assert summary["min_return"] >= 2
        assert 0.0 < summary["frequency"] < 0.05
        header = _load(tmp_path, "visits.csv").splitlines()[0]
        assert header == "return_time,count"

    def test_basin_rows(self, tmp_path):
        code = _run(tmp_path, "basin", "--orbits", "2", "--steps",
                    "4000", "--t", T_STRONG)
        assert code == 0
        lines = _load(tmp_path, "basin.csv").splitlines()
        # x, y, s, inV, log_stretch for each of the two orbits
        assert len(lines) == 1 + 2 * 5
        summary = _load(tmp_path, "basin_summary.json")
        for row in summary["observables"].values():
            assert row["dispersion"] >= 0.0

    def test_manifest_reproduces_run(self, tmp_path):
        assert _run(tmp_path, "central", "--steps", "4000",
                    "--orbits", "2", "--t", T_STRONG,
                    "--seed", "5") == 0
        csv1 = _load(tmp_path, "central.csv")
        manifest = _load(tmp_path, "central_manifest.json")
        assert manifest["error"] is None
        assert "central.csv" in manifest["outputs"]
        assert manifest["derived"]["t_used"] == float(T_STRONG)

        lines = []
        for key, val in manifest["config"].items():
            if isinstance(val, list):
                val = ", ".join(str(v) for v in val) or '""'
            if key == "eps_list" and val == '""':
                continue
            lines.append("%s = %s" % (key, val))
        cfgfile = tmp_path / "replay.cfg"
        cfgfile.write_text("\n".join(lines) + "\n")
        assert main(["central", "--config", str(cfgfile),
                     "--out-dir", str(tmp_path / "replay")]) == 0
        with open(tmp_path / "replay" / "central.csv") as fh:
            assert fh.read() == csv1


class TestCliErrors:
    def test_unknown_key_is_usage_error(self, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("nope = 1\n")
        assert main(["central", "--config", str(bad)]) == 2

    def test_bad_flag_value(self, tmp_path):
        assert _run(tmp_path, "central", "--eps", "banana") == 2

    def test_shear_strength_out_of_range(self, tmp_path):
        assert _run(tmp_path, "central", "--t", "0.9",
                    "--steps", "1000") == 2

    def test_basin_needs_two_orbits(self, tmp_path):
        assert _run(tmp_path, "basin", "--orbits", "1") == 2

    def test_region_needs_chart(self, tmp_path):
        assert _run(tmp_path, "visits", "--system", "geodesic",
                    "--region", "support", "--steps", "1000") == 2

    def test_missing_subcommand(self):
        assert main([]) == 2

    def test_numeric_error_lands_in_manifest(self, tmp_path,
                                             monkeypatch):
        def explode(*args, **kwargs):
            raise RuntimeError("synthetic numeric failure")

        monkeypatch.setattr(cli, "central_exponent", explode)
        code = _run(tmp_path, "central", "--steps", "2000",
                    "--orbits", "2", "--t", T_STRONG)
        assert code == 3
        manifest = _load(tmp_path, "central_manifest.json")
        assert "synthetic numeric failure" in manifest["error"]
