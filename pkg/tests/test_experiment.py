import json
import math
from pathlib import Path

import numpy as np
import pytest

from phaselearn.cli import main as cli_main
from phaselearn.config import load_config, parse_config_text
from phaselearn.errors import ConfigError
from phaselearn.experiment import (
    emit_plots,
    run_diagnostic_battery,
    run_learning_experiment,
    run_predict_stage,
    run_train_stage,
)

SMALL_LEARNING = """
[model]
name = "pinning"
kappa0 = 1.0

[lattice]
dim = 1
extent = [6]
boundary = "open"

[targets]
epsilon = 0.3
delta = 0.1
delta_prime = 0.1
k0 = 1

[mode]
mode = "steady"

[observables]
specs = ["Z@3"]

[training]
n_cap = 100000
n_override = 6000
r_override = 1
gamma_override = 0.4
n_test = 12
sweep = [200, 1000]

[constants]
source = "explicit"
xi = 1.0
gamma_prime = 1.0
c_prime = 2.0

[run]
seed = 5
out = "PLACEHOLDER"
workers = 1
"""

SMALL_BATTERY = """
[model]
name = "pinning"
kappa0 = 1.0

[lattice]
dim = 1
extent = [5]
boundary = "open"

[targets]
epsilon = 0.3
delta = 0.1
delta_prime = 0.1

[mode]
mode = "steady"

[observables]
specs = ["Z@2"]

[run]
seed = 3
out = "PLACEHOLDER"
"""


def _cfg(text: str, out: Path):
    cfg = parse_config_text(text)
    cfg.out_dir = str(out)
    return cfg


class TestConfig:
    def test_full_roundtrip(self, tmp_path):
        cfg = _cfg(SMALL_LEARNING, tmp_path)
        assert cfg.model_name == "pinning"
        assert cfg.lattice.n_sites == 6
        assert cfg.n_override == 6000
        assert cfg.sweep == [200, 1000]
        assert cfg.constants["xi"] == 1.0

    def test_from_plan_sentinel(self, tmp_path):
        text = SMALL_LEARNING.replace('n_override = 6000', 'n_override = "plan"')
        cfg = _cfg(text, tmp_path)
        assert cfg.n_override is None

    def test_unknown_model_rejected(self):
        with pytest.raises(ConfigError):
            parse_config_text(SMALL_LEARNING.replace('"pinning"', '"nonsense"'))

    def test_bad_epsilon_rejected(self):
        with pytest.raises(ConfigError):
            parse_config_text(SMALL_LEARNING.replace("epsilon = 0.3", "epsilon = 1.3"))

    def test_bad_observable_rejected(self):
        with pytest.raises(ConfigError):
            parse_config_text(SMALL_LEARNING.replace('"Z@3"', '"Z@9"'))

    def test_malformed_region_nesting_rejected_before_run(self):
        text = SMALL_BATTERY + "\n[diagnostics]\na = [0, 4]\nr = [1, 2]\nw = [0, 1, 2, 3, 4]\n"
        with pytest.raises(ConfigError):
            parse_config_text(text)

    def test_non_json_value_rejected(self):
        with pytest.raises(ConfigError):
            parse_config_text(SMALL_LEARNING.replace("seed = 5", "seed = five"))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "nope.cfg")


class TestLearningRun:
    def test_bundle_files_and_summary(self, tmp_path):
        cfg = _cfg(SMALL_LEARNING, tmp_path)
        manifest = run_learning_experiment(cfg)
        for name in ("plan.json", "training.shadows", "predictions.csv",
                     "coverage.json", "summary.json", "sweep.csv",
                     "error_vs_n.svg", "timing.log"):
            assert (tmp_path / name).exists(), name
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["used_N"] == 6000
        assert summary["success_fraction"] >= 0.8
        assert len(summary["sweep"]) == 2
        header = (tmp_path / "predictions.csv").read_text().split("\n")[0]
        assert header == "index,x_digest,tau,f_exact,f_pred,abs_error,min_cell_count,fallback"
        assert "timing" in manifest

    def test_rerun_is_byte_identical(self, tmp_path):
        cfg1 = _cfg(SMALL_LEARNING, tmp_path / "a")
        cfg2 = _cfg(SMALL_LEARNING, tmp_path / "b")
        run_learning_experiment(cfg1)
        run_learning_experiment(cfg2)
        for name in ("plan.json", "training.shadows", "predictions.csv",
                     "coverage.json", "summary.json", "sweep.csv", "error_vs_n.svg"):
            a = (tmp_path / "a" / name).read_bytes()
            b = (tmp_path / "b" / name).read_bytes()
            assert a == b, f"{name} differs between reruns"

    def test_worker_pool_output_identical(self, tmp_path):
        # results are ordered by unit index, so the pool size cannot matter
        text = SMALL_LEARNING.replace("n_override = 6000", "n_override = 1500")
        text = text.replace("sweep = [200, 1000]", "sweep = []")
        cfg1 = _cfg(text, tmp_path / "w1")
        cfg2 = _cfg(text.replace("workers = 1", "workers = 4"), tmp_path / "w4")
        run_learning_experiment(cfg1)
        run_learning_experiment(cfg2)
        for name in ("training.shadows", "predictions.csv", "summary.json"):
            assert (tmp_path / "w1" / name).read_bytes() == \
                (tmp_path / "w4" / name).read_bytes()

    def test_staged_run_matches_monolith(self, tmp_path):
        cfg_m = _cfg(SMALL_LEARNING, tmp_path / "mono")
        run_learning_experiment(cfg_m)
        cfg_s = _cfg(SMALL_LEARNING, tmp_path / "staged")
        run_train_stage(cfg_s)
        run_predict_stage(cfg_s)
        for name in ("plan.json", "training.shadows", "predictions.csv", "summary.json"):
            assert (tmp_path / "mono" / name).read_bytes() == \
                (tmp_path / "staged" / name).read_bytes()

    def test_predict_stage_needs_bundle(self, tmp_path):
        cfg = _cfg(SMALL_LEARNING, tmp_path)
        with pytest.raises(ConfigError):
            run_predict_stage(cfg)

    def test_ancilla_choice_run(self, tmp_path):
        text = SMALL_LEARNING.replace('mode = "steady"', 'mode = "steady"\nomega = 1')
        text = text.replace("n_override = 6000", "n_override = 800")
        text = text.replace("sweep = [200, 1000]", "sweep = []")
        cfg = _cfg(text, tmp_path)
        assert cfg.omega == 1
        run_learning_experiment(cfg)
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["used_N"] == 800
        # snapshots still cover exactly the six system sites
        first_record = [
            l for l in (tmp_path / "training.shadows").read_text().split("\n")
            if l and not l.startswith("#")
        ][0]
        assert len(first_record.split(" ")[3]) == 6

    def test_ancilla_on_periodic_lattice_rejected(self):
        text = SMALL_LEARNING.replace('mode = "steady"', 'mode = "steady"\nomega = 1')
        text = text.replace('boundary = "open"', 'boundary = "periodic"')
        with pytest.raises(ConfigError):
            parse_config_text(text)


class TestBattery:
    def test_pinning_battery_all_pass(self, tmp_path):
        cfg = _cfg(SMALL_BATTERY, tmp_path)
        run_diagnostic_battery(cfg)
        battery = json.loads((tmp_path / "battery.json").read_text())
        assert battery["all_pass"] is True
        for scan in ("lieb_robinson", "mixing", "ltqo", "compatibility", "stability"):
            assert (tmp_path / f"diag_{scan}.csv").exists()
            assert (tmp_path / f"diag_{scan}.svg").exists()

    def test_battery_rerun_identical(self, tmp_path):
        cfg1 = _cfg(SMALL_BATTERY, tmp_path / "a")
        cfg2 = _cfg(SMALL_BATTERY, tmp_path / "b")
        run_diagnostic_battery(cfg1)
        run_diagnostic_battery(cfg2)
        for f in sorted((tmp_path / "a").glob("*.csv")):
            assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()
        assert (tmp_path / "a" / "battery.json").read_bytes() == \
            (tmp_path / "b" / "battery.json").read_bytes()


class TestPlots:
    def test_empty_series_annotated(self, tmp_path):
        import io

        from phaselearn.plotting import decay_plot_svg

        buf = io.StringIO()
        decay_plot_svg(buf, "t", "radius", [0, 1, 2], [0.0, 0.0, 0.0])
        assert "no data above floor" in buf.getvalue()

    def test_exponential_fit_in_legend(self, tmp_path):
        csv = tmp_path / "diag_demo.csv"
        ts = np.array([0.5, 1.0, 1.5, 2.0])
        rows = ["time,value,error,envelope"]
        rows += [f"{float(t)!r},{2.0 * math.exp(-0.7 * float(t))!r},0.0," for t in ts]
        csv.write_text("\n".join(rows) + "\n")
        from phaselearn.diagnostics import fit_decay

        fit = fit_decay(ts, 2.0 * np.exp(-0.7 * ts))
        (tmp_path / "diag_demo.json").write_text(json.dumps(fit.to_json_dict()))
        manifest = emit_plots(tmp_path)
        svg = (tmp_path / "diag_demo.svg").read_text()
        assert "fit rate 0.7" in svg
        assert manifest["diag_demo"] == "diag_demo.svg"

    def test_envelope_overlay_present(self, tmp_path):
        import io

        from phaselearn.plotting import decay_plot_svg

        buf = io.StringIO()
        decay_plot_svg(buf, "t", "radius", [0, 1, 2], [1.0, 0.5, 0.2],
                       envelope=[2.0, 1.0, 0.5])
        assert "envelope" in buf.getvalue()


class TestCli:
    def _write_cfg(self, tmp_path, text):
        p = tmp_path / "exp.cfg"
        p.write_text(text.replace("PLACEHOLDER", str(tmp_path / "out")))
        return p

    def test_plan_verb(self, tmp_path, capsys):
        p = self._write_cfg(tmp_path, SMALL_LEARNING)
        rc = cli_main(["plan", "--config", str(p), "--out", str(tmp_path / "out")])
        assert rc == 0
        assert (tmp_path / "out" / "plan.json").exists()

    def test_config_error_exit_code(self, tmp_path):
        p = tmp_path / "bad.cfg"
        p.write_text("[model]\nname = \"nonsense\"\n")
        assert cli_main(["plan", "--config", str(p)]) == 2

    def test_infeasible_plan_exit_code(self, tmp_path):
        text = SMALL_LEARNING.replace("n_cap = 100000", "n_cap = null")
        text = text.replace("epsilon = 0.3", "epsilon = 0.05")
        p = self._write_cfg(tmp_path, text)
        assert cli_main(["plan", "--config", str(p), "--out", str(tmp_path / "o")]) == 3

    def test_diagnose_and_plot_verbs(self, tmp_path):
        p = self._write_cfg(tmp_path, SMALL_BATTERY)
        out = tmp_path / "out"
        assert cli_main(["diagnose", "--config", str(p), "--out", str(out)]) == 0
        assert cli_main(["plot", "--config", str(p), "--out", str(out)]) == 0
        assert (out / "diag_mixing.svg").exists()

    def test_missing_sweep_list_rejected(self, tmp_path):
        text = SMALL_LEARNING.replace("sweep = [200, 1000]", "")
        p = self._write_cfg(tmp_path, text)
        assert cli_main(["sweep", "--config", str(p), "--out", str(tmp_path / "o")]) == 2

    def test_seed_override_changes_training(self, tmp_path):
        p = self._write_cfg(tmp_path, SMALL_LEARNING)
        rc1 = cli_main(["train", "--config", str(p), "--out", str(tmp_path / "s1"),
                        "--seed", "1"])
        rc2 = cli_main(["train", "--config", str(p), "--out", str(tmp_path / "s2"),
                        "--seed", "2"])
        assert rc1 == rc2 == 0
        assert (tmp_path / "s1" / "training.shadows").read_bytes() != \
            (tmp_path / "s2" / "training.shadows").read_bytes()
