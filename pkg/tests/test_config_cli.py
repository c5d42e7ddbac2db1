"""Configuration parsing, validation, the CLI surface and its artifacts."""

import numpy as np
import pytest

from newtonflow.cli import main
from newtonflow.config import parse_config, validate
from newtonflow.errors import ConfigError

DECAY_CFG = """\
# contraction toward the origin
field = linear-decay
grid_lower = -0.3
grid_dx = 0.01
grid_cells = 160
dt = 0.005
t_end = 0.2
snapshots = 0,0.1,0.2
init_mean = 0.5
init_sigma = 0.2
particles_n = 2000
particles_seed = 42
"""

GLM_CFG = """\
glm_n = 120
beta_star = -0.2,0.2,-0.2
glm_seed = 1
"""


class TestParseConfig:
    def test_scalar_value(self):
        config = parse_config("dt = 0.05\n")
        assert config.dt == 0.05

    def test_vector_value(self):
        config = parse_config("beta_star = -0.2,0.2,-0.2\n")
        np.testing.assert_array_equal(config.beta_star, [-0.2, 0.2, -0.2])

    def test_type_mismatch_names_line(self):
        with pytest.raises(ConfigError, match="line 2"):
            parse_config("t_end = 1\ndt = fast\n")

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown key"):
            parse_config("dt = 0.05\nwarp_factor = 9\n")

    def test_duplicate_key_rejected(self):
        with pytest.raises(ConfigError, match="duplicate"):
            parse_config("dt = 0.05\ndt = 0.1\n")

    def test_comments_and_blank_lines_ignored(self):
        config = parse_config("\n# comment\ndt = 0.05  # trailing\n\n")
        assert config.dt == 0.05

    def test_malformed_line_rejected(self):
        with pytest.raises(ConfigError, match="key=value"):
            parse_config("just some words\n")


class TestValidate:
    def test_missing_grid_keys_named(self):
        config = parse_config("field = linear-decay\ndt = 0.05\n")
        with pytest.raises(ConfigError, match="grid_lower"):
            validate(config, "solve-pde")

    def test_unknown_field_key(self):
        config = parse_config(DECAY_CFG.replace("linear-decay", "vortex"))
        with pytest.raises(ConfigError, match="vortex"):
            validate(config, "solve-pde")

    def test_glm_field_requires_dataset_keys(self):
        config = parse_config(DECAY_CFG.replace("linear-decay", "glm-fisher"))
        with pytest.raises(ConfigError, match="glm_n"):
            validate(config, "solve-pde")

    def test_command_mismatch_rejected(self):
        config = parse_config("command = compare\n" + DECAY_CFG)
        with pytest.raises(ConfigError, match="compare"):
            validate(config, "solve-pde")

    def test_dimension_mismatch_rejected(self):
        config = parse_config(DECAY_CFG.replace(
            "grid_lower = -0.3", "grid_lower = -0.3,-0.3"))
        with pytest.raises(ConfigError, match="dimension"):
            validate(config, "solve-pde")


class TestCliRuns:
    def _write(self, tmp_path, text, name="run.cfg"):
        path = tmp_path / name
        path.write_text(text)
        return str(path)

    def test_solve_pde_writes_artifacts_and_manifest(self, tmp_path):
        cfg = self._write(tmp_path, DECAY_CFG)
        out = tmp_path / "out"
        assert main(["solve-pde", "--config", cfg, "--output", str(out)]) == 0
        names = {p.name for p in out.iterdir()}
        assert {"manifest.txt", "moments.csv", "density_t0.txt",
                "density_t0.1.txt", "density_t0.2.txt"} <= names
        manifest = (out / "manifest.txt").read_text()
        assert "command=solve-pde" in manifest
        assert "[artifacts]" in manifest
        assert "cfl_satisfied=true" in manifest

    def test_rerun_reproduces_identical_bytes(self, tmp_path):
        cfg = self._write(tmp_path, DECAY_CFG)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert main(["solve-pde", "--config", cfg, "--output", str(out1)]) == 0
        assert main(["solve-pde", "--config", cfg, "--output", str(out2)]) == 0
        for path in sorted(out1.iterdir()):
            if path.name == "manifest.txt":
                continue  # embeds the differing output_dir
            assert path.read_bytes() == (out2 / path.name).read_bytes()
        # digests in the two manifests agree artifact by artifact
        digests1 = [l for l in (out1 / "manifest.txt").read_text().splitlines()
                    if "=" in l and len(l.split("=")[-1]) == 64]
        digests2 = [l for l in (out2 / "manifest.txt").read_text().splitlines()
                    if "=" in l and len(l.split("=")[-1]) == 64]
        assert digests1 == digests2

    def test_every_artifact_is_digested(self, tmp_path):
        cfg = self._write(tmp_path, DECAY_CFG)
        out = tmp_path / "out"
        assert main(["compare", "--config", cfg, "--output", str(out)]) == 0
        manifest = (out / "manifest.txt").read_text().splitlines()
        listed = {line.split("=")[0] for line in
                  manifest[manifest.index("[artifacts]") + 1:]}
        on_disk = {p.name for p in out.iterdir()} - {"manifest.txt"}
        assert listed == on_disk

    def test_missing_key_exits_2(self, tmp_path, capsys):
        cfg = self._write(tmp_path, "field = linear-decay\n")
        assert main(["solve-pde", "--config", cfg,
                     "--output", str(tmp_path / "o")]) == 2
        err = capsys.readouterr().err
        assert err.startswith("error: config:")
        assert "grid_lower" in err
        assert "\n" not in err.strip()

    def test_numeric_failure_exits_3(self, tmp_path, capsys):
        # CFL-violating dt is refused by the solver
        cfg = self._write(tmp_path, DECAY_CFG.replace("dt = 0.005",
                                                      "dt = 0.5"))
        assert main(["solve-pde", "--config", cfg,
                     "--output", str(tmp_path / "o")]) == 3
        assert capsys.readouterr().err.startswith("error: numeric:")

    def test_missing_config_file_exits_4(self, tmp_path, capsys):
        assert main(["solve-pde", "--config", str(tmp_path / "nope.cfg")]) == 4
        assert capsys.readouterr().err.startswith("error: io:")

    def test_glm_demo_artifacts(self, tmp_path):
        cfg = self._write(tmp_path, GLM_CFG)
        out = tmp_path / "out"
        assert main(["glm-demo", "--config", cfg, "--output", str(out)]) == 0
        names = {p.name for p in out.iterdir()}
        assert {"dataset.csv", "dataset.csv.meta", "mle.txt",
                "bartlett.csv", "manifest.txt"} <= names

    def test_momenta_command_writes_series(self, tmp_path):
        cfg = self._write(tmp_path, DECAY_CFG)
        out = tmp_path / "out"
        assert main(["momenta", "--config", cfg, "--output", str(out)]) == 0
        lines = (out / "momenta.csv").read_text().splitlines()
        assert lines[0] == "t,momenta,mass"
        assert len(lines) == 4

    def test_simulate_particles_snapshots(self, tmp_path):
        cfg = self._write(tmp_path, DECAY_CFG)
        out = tmp_path / "out"
        assert main(["simulate-particles", "--config", cfg,
                     "--output", str(out)]) == 0
        names = {p.name for p in out.iterdir()}
        assert {"particles_t0.csv", "particles_t0.1.csv",
                "particles_t0.2.csv", "particle_summary.csv"} <= names

    def test_seed_override_applies_to_both_seeds(self, tmp_path):
        cfg = self._write(tmp_path, DECAY_CFG)
        out = tmp_path / "out"
        assert main(["compare", "--config", cfg, "--output", str(out),
                     "--seed", "123"]) == 0
        manifest = (out / "manifest.txt").read_text()
        assert "particles_seed=123" in manifest
        assert "glm_seed=123" in manifest

    def test_threads_env_override(self, tmp_path, monkeypatch):
        monkeypatch.setenv("NEWTONFLOW_THREADS", "3")
        cfg = self._write(tmp_path, GLM_CFG)
        out = tmp_path / "out"
        assert main(["glm-demo", "--config", cfg, "--output", str(out)]) == 0
        assert "threads=3" in (out / "manifest.txt").read_text()

    def test_plot_flag_renders_figures(self, tmp_path):
        cfg = self._write(tmp_path, DECAY_CFG)
        out = tmp_path / "out"
        assert main(["solve-pde", "--config", cfg, "--output", str(out),
                     "--plot"]) == 0
        names = {p.name for p in out.iterdir()}
        assert {"density_t0.png", "moments.png"} <= names
        # figures are artifacts too: digested in the manifest
        assert "density_t0.png=" in (out / "manifest.txt").read_text()

    def test_scoring_flow_3d_config_produces_four_snapshots(self, tmp_path):
        import pathlib

        cfg = pathlib.Path(__file__).resolve().parents[1] / "configs" / \
            "scoring-flow-3d.cfg"
        out = tmp_path / "out"
        assert main(["solve-pde", "--config", str(cfg),
                     "--output", str(out)]) == 0
        names = {p.name for p in out.iterdir()}
        assert {"density_t0.txt", "density_t0.5.txt", "density_t1.txt",
                "density_t2.txt", "moments.csv"} <= names
        manifest = (out / "manifest.txt").read_text()
        assert "cfl_satisfied=false" in manifest  # logged, run proceeds

    def test_lemma_tests_command_writes_probe_table(self, tmp_path):
        import pathlib

        cfg = pathlib.Path(__file__).resolve().parents[1] / "configs" / \
            "lemma-tests.cfg"
        out = tmp_path / "out"
        assert main(["lemma-tests", "--config", str(cfg),
                     "--output", str(out)]) == 0
        rows = (out / "lemma_reports.csv").read_text().splitlines()
        assert rows[0] == "test,level,sigma,dt,metric,value"
        kinds = {row.split(",")[0] for row in rows[1:]}
        assert kinds == {"drift", "variance", "delta_surrogate"}

    def test_compare_zero_field_gap_is_constant_noise(self, tmp_path):
        import pathlib

        cfg = pathlib.Path(__file__).resolve().parents[1] / "configs" / \
            "compare-zero.cfg"
        out = tmp_path / "out"
        assert main(["compare", "--config", str(cfg),
                     "--output", str(out)]) == 0
        rows = (out / "comparison.csv").read_text().splitlines()[1:]
        l1 = [float(row.split(",")[1]) for row in rows]
        assert l1[1] == pytest.approx(l1[0], rel=1e-12)
        assert l1[2] == pytest.approx(l1[0], rel=1e-12)

    def test_two_dimensional_run_writes_sections(self, tmp_path):
        cfg = self._write(tmp_path, """\
field = rotation
grid_lower = -1.0,-1.0
grid_dx = 0.05,0.05
grid_cells = 40,40
dt = 0.02
t_end = 0.1
snapshots = 0,0.1
init_mean = 0.0,0.0
init_sigma = 0.15
""")
        out = tmp_path / "out"
        assert main(["solve-pde", "--config", cfg, "--output", str(out)]) == 0
        names = {p.name for p in out.iterdir()}
        assert {"section_t0.csv", "section_t0.1.csv"} <= names
