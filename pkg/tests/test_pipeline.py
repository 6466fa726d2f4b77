import json
import os
import shutil
import sys

import numpy as np
import pytest
from click.testing import CliRunner
from pydantic import ValidationError

from paircam import io as pcio
from paircam.__main__ import cli, main
from paircam.exceptions import ModeMismatchError
from paircam.grid import DoubleGaussianParams, PixelGrid, build_double_gaussian
from paircam.pipeline import Experiment, ExperimentConfig
from paircam.reconstruct import estimate_background, reconstruct_diagonal
from paircam.selftest import check_thresholded_equivalence
from paircam.sensor import FrameKind

TEST_DIR = os.path.dirname(__file__)
SPC_CONFIG = os.path.join(TEST_DIR, "test_data/config.json")
EMCCD_CONFIG = os.path.join(TEST_DIR, "test_data/config_gamma_csv.toml")
NOISE = {
    "register_cells": 100,
    "p_c": 0.02,
    "alpha": 0.1,
    "sigma_r": 10.0,
    "mu": 20.0,
}


def spc_config(**overrides):
    with open(SPC_CONFIG) as f_in:
        config = json.load(f_in)
    config.update(overrides)
    return config


def emccd_config(**overrides):
    config = {
        "grid": {"n_pixels": 8, "pitch": 13.0},
        "source_model": {
            "kind": "double_gaussian",
            "sigma_plus": 10.0,
            "sigma_minus": 40.0,
        },
        "source": {"mean_pairs": 2.0},
        "sensor": {
            "eta": 0.5,
            "mode": {"kind": "emccd_linear", "noise": NOISE},
        },
        "n_frames": 2000,
        "seed": 3,
    }
    config.update(overrides)
    return config


class TestExperimentConfig:
    def test_sensor_grid_from_top_level(self):
        config = ExperimentConfig.parse_obj(spc_config())
        assert config.sensor.grid == config.grid
        assert config.sensor.frame_kind == FrameKind.BINARY

    def test_two_row_doubles_sensor(self):
        config = ExperimentConfig.parse_obj(
            spc_config(reconstruction={"two_row": True, "fit": False})
        )
        assert config.sensor.grid.n_pixels == 8

    def test_sensor_grid_mismatch(self):
        config = spc_config()
        config["sensor"] = dict(config["sensor"], grid={"n_pixels": 5})
        with pytest.raises(ValidationError):
            ExperimentConfig.parse_obj(config)

    def test_invalid_frames(self):
        with pytest.raises(ValidationError):
            ExperimentConfig.parse_obj(spc_config(n_frames=0))

    def test_config_hash(self):
        first = ExperimentConfig.parse_obj(spc_config())
        second = ExperimentConfig.parse_obj(spc_config(seed=1))
        again = ExperimentConfig.parse_obj(spc_config())
        assert first.config_hash() == again.config_hash()
        assert first.config_hash() != second.config_hash()


class TestExperiment:
    def test_simulate_outputs(self, tmp_path):
        experiment = Experiment(spc_config(), tmp_path, num_cpu=1, show_progress=False)
        paths = experiment.simulate()
        assert set(paths) == {"ground_truth", "stack", "manifest"}
        reader = pcio.FrameStackReader(paths["stack"])
        assert len(reader) == 10
        assert reader.kind == FrameKind.BINARY
        manifest = json.loads(paths["manifest"].read_text())
        assert manifest["seed"] == 2024
        assert manifest["frame_kind"] == "binary"
        assert manifest["effective_parameters"]["p10"] == 0.015
        checksum = manifest["outputs"]["frame_stack"]["checksum"]
        assert checksum == pcio.file_checksum(paths["stack"])

    def test_frames_csv(self, tmp_path):
        config = spc_config(frames_csv=True)
        paths = Experiment(config, tmp_path, num_cpu=1, show_progress=False).simulate()
        rows = paths["frames_csv"].read_text().splitlines()
        assert len(rows) == 10
        assert all(len(row.split(",")) == 4 for row in rows)

    def test_reruns_are_byte_identical(self, tmp_path):
        config = spc_config(n_frames=2500)
        for name, num_cpu in (("first", 1), ("second", 2)):
            experiment = Experiment(
                config, tmp_path / name, num_cpu=num_cpu, show_progress=False
            )
            experiment.run()
        for filename in ("frames.ppfr", "gamma_hat.csv", "gamma_truth.csv"):
            first = (tmp_path / "first" / filename).read_bytes()
            assert first == (tmp_path / "second" / filename).read_bytes()

    def test_run_report(self, tmp_path):
        experiment = Experiment(
            spc_config(n_frames=3000), tmp_path, num_cpu=1, show_progress=False
        )
        report = experiment.run()
        assert report["mode"] == "spc"
        assert report["inversion"] == "spc"
        assert report["diagonal_valid"] is False
        assert report["n_frames"] == 3000
        assert 0 <= report["tv_to_truth"] <= 1
        gamma_hat = pcio.read_matrix_csv(tmp_path / "gamma_hat.csv")
        assert gamma_hat.sum() == pytest.approx(1.0)
        np.testing.assert_array_equal(np.diag(gamma_hat), 0)
        assert (tmp_path / "profiles.csv").exists()

    def test_in_memory_matches_stack(self, tmp_path):
        experiment = Experiment(
            spc_config(n_frames=1500), tmp_path, num_cpu=1, show_progress=False
        )
        paths = experiment.simulate()
        from_stack = experiment.accumulate(paths["stack"])
        in_memory = experiment.accumulate_simulation()
        np.testing.assert_array_equal(from_stack.sum_xx, in_memory.sum_xx)
        np.testing.assert_array_equal(from_stack.sum_x_next, in_memory.sum_x_next)

    def test_mode_mismatch(self, tmp_path):
        stack = tmp_path / "gray.ppfr"
        with pcio.FrameStackWriter(stack, 4, FrameKind.GRAY) as writer:
            writer.write(np.random.default_rng(0).normal(size=(20, 4)))
        experiment = Experiment(spc_config(), tmp_path, num_cpu=1, show_progress=False)
        accumulator = experiment.accumulate(stack)
        with pytest.raises(ModeMismatchError):
            experiment.reconstruct(accumulator)

    def test_binary_stack_with_emccd_sensor(self, tmp_path):
        stack = tmp_path / "binary.ppfr"
        with pcio.FrameStackWriter(stack, 4, FrameKind.BINARY) as writer:
            writer.write(np.random.default_rng(0).integers(0, 2, size=(20, 4)))
        config = spc_config()
        config["sensor"] = {
            "eta": 0.44,
            "mode": {
                "kind": "emccd_linear",
                "noise": NOISE,
            },
        }
        experiment = Experiment(config, tmp_path, num_cpu=1, show_progress=False)
        accumulator = experiment.accumulate(stack)
        with pytest.raises(ModeMismatchError):
            experiment.reconstruct(accumulator)

    def test_requested_inversion_mismatch(self, tmp_path):
        config = spc_config(reconstruction={"inversion": "emccd", "fit": False})
        experiment = Experiment(config, tmp_path, num_cpu=1, show_progress=False)
        accumulator = experiment.accumulate_simulation()
        with pytest.raises(ModeMismatchError):
            experiment.reconstruct(accumulator)

    def test_two_row_reconstructs_diagonal(self, tmp_path):
        config = spc_config(
            n_frames=4000,
            source_model={
                "kind": "double_gaussian",
                "sigma_plus": 10.0,
                "sigma_minus": 30.0,
            },
            reconstruction={"two_row": True, "fit": False},
        )
        experiment = Experiment(config, tmp_path, num_cpu=1, show_progress=False)
        accumulator = experiment.accumulate_simulation()
        assert accumulator.sum_xx.shape == (4, 4)
        result, _, report = experiment.reconstruct(
            accumulator, truth=experiment.config.ground_truth()
        )
        assert result.diagonal_valid
        assert np.diag(result.gamma_hat).sum() > 0.1
        assert report["tv_to_truth"] < 0.3

    def test_background_removal_covers_diagonal(self, tmp_path):
        def experiment(**options):
            reconstruction = dict({"inversion": "emccd", "fit": False}, **options)
            config = emccd_config(reconstruction=reconstruction)
            return Experiment(config, tmp_path, num_cpu=1, show_progress=False)

        plain = experiment()
        filtered = experiment(remove_background=True, filter_width=3)
        accumulator = plain.accumulate_simulation()
        unfiltered, _, _ = plain.reconstruct(accumulator)
        result, _, report = filtered.reconstruct(accumulator)

        background = estimate_background(unfiltered.raw, 3)
        noise = plain.config.sensor.mode.noise
        diagonal = reconstruct_diagonal(
            accumulator.mean_direct(),
            accumulator.mean_square(),
            noise.A,
            noise.x0,
            noise.sigma0_sq,
            0.5,
            2.0,
            2.0,
        )
        expected = unfiltered.raw - background
        np.fill_diagonal(expected, diagonal - np.diag(background))
        expected = np.where(expected > 0, expected, 0.0)
        np.testing.assert_allclose(
            result.gamma_hat, expected / expected.sum(), rtol=1e-12, atol=1e-15
        )
        assert result.diagonal_valid
        assert report["background_report"]["filter_width"] == 3


class TestReducedMonteCarlo:
    """Shortened versions of the `selftest --full` Monte Carlo runs."""

    def run(self, config, tmp_path):
        experiment = Experiment(config, tmp_path, num_cpu=1, show_progress=False)
        accumulator = experiment.accumulate_simulation()
        _, _, report = experiment.reconstruct(
            accumulator, truth=experiment.config.ground_truth()
        )
        return report

    def test_spc_end_to_end(self, tmp_path):
        report = self.run(spc_config(n_frames=20000), tmp_path)
        assert report["inversion"] == "spc"
        assert report["tv_to_truth"] < 0.1

    def test_emccd_end_to_end(self, tmp_path):
        config = emccd_config(
            n_frames=20000,
            sensor={
                "eta": 0.44,
                "mode": {"kind": "emccd_linear", "noise": "reference"},
            },
            reconstruction={"inversion": "emccd", "fit": False},
        )
        report = self.run(config, tmp_path)
        assert report["diagonal_valid"] is True
        assert report["tv_to_truth"] < 0.3

    def test_thresholded_matches_effective_spc(self):
        summary = check_thresholded_equivalence(4 * 1024, num_cpu=1)(None)
        assert "SE" in summary

    def test_background_removal_under_gain_drift(self, tmp_path):
        def tv(**options):
            config = emccd_config(
                grid={"n_pixels": 16, "pitch": 13.0},
                source_model={
                    "kind": "double_gaussian",
                    "sigma_plus": 12.06,
                    "sigma_minus": 926.12,
                },
                sensor={
                    "eta": 0.44,
                    "mode": {"kind": "emccd_linear", "noise": "reference"},
                    "gain_drift": {"amplitude": 0.5, "period": 5000},
                },
                n_frames=20000,
                seed=0,
                reconstruction=dict({"inversion": "emccd", "fit": False}, **options),
            )
            return self.run(config, tmp_path)["tv_to_truth"]

        assert tv(remove_background=True, filter_width=5) < tv()


class TestCli:
    def test_simulate_and_reconstruct(self, tmp_path):
        config = tmp_path / "config.toml"
        shutil.copy(EMCCD_CONFIG, config)
        shutil.copy(os.path.join(TEST_DIR, "test_data/gamma_4x4.csv"), tmp_path)
        out = tmp_path / "out"
        runner = CliRunner()
        result = runner.invoke(
            cli, ["simulate", "-c", str(config), "-o", str(out), "-n", "1"]
        )
        assert result.exit_code == 0, result.output
        result = runner.invoke(
            cli,
            [
                "reconstruct",
                str(out / "frames.ppfr"),
                "-c",
                str(config),
                "-o",
                str(out),
            ],
        )
        assert result.exit_code == 0, result.output
        report = json.loads((out / "report.json").read_text())
        assert report["inversion"] == "general"
        assert report["diagonal_valid"] is True
        assert "tv_to_truth" in report

    def test_output_directory_from_environment(self, tmp_path):
        runner = CliRunner(env={"PAIRCAM_OUT": str(tmp_path)})
        result = runner.invoke(cli, ["simulate", "-c", SPC_CONFIG, "-n", "1"])
        assert result.exit_code == 0, result.output
        assert (tmp_path / "frames.ppfr").exists()

    def test_oracle(self):
        query = {
            "op": "p_photons_given_pairs",
            "gamma_i": 0.25,
            "gamma_ii": 0.1,
            "n": 1,
            "m": 1,
        }
        result = CliRunner().invoke(cli, ["oracle", "-"], input=json.dumps(query))
        assert result.exit_code == 0, result.output
        assert json.loads(result.output)["result"] == pytest.approx(0.3)

    def test_fit(self, tmp_path):
        grid = PixelGrid(n_pixels=16)
        jd = build_double_gaussian(
            grid, DoubleGaussianParams(sigma_plus=20.0, sigma_minus=100.0)
        )
        path = tmp_path / "gamma.csv"
        pcio.write_matrix_csv(path, jd.gamma)
        result = CliRunner().invoke(
            cli, ["fit", str(path), "--json", "--column", "3", "-o", str(tmp_path)]
        )
        assert result.exit_code == 0, result.output
        report = json.loads(result.output)
        assert report["sigma_plus_um"] == pytest.approx(20.0, rel=1e-3)
        assert report["sigma_minus_um"] == pytest.approx(100.0, rel=1e-3)
        assert (tmp_path / "profiles.csv").exists()

    def test_selftest(self):
        result = CliRunner().invoke(cli, ["selftest", "--json"])
        assert result.exit_code == 0, result.output
        checks = json.loads(result.output)
        assert all(check["passed"] for check in checks.values())


class TestExitCodes:
    def run_main(self, monkeypatch, *args):
        monkeypatch.setattr(sys, "argv", ["paircam", *args])
        with pytest.raises(SystemExit) as exit_info:
            main()
        return exit_info.value.code

    def test_invalid_config(self, monkeypatch, tmp_path):
        config = tmp_path / "config.json"
        config.write_text(json.dumps(spc_config(n_frames=0)))
        assert self.run_main(monkeypatch, "simulate", "-c", str(config)) == 2

    def test_malformed_json(self, monkeypatch, tmp_path):
        config = tmp_path / "config.json"
        config.write_text("{")
        assert self.run_main(monkeypatch, "simulate", "-c", str(config)) == 2

    def test_unsupported_format(self, monkeypatch, tmp_path):
        config = tmp_path / "config.yaml"
        config.write_text("n_frames: 10\n")
        assert self.run_main(monkeypatch, "simulate", "-c", str(config)) == 2

    def test_corrupt_stack(self, monkeypatch, tmp_path):
        stack = tmp_path / "frames.ppfr"
        stack.write_bytes(b"not a stack at all")
        code = self.run_main(monkeypatch, "reconstruct", str(stack), "-c", SPC_CONFIG)
        assert code == 3

    def test_unknown_oracle_operation(self, monkeypatch, tmp_path):
        query = tmp_path / "query.json"
        query.write_text(json.dumps({"op": "nope"}))
        assert self.run_main(monkeypatch, "oracle", str(query)) == 3

    def test_usage_error(self, monkeypatch):
        assert self.run_main(monkeypatch, "simulate") == 2
