"""Experiment configuration and the simulate / accumulate / reconstruct pipeline."""

import datetime
import hashlib
import logging
import multiprocessing
import multiprocessing.dummy
from functools import partial
from pathlib import Path
from typing import List, Literal, Optional, Union

import numpy as np
import scipy
from pydantic import BaseModel, Field, FilePath, confloat, conint, root_validator
from rich.console import Console
from rich.progress import track

from paircam import __version__
from paircam import io as pcio
from paircam.accumulator import MomentAccumulator
from paircam.exceptions import (
    InsufficientFramesError,
    ModeMismatchError,
    NonConvergenceError,
)
from paircam.fit import FitResult, fit_double_gaussian, profile_table
from paircam.grid import (
    DoubleGaussianParams,
    JointDistribution,
    PixelGrid,
    build_double_gaussian,
    total_variation,
    two_row_distribution,
)
from paircam.reconstruct import (
    ReconstructionResult,
    estimate_background,
    finalize,
    inversion_scale,
    reconstruct_diagonal,
    reconstruct_emccd,
    reconstruct_general,
    reconstruct_spc,
)
from paircam.sensor import (
    EmccdThresholdedMode,
    FrameKind,
    SensorConfig,
    SpcMode,
)
from paircam.simulate import FRAMES_PER_BLOCK, n_blocks, simulate_block
from paircam.source import SourceConfig

logger = logging.getLogger(__name__)

TRUTH_FILE = "gamma_truth.csv"
STACK_FILE = "frames.ppfr"
MANIFEST_FILE = "manifest.json"
GAMMA_HAT_FILE = "gamma_hat.csv"
REPORT_FILE = "report.json"
PROFILES_FILE = "profiles.csv"
FRAMES_CSV_FILE = "frames.csv"


class DoubleGaussianModel(BaseModel):
    kind: Literal["double_gaussian"] = "double_gaussian"
    sigma_plus: confloat(gt=0)
    sigma_minus: confloat(gt=0)

    def params(self) -> DoubleGaussianParams:
        return DoubleGaussianParams(
            sigma_plus=self.sigma_plus, sigma_minus=self.sigma_minus
        )


class GammaCsvModel(BaseModel):
    kind: Literal["gamma_csv"] = "gamma_csv"
    path: FilePath


class ReconstructionOptions(BaseModel):
    """How accumulated moments are turned into Γ̂."""

    inversion: Literal["auto", "spc", "emccd", "general"] = "auto"
    normalized_only: bool = False
    use_successive: bool = False
    remove_background: bool = False
    filter_width: conint(ge=1) = 15
    two_row: bool = False
    strict: bool = False
    fit: bool = True
    profile_columns: List[conint(ge=0)] = []


class ExperimentConfig(BaseModel):
    """Everything needed to reproduce one simulated acquisition and its analysis."""

    grid: PixelGrid
    source_model: Union[DoubleGaussianModel, GammaCsvModel] = Field(
        ..., discriminator="kind"
    )
    source: SourceConfig
    sensor: SensorConfig
    n_frames: conint(ge=1)
    seed: conint(ge=0, lt=2**64) = 0
    reconstruction: ReconstructionOptions = ReconstructionOptions()
    output_dir: Optional[Path] = None
    frames_csv: bool = False
    threads: Optional[conint(ge=1)] = None

    class Config:
        allow_mutation = False

    @root_validator(pre=True)
    def _sensor_grid(cls, values):
        """Fill the sensor grid from the top-level grid; two rows double it."""
        sensor = values.get("sensor")
        grid = values.get("grid")
        if isinstance(sensor, dict) and "grid" not in sensor and grid is not None:
            grid = grid.dict() if isinstance(grid, PixelGrid) else dict(grid)
            options = values.get("reconstruction") or {}
            if isinstance(options, ReconstructionOptions):
                options = options.dict()
            if options.get("two_row"):
                grid["n_pixels"] = 2 * grid["n_pixels"]
            values = dict(values, sensor=dict(sensor, grid=grid))
        return values

    @root_validator(skip_on_failure=True)
    def _sensor_matches_grid(cls, values):
        n = values["grid"].n_pixels
        if values["reconstruction"].two_row:
            n *= 2
        if values["sensor"].grid.n_pixels != n:
            raise ValueError(
                f"Sensor grid has {values['sensor'].grid.n_pixels} pixels, "
                f"expected {n}."
            )
        return values

    def ground_truth(self) -> JointDistribution:
        if isinstance(self.source_model, DoubleGaussianModel):
            return build_double_gaussian(self.grid, self.source_model.params())
        return pcio.read_gamma(self.source_model.path, grid=self.grid)

    def config_hash(self) -> str:
        return "sha256:" + hashlib.sha256(
            self.json(sort_keys=True).encode()
        ).hexdigest()


def _simulate_and_accumulate(block_index, jd, source, sensor, n_frames, seed, rows):
    frames = simulate_block(jd, source, sensor, block_index, n_frames, seed)
    return MomentAccumulator(jd.n_pixels, rows=rows).push_block(frames)


def _accumulate_block(frames, n_pixels, rows):
    return MomentAccumulator(n_pixels, rows=rows).push_block(frames)


class Experiment:
    def __init__(
        self,
        config: Union[ExperimentConfig, dict],
        output_dir: Optional[Union[str, Path]] = None,
        num_cpu: Optional[int] = None,
        show_progress: bool = True,
    ):
        """
        Simulation and reconstruction pipeline for one experiment configuration.

        Parameters
        ----------
        config: ExperimentConfig or dict
            Experiment configuration.
        output_dir: str or Path, optional
            Directory for all outputs; overrides the configured one.
        num_cpu: int, optional
            Worker count; defaults to the configured threads or all CPUs.
        show_progress: bool
            Show progress bars on standard error.

        """
        if not isinstance(config, ExperimentConfig):
            config = ExperimentConfig.parse_obj(config)
        self.config = config
        self.output_dir = Path(output_dir or config.output_dir or ".")
        self.num_cpu = num_cpu or config.threads or multiprocessing.cpu_count()
        self.show_progress = show_progress
        self._stack_kind = None

        if self.num_cpu > 1:
            self.Pool = multiprocessing.Pool
        else:
            self.Pool = multiprocessing.dummy.Pool

    @property
    def rows(self):
        if not self.config.reconstruction.two_row:
            return None
        n = self.config.grid.n_pixels
        return (np.arange(n), np.arange(n, 2 * n))

    def _track(self, iterable, total, description):
        if not self.show_progress:
            return iterable
        return track(
            iterable,
            total=total,
            description=description,
            transient=True,
            console=Console(stderr=True),
        )

    def simulated_distribution(self, truth: JointDistribution) -> JointDistribution:
        if self.config.reconstruction.two_row:
            return two_row_distribution(truth)
        return truth

    def effective_parameters(self) -> dict:
        """Physical parameters implied by the sensor configuration."""
        sensor = self.config.sensor
        mode = sensor.mode
        effective = {"eta": sensor.eta, "mean_pairs": self.config.source.mean_pairs}
        if isinstance(mode, SpcMode):
            effective["p10"] = mode.p10
        else:
            noise = mode.noise
            effective.update(A=noise.A, x0=noise.x0, sigma0_sq=noise.sigma0_sq)
            if isinstance(mode, EmccdThresholdedMode):
                eta_eff, p10 = noise.effective_spc(sensor.eta, mode.threshold)
                effective.update(eta_eff=eta_eff, p10=p10)
        return effective

    def simulate(self) -> dict:
        """Write ground truth, frame stack and manifest; return their paths."""
        config = self.config
        self.output_dir.mkdir(parents=True, exist_ok=True)
        truth = config.ground_truth()
        truth_path = self.output_dir / TRUTH_FILE
        pcio.write_gamma(truth_path, truth)

        jd = self.simulated_distribution(truth)
        stack_path = self.output_dir / STACK_FILE
        total = n_blocks(config.n_frames)
        logger.info(f"Simulating {config.n_frames} frames in {total} block(s)...")
        with self.Pool(self.num_cpu) as pool, pcio.FrameStackWriter(
            stack_path, jd.n_pixels, config.sensor.frame_kind
        ) as writer:
            blocks = pool.imap(
                partial(
                    simulate_block,
                    jd,
                    config.source,
                    config.sensor,
                    n_frames=config.n_frames,
                    seed=config.seed,
                ),
                range(total),
            )
            for block in self._track(blocks, total, "Simulating frames..."):
                writer.write(block)

        paths = {"ground_truth": truth_path, "stack": stack_path}
        if config.frames_csv:
            paths["frames_csv"] = self.output_dir / FRAMES_CSV_FILE
            frames = pcio.FrameStackReader(stack_path).read_all()
            pcio.write_frames_csv(paths["frames_csv"], frames)

        manifest = {
            "config_hash": config.config_hash(),
            "seed": config.seed,
            "n_frames": config.n_frames,
            "frames_per_block": FRAMES_PER_BLOCK,
            "frame_kind": config.sensor.frame_kind.name.lower(),
            "effective_parameters": self.effective_parameters(),
            "outputs": {
                "ground_truth": {
                    "path": TRUTH_FILE,
                    "checksum": pcio.file_checksum(truth_path),
                },
                "frame_stack": {
                    "path": STACK_FILE,
                    "checksum": pcio.file_checksum(stack_path),
                },
            },
            "versions": {
                "paircam": __version__,
                "numpy": np.__version__,
                "scipy": scipy.__version__,
            },
            "created": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        }
        paths["manifest"] = self.output_dir / MANIFEST_FILE
        pcio.write_json(paths["manifest"], manifest)
        return paths

    def accumulate(self, stack_path: Union[str, Path]) -> MomentAccumulator:
        """Accumulate moments of a frame stack, block by block across the pool."""
        reader = pcio.FrameStackReader(stack_path)
        if reader.n_frames == 0:
            raise InsufficientFramesError(f"Frame stack {stack_path} holds no frames.")
        total = n_blocks(reader.n_frames)
        worker = partial(_accumulate_block, n_pixels=reader.n_pixels, rows=self.rows)
        accumulator = MomentAccumulator(reader.n_pixels, rows=self.rows)
        with self.Pool(self.num_cpu) as pool:
            partials = pool.imap(worker, reader.iter_blocks(FRAMES_PER_BLOCK))
            for part in self._track(partials, total, "Accumulating frames..."):
                accumulator = accumulator.merge(part)
        self._stack_kind = reader.kind
        return accumulator

    def accumulate_simulation(self) -> MomentAccumulator:
        """Simulate and accumulate in memory without writing a frame stack."""
        config = self.config
        jd = self.simulated_distribution(config.ground_truth())
        total = n_blocks(config.n_frames)
        worker = partial(
            _simulate_and_accumulate,
            jd=jd,
            source=config.source,
            sensor=config.sensor,
            n_frames=config.n_frames,
            seed=config.seed,
            rows=self.rows,
        )
        accumulator = MomentAccumulator(jd.n_pixels, rows=self.rows)
        with self.Pool(self.num_cpu) as pool:
            partials = pool.imap(worker, range(total))
            for part in self._track(partials, total, "Simulating frames..."):
                accumulator = accumulator.merge(part)
        self._stack_kind = config.sensor.frame_kind
        return accumulator

    def _inversion(self, frame_kind: FrameKind) -> str:
        requested = self.config.reconstruction.inversion
        if requested == "auto":
            if frame_kind == FrameKind.BINARY:
                return "spc"
            source = self.config.source
            if source.pair_variance != source.mean_pairs:
                return "general"
            return "emccd"
        if (requested == "spc") != (frame_kind == FrameKind.BINARY):
            raise ModeMismatchError(
                f"Cannot apply the `{requested}` inversion to "
                f"{frame_kind.name.lower()} frames."
            )
        return requested

    def reconstruct(
        self,
        accumulator: MomentAccumulator,
        frame_kind: Optional[FrameKind] = None,
        truth: Optional[JointDistribution] = None,
    ):
        """
        Invert accumulated moments to a normalized Γ̂.

        Returns
        -------
        result: ReconstructionResult
        fit: FitResult or None
        report: dict

        """
        options = self.config.reconstruction
        if frame_kind is None:
            frame_kind = self._stack_kind
        if frame_kind is None:
            frame_kind = self.config.sensor.frame_kind
        if frame_kind != self.config.sensor.frame_kind:
            raise ModeMismatchError(
                f"Frames are {frame_kind.name.lower()} but the sensor mode "
                f"`{self.config.sensor.mode.kind}` produces "
                f"{self.config.sensor.frame_kind.name.lower()} frames."
            )
        inversion = self._inversion(frame_kind)
        physical = {} if options.normalized_only else self.effective_parameters()
        eta = physical.get("eta_eff", physical.get("eta"))
        mean_pairs = physical.get("mean_pairs")
        A = physical.get("A")

        if accumulator.is_block:
            mean, mean_col = accumulator.row_means()
        else:
            mean, mean_col = accumulator.mean_direct(), None
        corr = accumulator.mean_corr()
        product = accumulator.mean_corr_successive() if options.use_successive else None
        background_report = {}

        if inversion == "spc":
            raw = reconstruct_spc(
                mean,
                corr,
                eta,
                mean_pairs,
                mean_col=mean_col,
                product=product,
                strict=options.strict,
            )
        elif inversion == "emccd":
            raw = reconstruct_emccd(
                mean, corr, A, eta, mean_pairs, mean_col=mean_col, product=product
            )
        else:
            noise = self.config.sensor.mode.noise
            source = self.config.source
            raw = reconstruct_general(
                mean,
                corr,
                A,
                noise.x0,
                eta,
                source.mean_pairs,
                source.pair_variance,
                mean_col=mean_col,
                product=product,
            )
            background_report["non_poisson_correction"] = {
                "mean_pairs": source.mean_pairs,
                "pair_variance": source.pair_variance,
            }
        _, scale_note = inversion_scale(inversion, eta, mean_pairs, A)

        background = None
        if options.remove_background:
            background = estimate_background(raw, options.filter_width)
            raw = raw - background
            background_report["filter_width"] = options.filter_width

        diagonal = None
        if (
            inversion in ("emccd", "general")
            and not accumulator.is_block
            and not options.normalized_only
        ):
            noise = self.config.sensor.mode.noise
            diagonal = reconstruct_diagonal(
                accumulator.mean_direct(),
                accumulator.mean_square(),
                noise.A,
                noise.x0,
                noise.sigma0_sq,
                eta,
                self.config.source.mean_pairs,
                self.config.source.pair_variance,
                frame_kind,
            )
            if background is not None:
                # the diagonal gets the same background as its off-diagonal neighbours
                diagonal = diagonal - np.diag(background)

        result = finalize(
            raw,
            diagonal=diagonal,
            scale_note=scale_note,
            background_report=background_report,
            n_frames=accumulator.n_frames,
        )

        fit = None
        if options.fit and result.gamma_hat.shape[0] >= 4:
            try:
                fit = fit_double_gaussian(result, self.config.grid)
            except NonConvergenceError as e:
                logger.warning(f"{e} Last iterate: {e.last_iterate}.")

        report = {
            "mode": self.config.sensor.mode.kind,
            "inversion": inversion,
            "scale_note": result.scale_note,
            "diagonal_valid": result.diagonal_valid,
            "fit": None if fit is None else fit.to_report(),
            "background_report": result.background_report,
            "n_frames": result.n_frames,
        }
        if truth is not None:
            report["tv_to_truth"] = total_variation(
                result.gamma_hat,
                truth.gamma,
                exclude_diagonal=not result.diagonal_valid,
            )
        return result, fit, report

    def write_reconstruction(
        self, result: ReconstructionResult, fit: Optional[FitResult], report: dict
    ) -> dict:
        """Write Γ̂, the report and the conditional profiles."""
        self.output_dir.mkdir(parents=True, exist_ok=True)
        paths = {
            "gamma_hat": self.output_dir / GAMMA_HAT_FILE,
            "report": self.output_dir / REPORT_FILE,
        }
        pcio.write_matrix_csv(paths["gamma_hat"], result.gamma_hat)
        pcio.write_json(paths["report"], report)
        columns = self.config.reconstruction.profile_columns or [
            self.config.grid.n_pixels // 2
        ]
        paths["profiles"] = self.output_dir / PROFILES_FILE
        profile_table(result, self.config.grid, columns, fit).to_csv(
            paths["profiles"], index=False, float_format="%.17g"
        )
        return paths

    def run(self) -> dict:
        """Simulate, accumulate and reconstruct; return the report."""
        paths = self.simulate()
        accumulator = self.accumulate(paths["stack"])
        truth = pcio.read_gamma(paths["ground_truth"])
        result, fit, report = self.reconstruct(accumulator, truth=truth)
        self.write_reconstruction(result, fit, report)
        return report
