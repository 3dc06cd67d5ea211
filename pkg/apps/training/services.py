"""
Run services using the Service Layer pattern.

Demonstrates:
- Training with Adam, warmup + cosine schedule and periodic checkpoints
- Parallel per-case evaluation with ordered report assembly
- Deterministic prediction with argmax masks
- Finite-difference gradient checks over every module toggle
- Parameter and cost accounting for the info command
"""

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import nullcontext
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from django.conf import settings
from django.core.exceptions import ValidationError
from PIL import Image

from apps.backbone.config import BackboneConfig
from apps.backbone.models import MASMNet
from apps.backbone.services import build_network, flop_count, parameter_count
from apps.core.exceptions import GradientCheckFailed, NumericError, RunLockedError
from apps.core.gradcheck import DEFAULT_TOLERANCE, GradCheckResult, check_gradients, corrupted_backward
from apps.core.rng import Rng
from apps.core.tensor import no_grad
from apps.metrics.losses import soft_dice_loss
from apps.metrics.reports import CaseMetrics, EvalReport
from apps.metrics.services import THRESHOLD, evaluate_case
from apps.training.config import RunConfig
from apps.training.logs import StepRecord, TrainLog
from apps.training.optim import Adam, WarmupCosine, first_non_finite
from apps.training.signals import checkpoint_saved, run_finished, step_completed
from apps.volumes.checkpoints import restore, save_checkpoint
from apps.volumes.formats import read_volume, write_mask
from apps.volumes.models import MultiModalVolume, PhantomSpec, TumorRegion
from apps.volumes.phantoms import gen_phantom
from apps.volumes.preprocessing import augment, normalize
from apps.volumes.services import load_cases

logger = logging.getLogger(__name__)

INIT_STREAM = 0
STEP_STREAM = 1 << 32
GRADCHECK_NOISE_STREAM = 1
GRADCHECK_SAMPLE_STREAM = 2

LOCK_NAME = '.lock'
FINAL_CHECKPOINT = 'final.ckpt'
TOGGLES = ((False, False), (True, False), (False, True), (True, True))


def toggle_name(aware: bool, shift: bool) -> str:
    if aware and shift:
        return 'aware+shift'
    return 'aware' if aware else 'shift' if shift else 'baseline'


def checkpoint_name(step: int) -> str:
    return f'step_{step:06d}.ckpt'


class RunLock:
    """
    Exclusive lock on a run directory, held through a lock file.
    """

    def __init__(self, directory: Path):
        self.path = Path(directory) / LOCK_NAME
        self._fd: Optional[int] = None

    def __enter__(self) -> 'RunLock':
        try:
            self._fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise RunLockedError(f"run directory {self.path.parent} is locked by another process") from None
        os.write(self._fd, str(os.getpid()).encode('ascii'))
        return self

    def __exit__(self, *exc_info) -> None:
        if self._fd is not None:
            os.close(self._fd)
            self._fd = None
        if self.path.exists():
            self.path.unlink()


def network_for(config: RunConfig, rng: Optional[Rng] = None) -> MASMNet:
    return build_network(
        config.backbone,
        rng or Rng(config.seed, INIT_STREAM),
        aware=config.aware,
        shift=config.shift,
        aware_layers=config.aware_layers,
        heads=config.heads,
        tau=config.tau,
        mosaic=config.mosaic,
        gumbel_hard=config.gumbel_hard,
    )


def prepare_cases(config: RunConfig, data_dir: Path, labeled: bool = True) -> List[MultiModalVolume]:
    """
    Read and normalize the manifest cases, checking them against ``config``.

    Raises:
        ValidationError: when cases are missing, unlabeled or mis-sized
    """
    cases = load_cases(data_dir)
    if not cases:
        raise ValidationError({'data_dir': f"no cases listed in {data_dir}"})
    size = (config.volume_size,) * 3
    for case in cases:
        if case.extents != size:
            raise ValidationError({'volume_size': f"case {case.case_id} has extents {case.extents}, config expects {size}"})
        if labeled and not case.has_label:
            raise ValidationError({'data_dir': f"case {case.case_id} has no label"})
    return [normalize(case) for case in cases]


def predict_probabilities(model: MASMNet, volume: MultiModalVolume) -> np.ndarray:
    """Eval-mode forward pass without a tape."""
    with no_grad():
        return model(volume.voxels).probabilities.numpy()


class TrainingService:
    """
    Runs one training job described by a RunConfig.
    """

    def __init__(self, config: RunConfig):
        self.config = config

    def run(self) -> TrainLog:
        """
        Train, checkpoint and write the log.

        Raises:
            ValidationError: before any side effect, for invalid config or data
            NumericError: when the loss or a parameter becomes non-finite
            RunLockedError: when another process owns the run directory
        """
        config = self.config
        config.clean()
        cases = prepare_cases(config, Path(config.data_dir))

        model = network_for(config)
        if config.checkpoint:
            restore(model, config.checkpoint)
            logger.info("warm start from %s: parameters restored, optimizer and schedule restart", config.checkpoint)

        out_dir = Path(config.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with RunLock(out_dir):
            log = self._train(model, cases, out_dir)
            log.report = EvaluationService(config).evaluate_model(model, cases)
            log.write(out_dir)
        run_finished.send(sender=self.__class__, log=log)
        return log

    def _train(self, model: MASMNet, cases: List[MultiModalVolume], out_dir: Path) -> TrainLog:
        config = self.config
        named = list(model.named_parameters())
        optimizer = Adam([tensor for _, tensor in named])
        schedule = WarmupCosine(config.learning_rate, config.warmup_steps, config.total_steps, config.lr_floor)
        log = TrainLog(config_lines=config.lines(include_paths=False))
        started = time.monotonic()

        model.train()
        for step in range(1, config.total_steps + 1):
            rng = Rng(config.seed, STEP_STREAM + step)
            start = (step - 1) * config.batch_size
            batch = [cases[(start + b) % len(cases)] for b in range(config.batch_size)]

            optimizer.zero_grad()
            total = None
            dice = np.zeros(TumorRegion.COUNT)
            for case in batch:
                sample = augment(case, rng) if config.augment else case
                output = model(sample.voxels, rng)
                report = soft_dice_loss(output.probabilities, sample.label)
                total = report.loss if total is None else total + report.loss
                dice += report.per_class
            loss = total * (1.0 / len(batch))
            value = loss.item()
            loss.backward()

            bad = first_non_finite(named)
            if bad is not None or not np.isfinite(value):
                raise NumericError(f"non-finite loss or gradient at step {step}", parameter=bad)
            lr = schedule(step)
            optimizer.step(lr)
            bad = first_non_finite(named, check_grads=False)
            if bad is not None:
                raise NumericError(f"non-finite parameter after step {step}", parameter=bad)

            record = StepRecord(
                step=step,
                loss=value,
                dice=tuple(dice / len(batch)),
                learning_rate=lr,
                wall_time=time.monotonic() - started,
            )
            log.append(record)
            step_completed.send(sender=self.__class__, record=record)

            if config.checkpoint_every and step % config.checkpoint_every == 0:
                self._save(model, out_dir / checkpoint_name(step), step)
        self._save(model, out_dir / FINAL_CHECKPOINT, config.total_steps)
        return log

    def _save(self, model: MASMNet, path: Path, step: int) -> None:
        save_checkpoint(path, model.state_dict())
        checkpoint_saved.send(sender=self.__class__, path=path, step=step)


class EvaluationService:
    """
    Scores labeled cases with a trained model.
    """

    def __init__(self, config: RunConfig, workers: Optional[int] = None):
        self.config = config
        self.workers = workers or settings.MASM['EVAL_WORKERS']

    def load_model(self, checkpoint: str) -> MASMNet:
        """
        Raises:
            ParameterMismatchError: when the checkpoint does not fit the config
        """
        self.config.clean()
        model = network_for(self.config)
        restore(model, checkpoint)
        return model

    def evaluate_model(self, model: MASMNet, cases: Sequence[MultiModalVolume]) -> EvalReport:
        model.eval()

        def score(case: MultiModalVolume) -> CaseMetrics:
            return evaluate_case(predict_probabilities(model, case), case.label, case.case_id)

        report = EvalReport()
        with ThreadPoolExecutor(max_workers=max(1, self.workers)) as pool:
            for metrics in pool.map(score, cases):
                report.add(metrics)
        logger.info("evaluated %d cases: %s", len(report.cases), report.means())
        return report

    def evaluate(self, checkpoint: str, data_dir: Optional[str] = None) -> EvalReport:
        self.config.clean()
        cases = prepare_cases(self.config, Path(data_dir or self.config.data_dir))
        return self.evaluate_model(self.load_model(checkpoint), cases)


class PredictionService:
    """
    Writes binary region masks for one volume.
    """

    def __init__(self, config: RunConfig):
        self.config = config

    def predict(
        self,
        checkpoint: str,
        input_path: str,
        output_path: str,
        slices_dir: Optional[str] = None,
    ) -> np.ndarray:
        self.config.clean()
        volume = read_volume(input_path)
        size = (self.config.volume_size,) * 3
        if volume.extents != size:
            raise ValidationError({'volume_size': f"input has extents {volume.extents}, config expects {size}"})
        model = EvaluationService(self.config).load_model(checkpoint)
        model.eval()

        probabilities = predict_probabilities(model, normalize(volume))
        mask = (probabilities > THRESHOLD).astype(np.uint8)
        write_mask(output_path, mask)
        if slices_dir:
            write_mid_slices(mask, Path(slices_dir), Path(output_path).stem)
        return mask


def write_mid_slices(mask: np.ndarray, directory: Path, stem: str) -> List[Path]:
    """
    One PGM per axis through the volume centre; gray level encodes the
    deepest region (WT 85, TC 170, ET 255).
    """
    directory.mkdir(parents=True, exist_ok=True)
    codes = mask.astype(np.uint16).sum(axis=-1)
    levels = (codes * 85).astype(np.uint8)
    paths = []
    for axis in range(3):
        middle = levels.shape[axis] // 2
        image = Image.fromarray(np.ascontiguousarray(np.take(levels, middle, axis=axis)))
        path = directory / f'{stem}_axis{axis}.pgm'
        image.save(path, format='PPM')
        paths.append(path)
    return paths


@dataclass
class GradcheckOutcome:
    """Worst relative error per parameter group for one toggle combination."""

    name: str
    groups: Dict[str, float] = field(default_factory=dict)

    def failing(self, tolerance: float) -> List[str]:
        return [group for group, error in self.groups.items() if not error < tolerance]


class GradientCheckService:
    """
    Central-difference checks of the whole network on the tiny config.
    """

    def __init__(
        self,
        seed: int = 0,
        max_entries: Optional[int] = 4,
        tolerance: Optional[float] = None,
        step: Optional[float] = None,
        heads: int = 2,
        toggles: Sequence[Tuple[bool, bool]] = TOGGLES,
    ):
        self.seed = seed
        self.max_entries = max_entries
        self.tolerance = tolerance or settings.MASM.get('GRADCHECK_TOLERANCE', DEFAULT_TOLERANCE)
        self.step = step or settings.MASM['GRADCHECK_STEP']
        self.heads = heads
        self.toggles = toggles

    def _case(self, cfg: BackboneConfig) -> MultiModalVolume:
        return normalize(gen_phantom(PhantomSpec.for_size(self.seed, cfg.volume_size)))

    def check(self, aware: bool, shift: bool) -> GradcheckOutcome:
        cfg = BackboneConfig.tiny()
        model = build_network(
            cfg, Rng(self.seed, INIT_STREAM), aware=aware, shift=shift, heads=self.heads, gumbel_hard=False
        )
        model.train()
        case = self._case(cfg)

        def loss_fn():
            output = model(case.voxels, Rng(self.seed, GRADCHECK_NOISE_STREAM))
            return soft_dice_loss(output.probabilities, case.label).loss

        results: Dict[str, GradCheckResult] = check_gradients(
            loss_fn,
            dict(model.named_parameters()),
            step=self.step,
            max_entries=self.max_entries,
            rng=Rng(self.seed, GRADCHECK_SAMPLE_STREAM),
        )
        outcome = GradcheckOutcome(toggle_name(aware, shift))
        for group, names in model.parameter_groups().items():
            outcome.groups[group] = max(results[name].worst_error for name in names)
        logger.info("gradcheck %s: worst %.3g", outcome.name, max(outcome.groups.values()))
        return outcome

    def run(self, corrupt: Optional[str] = None) -> List[GradcheckOutcome]:
        """
        Raises:
            GradientCheckFailed: listing every group over the tolerance
        """
        context = corrupted_backward(corrupt) if corrupt else nullcontext()
        with context:
            outcomes = [self.check(aware, shift) for aware, shift in self.toggles]
        failing = [
            f'{outcome.name}:{group}' for outcome in outcomes for group in outcome.failing(self.tolerance)
        ]
        if failing:
            error = GradientCheckFailed(failing)
            error.outcomes = outcomes
            raise error
        return outcomes


@dataclass
class ToggleCost:
    name: str
    parameters: Optional[int]
    flops: Optional[int]


def describe(config: RunConfig) -> Tuple[List[ToggleCost], bool]:
    """
    Parameter and multiply-add counts for the 2x2 module toggle matrix, and
    whether the mosaic shift pattern leaves the parameter count unchanged.
    """
    config.clean()
    cfg = config.backbone
    costs = []
    for aware, shift in TOGGLES:
        try:
            params = parameter_count(cfg, aware, shift, config.aware_layers, config.heads)
            flops = flop_count(cfg, aware, shift, config.aware_layers)
        except ValidationError:
            params = flops = None
        costs.append(ToggleCost(toggle_name(aware, shift), params, flops))

    mosaic = build_network(cfg, Rng(0), config.aware, config.shift, config.aware_layers, config.heads, mosaic=True)
    plain = build_network(cfg, Rng(0), config.aware, config.shift, config.aware_layers, config.heads, mosaic=False)
    return costs, mosaic.parameter_count() == plain.parameter_count()
