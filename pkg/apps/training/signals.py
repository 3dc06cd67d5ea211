"""
Signals for training progress.

Services send these; the receivers below turn them into log lines.
"""

import logging

from django.dispatch import Signal, receiver

logger = logging.getLogger(__name__)

# record: StepRecord
step_completed = Signal()
# path: Path, step: int
checkpoint_saved = Signal()
# log: TrainLog
run_finished = Signal()


@receiver(step_completed)
def log_step(sender, record, **kwargs):
    logger.info(
        "step %d loss %.6f dice ET %.4f WT %.4f TC %.4f lr %.3g",
        record.step, record.loss, *record.dice, record.learning_rate,
    )


@receiver(checkpoint_saved)
def log_checkpoint(sender, path, step, **kwargs):
    logger.info("checkpoint at step %d written to %s", step, path)


@receiver(run_finished)
def log_run_finished(sender, log, **kwargs):
    """
    Summarize a finished run.
    """
    if log.records:
        logger.info("run finished after %d steps, final loss %.6f", log.records[-1].step, log.records[-1].loss)
    if log.report is not None:
        logger.info("training-case means %s", log.report.means())
