"""Joint training loop: stratified batches, two Adam groups, logging.

The autoencoder branch (encoder + decoders) and the classification head
train at their own learning rates; both consume gradients of the same
mixed total loss. Everything is a deterministic function of (dataset,
config, seed) for a fixed thread configuration.
"""

import contextlib
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels as K
from . import features as feat
from . import model as mdl
from . import nn
from .errors import NonFiniteLoss

TRAIN_LOG_NAME = "train_log.csv"


def _single_threaded_blas():
    """Pin BLAS to one thread for the epoch loop when threadpoolctl is
    around: the per-batch matrices are too small for fan-out to pay, and
    a fixed thread count keeps runs bit-reproducible across machines."""
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        return contextlib.nullcontext()
    return threadpool_limits(limits=1, user_api="blas")


@contextlib.contextmanager
def _flush_denormals():
    """Treat subnormal floats as zero during the epoch loop: a saturated
    classifier drives the mixing coefficients (and with them the Adam
    moment buffers) into the subnormal range, where x86 arithmetic is an
    order of magnitude slower."""
    state = K.flush_denormals_begin()
    try:
        yield
    finally:
        K.flush_denormals_end(state)


@dataclass(frozen=True)
class AugmentConfig:
    """Low-frequency shuffle settings (applied to training batches only)."""

    low_bins: int = 32
    prob: float = 0.5


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 600
    batch_size: int = 32
    lr_gae: float = 0.001
    lr_ac: float = 0.00001
    seed: int = 0
    augment: AugmentConfig | None = None
    checkpoint_every: int = 0  # 0 = final checkpoint only
    differentiable_weights: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr_gae < 0 or self.lr_ac < 0:
            raise ValueError("learning rates must be >= 0")


@dataclass
class TrainLogEntry:
    epoch: int
    l_total: float
    l_rec: float
    l_aux: float
    weights: list
    seconds: float


def make_batches(rows, section_ids, cfg, epoch, num_sections):
    """Deterministic stratified batches for one epoch.

    Rows are shuffled per section by (seed, epoch), interleaved
    round-robin so every batch mixes sections, then chopped into
    batch_size groups. Every row appears exactly once.
    """
    section_ids = np.asarray(section_ids, dtype=np.int64)
    mdl.validate_sections_present(section_ids, num_sections)
    if cfg.batch_size < num_sections:
        raise ValueError("batch_size must be >= the number of sections")
    rng = np.random.default_rng(np.random.SeedSequence([0xBA7C, cfg.seed, epoch]))
    queues = []
    for j in range(num_sections):
        idx = np.nonzero(section_ids == j)[0]
        queues.append(idx[rng.permutation(len(idx))])
    order = np.empty(len(section_ids), dtype=np.int64)
    cursors = [0] * num_sections
    pos = 0
    while pos < len(order):
        for j in range(num_sections):
            if cursors[j] < len(queues[j]):
                order[pos] = queues[j][cursors[j]]
                cursors[j] += 1
                pos += 1
    batches = []
    for start in range(0, len(order), cfg.batch_size):
        sel = order[start:start + cfg.batch_size]
        batches.append(mdl.GroupedBatch(rows=rows[sel], section_ids=section_ids[sel]))
    return batches


def train(rows, section_ids, model, cfg, out_dir=None, per_frame_dim=None,
          checkpoint_header=None, progress=None):
    """Optimize the model in place; returns the per-epoch TrainLog list.

    rows: (n, D) float array of stacked feature rows (all training clips
    flattened); section_ids: per-row section. out_dir, when given, gets
    train_log.csv plus ckpt_epoch_{N}.aegm per the checkpoint schedule.
    """
    rows = np.asarray(rows, dtype=model.dtype)
    section_ids = np.asarray(section_ids, dtype=np.int64)
    if rows.shape[1] != model.cfg.input_dim:
        raise ValueError(f"feature dim {rows.shape[1]} != model input {model.cfg.input_dim}")
    if cfg.augment is not None and per_frame_dim is None:
        raise ValueError("augmentation requires per_frame_dim")

    opt_gae = nn.AdamState(lr=cfg.lr_gae)
    opt_ac = nn.AdamState(lr=cfg.lr_ac)
    gae_params = model.gae_parameters()
    ac_params = model.classifier_parameters()
    header = dict(checkpoint_header or {})
    header.setdefault("seed", cfg.seed)

    out_dir = Path(out_dir) if out_dir is not None else None
    log_file = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_file = open(out_dir / TRAIN_LOG_NAME, "w", encoding="utf-8")
        w_cols = ",".join(f"w_{j}" for j in range(model.cfg.num_sections))
        log_file.write(f"epoch,l_total,l_rec,l_aux,{w_cols},seconds\n")

    log = []
    stack = contextlib.ExitStack()
    try:
        stack.enter_context(_single_threaded_blas())
        stack.enter_context(_flush_denormals())
        for epoch in range(1, cfg.epochs + 1):
            t0 = time.perf_counter()
            batches = make_batches(rows, section_ids, cfg, epoch, model.cfg.num_sections)
            sums = np.zeros(3)
            w_sum = np.zeros(model.cfg.num_sections)
            for b_idx, batch in enumerate(batches):
                if cfg.augment is not None:
                    aug_rng = np.random.default_rng(
                        np.random.SeedSequence([0xA46, cfg.seed, epoch, b_idx]))
                    batch = mdl.GroupedBatch(
                        rows=feat.shuffle_low_freq(
                            batch.rows, per_frame_dim, model.cfg.input_dim // per_frame_dim,
                            cfg.augment.low_bins, cfg.augment.prob, aug_rng),
                        section_ids=batch.section_ids)
                breakdown, grads = model.compute_losses(
                    batch, train=True,
                    differentiable_weights=cfg.differentiable_weights)
                if not breakdown.all_finite():
                    raise NonFiniteLoss(
                        f"non-finite loss at epoch {epoch}, batch {b_idx}: {breakdown}",
                        epoch=epoch, batch=b_idx)
                if cfg.lr_gae > 0:
                    opt_gae.step(gae_params, grads)
                if ac_params and cfg.lr_ac > 0:
                    opt_ac.step(ac_params, grads)
                sums += (breakdown.l_total, breakdown.l_rec, breakdown.l_aux)
                w_sum += breakdown.weights
            n_b = len(batches)
            entry = TrainLogEntry(
                epoch=epoch,
                l_total=sums[0] / n_b, l_rec=sums[1] / n_b, l_aux=sums[2] / n_b,
                weights=list(w_sum / n_b),
                seconds=time.perf_counter() - t0)
            log.append(entry)
            if log_file is not None:
                w_txt = ",".join(f"{w:.8g}" for w in entry.weights)
                log_file.write(f"{entry.epoch},{entry.l_total:.8g},{entry.l_rec:.8g},"
                               f"{entry.l_aux:.8g},{w_txt},{entry.seconds:.3f}\n")
                log_file.flush()
            if progress is not None:
                progress(entry)
            if (out_dir is not None and cfg.checkpoint_every > 0
                    and epoch % cfg.checkpoint_every == 0 and epoch < cfg.epochs):
                mdl.save_checkpoint(out_dir / f"ckpt_epoch_{epoch}.aegm", model,
                                    epoch=epoch, **header)
        if out_dir is not None:
            mdl.save_checkpoint(out_dir / f"ckpt_epoch_{cfg.epochs}.aegm", model,
                                epoch=cfg.epochs, **header)
    finally:
        stack.close()
        if log_file is not None:
            log_file.close()
    return log
