"""Training steps and the epoch loop for the proposed model and the CycleGAN-lite baseline.

Both models run on the same kernels; only the graph they build differs.
Every step updates the discriminator(s) first, then the generator side.
"""

from __future__ import annotations

import contextlib
import csv
import dataclasses
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from statistics import fmean
from typing import Callable, Iterator, Optional

import numpy as np

from . import ops
from .checkpoint import TrainingState, load_checkpoint, save_checkpoint
from .config import TrainConfig
from .data import DomainImages, EmptyDomainError, data_dirs, epoch_batches, steps_per_epoch
from .losses import (
    adversarial_discriminator_loss,
    adversarial_generator_loss,
    audit_scopes,
    cyclic_loss,
    deviation_terms,
    scoped_backward,
)
from .networks import (
    NetworkParams,
    count_flops,
    decode,
    discriminate,
    encode,
    generate,
    init_params,
    translate,
)
from .optim import adam_step
from .tensor import NonFiniteError, Tape, Tensor

log = logging.getLogger(__name__)

Models = dict[str, NetworkParams]


class TrainingError(RuntimeError):
    pass


@dataclass
class StepReport:
    step_index: int
    epoch: int
    loss_cyclic: float
    loss_dev_a: float
    loss_dev_b: float
    loss_adv_gen: float
    loss_adv_disc: float
    wall_time_ms: float
    flops: int

    def losses(self) -> tuple[float, ...]:
        return (self.loss_cyclic, self.loss_dev_a, self.loss_dev_b, self.loss_adv_gen, self.loss_adv_disc)


STEP_FIELDS = tuple(f.name for f in dataclasses.fields(StepReport))
LOSS_FIELDS = STEP_FIELDS[2:7]


@contextlib.contextmanager
def _term(name: str):
    try:
        yield
    except NonFiniteError as exc:
        raise TrainingError(f"non-finite value while computing {name}: {exc}") from exc


def _apply(models: Models, names, grads, cfg: TrainConfig) -> None:
    opt = cfg.optimizer
    for name in names:
        adam_step(models[name], grads, opt.lr, opt.beta1, opt.beta2, opt.eps)


def train_step_proposed(models: Models, batch_a: np.ndarray, batch_b: np.ndarray,
                        cfg: TrainConfig, audit: bool = False) -> dict[str, float]:
    """One D-then-G update of the shared-autoencoder model; returns loss values."""
    w = cfg.weights
    enc_net, dec_net = models["encoder"], models["decoder"]
    tr_net, disc_net = models["translator"], models["discriminator"]
    a, b = Tensor(batch_a), Tensor(batch_b)
    with Tape() as tape:
        with _term("encodings"):
            enc_a = encode(enc_net, a)
            enc_b = encode(enc_net, b)
            fake_enc = translate(tr_net, enc_a)

        with _term("loss_adv_disc"):
            real_scores = discriminate(disc_net, enc_b.detach())
            fake_scores = discriminate(disc_net, fake_enc.detach())
            loss_d = ops.scale(adversarial_discriminator_loss(real_scores, fake_scores, w), w.lambda_adv)
        grads_d = scoped_backward("adversarial_discriminator", loss_d, models)
        _apply(models, ["discriminator"], grads_d, cfg)

        with _term("loss_cyclic"):
            cyc_a = cyclic_loss(a, decode(dec_net, enc_a), w.distance)
            cyc_b = cyclic_loss(b, decode(dec_net, enc_b), w.distance)
            loss_cyc = ops.weighted_sum([(w.lambda_cyc, cyc_a), (w.lambda_cyc, cyc_b)])
        with _term("loss_dev"):
            trans_b = translate(tr_net, enc_b)
            cyc_trans_b = decode(dec_net, trans_b) if w.use_dev_term_b else b
            dev_a, dev_b = deviation_terms(enc_b, trans_b, b, cyc_trans_b, w)
            loss_dev = ops.weighted_sum([(w.lambda_dev_a, dev_a), (w.lambda_dev_b, dev_b)])
        with _term("loss_adv_gen"):
            loss_adv = adversarial_generator_loss(discriminate(disc_net, fake_enc), w)
            loss_tr = ops.weighted_sum([(1.0, loss_dev), (w.lambda_adv, loss_adv)])

        grads_ed = scoped_backward("cyclic", loss_cyc, models)
        grads_t = scoped_backward("deviation", loss_tr, models)
        if audit:
            audit_scopes({
                "cyclic": grads_ed,
                "deviation": scoped_backward("deviation", loss_dev, models),
                "adversarial_generator": scoped_backward("adversarial_generator", loss_adv, models),
                "adversarial_discriminator": grads_d,
            })
        _apply(models, ["encoder", "decoder"], grads_ed, cfg)
        _apply(models, ["translator"], grads_t, cfg)
        tape.clear()

    return {
        "loss_cyclic": loss_cyc.item(),
        "loss_dev_a": w.lambda_dev_a * dev_a.item(),
        "loss_dev_b": w.lambda_dev_b * dev_b.item() if w.use_dev_term_b else 0.0,
        "loss_adv_gen": w.lambda_adv * loss_adv.item(),
        "loss_adv_disc": loss_d.item(),
    }


def train_step_baseline(models: Models, batch_a: np.ndarray, batch_b: np.ndarray,
                        cfg: TrainConfig, audit: bool = False) -> dict[str, float]:
    """CycleGAN-lite: two generators, two image discriminators, cycle loss both ways."""
    w = cfg.weights
    disc_a, disc_b = models["baseline_discriminator_a"], models["baseline_discriminator_b"]
    a, b = Tensor(batch_a), Tensor(batch_b)
    with Tape() as tape:
        with _term("translations"):
            fake_b = generate(models, "a2b", a)
            fake_a = generate(models, "b2a", b)

        with _term("loss_adv_disc"):
            loss_db = adversarial_discriminator_loss(
                discriminate(disc_b, b), discriminate(disc_b, fake_b.detach()), w)
            loss_da = adversarial_discriminator_loss(
                discriminate(disc_a, a), discriminate(disc_a, fake_a.detach()), w)
            loss_d = ops.scale(ops.add(loss_da, loss_db), w.lambda_adv)
        grads_d = scoped_backward("baseline_discriminator", loss_d, models)
        _apply(models, ["baseline_discriminator_a", "baseline_discriminator_b"], grads_d, cfg)

        with _term("loss_cyclic"):
            cyc_a = cyclic_loss(a, generate(models, "b2a", fake_b), w.distance)
            cyc_b = cyclic_loss(b, generate(models, "a2b", fake_a), w.distance)
            loss_cyc = ops.weighted_sum([(w.lambda_cyc, cyc_a), (w.lambda_cyc, cyc_b)])
        with _term("loss_adv_gen"):
            loss_adv = ops.add(adversarial_generator_loss(discriminate(disc_b, fake_b), w),
                               adversarial_generator_loss(discriminate(disc_a, fake_a), w))
            loss_g = ops.weighted_sum([(1.0, loss_cyc), (w.lambda_adv, loss_adv)])
        grads_g = scoped_backward("baseline_generator", loss_g, models)
        if audit:
            audit_scopes({"baseline_generator": grads_g, "baseline_discriminator": grads_d})
        _apply(models, ["encoder", "translator", "decoder", "baseline_translator_b2a"], grads_g, cfg)
        tape.clear()

    return {
        "loss_cyclic": loss_cyc.item(),
        "loss_dev_a": 0.0,
        "loss_dev_b": 0.0,
        "loss_adv_gen": w.lambda_adv * loss_adv.item(),
        "loss_adv_disc": loss_d.item(),
    }


STEP_FUNCTIONS: dict[str, Callable[..., dict[str, float]]] = {
    "proposed": train_step_proposed,
    "baseline": train_step_baseline,
}


@dataclass
class EpochSummary:
    epoch: int
    seconds: float
    steps: int
    mean_losses: dict[str, float]
    deviation_a: float = float("nan")
    deviation_b: float = float("nan")

    def line(self) -> str:
        losses = " ".join(f"{k}={v:.4f}" for k, v in self.mean_losses.items())
        return f"epoch={self.epoch} seconds={self.seconds:.2f} {losses}"


class Trainer:
    """Holds one model's parameters and progress; advances it step by step."""

    def __init__(self, cfg: TrainConfig, models: Optional[Models] = None,
                 epoch: int = 0, step_in_epoch: int = 0, global_step: int = 0) -> None:
        self.cfg = cfg
        self.models = models if models is not None else init_params(cfg.arch, cfg.seed, cfg.model)
        self.epoch = epoch
        self.step_in_epoch = step_in_epoch
        self.global_step = global_step
        self._step_fn = STEP_FUNCTIONS[cfg.model]
        self._flops = count_flops(cfg.arch, cfg.model, "train_step")

    @classmethod
    def from_state(cls, state: TrainingState) -> "Trainer":
        return cls(state.config, state.models, state.epoch, state.step_in_epoch, state.global_step)

    def state(self) -> TrainingState:
        return TrainingState(self.cfg, self.models, self.epoch, self.step_in_epoch, self.global_step)

    def step(self, batch_a: np.ndarray, batch_b: np.ndarray) -> StepReport:
        if len(batch_a) != len(batch_b):
            raise ValueError(f"batch sizes differ: {len(batch_a)} vs {len(batch_b)}")
        audit = self.cfg.audit_every > 0 and self.global_step % self.cfg.audit_every == 0
        t0 = time.perf_counter()
        losses = self._step_fn(self.models, batch_a, batch_b, self.cfg, audit=audit)
        elapsed = (time.perf_counter() - t0) * 1e3
        report = StepReport(self.global_step, self.epoch, wall_time_ms=elapsed,
                            flops=self._flops * len(batch_a), **losses)
        for name, value in zip(LOSS_FIELDS, report.losses()):
            if not np.isfinite(value) or value < 0:
                raise TrainingError(f"{name} is invalid ({value}) at step {self.global_step}")
        self.global_step += 1
        return report

    def _epoch_batches(self, data_a: DomainImages, data_b: DomainImages):
        batches = epoch_batches(data_a, data_b, self.cfg.batch_size, [self.cfg.seed, self.epoch])
        for _ in range(self.step_in_epoch):
            next(batches)
        return batches

    def iter_steps(self, data_a: DomainImages, data_b: DomainImages) -> Iterator[StepReport]:
        """Endless stream of steps crossing epoch boundaries; stop consuming to pause."""
        while True:
            for batch_a, batch_b in self._epoch_batches(data_a, data_b):
                report = self.step(batch_a, batch_b)
                self.step_in_epoch += 1
                yield report
            self.epoch += 1
            self.step_in_epoch = 0

    def run_steps(self, data_a: DomainImages, data_b: DomainImages, n: int) -> list[StepReport]:
        reports = []
        if n <= 0:
            return reports
        for report in self.iter_steps(data_a, data_b):
            reports.append(report)
            if len(reports) == n:
                break
        # settle on the next epoch if this one is finished
        if self.step_in_epoch == steps_per_epoch(len(data_a), len(data_b), self.cfg.batch_size):
            self.epoch += 1
            self.step_in_epoch = 0
        return reports

    def run_epoch(self, data_a: DomainImages, data_b: DomainImages) -> tuple[list[StepReport], float]:
        """Finish the current epoch; returns its step reports and wall seconds."""
        t0 = time.perf_counter()
        reports = []
        for batch_a, batch_b in self._epoch_batches(data_a, data_b):
            reports.append(self.step(batch_a, batch_b))
            self.step_in_epoch += 1
        seconds = time.perf_counter() - t0
        self.epoch += 1
        self.step_in_epoch = 0
        return reports, seconds


def deviation_metric(models: Models, images: np.ndarray, batch_size: int = 10) -> float:
    """Mean |translate(E(x)) - E(x)| over ``images``; low for B means pass-through."""
    enc_net, tr_net = models["encoder"], models["translator"]
    total, count = 0.0, 0
    for start in range(0, len(images), batch_size):
        enc = encode(enc_net, Tensor(images[start : start + batch_size]))
        diff = translate(tr_net, enc).data - enc.data
        total += float(np.abs(diff).sum())
        count += diff.size
    return total / count


def summarize(epoch: int, reports: list[StepReport], seconds: float) -> EpochSummary:
    means = {name: fmean(getattr(r, name) for r in reports) for name in LOSS_FIELDS}
    return EpochSummary(epoch, seconds, len(reports), means)


EPOCH_FIELDS = ("epoch", "seconds", "steps", *LOSS_FIELDS, "deviation_a", "deviation_b")


class CsvLog:
    def __init__(self, path: Path, fields, append: bool = False) -> None:
        exists = append and path.exists()
        self._fh = open(path, "a" if exists else "w", newline="")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        if not exists:
            self._writer.writerow(fields)

    def write(self, row) -> None:
        self._writer.writerow(row)
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


def load_domains(root, split: str = "train", limit: int = 0) -> tuple[DomainImages, DomainImages]:
    dir_a, dir_b = data_dirs(root, split)
    data_a, data_b = DomainImages(dir_a), DomainImages(dir_b)
    if limit:
        for d in (data_a, data_b):
            d.paths, d.pixels = d.paths[:limit], d.pixels[:limit]
    return data_a, data_b


def train_epochs(cfg: TrainConfig, resume: Optional[str] = None,
                 on_epoch: Optional[Callable[[EpochSummary], None]] = None) -> tuple[list[StepReport], Trainer]:
    """Run ``cfg.epochs`` epochs, writing metrics CSVs and checkpoints to ``cfg.out_dir``."""
    if resume:
        state = load_checkpoint(resume)
        if state.config.model != cfg.model:
            raise TrainingError(
                f"checkpoint {resume} holds a {state.config.model!r} model, config asks for {cfg.model!r}"
            )
        trainer = Trainer.from_state(state)
        trainer.cfg = dataclasses.replace(state.config, epochs=cfg.epochs, out_dir=cfg.out_dir,
                                          data_root=cfg.data_root)
    else:
        trainer = Trainer(cfg)
    cfg = trainer.cfg
    data_a, data_b = load_domains(cfg.data_root, "train")
    held_out = None
    if cfg.eval_limit > 0 and cfg.model == "proposed":
        try:
            held_out = load_domains(cfg.data_root, "test", cfg.eval_limit)
        except EmptyDomainError:
            log.info("no held-out test images under %s; skipping deviation metric", cfg.data_root)

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    steps_log = CsvLog(out / "steps.csv", STEP_FIELDS, append=bool(resume))
    epochs_log = CsvLog(out / "epochs.csv", EPOCH_FIELDS, append=bool(resume))
    all_reports: list[StepReport] = []
    try:
        while trainer.epoch < cfg.epochs:
            epoch = trainer.epoch
            reports, seconds = trainer.run_epoch(data_a, data_b)
            for r in reports:
                steps_log.write([getattr(r, f) for f in STEP_FIELDS])
            all_reports += reports
            summary = summarize(epoch, reports, seconds)
            if held_out is not None:
                summary.deviation_a = deviation_metric(trainer.models, held_out[0].pixels)
                summary.deviation_b = deviation_metric(trainer.models, held_out[1].pixels)
            epochs_log.write([summary.epoch, summary.seconds, summary.steps,
                              *summary.mean_losses.values(), summary.deviation_a, summary.deviation_b])
            if on_epoch:
                on_epoch(summary)
            if cfg.checkpoint_every and trainer.epoch % cfg.checkpoint_every == 0:
                save_checkpoint(trainer.state(), out / f"checkpoint_epoch{trainer.epoch:03d}.bin")
        save_checkpoint(trainer.state(), out / "checkpoint.bin")
    finally:
        steps_log.close()
        epochs_log.close()
    return all_reports, trainer
