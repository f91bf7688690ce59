from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np

from app.exceptions import DataError, NumericalError, TrainingDivergedError, UsageError
from app.models.checkpoint import save_checkpoint
from app.models.transformer import TransformerModel
from app.schemas.config import LossConfig, TrainingConfig
from app.schemas.data import Batch, Utterance
from app.schemas.training import TrainingSummary, UpdateRecord
from app.services.batching import make_batches
from app.services.losses import label_smoothed_loss
from app.services.optimizer import AdamState, NoamSchedule, adam_step, clip_grad_norm
from app.services.vocab import Vocab
from app.tensor.ops import Mode
from app.tensor.rng import RngStream
from app.tensor.tensor import Tensor, no_grad
from app.utils.logger import setup_logger

logger = setup_logger()


class Trainer:
    """
    Gradient accumulation over a target-character budget followed by one Noam-scheduled Adam update.

    Losses are summed per batch and the accumulated gradient is divided by the number of
    non-pad target characters at update time, so K micro-batches and their union give the same update.
    """

    def __init__(
        self,
        model: TransformerModel,
        vocab: Vocab,
        training: Optional[TrainingConfig] = None,
        loss: Optional[LossConfig] = None,
        out_dir: Optional[Union[str, Path]] = None,
    ):
        self.model = model
        self.vocab = vocab
        self.training = training or TrainingConfig()
        self.loss = loss or LossConfig()
        self.out_dir = Path(out_dir) if out_dir is not None else None
        if len(vocab) != model.config.vocab_size:
            raise DataError(f"vocabulary has {len(vocab)} symbols, model expects {model.config.vocab_size}")

        named = list(model.named_parameters())
        self.names = [name for name, _ in named]
        self.params = [p for _, p in named]
        self.state = AdamState(self.params, self.training.adam_beta1, self.training.adam_beta2, self.training.adam_eps)
        self.schedule = NoamSchedule(self.training.init_lr, model.config.d_model, self.training.warmup_steps)
        self.rng = RngStream(self.training.seed)

        self.pending_characters = 0
        self.pending_loss = 0.0
        self.history: List[UpdateRecord] = []
        self.best_dev_loss: Optional[float] = None
        self.best_checkpoint: Optional[Path] = None
        self.last_checkpoint: Optional[Path] = None
        self._checks_without_improvement = 0

    @property
    def step(self) -> int:
        return self.schedule.step

    def batch_loss(self, batch: Batch, mode: Mode = Mode.TRAIN) -> Tensor:
        """Summed label-smoothed loss of one batch."""
        rng = self.rng.spawn("forward") if mode is Mode.TRAIN else None
        logits = self.model.forward_teacher_forcing(
            batch.features,
            batch.decoder_inputs,
            batch.frame_lengths,
            mode=mode,
            rng=rng,
            char_dropout_p=self.loss.char_dropout,
        )
        return label_smoothed_loss(
            logits, batch.decoder_targets, self.loss.label_smoothing, self.loss.pad_id, reduction="sum"
        )

    def accumulate(self, batch: Batch) -> float:
        """Backpropagate one batch into the pending gradients; returns its summed loss."""
        loss = self.batch_loss(batch, Mode.TRAIN)
        loss.backward()
        self.pending_characters += batch.num_characters
        self.pending_loss += loss.item()
        return loss.item()

    def apply_update(self) -> UpdateRecord:
        if self.pending_characters == 0:
            raise UsageError("apply_update() called with no accumulated gradients")
        grads = [None if p.grad is None else p.grad / self.pending_characters for p in self.params]
        if self.training.clip_norm is not None:
            norm = clip_grad_norm(grads, self.training.clip_norm)
            logger.debug(f"Gradient norm {norm:.4f} (clip at {self.training.clip_norm})")
        lr = self.schedule.peek()
        adam_step(self.params, grads, self.state, lr, self.names)
        self.schedule.advance()
        self.model.zero_grad()

        record = UpdateRecord(
            step=self.step,
            lr=lr,
            train_loss=self.pending_loss / self.pending_characters,
            characters=self.pending_characters,
        )
        self.pending_characters = 0
        self.pending_loss = 0.0
        logger.info(
            f"update {record.step}: lr={record.lr:.3e} loss={record.train_loss:.4f} chars={record.characters}"
        )
        return record

    def evaluate_loss(self, batches: Sequence[Batch]) -> float:
        """Eval-mode loss per non-pad target character."""
        if not batches:
            raise DataError("cannot evaluate on an empty set")
        total, characters = 0.0, 0
        with no_grad():
            for batch in batches:
                total += self.batch_loss(batch, Mode.EVAL).item()
                characters += batch.num_characters
        return total / characters

    def _save(self, name: str, record: UpdateRecord) -> Optional[Path]:
        if self.out_dir is None:
            return None
        metadata = {
            "step": record.step,
            "train_loss": record.train_loss,
            "dev_loss": record.dev_loss,
            "rng": list(self.rng.state),
            "normalize": self.training.normalize,
        }
        return save_checkpoint(self.out_dir / name, self.model, self.vocab, metadata)

    def _log_metrics(self, record: UpdateRecord) -> None:
        if self.out_dir is None:
            return
        with open(self.out_dir / "metrics.tsv", "a", encoding="utf-8") as f:
            f.write(record.metrics_line())

    def _finish_update(self, record: UpdateRecord, dev_batches: Sequence[Batch]) -> bool:
        """Checkpointing and early stopping after one update; True asks the loop to stop."""
        stop = False
        if record.step % self.training.checkpoint_every == 0:
            if dev_batches:
                record.dev_loss = self.evaluate_loss(dev_batches)
                logger.info(f"update {record.step}: dev loss {record.dev_loss:.4f}")
            path = self._save(f"checkpoint_{record.step:06d}.ckpt", record)
            if path is not None:
                self.last_checkpoint = path
                logger.info(f"Saved checkpoint {path}")
            if record.dev_loss is not None:
                if self.best_dev_loss is None or record.dev_loss < self.best_dev_loss:
                    self.best_dev_loss = record.dev_loss
                    self._checks_without_improvement = 0
                    self.best_checkpoint = self._save("checkpoint_best.ckpt", record)
                else:
                    self._checks_without_improvement += 1
                    patience = self.training.patience
                    if patience is not None and self._checks_without_improvement >= patience:
                        logger.info(f"Early stop: no dev improvement in {patience} checkpoints")
                        stop = True
        self._log_metrics(record)
        self.history.append(record)
        return stop

    def run(
        self,
        train_data: Sequence[Utterance],
        dev_data: Optional[Sequence[Utterance]] = None,
    ) -> TrainingSummary:
        if not train_data:
            raise DataError("training set is empty")
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            self.vocab.save(self.out_dir / "vocab.txt")
        cfg = self.training
        dev_batches = make_batches(dev_data, self.vocab, cfg.frame_budget) if dev_data else []
        logger.info(
            f"Training {self.model.num_parameters()} parameters on {len(train_data)} utterances "
            f"(char budget {cfg.char_budget}, max updates {cfg.max_updates})"
        )

        epoch, stopped_early, done = 0, False, False
        try:
            while not done and (cfg.max_epochs is None or epoch < cfg.max_epochs):
                for batch in make_batches(train_data, self.vocab, cfg.frame_budget, shuffle_seed=cfg.seed + epoch):
                    self.accumulate(batch)
                    if self.pending_characters < cfg.char_budget:
                        continue
                    stopped_early = self._finish_update(self.apply_update(), dev_batches)
                    if stopped_early or self.step >= cfg.max_updates:
                        done = True
                        break
                epoch += 1
            # leftover gradients from the final epoch
            if not done and self.pending_characters:
                self._finish_update(self.apply_update(), dev_batches)
        except NumericalError as e:
            last = str(self.last_checkpoint) if self.last_checkpoint else None
            logger.error(f"Training diverged at update {self.step + 1}: {e}")
            raise TrainingDivergedError(f"training diverged at update {self.step + 1}: {e}", last)

        final = self.history[-1] if self.history else None
        if final is not None:
            path = self._save("checkpoint_last.ckpt", final)
            if path is not None:
                self.last_checkpoint = path
        logger.info(f"Training finished after {self.step} updates and {epoch} epochs")
        return TrainingSummary(
            updates=self.step,
            epochs=epoch,
            final_train_loss=final.train_loss if final else None,
            best_dev_loss=self.best_dev_loss,
            best_checkpoint=str(self.best_checkpoint) if self.best_checkpoint else None,
            last_checkpoint=str(self.last_checkpoint) if self.last_checkpoint else None,
            stopped_early=stopped_early,
        )


def loss_curve(trainer: Trainer) -> np.ndarray:
    return np.array([record.train_loss for record in trainer.history])
