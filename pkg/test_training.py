import math

import numpy as np
import pytest

from app.exceptions import DataError, NumericalError, TrainingDivergedError, UsageError
from app.models.transformer import TransformerModel
from app.schemas.config import LossConfig, ModelConfig, TrainingConfig
from app.services.batching import collate, make_batches
from app.services.decoder import greedy_decode
from app.services.losses import char_dropout, label_smoothed_loss, smoothed_targets
from app.services.optimizer import AdamState, NoamSchedule, adam_step, clip_grad_norm, noam_lr
from app.services.manifest import load_manifest
from app.services.normalizer import normalize_per_recording
from app.services.scoring import score_corpus
from app.services.synthetic import make_synthetic_corpus
from app.services.trainer import Trainer, loss_curve
from app.services.vocab import build_vocab
from app.tensor import Mode, Tensor
from app.tensor.module import Parameter
from app.tensor.rng import RngStream


# --- learning-rate schedule -------------------------------------------------

@pytest.mark.parametrize("step", [1, 100, 8000, 64000])
def test_noam_matches_closed_form(step):
    expected = 2.0 * 512 ** -0.5 * min(step ** -0.5, step * 8000 ** -1.5)
    assert noam_lr(step, 2.0, 512, 8000) == pytest.approx(expected, rel=1e-10)


def test_noam_peak_and_first_step():
    assert noam_lr(8000, 2.0, 512, 8000) == pytest.approx(9.882e-4, abs=1e-7)
    assert noam_lr(1, 2.0, 512, 8000) == pytest.approx(1.235e-7, rel=1e-3)
    assert noam_lr(7999, 2.0, 512, 8000) < noam_lr(8000, 2.0, 512, 8000) > noam_lr(8001, 2.0, 512, 8000)


def test_noam_rejects_step_zero():
    with pytest.raises(UsageError):
        noam_lr(0, 2.0, 512, 8000)


def test_noam_schedule_peek_does_not_advance():
    schedule = NoamSchedule(2.0, 512, 8000)
    assert schedule.peek() == noam_lr(1, 2.0, 512, 8000)
    assert schedule.step == 0
    assert schedule.advance() == noam_lr(1, 2.0, 512, 8000)
    assert schedule.step == 1


# --- losses -------------------------------------------------------------------

def test_smoothed_targets_sum_to_one_and_skip_pad():
    dist = smoothed_targets(np.array([3, 0, 5]), 6, 0.2, pad_id=0)
    assert np.allclose(dist[0], [0, 0.05, 0.05, 0.8, 0.05, 0.05])
    assert np.array_equal(dist[1], np.zeros(6))
    assert np.allclose(dist.sum(axis=-1), [1, 0, 1])


def test_zero_smoothing_is_negative_log_likelihood():
    logits = Tensor(RngStream(0).normal((3, 6)))
    targets = np.array([2, 5, 1])
    log_probs = logits.data - np.log(np.exp(logits.data).sum(axis=-1, keepdims=True))
    expected = -np.mean(log_probs[np.arange(3), targets])
    assert label_smoothed_loss(logits, targets, 0.0).item() == pytest.approx(expected)


@pytest.mark.parametrize("epsilon", [0.0, 0.1, 0.5])
def test_uniform_logits_give_log_vocab(epsilon):
    logits = Tensor(np.zeros((4, 9)))
    assert label_smoothed_loss(logits, np.array([1, 4, 8, 0]), epsilon).item() == pytest.approx(math.log(9))


def test_all_pad_targets_are_rejected():
    with pytest.raises(DataError):
        label_smoothed_loss(Tensor(np.zeros((2, 5))), np.array([0, 0]), 0.1)


def test_smoothing_keeps_gradient_at_confident_logits():
    logits = Tensor(np.array([[0.0, -30.0, 30.0, -30.0, -30.0]]), requires_grad=True)
    label_smoothed_loss(logits, np.array([2]), 0.1).backward()
    assert np.abs(logits.grad).max() > 1e-3
    assert logits.grad[0, 2] == pytest.approx(0.1, abs=1e-9)


def test_char_dropout_rate_and_modes():
    ids = np.full(100_000, 5)
    keep = char_dropout(ids, 0.1, Mode.TRAIN, RngStream(0))
    assert abs((keep == 0).mean() - 0.1) <= 0.005
    assert np.array_equal(char_dropout(ids, 0.1, Mode.EVAL, None), np.ones(ids.shape))
    assert np.array_equal(char_dropout(ids, 0.0, Mode.TRAIN, None), np.ones(ids.shape))
    padded = char_dropout(np.zeros(1000, dtype=int), 0.5, Mode.TRAIN, RngStream(1))
    assert padded.min() == 1.0


# --- optimizer ----------------------------------------------------------------

def test_adam_zero_gradients_leave_parameters_unchanged():
    param = Parameter(np.array([1.0, -2.0]))
    state = AdamState([param])
    adam_step([param], [np.zeros(2)], state, lr=0.1)
    adam_step([param], [None], state, lr=0.1)
    assert np.array_equal(param.data, [1.0, -2.0])
    assert state.step == 2


def test_adam_first_step_moves_by_learning_rate():
    param = Parameter(np.array([3.0]))
    adam_step([param], [np.array([0.7])], AdamState([param]), lr=0.01)
    assert param.data[0] == pytest.approx(3.0 - 0.01, abs=1e-9)


def test_adam_converges_on_quadratic_bowl():
    target = np.array([1.0, -2.0, 0.5])
    param = Parameter(np.zeros(3))
    state = AdamState([param])
    for _ in range(500):
        adam_step([param], [2.0 * (param.data - target)], state, lr=1e-2)
    assert np.sum((param.data - target) ** 2) < 1e-6


def test_adam_rejects_nan_before_touching_anything():
    a, b = Parameter(np.ones(2)), Parameter(np.ones(2))
    state = AdamState([a, b])
    with pytest.raises(NumericalError) as exc:
        adam_step([a, b], [np.ones(2), np.array([np.nan, 0.0])], state, lr=0.1, names=["a", "b"])
    assert "b" in str(exc.value)
    assert np.array_equal(a.data, np.ones(2))
    assert state.step == 0


def test_clip_grad_norm():
    grads = [np.array([3.0]), np.array([4.0]), None]
    assert clip_grad_norm(grads, 1.0) == pytest.approx(5.0)
    assert np.allclose([grads[0][0], grads[1][0]], [0.6, 0.8])


# --- accumulation and the training loop ---------------------------------------

def _deterministic_config(vocab_size):
    return ModelConfig(
        d_model=16, d_ff=32, num_heads=2, enc_layers=2, dec_layers=2, stack_factor=2,
        mel_bins=8, vocab_size=vocab_size, dropout=0.0, stochastic_p=None,
    )


def _dataset(make_utterance):
    transcripts = ["abc", "bad", "cafe", "dab", "ace", "bead", "fed", "gab"]
    return [make_utterance(f"u{i}", 4 + i, t, seed=i) for i, t in enumerate(transcripts)]


def test_accumulated_micro_batches_equal_one_merged_batch(make_utterance, vocab):
    dataset = _dataset(make_utterance)
    loss = LossConfig(label_smoothing=0.1, char_dropout=0.0)
    config = _deterministic_config(len(vocab))

    micro = Trainer(TransformerModel(config, RngStream(0)), vocab, loss=loss)
    for start in range(0, 8, 2):
        micro.accumulate(collate(dataset[start:start + 2], vocab))

    merged = Trainer(TransformerModel(config, RngStream(0)), vocab, loss=loss)
    merged.accumulate(collate(dataset, vocab))

    assert micro.pending_characters == merged.pending_characters
    assert micro.pending_loss == pytest.approx(merged.pending_loss, rel=1e-12)
    # compare the normalised gradients that reach Adam
    for name, a, b in zip(micro.names, micro.params, merged.params):
        assert np.allclose(
            a.grad / micro.pending_characters, b.grad / merged.pending_characters, rtol=0, atol=1e-12
        ), name


def test_apply_update_without_gradients(tiny_model, vocab):
    with pytest.raises(UsageError):
        Trainer(tiny_model, vocab).apply_update()


def test_budget_of_one_batch_updates_every_batch(make_utterance, vocab):
    dataset = _dataset(make_utterance)
    model = TransformerModel(_deterministic_config(len(vocab)), RngStream(0))
    trainer = Trainer(model, vocab, TrainingConfig(char_budget=1, frame_budget=12, max_epochs=1, warmup_steps=10))
    summary = trainer.run(dataset)
    assert summary.updates == len(make_batches(dataset, vocab, 12, shuffle_seed=1234))


def test_fixed_seeds_give_identical_loss_curves(make_utterance, vocab, tiny_config):
    dataset = _dataset(make_utterance)
    config = tiny_config.model_copy(update={"vocab_size": len(vocab)})
    training = TrainingConfig(char_budget=10, frame_budget=20, max_updates=4, warmup_steps=4, seed=5)
    curves = []
    for _ in range(2):
        trainer = Trainer(TransformerModel(config, RngStream(1)), vocab, training)
        trainer.run(dataset)
        curves.append(loss_curve(trainer))
    assert len(curves[0]) == 4
    assert np.array_equal(curves[0], curves[1])


def test_run_writes_checkpoints_and_metrics(make_utterance, vocab, tiny_config, tmp_path):
    dataset = _dataset(make_utterance)
    config = tiny_config.model_copy(update={"vocab_size": len(vocab)})
    training = TrainingConfig(char_budget=10, frame_budget=20, max_updates=4, warmup_steps=4, checkpoint_every=2)
    trainer = Trainer(TransformerModel(config, RngStream(1)), vocab, training, out_dir=tmp_path)
    summary = trainer.run(dataset, dev_data=dataset[:2])

    assert summary.updates == 4
    for name in ("checkpoint_000002.ckpt", "checkpoint_000004.ckpt", "checkpoint_best.ckpt", "checkpoint_last.ckpt", "vocab.txt"):
        assert (tmp_path / name).is_file(), name
    lines = (tmp_path / "metrics.tsv").read_text().splitlines()
    assert len(lines) == 4
    assert lines[0].split("\t")[3] == "-"
    assert lines[1].split("\t")[3] != "-"
    assert summary.best_dev_loss is not None


def test_early_stopping_after_patience(make_utterance, vocab, tiny_config):
    dataset = _dataset(make_utterance)
    config = tiny_config.model_copy(update={"vocab_size": len(vocab)})
    training = TrainingConfig(char_budget=10, frame_budget=20, max_updates=50, checkpoint_every=1, patience=1)
    trainer = Trainer(TransformerModel(config, RngStream(1)), vocab, training)
    # no cross-entropy can beat zero
    trainer.best_dev_loss = 0.0
    summary = trainer.run(dataset, dev_data=dataset[:2])
    assert summary.stopped_early
    assert summary.updates == 1


def test_divergence_keeps_last_good_checkpoint(make_utterance, vocab, tiny_config, tmp_path):
    dataset = _dataset(make_utterance)
    config = tiny_config.model_copy(update={"vocab_size": len(vocab)})
    training = TrainingConfig(char_budget=10, frame_budget=20, max_updates=2, checkpoint_every=1)
    trainer = Trainer(TransformerModel(config, RngStream(1)), vocab, training, out_dir=tmp_path)
    trainer.run(dataset)
    good = trainer.last_checkpoint

    trainer.model.output_projection.bias.data[:] = np.nan
    trainer.training = training.model_copy(update={"max_updates": 4})
    with pytest.raises(TrainingDivergedError) as exc:
        trainer.run(dataset)
    assert exc.value.last_checkpoint == str(good)
    assert good.is_file()


def test_empty_training_set(tiny_model, vocab):
    with pytest.raises(DataError):
        Trainer(tiny_model, vocab).run([])


# --- end-to-end acceptance runs -------------------------------------------------

def _train_synthetic(tmp_path, enc_layers, dec_layers, d_model, d_ff, stochastic_p, max_updates, num_utts=50):
    manifest = make_synthetic_corpus(tmp_path / "corpus", num_utts, seed=0)
    data = normalize_per_recording(load_manifest(manifest))
    vocab = build_vocab(u.transcript for u in data)
    config = ModelConfig(
        d_model=d_model, d_ff=d_ff, num_heads=4, enc_layers=enc_layers, dec_layers=dec_layers,
        vocab_size=len(vocab), dropout=0.0, stochastic_p=stochastic_p,
    )
    training = TrainingConfig(
        init_lr=1.0, warmup_steps=200, char_budget=400, frame_budget=2400,
        max_updates=max_updates, checkpoint_every=max_updates,
    )
    trainer = Trainer(TransformerModel(config, RngStream(0)), vocab, training, LossConfig(label_smoothing=0.0, char_dropout=0.0))
    trainer.run(data)
    return trainer, data, vocab


@pytest.mark.slow
def test_overfit_synthetic_corpus(tmp_path):
    trainer, data, vocab = _train_synthetic(tmp_path, 4, 2, 64, 128, 0.9, max_updates=2000)
    curve = loss_curve(trainer)
    smoothed = np.convolve(curve, np.ones(50) / 50, mode="valid")
    assert smoothed[-1] < smoothed[0]
    refs = {u.utt_id: u.transcript for u in data}
    hyps = {u.utt_id: greedy_decode(trainer.model, u.features, vocab, max_len=30).text for u in data}
    assert score_corpus(refs, hyps).cer <= 0.02


@pytest.mark.slow
def test_deeper_stochastic_model_not_worse_than_shallow_wide(tmp_path):
    deep, data, vocab = _train_synthetic(tmp_path / "deep", 8, 4, 32, 64, 0.5, max_updates=300)
    shallow, _, _ = _train_synthetic(tmp_path / "shallow", 2, 1, 64, 128, None, max_updates=300)
    batches = make_batches(data, vocab, 2400)
    assert deep.evaluate_loss(batches) <= shallow.evaluate_loss(batches)
