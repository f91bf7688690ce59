import itertools
import zlib

import numpy as np
import pytest

from app.exceptions import ConfigError
from app.schemas.decoding import Hypothesis
from app.services.decoder import beam_search, decode_utterance, greedy_decode
from app.services.vocab import Vocab
from app.tensor.rng import RngStream

TOY_VOCAB = Vocab(["a", "b"])
EOS = Vocab.eos_id


class ToyModel:
    """
    Stand-in decoder whose next-character distribution is a fixed pseudo-random
    function of the prefix. After `force_eos_after` characters only </s> is allowed.
    """

    def __init__(self, seed=0, force_eos_after=3, favour=None, never_eos=False):
        self.seed = seed
        self.force_eos_after = force_eos_after
        self.favour = favour
        self.never_eos = never_eos

    def encode(self, features):
        return None, None

    def log_probs(self, prefix):
        prefix = tuple(int(t) for t in prefix)
        if self.force_eos_after is not None and len(prefix) - 1 >= self.force_eos_after:
            row = np.full(len(TOY_VOCAB), -np.inf)
            row[EOS] = 0.0
            return row
        key = zlib.crc32(np.array(prefix, dtype=np.int64).tobytes()) + self.seed
        logits = RngStream(key).normal(len(TOY_VOCAB), scale=2.0)
        if self.favour is not None:
            logits[self.favour] += 50.0
        if self.never_eos:
            logits[EOS] = -50.0
        return logits - np.log(np.exp(logits - logits.max()).sum()) - logits.max()

    def next_token_log_probs(self, prefixes, memory, memory_mask):
        return np.stack([self.log_probs(row) for row in prefixes])


def exhaustive_best(model, alpha, max_len):
    """Best finished sequence by brute-force enumeration of every allowed continuation."""
    allowed = [t for t in range(len(TOY_VOCAB)) if t not in (Vocab.pad_id, Vocab.bos_id, Vocab.unk_id)]
    best = None
    for length in range(max_len):
        for body in itertools.product([t for t in allowed if t != EOS], repeat=length):
            hyp = Hypothesis()
            for token in list(body) + [EOS]:
                lp = model.log_probs([Vocab.bos_id] + hyp.token_ids)[token]
                hyp = hyp.extend(token, float(lp), EOS)
            if np.isfinite(hyp.log_prob) and (best is None or hyp.score(alpha) > best.score(alpha)):
                best = hyp
    return best


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("alpha", [0.0, 0.6, 1.0])
@pytest.mark.parametrize("beam_size", [27, 200])
def test_wide_beam_matches_exhaustive_search(seed, alpha, beam_size):
    model = ToyModel(seed=seed)
    result = beam_search(model, None, TOY_VOCAB, beam_size=beam_size, length_alpha=alpha, max_len=4)
    oracle = exhaustive_best(model, alpha, max_len=4)
    assert result.token_ids == oracle.token_ids
    assert result.score == pytest.approx(oracle.score(alpha))


class TableModel:
    """Next-character log-probabilities looked up by prefix (with <s>); unknown prefixes end."""

    A, B = TOY_VOCAB.encode("ab")

    def __init__(self):
        self.rows = {
            (Vocab.bos_id,): {EOS: -1.0, self.A: -1.2, self.B: -1.3, Vocab.unk_id: -5.0},
            (Vocab.bos_id, self.A): {EOS: -2.0, self.A: -3.0, self.B: -3.0},
            (Vocab.bos_id, self.B): {EOS: 0.0},
        }

    def encode(self, features):
        return None, None

    def next_token_log_probs(self, prefixes, memory, memory_mask):
        out = np.full((len(prefixes), len(TOY_VOCAB)), -np.inf)
        for i, prefix in enumerate(prefixes):
            for token, lp in self.rows.get(tuple(int(t) for t in prefix), {EOS: 0.0}).items():
                out[i, token] = lp
        return out


def test_finished_extension_does_not_take_a_live_slot():
    # with two slots, </s> and "a" rank above "b"; "b" must stay live to reach "b</s>"
    result = beam_search(TableModel(), None, TOY_VOCAB, beam_size=2, length_alpha=1.0, max_len=4)
    assert result.token_ids == [TableModel.B, EOS]
    assert result.score == pytest.approx(-0.65)
    assert result.text == "b"


@pytest.mark.parametrize("seed", range(10))
def test_beam_never_scores_below_greedy(seed):
    model = ToyModel(seed=seed)
    greedy = greedy_decode(model, None, TOY_VOCAB, max_len=4)
    for beam in (2, 4):
        assert beam_search(model, None, TOY_VOCAB, beam_size=beam, max_len=4).score >= greedy.score - 1e-12


def test_beam_of_one_is_greedy_on_the_real_model(tiny_model, vocab):
    rng = RngStream(77)
    for _ in range(100):
        features = rng.normal((int(rng.uniform() * 10) + 2, 8))
        greedy = greedy_decode(tiny_model, features, vocab, max_len=6)
        beam = beam_search(tiny_model, features, vocab, beam_size=1, max_len=6)
        assert beam.token_ids == greedy.token_ids
        assert beam.log_prob == greedy.log_prob


def test_reserved_symbols_are_never_emitted():
    model = ToyModel(force_eos_after=None, favour=Vocab.pad_id)
    for result in (
        greedy_decode(model, None, TOY_VOCAB, max_len=5),
        beam_search(model, None, TOY_VOCAB, beam_size=3, max_len=5),
    ):
        assert Vocab.pad_id not in result.token_ids
        assert Vocab.bos_id not in result.token_ids
    bos_model = ToyModel(force_eos_after=None, favour=Vocab.bos_id)
    assert Vocab.bos_id not in greedy_decode(bos_model, None, TOY_VOCAB, max_len=5).token_ids


def test_unknown_symbol_is_never_emitted():
    model = ToyModel(seed=2, favour=Vocab.unk_id)
    for result in (
        greedy_decode(model, None, TOY_VOCAB, max_len=4),
        beam_search(model, None, TOY_VOCAB, beam_size=3, max_len=4),
    ):
        assert Vocab.unk_id not in result.token_ids
        assert "<unk>" not in result.text


def test_truncated_output_is_flagged():
    model = ToyModel(force_eos_after=None, never_eos=True)
    greedy = greedy_decode(model, None, TOY_VOCAB, max_len=3)
    assert greedy.truncated
    assert len(greedy.token_ids) == 3
    beam = beam_search(model, None, TOY_VOCAB, beam_size=3, max_len=3)
    assert beam.truncated
    assert len(beam.token_ids) == 3


def test_finished_output_text_drops_eos():
    result = beam_search(ToyModel(seed=1), None, TOY_VOCAB, beam_size=4, max_len=4)
    assert not result.truncated
    assert result.token_ids[-1] == EOS
    assert result.text == TOY_VOCAB.decode(result.token_ids)


def test_decoding_is_deterministic(tiny_model, vocab, features):
    first = decode_utterance(tiny_model, features, vocab, beam_size=3, max_len=5, utt_id="u1")
    second = decode_utterance(tiny_model, features, vocab, beam_size=3, max_len=5)
    assert first == second


def test_invalid_decoding_arguments(tiny_model, vocab, features):
    with pytest.raises(ConfigError):
        beam_search(tiny_model, features, vocab, beam_size=0)
    with pytest.raises(ConfigError):
        greedy_decode(tiny_model, features, vocab, max_len=0)
