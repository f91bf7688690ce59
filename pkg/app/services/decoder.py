from typing import List, Optional, Union

import numpy as np

from app.exceptions import ConfigError
from app.models.transformer import TransformerModel
from app.schemas.decoding import Hypothesis, Transcription
from app.services.vocab import Vocab
from app.tensor.tensor import Tensor
from app.utils.logger import setup_logger

logger = setup_logger()

DEFAULT_MAX_LEN = 200


def _banned(log_probs: np.ndarray) -> np.ndarray:
    """Reserved ids the decoder must never emit; <unk> has no surface form."""
    log_probs = log_probs.copy()
    log_probs[..., [Vocab.pad_id, Vocab.bos_id, Vocab.unk_id]] = -np.inf
    return log_probs


def _prefix_matrix(hypotheses: List[Hypothesis]) -> np.ndarray:
    return np.array([[Vocab.bos_id] + h.token_ids for h in hypotheses], dtype=np.int64)


def _transcription(hyp: Hypothesis, vocab: Vocab, length_alpha: float) -> Transcription:
    return Transcription(
        text=vocab.decode(hyp.token_ids),
        token_ids=hyp.token_ids,
        log_prob=hyp.log_prob,
        score=hyp.score(length_alpha),
        truncated=not hyp.finished,
    )


def greedy_hypothesis(
    model: TransformerModel,
    memory: Tensor,
    memory_mask: np.ndarray,
    max_len: int,
) -> Hypothesis:
    hyp = Hypothesis()
    while len(hyp.token_ids) < max_len:
        log_probs = _banned(model.next_token_log_probs(_prefix_matrix([hyp]), memory, memory_mask))[0]
        token = int(np.argmax(log_probs))
        hyp = hyp.extend(token, float(log_probs[token]), Vocab.eos_id)
        if hyp.finished:
            break
    return hyp


def greedy_decode(
    model: TransformerModel,
    features: Union[Tensor, np.ndarray],
    vocab: Vocab,
    max_len: int = DEFAULT_MAX_LEN,
    length_alpha: float = 0.6,
) -> Transcription:
    """Argmax character per step from <s> until </s> or max_len (eval mode, no RNG use)."""
    if max_len < 1:
        raise ConfigError(f"max_len must be >= 1, got {max_len}")
    memory, memory_mask = model.encode(features)
    hyp = greedy_hypothesis(model, memory, memory_mask, max_len)
    if not hyp.finished:
        logger.warning(f"Greedy decoding truncated at max_len={max_len}")
    return _transcription(hyp, vocab, length_alpha)


def beam_search(
    model: TransformerModel,
    features: Union[Tensor, np.ndarray],
    vocab: Vocab,
    beam_size: int = 4,
    length_alpha: float = 0.6,
    max_len: int = DEFAULT_MAX_LEN,
) -> Transcription:
    """
    Rank the extensions of the live hypotheses at each step. Every extension ending in </s>
    among the top 2 * beam_size moves to the finished pool; the best beam_size others stay
    live. Finished hypotheses are ranked by
    log_prob / len^length_alpha. The greedy path is always scored as a candidate.
    """
    if beam_size < 1:
        raise ConfigError(f"beam size must be >= 1, got {beam_size}")
    if max_len < 1:
        raise ConfigError(f"max_len must be >= 1, got {max_len}")
    memory, memory_mask = model.encode(features)
    greedy = greedy_hypothesis(model, memory, memory_mask, max_len)
    if beam_size == 1:
        if not greedy.finished:
            logger.warning(f"Beam search truncated at max_len={max_len}")
        return _transcription(greedy, vocab, length_alpha)

    live: List[Hypothesis] = [Hypothesis()]
    finished: List[Hypothesis] = []
    for _ in range(max_len):
        log_probs = _banned(model.next_token_log_probs(_prefix_matrix(live), memory, memory_mask))
        totals = np.array([h.log_prob for h in live])[:, None] + log_probs
        flat = totals.ravel()
        # stable order: ties resolved by (hypothesis, token) index. At most one </s> per live
        # hypothesis, so 2 * beam_size candidates always hold beam_size unfinished ones.
        order = np.argsort(-flat, kind="stable")[:2 * beam_size]
        next_live: List[Hypothesis] = []
        vocab_size = log_probs.shape[1]
        for index in order:
            if not np.isfinite(flat[index]):
                break
            row, token = divmod(int(index), vocab_size)
            candidate = live[row].extend(token, float(log_probs[row, token]), Vocab.eos_id)
            if candidate.finished:
                finished.append(candidate)
            elif len(next_live) < beam_size:
                next_live.append(candidate)
        live = next_live
        if not live:
            break

    pool = finished + [greedy]
    if not finished:
        # nothing reached </s>: compare the unfinished hypotheses at max_len
        pool += live
    best = max(pool, key=lambda h: h.score(length_alpha))
    if not best.finished:
        logger.warning(f"Beam search truncated at max_len={max_len}")
    return _transcription(best, vocab, length_alpha)


def decode_utterance(
    model: TransformerModel,
    features: Union[Tensor, np.ndarray],
    vocab: Vocab,
    beam_size: int = 1,
    length_alpha: float = 0.6,
    max_len: int = DEFAULT_MAX_LEN,
    utt_id: Optional[str] = None,
) -> Transcription:
    result = beam_search(model, features, vocab, beam_size, length_alpha, max_len)
    if utt_id is not None:
        logger.debug(f"{utt_id}: {result.text!r} (score {result.score:.4f})")
    return result
