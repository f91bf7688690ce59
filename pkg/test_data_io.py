import numpy as np
import pytest

from app.exceptions import ConfigError, DataError, ManifestError
from app.schemas.data import ManifestEntry
from app.services.batching import collate, make_batches
from app.services.features import encode_features, parse_features, read_features, write_features
from app.services.manifest import load_manifest, read_manifest_entries, write_manifest
from app.services.normalizer import normalize_per_recording, standardize
from app.services.synthetic import make_synthetic_corpus
from app.services.vocab import Vocab, build_vocab


@pytest.fixture
def corpus(tmp_path):
    """Three utterances from two recordings with relative feature paths."""
    rng = np.random.default_rng(0)
    rows = []
    for i, (rec, text) in enumerate([("r1", "Abc"), ("r1", "bad"), ("r2", "cab")]):
        write_features(tmp_path / "feats" / f"u{i}.fbank", rng.normal(size=(5 + i, 8)).astype(np.float32))
        rows.append(ManifestEntry(utt_id=f"u{i}", recording_id=rec, feature_path=f"feats/u{i}.fbank", transcript=text))
    return write_manifest(tmp_path / "manifest.tsv", rows)


# --- feature files --------------------------------------------------------------

def test_feature_file_round_trip_is_float32_exact(tmp_path):
    original = np.random.default_rng(1).normal(size=(6, 4))
    path = write_features(tmp_path / "a.fbank", original)
    assert np.array_equal(read_features(path), original.astype(np.float32).astype(np.float64))


def test_feature_header_layout():
    payload = encode_features(np.ones((3, 2)))
    assert payload[:8] == b"FBANK1\0\0"
    assert payload[8:16] == (3).to_bytes(4, "little") + (2).to_bytes(4, "little")
    assert len(payload) == 16 + 4 * 6


@pytest.mark.parametrize("payload, message", [
    (b"FBANK2\0\0" + bytes(8), "magic"),
    (b"FBANK1\0\0" + (2).to_bytes(4, "little") + (2).to_bytes(4, "little") + bytes(12), "needs 16"),
    (b"FBANK1\0\0" + bytes(8), "empty"),
])
def test_corrupted_feature_payloads(payload, message):
    with pytest.raises(DataError) as exc:
        parse_features(payload, "utt7")
    assert "utt7" in str(exc.value)
    assert message in str(exc.value)


def test_feature_bins_and_finiteness():
    with pytest.raises(DataError):
        parse_features(encode_features(np.ones((2, 3))), expected_bins=40)
    with pytest.raises(DataError):
        parse_features(encode_features(np.array([[1.0, np.inf]])))


# --- manifests -------------------------------------------------------------------

def test_manifest_loads_in_order_with_lowercase_transcripts(corpus):
    utterances = load_manifest(corpus, expected_bins=8)
    assert [u.utt_id for u in utterances] == ["u0", "u1", "u2"]
    assert utterances[0].transcript == "abc"
    assert [u.num_frames for u in utterances] == [5, 6, 7]


def test_manifest_paths_resolve_against_manifest_directory(corpus, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path / "feats")
    entries = read_manifest_entries(corpus)
    assert entries[0].feature_path == str(tmp_path / "feats" / "u0.fbank")


def test_manifest_reports_every_failure(corpus, tmp_path):
    text = corpus.read_text()
    text += "u3\tr2\tfeats/missing.fbank\tfed\n"
    text += "u4\tr2\tfeats/u0.fbank\n"
    text += "u0\tr1\tfeats/u0.fbank\tdup\n"
    broken = tmp_path / "broken.tsv"
    broken.write_text(text)
    with pytest.raises(ManifestError) as exc:
        read_manifest_entries(broken)
    assert exc.value.utt_ids == ["u4", "u0"]

    broken.write_text(corpus.read_text() + "u3\tr2\tfeats/missing.fbank\tfed\n")
    with pytest.raises(ManifestError) as exc:
        load_manifest(broken)
    assert exc.value.utt_ids == ["u3"]


def test_empty_manifest_gives_empty_dataset(tmp_path):
    path = tmp_path / "empty.tsv"
    path.write_text("# nothing here\n\n")
    assert load_manifest(path) == []


def test_wrong_mel_bins_in_manifest(corpus):
    with pytest.raises(ManifestError):
        load_manifest(corpus, expected_bins=40)


# --- normalisation ------------------------------------------------------------------

def test_recording_normalisation_gives_zero_mean_unit_variance(corpus):
    utterances = normalize_per_recording(load_manifest(corpus))
    r1 = np.concatenate([u.features for u in utterances if u.recording_id == "r1"])
    assert np.allclose(r1.mean(axis=0), 0.0, atol=1e-12)
    assert np.allclose(r1.std(axis=0), 1.0)
    assert [u.utt_id for u in utterances] == ["u0", "u1", "u2"]


def test_constant_bins_stay_finite():
    features = np.column_stack([np.full(4, 3.0), np.arange(4.0)])
    out = standardize(features)
    assert np.all(np.isfinite(out))
    assert np.array_equal(out[:, 0], np.zeros(4))


def test_normalisation_leaves_inputs_untouched(make_utterance):
    utt = make_utterance("a", 5)
    before = utt.features.copy()
    normalize_per_recording([utt])
    assert np.array_equal(utt.features, before)


def test_normalisation_is_idempotent_and_scale_invariant(make_utterance):
    utterances = [make_utterance("a", 6, seed=1), make_utterance("b", 4, seed=2)]
    once = normalize_per_recording(utterances)
    twice = normalize_per_recording(once)
    for first, second in zip(once, twice):
        assert np.allclose(first.features, second.features)
    scaled = [u.model_copy(update={"features": u.features * 10.0}) for u in utterances]
    for plain, big in zip(once, normalize_per_recording(scaled)):
        assert np.allclose(plain.features, big.features)


def test_single_frame_recording_normalises_to_zeros(make_utterance):
    (out,) = normalize_per_recording([make_utterance("a", 1)])
    assert np.array_equal(out.features, np.zeros_like(out.features))


# --- vocabulary ------------------------------------------------------------------------

def test_vocab_reserved_ids_and_sorting():
    vocab = build_vocab(["cab", "a b"])
    assert vocab.symbols[:4] == ["<pad>", "<s>", "</s>", "<unk>"]
    assert vocab.characters == [" ", "a", "b", "c"]
    assert vocab.encode("cz") == [7, vocab.unk_id]
    assert vocab.decode([7, 5, 1, 6, 2, 4]) == "cab"


def test_vocab_file_round_trip_keeps_space(tmp_path):
    vocab = Vocab([" ", "a", "'"])
    vocab.save(tmp_path / "vocab.txt")
    assert Vocab.load(tmp_path / "vocab.txt") == vocab


def test_vocab_rejects_bad_entries():
    with pytest.raises(DataError):
        Vocab(["ab"])
    with pytest.raises(DataError):
        Vocab(["a", "a"])
    with pytest.raises(DataError):
        build_vocab([])


# --- batching ----------------------------------------------------------------------------

def test_collate_pads_inputs_and_targets(make_utterance, vocab):
    batch = collate([make_utterance("a", 3, "ab"), make_utterance("b", 5, "c")], vocab)
    assert batch.features.shape == (2, 5, 8)
    assert np.array_equal(batch.features[0, 3:], np.zeros((2, 8)))
    assert batch.decoder_inputs.tolist() == [[1, 5, 6], [1, 7, 0]]
    assert batch.decoder_targets.tolist() == [[5, 6, 2], [7, 2, 0]]
    assert batch.num_characters == 5
    assert batch.frame_mask.tolist() == [[True] * 3 + [False] * 2, [True] * 5]


def test_batches_respect_frame_budget_and_cover_dataset(make_utterance, vocab):
    dataset = [make_utterance(f"u{i}", 3 + (i * 7) % 11, seed=i) for i in range(30)]
    batches = make_batches(dataset, vocab, frame_budget=40, shuffle_seed=3)
    assert all(b.padded_frames <= 40 for b in batches)
    ids = sorted(utt_id for b in batches for utt_id in b.utt_ids)
    assert ids == sorted(u.utt_id for u in dataset)


def test_same_seed_same_batches(make_utterance, vocab):
    dataset = [make_utterance(f"u{i}", 3 + i % 5, seed=i) for i in range(20)]
    first = [b.utt_ids for b in make_batches(dataset, vocab, 20, shuffle_seed=9)]
    second = [b.utt_ids for b in make_batches(dataset, vocab, 20, shuffle_seed=9)]
    assert first == second


def test_oversized_utterance_and_bad_budget(make_utterance, vocab):
    with pytest.raises(DataError) as exc:
        make_batches([make_utterance("long", 50)], vocab, 10)
    assert "long" in str(exc.value)
    with pytest.raises(ConfigError):
        make_batches([], vocab, 0)
    assert make_batches([], vocab, 10) == []


# --- synthetic corpus ------------------------------------------------------------------------

def test_synthetic_corpus_is_deterministic(tmp_path):
    first = load_manifest(make_synthetic_corpus(tmp_path / "a", 6, seed=2))
    second = load_manifest(make_synthetic_corpus(tmp_path / "b", 6, seed=2))
    assert [u.transcript for u in first] == [u.transcript for u in second]
    assert all(np.array_equal(a.features, b.features) for a, b in zip(first, second))
    assert all(u.features.shape[1] == 40 and len(u.transcript) <= 20 for u in first)
    assert set(build_vocab(u.transcript for u in first).characters) <= set(" abcdefghijklmnopqrstuvwxyz")
