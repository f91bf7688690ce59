import argparse
import json
import sys
from typing import List, Optional

from app.config import build_configs, get_settings, load_config_file
from app.exceptions import SpeechTransformerError
from app.models.checkpoint import load_model
from app.models.transformer import TransformerModel, count_parameters
from app.services.decoder import decode_utterance
from app.services.manifest import load_manifest
from app.services.normalizer import normalize_per_recording
from app.services.scoring import evaluate, summary_lines, write_hypotheses, write_report
from app.services.synthetic import make_synthetic_corpus
from app.services.trainer import Trainer
from app.services.vocab import build_vocab
from app.tensor.rng import RngStream
from app.utils.logger import setup_logger

logger = setup_logger()


def build_parser() -> argparse.ArgumentParser:
    settings = get_settings()
    parser = argparse.ArgumentParser(prog="app", description="Deep stochastic Transformer speech recognizer")
    parser.add_argument('--log-level', default=settings.log_level, help='Logging level (DEBUG, INFO, WARNING, ...)')
    commands = parser.add_subparsers(dest="command", required=True)

    train = commands.add_parser("train", help="Train a model on a manifest")
    train.add_argument('--config', help='Config file of "key = value" lines')
    train.add_argument('--data', required=True, help='Training manifest')
    train.add_argument('--dev', help='Development manifest for dev loss and best checkpoint')
    train.add_argument('--out', required=True, help='Output directory for checkpoints and metrics.tsv')
    train.add_argument('--enc-layers', type=int, help='Encoder layers')
    train.add_argument('--dec-layers', type=int, help='Decoder layers')
    train.add_argument('--stochastic-p', type=float, help='Global stochastic-layer parameter p')
    train.add_argument('--seed', type=int, help='Seed for initialisation, batching and dropout')
    train.add_argument('--char-budget', type=int, help='Target characters per update')

    decode = commands.add_parser("decode", help="Transcribe a manifest with a trained model")
    decode.add_argument('--checkpoint', required=True, help='Checkpoint file')
    decode.add_argument('--data', required=True, help='Manifest to transcribe')
    decode.add_argument('--beam', type=int, default=settings.default_beam, help='Beam size (1 = greedy)')
    decode.add_argument('--alpha', type=float, default=settings.default_alpha, help='Length normalisation exponent')
    decode.add_argument('--max-len', type=int, default=settings.default_max_len, help='Maximum characters per utterance')
    decode.add_argument('--out', required=True, help='Hypothesis file (utt_id<TAB>text)')

    evaluate_cmd = commands.add_parser("eval", help="Score hypotheses against reference transcripts")
    evaluate_cmd.add_argument('--refs', required=True, help='Reference manifest')
    evaluate_cmd.add_argument('--hyps', required=True, help='Hypothesis file')
    evaluate_cmd.add_argument('--out', required=True, help='Report path; .json writes JSON')

    inspect = commands.add_parser("inspect", help="Print a checkpoint's config and parameter count")
    inspect.add_argument('--checkpoint', required=True, help='Checkpoint file')

    synthetic = commands.add_parser("make-synthetic", help="Write a deterministic toy corpus")
    synthetic.add_argument('--out', required=True, help='Output directory')
    synthetic.add_argument('--utts', type=int, default=50, help='Number of utterances')
    synthetic.add_argument('--seed', type=int, default=0, help='Corpus seed')
    return parser


def run_train(args: argparse.Namespace) -> int:
    sections = load_config_file(args.config) if args.config else None
    train_data = load_manifest(args.data)
    dev_data = load_manifest(args.dev) if args.dev else None
    vocab = build_vocab(utt.transcript for utt in train_data)
    model_config, training, loss = build_configs(
        sections,
        len(vocab),
        {
            "enc_layers": args.enc_layers,
            "dec_layers": args.dec_layers,
            "stochastic_p": args.stochastic_p,
            "seed": args.seed,
            "char_budget": args.char_budget,
        },
    )
    if training.normalize:
        train_data = normalize_per_recording(train_data)
        dev_data = normalize_per_recording(dev_data) if dev_data else None

    model = TransformerModel(model_config, RngStream(training.seed).spawn("init"))
    trainer = Trainer(model, vocab, training, loss, out_dir=args.out)
    summary = trainer.run(train_data, dev_data)
    print(json.dumps(summary.model_dump(), indent=2))
    return 0


def run_decode(args: argparse.Namespace) -> int:
    model, vocab, checkpoint = load_model(args.checkpoint)
    utterances = load_manifest(args.data, expected_bins=model.config.mel_bins)
    if checkpoint.metadata.get("normalize", True):
        utterances = normalize_per_recording(utterances)
    hyps = {}
    truncated = 0
    for utt in utterances:
        result = decode_utterance(model, utt.features, vocab, args.beam, args.alpha, args.max_len, utt.utt_id)
        hyps[utt.utt_id] = result.text
        truncated += result.truncated
    write_hypotheses(args.out, hyps)
    logger.info(f"Decoded {len(hyps)} utterances to {args.out} ({truncated} truncated at max_len)")
    return 0


def run_eval(args: argparse.Namespace) -> int:
    report = evaluate(args.refs, args.hyps)
    write_report(args.out, report)
    print("\n".join(summary_lines(report)))
    return 0


def run_inspect(args: argparse.Namespace) -> int:
    model, vocab, checkpoint = load_model(args.checkpoint)
    print(json.dumps(model.config.model_dump(), indent=2))
    print(f"vocab_size: {len(vocab)}")
    print(f"parameters: {count_parameters(model.config)}")
    if checkpoint.metadata:
        print(f"metadata: {json.dumps(checkpoint.metadata)}")
    return 0


def run_make_synthetic(args: argparse.Namespace) -> int:
    manifest = make_synthetic_corpus(args.out, args.utts, args.seed)
    print(manifest)
    return 0


COMMANDS = {
    "train": run_train,
    "decode": run_decode,
    "eval": run_eval,
    "inspect": run_inspect,
    "make-synthetic": run_make_synthetic,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logger(args.log_level, get_settings().log_dir)
    try:
        return COMMANDS[args.command](args)
    except SpeechTransformerError as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
