"""Command-line front end.

Subcommands: ``perturb`` (document -> perturbed JSONL), ``run`` (full
private-inference round trip), ``attack`` (recovery attacks against a
perturbed JSONL), ``metrics`` (utility metrics over run records), and
``verify`` (the built-in verification suite). Every command honors
``--seed`` and embeds the seed and config snapshot in its outputs, so any
run can be replayed exactly.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

from . import attacks as attacks_mod
from . import metrics as metrics_mod
from . import verify as verify_mod
from .config import AppConfig, apply_mechanism_overrides, load_app_config
from .dpcore import Rng
from .errors import ConfigError, ContractError, DpTextError
from .mechanisms import (
    perturb_document,
    read_perturbed_jsonl,
    write_perturbed_jsonl,
)
from .pipeline import (
    HttpLlmClient,
    MockLlmClient,
    run_privinfer,
    load_run_record,
)
from .vocab import (
    TokenIdSeq,
    detokenize_text,
    load_embeddings,
    load_vocabulary,
    tokenize,
)

logger = logging.getLogger(__name__)

MOCK_RESTORED_TEXT = "[mock restored text]"


class _WrongAnswerMaskClient:
    """Mock masked-LM backend: always predicts a token not in any vocabulary."""

    def predict(self, tokens, masked_position):
        return ["\x00never-a-token\x00"]


class _WrongAnswerGptClient:
    """Mock recovery backend: answers the expected format with wrong tokens."""

    def generate(self, prompt: str) -> str:
        marker = 'For the given list of "INPUTS":\n'
        start = prompt.rindex(marker) + len(marker)
        end = prompt.index("\n", start)
        count = prompt[start:end].count('", "') + 1
        rows = ",\n".join('["\x00wrong\x00"]' for _ in range(count))
        return f"[\n{rows}\n]"


def _say(args, message: str) -> None:
    if not args.quiet:
        print(message)


def _load_corpus(cfg: AppConfig):
    cfg.require_paths("vocab", "embeddings")
    if cfg.merges_path is not None and not os.path.exists(cfg.merges_path):
        raise ConfigError(f"merges file not found: {cfg.merges_path}")
    vocab = load_vocabulary(cfg.vocab_path, merges_path=cfg.merges_path)
    table = load_embeddings(cfg.embeddings_path, vocab)
    return vocab, table


def cmd_perturb(cfg: AppConfig, args) -> int:
    vocab, table = _load_corpus(cfg)
    with open(args.input, "r", encoding="utf-8") as fh:
        text = fh.read()
    seed = cfg.resolved_seed()
    rng = Rng(seed)
    doc = tokenize(text, vocab)
    docs = perturb_document(doc, table, cfg.mechanism, args.n, rng)
    texts = [detokenize_text(d.perturbed_ids, vocab) for d in docs]
    write_perturbed_jsonl(
        args.out, docs, seed=seed, cfg=cfg.mechanism, redact=args.redact, texts=texts
    )
    _say(args, f"seed = {seed}")
    for d, t in zip(docs, texts):
        dist = metrics_mod.levenshtein(text, t)
        _say(args, f"doc {d.doc_index}: edit_distance={dist}")
    _say(args, f"wrote {len(docs)} perturbed documents to {args.out}")
    return 0


def cmd_run(cfg: AppConfig, args) -> int:
    vocab, table = _load_corpus(cfg)
    with open(args.input, "r", encoding="utf-8") as fh:
        text = fh.read()
    mech = cfg.mechanism
    if args.truncate_paper_setup:
        head = TokenIdSeq(ids=tuple(tokenize(text, vocab))[:50])
        text = detokenize_text(head, vocab)
    if args.mock:
        remote = MockLlmClient(echo=True)
        local = MockLlmClient(default=MOCK_RESTORED_TEXT)
        max_concurrent = 4
    else:
        if cfg.remote is None or cfg.restore is None:
            raise ConfigError(
                "run requires [remote] and [restore] endpoint sections (or --mock)"
            )
        remote_cfg = cfg.remote
        if args.truncate_paper_setup:
            remote_cfg = dataclasses.replace(remote_cfg, max_output_tokens=100)
        remote = HttpLlmClient(remote_cfg)
        local = HttpLlmClient(cfg.restore)
        max_concurrent = remote_cfg.max_concurrent
    seed = cfg.resolved_seed()
    record = run_privinfer(
        text,
        vocab,
        table,
        mech,
        args.n if args.n is not None else cfg.n_docs,
        remote,
        local,
        Rng(seed),
        runs_dir=cfg.runs_dir,
        max_concurrent=max_concurrent,
    )
    _say(args, f"seed = {seed}")
    _say(args, f"run record: {os.path.join(cfg.runs_dir, record.run_id + '.json')}")
    if record.status != "ok":
        print(f"run {record.status}: {record.error}", file=sys.stderr)
        return 1
    _say(args, record.restored_text or "")
    return 0


def cmd_attack(cfg: AppConfig, args) -> int:
    records = read_perturbed_jsonl(args.perturbed)
    if not records:
        raise ContractError(f"no perturbed documents in {args.perturbed}")
    missing = [r for r in records if "original_ids" not in r]
    if missing:
        raise ContractError(
            "perturbed file lacks original_ids; attacks evaluate recovery against "
            "the originals, so re-run perturb without --redact for evaluation"
        )
    k = args.k if args.k is not None else cfg.attack_k
    reports = []
    if args.attack_kind == "inversion":
        vocab, table = _load_corpus(cfg)
        for rec in records:
            reports.append(
                attacks_mod.embedding_inversion(
                    TokenIdSeq(ids=tuple(rec["perturbed_ids"])),
                    TokenIdSeq(ids=tuple(rec["original_ids"])),
                    table,
                    k,
                )
            )
    else:
        cfg.require_paths("vocab")
        vocab = load_vocabulary(cfg.vocab_path, merges_path=cfg.merges_path)
        if args.attack_kind == "gpt":
            if args.mock:
                client = _WrongAnswerGptClient()
            elif cfg.remote is not None:
                client = HttpLlmClient(cfg.remote)
            else:
                raise ConfigError(
                    "gpt attack requires a [remote] endpoint section (or --mock)"
                )
        elif not args.mock:
            raise ConfigError(
                "no built-in masked-LM backend; the mask attack runs against "
                "a MaskedLmClient via the library API, or use --mock"
            )
        else:
            client = _WrongAnswerMaskClient()
        for rec in records:
            perturbed = [vocab.token_text(t) for t in rec["perturbed_ids"]]
            originals = [vocab.token_text(t) for t in rec["original_ids"]]
            if args.attack_kind == "gpt":
                reports.append(
                    attacks_mod.gpt_inference_attack(
                        perturbed, originals, client, chunk_size=cfg.attack_chunk_size
                    )
                )
            else:
                reports.append(attacks_mod.mask_attack(perturbed, originals, client, k))

    eps = records[0].get("config", {}).get("epsilon_em", "-")
    total = sum(len(r.per_token) for r in reports)
    recovered = sum(sum(1 for o in r.per_token if o.recovered) for r in reports)
    asr = recovered / total if total else 0.0
    for i, report in enumerate(reports):
        _say(args, f"doc {records[i]['doc_index']}: {report.summary_line(k=k, eps=eps)}")
        if report.failed:
            print(f"doc {records[i]['doc_index']} attack failed: {report.error}",
                  file=sys.stderr)
    print(f"asr={asr:.4f} privacy={1 - asr:.4f} k={k} eps={eps}")
    if args.out:
        payload = {
            "kind": args.attack_kind,
            "k": k,
            "eps": eps,
            "seed": records[0].get("seed"),
            "config": records[0].get("config"),
            "aggregate": {"asr": asr, "privacy": 1 - asr},
            "per_document": [r.to_dict() for r in reports],
        }
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        _say(args, f"wrote attack report to {args.out}")
    return 1 if any(r.failed for r in reports) else 0


def cmd_metrics(cfg: AppConfig, args) -> int:
    rows = []
    reports = []
    for path in args.runs:
        record = load_run_record(path)
        restored = record.restored_text or ""
        tokens = restored.split()
        if tokens:
            div_product = metrics_mod.diversity(tokens, "product")
            div_sum = metrics_mod.diversity(tokens, "sum")
        else:
            div_product = div_sum = None
        dists = [
            metrics_mod.levenshtein(record.raw_document, p["text"])
            for p in record.perturbed_documents
        ]
        mean_edit = sum(dists) / len(dists) if dists else None
        rows.append((record.run_id, div_product, div_sum, mean_edit, args.mauve))
        report = metrics_mod.MetricReport(
            diversity=div_product if div_product is not None else 1.0,
            diversity_formula="product",
            edit_distance=round(mean_edit) if mean_edit is not None else None,
            token_count=len(tokens),
            char_count=len(restored),
            mauve=args.mauve,
            extra={"run_id": record.run_id, "diversity_sum": div_sum,
                   "mean_edit_distance": mean_edit, "seed": record.config.get("seed")},
        )
        reports.append(report.to_dict())

    def fmt(v):
        return "-" if v is None else (f"{v:.4f}" if isinstance(v, float) else str(v))

    print(f"{'run_id':<40} {'div(prod)':>10} {'div(sum)':>10} {'edit':>10} {'mauve':>8}")
    for run_id, dp, ds, ed, mv in rows:
        print(f"{run_id:<40} {fmt(dp):>10} {fmt(ds):>10} {fmt(ed):>10} {fmt(mv):>8}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(reports, fh, indent=2, sort_keys=True)
            fh.write("\n")
        _say(args, f"wrote metric reports to {args.out}")
    return 0


def cmd_verify(cfg: AppConfig, args) -> int:
    seed = cfg.resolved_seed()
    epsilons = [args.epsilon] if args.epsilon is not None else None
    results = verify_mod.run_default_suite(
        seed,
        epsilons=epsilons,
        membership_trials=args.membership_trials,
        support_trials=args.support_trials,
    )
    _say(args, f"seed = {seed}")
    for r in results:
        suffix = " (informational)" if r.informational else ""
        print(r.line() + suffix)
    return verify_mod.suite_exit_code(results)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dptext",
        description="Differentially private text perturbation and private "
        "black-box LLM inference.",
    )
    parser.add_argument("--config", help="INI config file")
    parser.add_argument("--seed", type=int, help="seed for all randomness")
    parser.add_argument("--mock", action="store_true",
                        help="use deterministic mock backends instead of HTTP")
    parser.add_argument("--quiet", action="store_true", help="only errors and results")

    sub = parser.add_subparsers(dest="command", required=True)

    def add_mech_flags(p):
        p.add_argument("--kind", choices=["rantext", "topk", "global"])
        p.add_argument("--epsilon", type=float, help="exponential-mechanism epsilon")
        p.add_argument("--epsilon-lap", type=float, dest="epsilon_lap",
                       help="adjacency-noise epsilon (defaults to --epsilon)")
        p.add_argument("--sensitivity", help="'auto' or a positive number")
        p.add_argument("--scoring-mode", choices=["def4-consistent", "paper-final"],
                       dest="scoring_mode")
        p.add_argument("--top-k", type=int, dest="top_k")

    def add_path_flags(p):
        p.add_argument("--vocab", help="vocabulary file")
        p.add_argument("--embeddings", help="embedding file")
        p.add_argument("--merges", help="BPE merges file")

    p = sub.add_parser("perturb", help="write N perturbed copies of a document")
    p.add_argument("--input", required=True, help="document text file")
    p.add_argument("--out", required=True, help="output JSONL path")
    p.add_argument("-n", type=int, default=3, help="number of perturbed documents")
    p.add_argument("--redact", action="store_true",
                   help="omit original ids from the output")
    add_path_flags(p)
    add_mech_flags(p)
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("run", help="perturb, generate remotely, restore locally")
    p.add_argument("--input", required=True, help="document text file")
    p.add_argument("-n", type=int, default=None, help="number of perturbed prompts")
    p.add_argument("--runs-dir", dest="runs_dir", help="directory for run records")
    p.add_argument("--truncate-paper-setup", action="store_true",
                   help="use the first 50 tokens and a 100-token generation budget")
    add_path_flags(p)
    add_mech_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("attack", help="run a recovery attack on a perturbed JSONL")
    p.add_argument("--perturbed", required=True, help="perturbed JSONL from perturb")
    p.add_argument("--kind", choices=["inversion", "gpt", "mask"], required=True,
                   dest="attack_kind")
    p.add_argument("--k", type=int, help="candidate budget for inversion/mask")
    p.add_argument("--out", help="write the full attack report JSON here")
    add_path_flags(p)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("metrics", help="utility metrics over run records")
    p.add_argument("runs", nargs="+", help="run record JSON files")
    p.add_argument("--mauve", type=float, default=None,
                   help="externally computed value to include in the table")
    p.add_argument("--out", help="write metric reports as JSON here")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("verify", help="run the verification suite")
    p.add_argument("--epsilon", type=float, default=None,
                   help="check the mechanism ratio bound at this epsilon only")
    p.add_argument("--membership-trials", type=int,
                   default=verify_mod.DEFAULT_MEMBERSHIP_TRIALS)
    p.add_argument("--support-trials", type=int,
                   default=verify_mod.DEFAULT_SUPPORT_TRIALS)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING)
    try:
        cfg = load_app_config(args.config)
        if getattr(args, "vocab", None):
            cfg.vocab_path = args.vocab
        if getattr(args, "embeddings", None):
            cfg.embeddings_path = args.embeddings
        if getattr(args, "merges", None):
            cfg.merges_path = args.merges
        if getattr(args, "runs_dir", None):
            cfg.runs_dir = args.runs_dir
        if args.seed is not None:
            cfg.seed = args.seed
        apply_mechanism_overrides(cfg, args)
        return args.func(cfg, args)
    except DpTextError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
