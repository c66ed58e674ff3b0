"""Command line entry points: seed, eval, ask, kb, report."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import notebook, report as report_mod
from .embedding import EncoderConfig
from .execution import db_path
from .harness import (
    RUN_LOG_NAME,
    DatasetError,
    RunConfig,
    build_branches,
    evaluate,
    load_items,
    rate_dir_name,
    schema_text,
    seed,
)
from .pipeline import DIFFICULTIES, TaskItem, answer, record_human_verdict
from .providers import ChatCompletionsProvider, ProviderError, ScriptedProvider
from .voting import group_sizes, vote


class CliError(Exception):
    pass


def _parse_rates(text: str) -> tuple:
    try:
        return tuple(float(part) for part in text.split(",") if part.strip() != "")
    except ValueError as exc:
        raise CliError(f"bad --rates value {text!r}: {exc}") from exc


def _add_provider_args(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("provider")
    group.add_argument("--provider", choices=["scripted", "chat"], default="chat",
                       help="completion backend (default: chat)")
    group.add_argument("--script", help="script file for the scripted provider")
    group.add_argument("--endpoint", help="chat-completions URL")
    group.add_argument("--model", help="model identifier for the chat provider")
    group.add_argument("--api-key-env", default="SQLMEMO_API_KEY",
                       help="environment variable holding the API key")
    group.add_argument("--retries", type=int, default=3, help="chat provider attempts")
    group.add_argument("--backoff-base-s", type=float, default=1.0,
                       help="base of the exponential retry backoff, seconds")
    group.add_argument("--temperature", type=float, default=0.0)
    group.add_argument("--max-output-tokens", type=int, default=1024)


def _add_run_args(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("run")
    group.add_argument("--k", type=int, default=4, help="demonstrations per prompt")
    group.add_argument("--rates", default="1,0.5,0",
                       help="comma-separated correct rates, one branch each")
    group.add_argument("--info-mode", choices=["high", "low"], default="high")
    group.add_argument("--timeout-ms", type=int, default=30000)
    group.add_argument("--db-root", required=True, help="directory of <db_id>/<db_id>.sqlite")
    group.add_argument("--shared-kb", action="store_true",
                       help="all branches share one knowledge base (ablation)")
    group.add_argument("--embed-dim", type=int, default=384)
    group.add_argument("--embed-mode", choices=["hash", "remote"], default="hash")
    group.add_argument("--embed-endpoint", default="")
    group.add_argument("--embed-model", default="")


def _encoder_from(args) -> EncoderConfig:
    if args.embed_mode == "remote":
        return EncoderConfig(mode="remote", dimension=args.embed_dim,
                             endpoint=args.embed_endpoint, model=args.embed_model)
    return EncoderConfig(mode="hash", dimension=args.embed_dim)


def _provider_from(args):
    if args.provider == "scripted":
        if not args.script:
            raise CliError("--provider scripted requires --script")
        return ScriptedProvider.from_file(args.script)
    if not args.endpoint or not args.model:
        raise CliError("--provider chat requires --endpoint and --model")
    return ChatCompletionsProvider(endpoint=args.endpoint, model=args.model,
                                   api_key_env=args.api_key_env, retries=args.retries,
                                   backoff_base_s=args.backoff_base_s)


def _run_config(args, **overrides) -> RunConfig:
    base = dict(
        k=args.k,
        rates=_parse_rates(args.rates),
        temperature=args.temperature,
        max_output_tokens=args.max_output_tokens,
        timeout_ms=args.timeout_ms,
        info_mode=args.info_mode,
        db_root=args.db_root,
        shared_kb=args.shared_kb,
        encoder=_encoder_from(args),
    )
    base.update(overrides)
    return RunConfig(**base)


def _print_ex_table(stats: dict, out=None) -> None:
    out = out if out is not None else sys.stdout
    print(f"{'difficulty':<12} {'count':>5} {'correct':>7} {'ex':>7}", file=out)
    for diff in DIFFICULTIES:
        bucket = stats["by_difficulty"][diff]
        print(f"{diff:<12} {bucket['count']:>5} {bucket['correct']:>7} {bucket['ex']:>7.2f}",
              file=out)
    total = stats["total"]
    print(f"{'total':<12} {total['count']:>5} {total['correct']:>7} {total['ex']:>7.2f}",
          file=out)


def cmd_seed(args) -> int:
    cfg = _run_config(args, seed_n=args.n, seed_sample_seed=args.sample_seed,
                      continuous_accumulation=True)
    provider = _provider_from(args)
    items = load_items(args.train_file, db_root=args.db_root)
    branches = build_branches(cfg)
    processed = seed(items, args.n, branches, provider, cfg)
    out_dir = Path(args.out)
    for plan, kb in branches.branches:
        store = out_dir / rate_dir_name(plan.correct_rate)
        notebook.persist(kb, store)
        print(f"{store}: {len(kb.correct)} correct, {len(kb.mistakes)} mistake entries")
    print(f"seeded from {processed} of {args.n} sampled items")
    return 0


def cmd_eval(args) -> int:
    cfg = _run_config(
        args,
        continuous_accumulation=not args.no_accumulation,
        init=args.init,
        preload_dir=args.preload_dir or "",
        seed_n=args.seed_n,
        seed_sample_seed=args.sample_seed,
    )
    provider = _provider_from(args)
    items = load_items(args.questions, db_root=args.db_root)
    branches = build_branches(cfg)
    if cfg.init == "seed":
        if not args.train_file:
            raise CliError("--init seed requires --train-file")
        train = load_items(args.train_file, db_root=args.db_root)
        seed(train, cfg.seed_n, branches, provider, cfg)
    item_ids = None
    if args.item_ids:
        item_ids = [part.strip() for part in args.item_ids.split(",") if part.strip()]
    result = evaluate(items, branches, provider, cfg, args.run_dir,
                      resume=args.resume, item_ids=item_ids)
    _print_ex_table({"by_difficulty": result.by_difficulty, "total": result.total})
    print(f"run log: {Path(args.run_dir) / RUN_LOG_NAME}")
    return 0


def cmd_ask(args) -> int:
    cfg = _run_config(args, continuous_accumulation=bool(args.record),
                      init="preloaded" if args.notebooks else "empty",
                      preload_dir=args.notebooks or "")
    provider = _provider_from(args)
    branches = build_branches(cfg)
    dbf = db_path(args.db_root, args.db_id)
    schema = schema_text(dbf)
    pcfg = cfg.pipeline_config()
    # answer() only reads question/hint/db_id; the gold field is a required
    # placeholder here because no dataset backs an ad-hoc question.
    item_like = TaskItem(question_id="ask", db_id=args.db_id, question=args.question,
                         hint=args.hint or "", gold_sql=args.gold_sql or "SELECT NULL",
                         difficulty="simple")
    outcomes = []
    for plan, kb in branches.branches:
        outcomes.append(answer(item_like, kb, plan, provider, schema, pcfg))
    idx = vote(outcomes)
    chosen = outcomes[idx]
    print(f"chosen rate: {chosen.correct_rate:g}  agreement: {group_sizes(outcomes)}")
    print(chosen.final_sql or "(no SQL extracted)")
    if chosen.final_exec is not None and chosen.final_exec.status == "rows":
        preview = chosen.final_exec.rowset.sorted_rows()[:10]
        for row in preview:
            print(f"  {row}")
    elif chosen.final_exec is not None:
        print(f"  execution {chosen.final_exec.status}: {chosen.final_exec.error}")
    if args.record:
        correct = args.record == "correct"
        plan, kb = branches.branches[idx]
        delta = record_human_verdict(chosen, args.question, args.hint or "", args.db_id,
                                     correct, kb, provider, schema, pcfg,
                                     gold_sql=args.gold_sql or "")
        print(f"recorded: {delta.kind}")
        if args.notebooks:
            notebook.persist(kb, Path(args.notebooks) / rate_dir_name(plan.correct_rate))
    return 0


def cmd_kb(args) -> int:
    store = Path(args.directory)
    if args.action == "verify":
        kb = notebook.load(store)
        print(f"ok: {len(kb.correct)} correct, {len(kb.mistakes)} mistake entries, "
              f"encoder {kb.encoder.mode}/{kb.encoder.dimension}")
        return 0
    kb = notebook.load(store)
    if args.action == "stats":
        seed_c = sum(1 for e in kb.correct if e.origin == "seed")
        seed_m = sum(1 for e in kb.mistakes if e.origin == "seed")
        print(f"correct:  {len(kb.correct)} entries ({seed_c} seeded)")
        print(f"mistakes: {len(kb.mistakes)} entries ({seed_m} seeded)")
        dbs = sorted({e.db_id for e in kb.correct + kb.mistakes if e.db_id})
        print(f"databases: {', '.join(dbs) if dbs else '(none recorded)'}")
        return 0
    entries = kb.correct if args.notebook == "correct" else kb.mistakes
    for entry in entries[: args.limit or len(entries)]:
        record = entry.to_record()
        record.pop("embedding")
        print(json.dumps(record, ensure_ascii=False, sort_keys=True))
    return 0


def cmd_report(args) -> int:
    if not args.run_dir and not args.log:
        raise CliError("report needs --run-dir or --log")
    log_path = Path(args.run_dir) / RUN_LOG_NAME if args.run_dir else Path(args.log)
    if not log_path.is_file():
        raise CliError(f"no run log at {log_path}")
    out_dir = Path(args.out) if args.out else log_path.parent
    result = report_mod.render(log_path, out_dir, figures=not args.no_figures)
    _print_ex_table(result["stats"])
    print(f"table: {result['table']}")
    for fig in result["figures"]:
        print(f"figure: {fig}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sqlmemo",
        description="Continual-learning text-to-SQL with dual experience notebooks",
    )
    parser.add_argument("--config", help="JSON file of flag defaults (dest names as keys)")
    sub = parser.add_subparsers(dest="command", required=True)

    p_seed = sub.add_parser("seed", help="populate notebooks from training pairs")
    _add_run_args(p_seed)
    _add_provider_args(p_seed)
    p_seed.add_argument("--train-file", required=True)
    p_seed.add_argument("-n", type=int, required=True, help="items to sample")
    p_seed.add_argument("--sample-seed", type=int, default=0)
    p_seed.add_argument("--out", required=True, help="notebook snapshot directory")
    p_seed.set_defaults(func=cmd_seed)

    p_eval = sub.add_parser("eval", help="run a question file and report EX")
    _add_run_args(p_eval)
    _add_provider_args(p_eval)
    p_eval.add_argument("--questions", required=True)
    p_eval.add_argument("--run-dir", required=True)
    p_eval.add_argument("--resume", action="store_true",
                        help="continue an interrupted run from its log")
    p_eval.add_argument("--no-accumulation", action="store_true",
                        help="freeze the notebooks during evaluation")
    p_eval.add_argument("--init", choices=["empty", "seed", "preloaded"], default="empty")
    p_eval.add_argument("--preload-dir", help="notebook snapshot for --init preloaded")
    p_eval.add_argument("--train-file", help="training pairs for --init seed")
    p_eval.add_argument("--seed-n", type=int, default=0)
    p_eval.add_argument("--sample-seed", type=int, default=0)
    p_eval.add_argument("--item-ids", help="comma-separated question ids (subset run)")
    p_eval.set_defaults(func=cmd_eval)

    p_ask = sub.add_parser("ask", help="answer one ad-hoc question")
    _add_run_args(p_ask)
    _add_provider_args(p_ask)
    p_ask.add_argument("--question", required=True)
    p_ask.add_argument("--hint", default="")
    p_ask.add_argument("--db-id", required=True)
    p_ask.add_argument("--notebooks", help="notebook snapshot directory to retrieve from")
    p_ask.add_argument("--record", choices=["correct", "wrong"],
                       help="append this exchange to the chosen branch's notebook")
    p_ask.add_argument("--gold-sql", help="corrected SQL, required with --record wrong")
    p_ask.set_defaults(func=cmd_ask)

    p_kb = sub.add_parser("kb", help="inspect a notebook directory")
    p_kb.add_argument("action", choices=["stats", "dump", "verify"])
    p_kb.add_argument("directory")
    p_kb.add_argument("--notebook", choices=["correct", "mistakes"], default="correct",
                      help="which notebook to dump")
    p_kb.add_argument("--limit", type=int, default=0, help="dump at most this many entries")
    p_kb.set_defaults(func=cmd_kb)

    p_rep = sub.add_parser("report", help="re-render a run log into table and figures")
    p_rep.add_argument("--run-dir", help="directory containing the run log")
    p_rep.add_argument("--log", help="explicit run log path")
    p_rep.add_argument("--out", help="output directory (default: next to the log)")
    p_rep.add_argument("--no-figures", action="store_true")
    p_rep.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    # A config file supplies defaults only; explicit flags always win because
    # they are parsed after set_defaults.
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config:
        try:
            defaults = json.loads(Path(known.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            print(f"error: cannot read config {known.config}: {exc}", file=sys.stderr)
            return 2
        if not isinstance(defaults, dict):
            print(f"error: config {known.config} must be a JSON object", file=sys.stderr)
            return 2
        parser.set_defaults(**defaults)
        for sub_action in parser._subparsers._group_actions:
            for sub_parser in sub_action.choices.values():
                applicable = {k: v for k, v in defaults.items()
                              if any(a.dest == k for a in sub_parser._actions)}
                sub_parser.set_defaults(**applicable)
                # A flag satisfied by the config file is no longer mandatory
                # on the command line.
                for action in sub_parser._actions:
                    if action.dest in applicable:
                        action.required = False
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, DatasetError, ProviderError, FileNotFoundError,
            notebook.NotebookFormatError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
