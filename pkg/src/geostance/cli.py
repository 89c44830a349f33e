"""``geostance`` command line: validate, train, eval, suite, predict, synth, accept.

Exit codes: 0 success, 1 runtime failure, 2 config/validation failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .config import ConfigError, RunConfig, default_config_text, load_config

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2

log = logging.getLogger("geostance")


class UsageError(Exception):
    """Raised for invalid inputs that should exit with code 2."""


@dataclass
class Finding:
    file: str
    line: Optional[int]
    rule: str
    message: str

    def __str__(self) -> str:
        loc = f"{self.file}:{self.line}" if self.line else self.file
        return f"{loc}: {self.rule}: {self.message}"


def validate_run(cfg: RunConfig) -> list[Finding]:
    """Cross-check every file a run depends on; returns all findings instead of stopping at the first."""
    from .data import DataError, iter_corpus, load_descriptions, load_geo_graph
    from .evaluation import corpus_paths

    src = str(cfg.source or "<config>")
    findings: list[Finding] = []
    if cfg.data_dir is None:
        return [Finding(src, None, "CONFIG_MISSING_KEY", "data.dir is not set")]
    if not cfg.data_dir.is_dir():
        return [Finding(src, None, "DATA_DIR_MISSING", f"data directory {cfg.data_dir} does not exist")]
    paths = corpus_paths(cfg.data_dir)

    descriptions: dict = {}
    if not paths["descriptions"].exists():
        findings.append(Finding(str(paths["descriptions"]), None, "FILE_MISSING", "descriptions file not found"))
    else:
        try:
            descriptions = load_descriptions(paths["descriptions"])
        except DataError as err:
            findings.append(Finding(str(paths["descriptions"]), err.line, err.rule, err.detail))

    regions = None
    if not paths["geo"].exists():
        findings.append(Finding(str(paths["geo"]), None, "FILE_MISSING", "geo graph file not found"))
    else:
        try:
            regions = set(load_geo_graph(paths["geo"]).regions)
        except DataError as err:
            findings.append(Finding(str(paths["geo"]), err.line, err.rule, err.detail))

    corpus_topics = set()
    for p in sorted(cfg.data_dir.glob("*.labeled.tsv")) + sorted(cfg.data_dir.glob("*.unlabeled.tsv")):
        labeled = p.name.endswith(".labeled.tsv")
        topic = p.name[: -len(".labeled.tsv" if labeled else ".unlabeled.tsv")]
        corpus_topics.add(topic)
        for lineno, rec in iter_corpus(p, labeled, topics=[topic], regions=regions):
            if isinstance(rec, DataError):
                findings.append(Finding(str(p), lineno, rec.rule, rec.detail))

    wanted = set(corpus_topics)
    task = cfg.task
    if task is not None:
        wanted |= set(task.topics)
        for t in task.topics:
            if not paths["labeled"](t).exists() and not paths["unlabeled"](t).exists():
                findings.append(Finding(src, None, "TOPIC_MISSING", f"no corpus files for task topic {t!r}"))
        if not paths["labeled"](task.destination_topic).exists():
            findings.append(Finding(src, None, "TOPIC_MISSING",
                                    f"no labeled file for destination {task.destination_topic!r}"))
    if descriptions or paths["descriptions"].exists():
        for t in sorted(wanted - set(descriptions)):
            findings.append(Finding(str(paths["descriptions"]), None, "DESC_MISSING",
                                    f"no policy description for topic {t!r}"))
    return findings


# --------------------------------------------------------------------------- commands

def _load(args) -> RunConfig:
    return load_config(args.config, getattr(args, "set", None), getattr(args, "seed", None))


def _require_valid(cfg: RunConfig, need_task: bool = True) -> None:
    findings = validate_run(cfg)
    if need_task and cfg.task is None:
        findings.append(Finding(str(cfg.source), None, "CONFIG_MISSING_KEY", "task.mode is not set"))
    if cfg.output_dir is None:
        findings.append(Finding(str(cfg.source), None, "CONFIG_MISSING_KEY", "output.dir is not set"))
    if findings:
        for f in findings:
            print(f, file=sys.stderr)
        raise UsageError(f"{len(findings)} validation finding(s)")


def _prepare_output(cfg: RunConfig) -> Path:
    out = cfg.output_dir
    for sub in ("checkpoints", "logs", "reports"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    (out / "config.snapshot").write_text(cfg.snapshot(), encoding="utf-8")
    return out


def cmd_validate(args) -> int:
    cfg = _load(args)
    findings = validate_run(cfg)
    for f in findings:
        print(f)
    if findings:
        print(f"{len(findings)} finding(s)", file=sys.stderr)
        return EXIT_CONFIG
    print("ok: 0 findings")
    return EXIT_OK


def cmd_train(args) -> int:
    from .data import build_splits
    from .evaluation import load_corpora
    from .model import Checkpoint
    from .training import fit

    cfg = _load(args)
    _require_valid(cfg)
    corpora = load_corpora(cfg.data_dir)
    out = _prepare_output(cfg)
    task = cfg.task
    for seed in task.seed_list:
        splits = build_splits(task, corpora.labeled, corpora.unlabeled, cfg.train.train_fraction, seed)
        log_path = out / "logs" / f"train_seed{seed}.log"
        with open(log_path, "w", encoding="utf-8", newline="\n") as fh:
            def on_epoch(entry, fh=fh):
                fh.write(entry.line() + "\n")
                fh.flush()
            result = fit(splits, cfg.train, seed, corpora.descriptions, corpora.graph, on_epoch=on_epoch)
        ckpt = Checkpoint.from_model(result.model, result.featurizer.graph, task.topics,
                                     result.featurizer.tokenizer.state(), corpora.descriptions_text(),
                                     seed=seed, task=_task_meta(task), best_epoch=result.best_epoch,
                                     best_dev=result.best_dev, use_description=cfg.train.use_description,
                                     max_desc_tokens=cfg.train.max_desc_tokens,
                                     max_text_tokens=cfg.train.max_text_tokens,
                                     favg_classes=cfg.train.favg_classes)
        ckpt.save(out / "checkpoints" / f"seed{seed}.pt")
        print(f"{task.name}\tseed {seed}\tbest epoch {result.best_epoch}\tdev F_avg {result.best_dev:.4f}")
    return EXIT_OK


def _task_meta(task) -> dict:
    return {"mode": task.mode, "sources": list(task.source_topics), "destination": task.destination_topic}


def _featurizer_for(ckpt):
    from .encoder import tokenizer_from_state
    from .training import Featurizer

    meta = ckpt.meta
    return Featurizer(tokenizer_from_state(ckpt.tokenizer), ckpt.descriptions, ckpt.topics, ckpt.graph,
                      meta.get("max_desc_tokens", 50), meta.get("max_text_tokens", 100),
                      meta.get("use_description", True))


def _load_checkpoint(path):
    from .model import Checkpoint, CheckpointError

    if not Path(path).exists():
        raise UsageError(f"checkpoint {path} not found")
    try:
        ckpt = Checkpoint.load(path)
        return ckpt, ckpt.build_model()
    except CheckpointError as exc:
        raise UsageError(str(exc)) from None


def cmd_eval(args) -> int:
    from .data import build_splits
    from .evaluation import TaskResult, format_table, load_corpora, report_lines
    from .metrics import aggregate, score
    from .training import predict_labels

    cfg = _load(args)
    ckpt, model = _load_checkpoint(args.checkpoint)
    _require_valid(cfg)
    task = cfg.task
    if list(ckpt.topics) != list(task.topics):
        raise UsageError(f"checkpoint topics {ckpt.topics} do not match config task topics {list(task.topics)}")
    seed = int(ckpt.meta.get("seed", task.seed_list[0]))
    corpora = load_corpora(cfg.data_dir)
    splits = build_splits(task, corpora.labeled, corpora.unlabeled, cfg.train.train_fraction, seed)
    examples = splits.dev_labeled if args.split == "dev" else splits.test_labeled
    preds = predict_labels(model, _featurizer_for(ckpt), examples)
    rep = score(preds, [ex.stance for ex in examples], int(ckpt.meta.get("favg_classes", 2)))
    result = TaskResult(task, aggregate([rep], [seed]))
    out = cfg.output_dir / "reports"
    out.mkdir(parents=True, exist_ok=True)
    stem = f"eval_{task.name.replace('->', '_to_')}_{args.split}_seed{seed}"
    (out / f"{stem}.tsv").write_text("\n".join(report_lines([result])) + "\n", encoding="utf-8")
    (out / f"{stem}.txt").write_text(format_table([result]) + "\n", encoding="utf-8")
    print(format_table([result]))
    print(f"F_avg ({args.split}) = {rep.f_avg!r}")
    return EXIT_OK


def cmd_suite(args) -> int:
    from .evaluation import format_table, load_corpora, report_lines, run_suite

    cfg = _load(args)
    _require_valid(cfg, need_task=False)
    corpora = load_corpora(cfg.data_dir)
    modes = ["cross_target", "zero_shot"] if args.mode == "both" else [args.mode]
    out = _prepare_output(cfg)
    results = []

    def on_fit(spec, seed, res):
        name = spec.name.replace("->", "_to_")
        with open(out / "logs" / f"suite_{spec.mode}_{name}_seed{seed}.log", "w", encoding="utf-8",
                  newline="\n") as fh:
            for entry in res.history:
                fh.write(entry.line() + "\n")

    for mode in modes:
        results.extend(run_suite(mode, corpora, cfg.train, on_fit=on_fit))
    (out / "reports" / "suite.tsv").write_text("\n".join(report_lines(results)) + "\n", encoding="utf-8")
    table = format_table(results)
    (out / "reports" / "suite.txt").write_text(table + "\n", encoding="utf-8")
    print(table)
    return EXIT_OK


def cmd_predict(args) -> int:
    from .data import STANCES, UNKNOWN_REGION, DataError, UnlabeledExample, iter_corpus
    from .training import predict_proba

    ckpt, model = _load_checkpoint(args.checkpoint)
    if not Path(args.input).exists():
        raise UsageError(f"input file {args.input} not found")
    featurizer = _featurizer_for(ckpt)
    examples = []
    for lineno, rec in iter_corpus(args.input, labeled=False):
        if isinstance(rec, DataError):
            raise UsageError(str(rec))
        if featurizer.use_description and rec.topic_id not in featurizer.descriptions:
            raise UsageError(f"{args.input}:{lineno}: no policy description for topic {rec.topic_id!r}")
        geo = rec.geo_id if rec.geo_id in featurizer.graph.regions else UNKNOWN_REGION
        examples.append(UnlabeledExample(rec.topic_id, rec.text, geo))
    probs = predict_proba(model, featurizer, examples)
    lines = []
    for row in probs.tolist():
        label = STANCES[max(range(3), key=lambda i: row[i])]
        lines.append("\t".join([label] + [f"{p:.8f}" for p in row]))
    text = "".join(line + "\n" for line in lines)
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_synth(args) -> int:
    from .synth import SynthConfig, synth_generate

    cfg = SynthConfig(n_topics=args.topics, n_per_topic=args.per_topic, n_unlabeled_per_topic=args.unlabeled,
                      n_regions=args.regions, spurious_strength=args.spurious, seed=args.seed)
    try:
        corpus = synth_generate(cfg)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = corpus.write(args.out)
    cfg_path = out / "run.cfg"
    if not cfg_path.exists():
        cfg_path.write_text(default_config_text(".", "run", cfg.topics()), encoding="utf-8")
    print(f"wrote {cfg.n_topics} topics to {out} (config: {cfg_path})")
    return EXIT_OK


def cmd_accept(args) -> int:
    from .acceptance import run_acceptance

    results = run_acceptance(quick=args.quick, include_param_count=not args.skip_param_count)
    return EXIT_OK if all(r.passed for r in results) else EXIT_RUNTIME


# --------------------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="geostance", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("config", help="run config file (section.key = value lines)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
        p.add_argument("--seed", type=int, help="run a single seed instead of train.seeds")
        return p

    with_config(sub.add_parser("validate", help="check config and data files")).set_defaults(func=cmd_validate)
    with_config(sub.add_parser("train", help="fit one checkpoint per seed")).set_defaults(func=cmd_train)

    p = with_config(sub.add_parser("eval", help="score a checkpoint on its task's test (or dev) split"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=["test", "dev"], default="test")
    p.set_defaults(func=cmd_eval)

    p = with_config(sub.add_parser("suite", help="run every cross-target and/or zero-shot task"))
    p.add_argument("--mode", choices=["cross_target", "zero_shot", "both"], default="both")
    p.set_defaults(func=cmd_suite)

    p = sub.add_parser("predict", help="label an unlabeled record file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("synth", help="write a synthetic corpus directory")
    p.add_argument("--out", required=True)
    p.add_argument("--topics", type=int, default=3)
    p.add_argument("--per-topic", type=int, default=200)
    p.add_argument("--unlabeled", type=int, default=200)
    p.add_argument("--regions", type=int, default=8)
    p.add_argument("--spurious", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("accept", help="run the desk-scale acceptance suite")
    p.add_argument("--quick", action="store_true", help="two seeds instead of five for the transfer experiment")
    p.add_argument("--skip-param-count", action="store_true")
    p.set_defaults(func=cmd_accept)
    return parser


def main(argv: Optional[list] = None) -> int:
    from .data import DataError
    from .model import CheckpointError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, DataError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
