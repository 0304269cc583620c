"""``tkgqa`` command line: KG tools, embedding training, question generation, QA and ablations.

Every leaf command accepts ``--seed``, ``--config`` (a JSON object keyed by
option names), ``--threads`` and ``--log-level``. Values resolve as
flags > config file > defaults and the resolved set is logged. Failures
print one line ``error: <kind>: <message>`` to stderr and exit nonzero.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

log = logging.getLogger("tkgqa")

EXIT_USAGE = 2
EXIT_FAILURE = 1


class CLIError(Exception):
    def __init__(self, kind: str, message: str, code: int = EXIT_FAILURE):
        super().__init__(message)
        self.kind, self.code = kind, code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CLIError("usage", f"{self.prog}: {message}", EXIT_USAGE)


# (flag, dest, type, default, help); type "flag" is a store_true switch
COMMON = [
    ("--seed", "seed", int, 0, "global random seed"),
    ("--config", "config", str, None, "JSON file of option values (flags override it)"),
    ("--threads", "threads", int, None, "worker threads for numerical kernels (env TKGQA_THREADS overrides)"),
    ("--log-level", "log_level", str, "INFO", "DEBUG, INFO, WARNING or ERROR"),
]

EMBED_OPTS = [
    ("--dim", "dim", int, 32, "embedding dimension D"),
    ("--lr", "lr", float, 0.1, "Adagrad learning rate"),
    ("--batch-size", "batch_size", int, 256, "tuples per batch"),
    ("--epochs", "epochs", int, 100, "maximum epochs"),
    ("--patience", "patience", int, 10, "epochs without MRR gain before stopping"),
    ("--n3", "n3", float, 1e-3, "N3 regularisation weight"),
    ("--smoothness", "smoothness", float, 1e-4, "temporal smoothness weight"),
    ("--time-weight", "time_weight", float, 1.0, "weight of the timestamp-prediction loss"),
    ("--valid-fraction", "valid_fraction", float, 0.05, "held-out share of per-year tuples"),
    ("--init-scale", "init_scale", float, 0.1, "initial embedding scale"),
    ("--max-years-per-fact", "max_years_per_fact", int, None, "cap on years sampled per interval fact"),
]

QA_OPTS = [
    ("--d-model", "d_model", int, 128, "encoder width"),
    ("--layers", "n_layers", int, 2, "encoder layers"),
    ("--heads", "n_heads", int, 4, "attention heads"),
    ("--d-ff", "d_ff", int, 256, "feed-forward width"),
    ("--max-len", "max_len", int, 40, "maximum question length in tokens"),
    ("--lr", "lr", float, 1e-3, "Adam learning rate"),
    ("--batch-size", "batch_size", int, 64, "questions per batch"),
    ("--epochs", "epochs", int, 100, "maximum epochs"),
    ("--patience", "patience", int, 10, "epochs without dev hits@10 gain before stopping"),
    ("--targets", "targets", str, "soft", "soft (uniform over gold) or sample_one"),
    ("--entity-token-dropout", "entity_token_dropout", float, 1.0, "training-time UNK rate for entity labels"),
]

COMMANDS: dict[tuple[str, str], tuple[str, list]] = {
    ("kg", "stats"): ("print KG statistics", [
        ("--kg", "kg", str, None, "facts TSV"),
    ]),
    ("kg", "gen-toy"): ("generate the synthetic toy KG", [
        ("--out", "out", str, None, "output facts TSV (vocabulary sidecar written next to it)"),
        ("--n-entities", "n_entities", int, 200, "number of entities"),
        ("--n-relations", "n_relations", int, 5, "number of relations"),
        ("--year-min", "year_min", int, 1950, "first year"),
        ("--year-max", "year_max", int, 2020, "last year"),
        ("--n-facts", "n_facts", int, 3000, "number of facts"),
    ]),
    ("kg", "validate"): ("parse a facts TSV and check every invariant", [
        ("--kg", "kg", str, None, "facts TSV"),
    ]),
    ("embed", "train"): ("train KG embeddings", [
        ("--kg", "kg", str, None, "facts TSV"),
        ("--model", "model", str, "tcomplex", "complex, tcomplex, tntcomplex or timeplex"),
        ("--out", "out", str, None, "checkpoint path"),
        *EMBED_OPTS,
    ]),
    ("embed", "eval"): ("link-prediction metrics of a checkpoint on its held-out tuples", [
        ("--kg", "kg", str, None, "facts TSV"),
        ("--checkpoint", "checkpoint", str, None, "checkpoint path"),
        ("--on", "on", str, "heldout", "heldout or all tuples"),
    ]),
    ("qgen", "templates"): ("list the built-in question templates", [
        ("--json", "json", "flag", False, "emit JSON lines"),
    ]),
    ("qgen", "generate"): ("generate a QA dataset", [
        ("--kg", "kg", str, None, "facts TSV"),
        ("--out", "out", str, None, "output JSONL"),
        ("--count", "count", int, 20000, "target number of questions"),
        ("--train", "train", float, 0.70, "train fraction"),
        ("--dev", "dev", float, 0.15, "dev fraction"),
        ("--test", "test", float, 0.15, "test fraction"),
        ("--time-answer", "time_answer", str, "years", "years (all years) or start"),
        ("--partition-templates", "partition_templates", "flag", False, "also keep paraphrase templates fold-pure"),
    ]),
    ("qgen", "verify"): ("recompute answers and check split constraints", [
        ("--kg", "kg", str, None, "facts TSV"),
        ("--dataset", "dataset", str, None, "dataset JSONL"),
        ("--time-answer", "time_answer", str, "years", "years or start"),
        ("--report", "report", str, None, "optional JSON report path"),
    ]),
    ("qa", "train"): ("train a QA model", [
        ("--checkpoint", "checkpoint", str, None, "embedding checkpoint"),
        ("--dataset", "dataset", str, None, "dataset JSONL"),
        ("--out", "out", str, None, "model file"),
        ("--mode", "mode", str, "cronkgqa", "cronkgqa or embedkgqa"),
        *QA_OPTS,
    ]),
    ("qa", "eval"): ("stratified hits@k of a QA model", [
        ("--model", "model", str, None, "model file"),
        ("--dataset", "dataset", str, None, "dataset JSONL"),
        ("--split", "split", str, "test", "dev or test"),
        ("--gold-mode", "gold_mode", str, "any", "any or all"),
        ("--report", "report", str, None, "optional JSON report path"),
    ]),
    ("qa", "predict"): ("top-k answers for dataset questions", [
        ("--model", "model", str, None, "model file"),
        ("--dataset", "dataset", str, None, "dataset JSONL"),
        ("--split", "split", str, "test", "train, dev, test or all"),
        ("--k", "k", int, 10, "answers per question"),
        ("--out", "out", str, None, "output JSONL (default stdout)"),
    ]),
    ("ablate", "size"): ("hits@10 against training-set fraction", [
        ("--checkpoint", "checkpoint", str, None, "embedding checkpoint"),
        ("--dataset", "dataset", str, None, "dataset JSONL"),
        ("--fractions", "fractions", str, "0.1,0.3,0.5,1.0", "comma-separated increasing fractions"),
        ("--mode", "mode", str, "cronkgqa", "cronkgqa or embedkgqa"),
        ("--out", "out", str, None, "curve CSV"),
        *QA_OPTS,
    ]),
    ("ablate", "cx-vs-tcx"): ("QA with ComplEx vs TComplEx embeddings", [
        ("--cx", "cx", str, None, "ComplEx checkpoint"),
        ("--tcx", "tcx", str, None, "TComplEx checkpoint"),
        ("--dataset", "dataset", str, None, "dataset JSONL"),
        ("--out", "out", str, None, "paired report JSON"),
        *QA_OPTS,
    ]),
}

REQUIRED = {
    ("kg", "stats"): ["kg"], ("kg", "gen-toy"): ["out"], ("kg", "validate"): ["kg"],
    ("embed", "train"): ["kg", "out"], ("embed", "eval"): ["kg", "checkpoint"],
    ("qgen", "generate"): ["kg", "out"], ("qgen", "verify"): ["kg", "dataset"],
    ("qa", "train"): ["checkpoint", "dataset", "out"], ("qa", "eval"): ["model", "dataset"],
    ("qa", "predict"): ["model", "dataset"], ("ablate", "size"): ["checkpoint", "dataset", "out"],
    ("ablate", "cx-vs-tcx"): ["cx", "tcx", "dataset", "out"],
}

CHOICES = {
    "model": ("complex", "tcomplex", "tntcomplex", "timeplex"), "mode": ("cronkgqa", "embedkgqa"),
    "time_answer": ("years", "start"), "targets": ("soft", "sample_one"), "gold_mode": ("any", "all"),
    "on": ("heldout", "all"), "log_level": ("DEBUG", "INFO", "WARNING", "ERROR"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tkgqa", description="Temporal KG question answering toolkit.")
    groups = parser.add_subparsers(dest="group", metavar="{kg,embed,qgen,qa,ablate}", parser_class=_Parser)
    group_parsers = {}
    for (group, cmd), (help_text, opts) in COMMANDS.items():
        if group not in group_parsers:
            gp = groups.add_parser(group, help=f"{group} commands")
            group_parsers[group] = gp.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
        sub = group_parsers[group].add_parser(cmd, help=help_text, description=help_text)
        for flag, dest, typ, default, text in opts + COMMON:
            shown = f"{text} (default: {default})" if default is not None and typ != "flag" else text
            if typ == "flag":
                sub.add_argument(flag, dest=dest, action="store_true", default=argparse.SUPPRESS, help=text)
            else:
                sub.add_argument(flag, dest=dest, type=typ, default=argparse.SUPPRESS, help=shown,
                                 metavar=dest.upper())
    return parser


def resolve(group: str, cmd: str, given: dict) -> dict:
    """Merge defaults, the optional JSON config file and explicit flags."""
    opts = COMMANDS[group, cmd][1] + COMMON
    known = {dest: (typ, default) for _, dest, typ, default, _ in opts}
    values = {dest: default for dest, (_, default) in known.items()}
    config_path = given.get("config")
    if config_path:
        data = _read_json(config_path, "config")
        if not isinstance(data, dict):
            raise CLIError("config", f"{config_path}: top level must be a JSON object")
        unknown = sorted(set(data) - set(known) - {"config"})
        if unknown:
            raise CLIError("config", f"{config_path}: unknown keys {unknown} for {group} {cmd}")
        for key, val in data.items():
            typ = known[key][0]
            try:
                values[key] = bool(val) if typ == "flag" else (val if val is None else typ(val))
            except (TypeError, ValueError):
                raise CLIError("config", f"{config_path}: bad value {val!r} for {key}") from None
    values.update(given)
    for dest, allowed in CHOICES.items():
        if dest == "model" and group != "embed":
            continue  # a QA model file path there
        if dest in values and values[dest] not in allowed:
            raise CLIError("usage", f"--{dest.replace('_', '-')} must be one of {', '.join(allowed)}", EXIT_USAGE)
    missing = [d for d in REQUIRED.get((group, cmd), []) if values.get(d) is None]
    if missing:
        raise CLIError("usage", f"{group} {cmd}: missing required " + ", ".join("--" + m.replace("_", "-")
                                                                              for m in missing), EXIT_USAGE)
    return values


def _read_json(path, what: str):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise CLIError("missing-file", f"{what} file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise CLIError("format", f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None


def _need_file(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise CLIError("missing-file", f"file not found: {path}")
    return p


def _thread_count(flag_value):
    env = os.environ.get("TKGQA_THREADS")
    if env:
        try:
            return int(env)
        except ValueError:
            raise CLIError("config", f"TKGQA_THREADS must be an integer, got {env!r}") from None
    return flag_value if flag_value is not None else os.cpu_count() or 1


# -- commands ------------------------------------------------------------------


def _load_kg(path):
    from .kg import load_kg
    return load_kg(_need_file(path))


def cmd_kg(cmd: str, a: dict) -> int:
    from .kg import write_kg
    from .toy import generate_toy_kg
    if cmd == "stats":
        print(json.dumps(_load_kg(a["kg"]).stats(), indent=2, sort_keys=True))
    elif cmd == "gen-toy":
        kg = generate_toy_kg(a["seed"], a["n_entities"], a["n_relations"], (a["year_min"], a["year_max"]),
                             a["n_facts"])
        write_kg(kg, a["out"])
        meta = {"seed": a["seed"], "n_entities": a["n_entities"], "n_relations": a["n_relations"],
                "year_range": [a["year_min"], a["year_max"]], "n_facts": a["n_facts"], "stats": kg.stats()}
        Path(str(a["out"]) + ".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        print(f"wrote {len(kg)} facts, {kg.n_entities} entities, {kg.n_relations} relations to {a['out']}")
    else:
        kg = _load_kg(a["kg"])
        print(f"ok: {len(kg)} facts, {kg.n_entities} entities, {kg.n_relations} relations, "
              f"years {kg.y_min}-{kg.y_max}")
    return 0


def cmd_embed(cmd: str, a: dict) -> int:
    from .embeddings import (TrainConfig, build_filter, heldout_tuples, kgc_eval, load_checkpoint, random_mrr,
                             save_checkpoint, train_embeddings, with_reciprocals, expand_facts)
    kg = _load_kg(a["kg"])
    if cmd == "train":
        fields = {k: a[k] for k in ("dim", "lr", "batch_size", "epochs", "patience", "n3", "smoothness",
                                    "time_weight", "valid_fraction", "init_scale", "max_years_per_fact", "seed")}
        emb, history = train_embeddings(kg, a["model"], TrainConfig(**fields))
        save_checkpoint(emb, a["out"])
        print(json.dumps({"checkpoint": a["out"], "model": a["model"], "seed": a["seed"],
                          "best_epoch": history.best_epoch, "best_mrr": history.best_mrr,
                          "epochs_run": len(history.epochs)}, sort_keys=True))
        return 0
    emb = load_checkpoint(_need_file(a["checkpoint"]))
    fields = {k: v for k, v in emb.config.items() if k in TrainConfig.__dataclass_fields__}
    config = TrainConfig(**{**fields, "timeplex": tuple(fields.get("timeplex", (1, 1, 1)))})
    train_fwd, valid_fwd = heldout_tuples(kg, config)
    tuples = valid_fwd if a["on"] == "heldout" and len(valid_fwd) else expand_facts(kg)
    known = build_filter(with_reciprocals(expand_facts(kg), kg.n_relations))
    metrics = kgc_eval(emb, with_reciprocals(tuples, kg.n_relations), known)
    metrics["random_mrr"] = random_mrr(kg.n_entities)
    metrics["on"] = "heldout" if tuples is valid_fwd else "all"
    print(json.dumps(metrics, sort_keys=True))
    return 0


def cmd_qgen(cmd: str, a: dict) -> int:
    from .qgen import SplitSpec, builtin_templates, dataset_stats, generate_dataset, read_jsonl, write_jsonl
    from .qgen.verify import verify_dataset
    catalog = builtin_templates()
    if cmd == "templates":
        for t in catalog:
            if a["json"]:
                print(json.dumps({"seed_id": t.seed_id, "paraphrase_id": t.paraphrase_id, "text": t.text,
                                  "qtype": t.qtype, "relation": t.relation, "answer_kind": t.answer_kind}))
            else:
                print(f"{t.seed_id}#{t.paraphrase_id}\t{t.text}")
        return 0
    kg = _load_kg(a["kg"])
    if cmd == "generate":
        try:
            spec = SplitSpec(a["train"], a["dev"], a["test"], a["seed"], a["partition_templates"])
        except ValueError as exc:
            raise CLIError("usage", str(exc), EXIT_USAGE) from None
        report: dict = {}
        data = generate_dataset(kg, catalog, spec, a["count"], a["time_answer"], report=report)
        write_jsonl(data, a["out"])
        meta = {"seed": a["seed"], "time_answer": a["time_answer"], "fractions": spec.fractions,
                "partition_templates": spec.partition_templates, **report, "stats": dataset_stats(data)}
        Path(str(a["out"]) + ".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        print(json.dumps({"out": a["out"], "generated": len(data), "per_qtype": report["per_qtype"],
                          "split_sizes": report.get("split_sizes", {}), "skipped": report["skipped"]},
                         sort_keys=True))
        return 0
    data = _read_dataset(a["dataset"])
    result = verify_dataset(data, kg, catalog, a["time_answer"])
    if a.get("report"):
        Path(a["report"]).write_text(json.dumps(result.to_json(), indent=2) + "\n")
    for v in result.violations[:50]:
        print(v)
    print(result.summary())
    if not result.ok:
        raise CLIError("verify", result.summary())
    return 0


def _read_dataset(path):
    from .qgen import read_jsonl
    try:
        return read_jsonl(_need_file(path))
    except ValueError as exc:
        raise CLIError("format", str(exc)) from None


def _qa_config(a: dict):
    from .qa.model import QAConfig
    names = ("d_model", "n_layers", "n_heads", "d_ff", "max_len", "lr", "batch_size", "epochs", "patience",
             "targets", "entity_token_dropout", "seed")
    return QAConfig(**{k: a[k] for k in names})


def _folds(data):
    from .pipeline import split_dataset
    try:
        return split_dataset(data)
    except KeyError as exc:
        raise CLIError("format", f"instance with unknown split {exc}") from None


def cmd_qa(cmd: str, a: dict) -> int:
    from .embeddings import load_checkpoint
    from .evaluation import render_table, stratified_eval
    from .qa.model import load_model, save_model
    from .pipeline import run_qa
    data = _read_dataset(a["dataset"])
    if cmd == "train":
        emb = load_checkpoint(_need_file(a["checkpoint"]))
        folds = _folds(data)
        run = run_qa(emb, folds, a["mode"], _qa_config(a), eval_split="dev")
        save_model(run.model, a["out"])
        print(json.dumps({"model": a["out"], "mode": a["mode"], "seed": a["seed"],
                          "best_epoch": run.history.best_epoch, "best_dev_hits@10": run.history.best_dev},
                         sort_keys=True))
        return 0
    model = load_model(_need_file(a["model"]))
    if cmd == "eval":
        if a["split"] not in ("dev", "test"):
            raise CLIError("usage", "--split must be dev or test", EXIT_USAGE)
        subset = [i for i in data if i.split == a["split"]]
        report = stratified_eval(model, subset, gold_mode=a["gold_mode"],
                                 config={"model_file": str(a["model"]), "mode": model.mode, "split": a["split"],
                                         "seed": model.config.seed})
        if a.get("report"):
            Path(a["report"]).write_text(report.dumps())
        sys.stdout.write(render_table(report))
        return 0
    subset = data if a["split"] == "all" else [i for i in data if i.split == a["split"]]
    if not 1 <= a["k"] <= model.n_answers:
        raise CLIError("usage", f"--k must be in 1..{model.n_answers}", EXIT_USAGE)
    slots = model.predict_slots(subset, a["k"]) if subset else []
    lines = [json.dumps({"question": inst.question, "predictions": [model.slot_label(int(s)) for s in row],
                         "answers": inst.answers}) for inst, row in zip(subset, slots)]
    text = "".join(line + "\n" for line in lines)
    if a.get("out"):
        Path(a["out"]).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_ablate(cmd: str, a: dict) -> int:
    from .ablations import curve_csv, cx_vs_tcx, size_ablation
    from .embeddings import load_checkpoint
    folds = _folds(_read_dataset(a["dataset"]))
    qa_cfg = _qa_config(a)
    if cmd == "size":
        try:
            fractions = [float(x) for x in a["fractions"].split(",")]
        except ValueError:
            raise CLIError("usage", f"--fractions must be comma-separated numbers, got {a['fractions']!r}",
                           EXIT_USAGE) from None
        emb = load_checkpoint(_need_file(a["checkpoint"]))
        rows = size_ablation(fractions, emb, folds, qa_cfg, a["mode"])
        Path(a["out"]).write_text(curve_csv(rows))
        sys.stdout.write(curve_csv(rows))
        return 0
    cx = load_checkpoint(_need_file(a["cx"]))
    tcx = load_checkpoint(_need_file(a["tcx"]))
    result = cx_vs_tcx(cx, tcx, folds, qa_cfg)
    Path(a["out"]).write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    sys.stdout.write(result["table_hits@1"])
    return 0


HANDLERS = {"kg": cmd_kg, "embed": cmd_embed, "qgen": cmd_qgen, "qa": cmd_qa, "ablate": cmd_ablate}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
        if ns.group is None or getattr(ns, "command", None) is None:
            raise CLIError("usage", "tkgqa: a command group and command are required (see --help)", EXIT_USAGE)
        given = {k: v for k, v in vars(ns).items() if k not in ("group", "command")}
        args = resolve(ns.group, ns.command, given)
        logging.basicConfig(level=args["log_level"], stream=sys.stderr,
                            format="%(asctime)s %(levelname)s %(name)s: %(message)s")
        log.info("resolved config for %s %s: %s", ns.group, ns.command, json.dumps(args, sort_keys=True))
        from threadpoolctl import threadpool_limits
        with threadpool_limits(limits=_thread_count(args["threads"])):
            return HANDLERS[ns.group](ns.command, args)
    except CLIError as exc:
        print(f"error: {exc.kind}: {exc}", file=sys.stderr)
        return exc.code
    except FileNotFoundError as exc:
        print(f"error: missing-file: {exc.filename or exc}", file=sys.stderr)
        return EXIT_FAILURE
    except (ValueError, KeyError) as exc:
        msg = str(exc).replace("\n", " ")
        print(f"error: {type(exc).__name__.lower()}: {msg}", file=sys.stderr)
        return EXIT_FAILURE


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":  # pragma: no cover
    main_exit()
