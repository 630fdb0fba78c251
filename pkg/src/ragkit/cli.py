"""Subcommand CLI orchestrating the full pipeline:
index -> weaklabel -> train -> encode -> search -> qa -> eval, plus a
fully offline `e2e` that chains every stage with the mock scorer and
generator on the bundled synthetic dataset.

Workdir artifacts have fixed names so stages compose without flag
plumbing: index.bin, run-bm25-candidates.trec, weaklabels.jsonl,
checkpoint-{model}.bin, log-{model}.jsonl, embeddings.bin,
tokenstore.bin, run-{system}.trec, generations-{selector}.jsonl,
report.tsv.

Exit codes: 0 success, 1 usage error, 2 missing upstream artifact,
3 transport failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import bm25
from .config import ConfigError, PipelineConfig, parse_config, split_sizes
from .data import (
    DataFormatError,
    load_corpus,
    load_qa_pairs,
    load_qrels,
    read_run_file,
    save_corpus,
    save_qa_pairs,
    save_qrels,
    split_qa,
    write_run_file,
)
from .encoder import TrainingConfig
from .lateinteraction import (
    TokenEmbeddingStore,
    build_token_store,
    load_late_interaction,
    save_late_interaction,
    search_maxsim,
    train_late_interaction,
)
from .llm import (
    AnswerLikelihoodScorer,
    CompletionClient,
    ContainmentScorer,
    EndpointConfig,
    MockLLMClient,
    PromptTemplate,
    TransportError,
)
from .metrics import evaluate_qa, mrr_at_k, paired_t_test, recall_at_k
from .qa import (
    BM25Handle,
    LateInteractionHandle,
    QAConfig,
    TwoTowerHandle,
    run_qa_batch,
)
from .synthetic import make_synthetic_dataset
from .twotower import (
    EmbeddingMatrix,
    encode_corpus,
    load_two_tower,
    save_two_tower,
    search_text,
    train_two_tower,
)
from .weaklabel import (
    WeakLabelSet,
    build_weak_labels,
    evaluate_weak_labels,
    extract_triplets,
    extract_two_tower_pairs,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_MISSING_ARTIFACT = 2
EXIT_TRANSPORT = 3

COMMANDS = ("synth", "index", "weaklabel", "train", "encode", "search", "qa", "eval", "e2e")


class MissingArtifactError(RuntimeError):
    def __init__(self, path: Path, hint: str):
        super().__init__(f"missing artifact {path}; run `ragkit {hint}` first")


def _require(path: Path, hint: str) -> Path:
    if not path.exists():
        raise MissingArtifactError(path, hint)
    return path


def _template(config: PipelineConfig) -> PromptTemplate:
    t = config["template"]
    kwargs = {"passage_label": t["passage_label"], "score_ordering": t["score_ordering"]}
    if t["score_instruction"] is not None:
        kwargs["score_instruction"] = t["score_instruction"]
    if t["qa_instruction"] is not None:
        kwargs["qa_instruction"] = t["qa_instruction"]
    return PromptTemplate(**kwargs)


def _scorer(config: PipelineConfig):
    s = config["scorer"]
    if s["mode"] == "mock":
        return ContainmentScorer()
    if s["mode"] == "http":
        endpoint = EndpointConfig(
            base_url=s["base_url"],
            model=s["model"],
            api_key_env=s["api_key_env"],
            timeout_s=s["timeout_s"],
            max_in_flight=s["max_in_flight"],
            retries=s["retries"],
            cache_path=s["cache_path"],
        )
        return AnswerLikelihoodScorer(CompletionClient(endpoint), _template(config))
    raise ConfigError(f"scorer.mode must be 'mock' or 'http', got {s['mode']!r}")


def _generation_client(config: PipelineConfig):
    s = config["scorer"]
    if s["mode"] == "mock":
        return MockLLMClient(_template(config))
    endpoint = EndpointConfig(
        base_url=s["base_url"],
        model=s["model"],
        api_key_env=s["api_key_env"],
        timeout_s=s["timeout_s"],
        max_in_flight=s["max_in_flight"],
        retries=s["retries"],
    )
    return CompletionClient(endpoint)


def _load_inputs(config: PipelineConfig):
    corpus = load_corpus(_require(config.path("corpus"), "synth"))
    qa_pairs = load_qa_pairs(_require(config.path("qa"), "synth"))
    qrels = load_qrels(_require(config.path("qrels"), "synth"))
    split = split_qa(qa_pairs, config.seed, split_sizes(config, len(qa_pairs)))
    return corpus, qa_pairs, qrels, split


def _training_config(config: PipelineConfig, section: str) -> TrainingConfig:
    c = dict(config[section])
    c.pop("hard_negatives", None)
    return TrainingConfig(
        seed=config.seed,
        hard_negatives=config[section].get("hard_negatives", 4)
        if section == "late_interaction"
        else config["weaklabel"]["hard_negatives"],
        **c,
    )


def _update_report(workdir: Path, rows: list[dict]) -> None:
    """Merge rows into report.tsv keyed by (section, system, metric)."""
    report = workdir / "report.tsv"
    table: dict[tuple[str, str, str], dict] = {}
    if report.exists():
        with report.open(encoding="utf-8") as fh:
            header = fh.readline()
            for line in fh:
                section, system, metric, value, note = line.rstrip("\n").split("\t")
                table[(section, system, metric)] = {
                    "section": section, "system": system, "metric": metric,
                    "value": float(value), "note": note,
                }
    for row in rows:
        table[(row["section"], row["system"], row["metric"])] = {**{"note": ""}, **row}
    with report.open("w", encoding="utf-8") as fh:
        fh.write("section\tsystem\tmetric\tvalue\tnote\n")
        for key in sorted(table):
            r = table[key]
            fh.write(f"{r['section']}\t{r['system']}\t{r['metric']}\t{r['value']:.6f}\t{r['note']}\n")


def read_report(path) -> dict[tuple[str, str, str], float]:
    out = {}
    with Path(path).open(encoding="utf-8") as fh:
        fh.readline()
        for line in fh:
            section, system, metric, value, _ = line.rstrip("\n").split("\t")
            out[(section, system, metric)] = float(value)
    return out


def cmd_synth(config: PipelineConfig) -> int:
    workdir = config.workdir()
    workdir.mkdir(parents=True, exist_ok=True)
    n_q = config["synthetic"]["questions"]
    n_p = config["synthetic"]["passages"]
    ds = make_synthetic_dataset(n_questions=n_q, n_passages=n_p, seed=config.seed)
    corpus_path = config["paths"]["corpus"] or workdir / "corpus.jsonl"
    qa_path = config["paths"]["qa"] or workdir / "qa.jsonl"
    qrels_path = config["paths"]["qrels"] or workdir / "qrels.tsv"
    save_corpus(ds.corpus, corpus_path)
    save_qa_pairs(ds.qa_pairs, qa_path)
    save_qrels(ds.qrels, qrels_path)
    config["paths"]["corpus"] = str(corpus_path)
    config["paths"]["qa"] = str(qa_path)
    config["paths"]["qrels"] = str(qrels_path)
    print(f"synthetic dataset: {n_q} questions, {n_p} passages -> {workdir}")
    return EXIT_OK


def cmd_index_build(config: PipelineConfig) -> int:
    workdir = config.workdir()
    workdir.mkdir(parents=True, exist_ok=True)
    corpus = load_corpus(_require(config.path("corpus"), "synth"))
    b = config["bm25"]
    index = bm25.build_index(corpus, bm25.BM25Params(k1=b["k1"], b=b["b"], epsilon=b["epsilon"]))
    index.save(workdir / "index.bin")
    print(f"indexed {index.N} passages -> {workdir / 'index.bin'}")
    return EXIT_OK


def cmd_index_search(config: PipelineConfig, query: str | None, split_name: str, k: int | None) -> int:
    workdir = config.workdir()
    index = bm25.BM25Index.load(_require(workdir / "index.bin", "index build"))
    k = k or config["bm25"]["top_k"]
    if query is not None:
        ranked = index.retrieve_topk(query, k)
        for rank, (pid, score) in enumerate(ranked.entries, start=1):
            print(f"{rank}\t{pid}\t{score:.6f}")
        return EXIT_OK
    _, _, _, split = _load_inputs(config)
    subset = {"train": split.train, "val": split.validation, "test": split.test}[split_name]
    run = [index.retrieve_topk_for(qa.qid, qa.question, k) for qa in subset]
    out = workdir / ("run-bm25-candidates.trec" if split_name == "train" else "run-bm25.trec")
    write_run_file(run, out, tag="bm25")
    print(f"BM25 top-{k} for {len(run)} {split_name} questions -> {out}")
    return EXIT_OK


def cmd_weaklabel_run(config: PipelineConfig) -> int:
    workdir = config.workdir()
    corpus, _, _, split = _load_inputs(config)
    candidates_path = _require(workdir / "run-bm25-candidates.trec", "index search --split train")
    runs = {r.qid: r for r in read_run_file(candidates_path)}
    scorer = _scorer(config)
    wset = build_weak_labels(
        scorer,
        corpus,
        split.train,
        runs,
        m=config["weaklabel"]["hard_negatives"],
        multi_answer=config["weaklabel"]["multi_answer"],
    )
    wset.save(workdir / "weaklabels.jsonl")
    print(f"weak labels for {len(wset.records)} questions ({scorer.name}) -> weaklabels.jsonl")
    return EXIT_OK


def cmd_weaklabel_eval(config: PipelineConfig) -> int:
    workdir = config.workdir()
    _, _, qrels, _ = _load_inputs(config)
    wset = WeakLabelSet.load(_require(workdir / "weaklabels.jsonl", "weaklabel run"))
    runs = {r.qid: r for r in read_run_file(
        _require(workdir / "run-bm25-candidates.trec", "index search --split train"))}
    table = evaluate_weak_labels(wset, runs, qrels, ks=[1, 5, 10, 50, 100])
    rows = []
    for entry in table:
        print(f"R@{entry['k']:<4d} first-stage {entry['first_stage']:.4f}   reranked {entry['reranked']:.4f}")
        rows.append({"section": "weaklabel", "system": "bm25", "metric": f"recall@{entry['k']}",
                     "value": entry["first_stage"]})
        rows.append({"section": "weaklabel", "system": "reranked", "metric": f"recall@{entry['k']}",
                     "value": entry["reranked"]})
    _update_report(workdir, rows)
    return EXIT_OK


def cmd_train(config: PipelineConfig, model_name: str) -> int:
    workdir = config.workdir()
    corpus, qa_pairs, qrels, split = _load_inputs(config)
    wset = WeakLabelSet.load(_require(workdir / "weaklabels.jsonl", "weaklabel run"))
    qa_by_qid = {qa.qid: qa for qa in qa_pairs}
    val_qrels = {qa.qid: qrels[qa.qid] for qa in split.validation if qa.qid in qrels}
    validation = ([qa for qa in split.validation if qa.qid in val_qrels], val_qrels)
    if model_name == "two-tower":
        tc = _training_config(config, "two_tower")
        pairs = extract_two_tower_pairs(wset, qa_by_qid, corpus)
        model, log = train_two_tower(tc, pairs, validation, corpus)
        save_two_tower(workdir / "checkpoint-two-tower.bin", model, tc)
        log_path = workdir / "log-two-tower.jsonl"
    else:
        tc = _training_config(config, "late_interaction")
        triplets = extract_triplets(wset, qa_by_qid, corpus, m=tc.hard_negatives)
        params, log = train_late_interaction(tc, triplets, validation, corpus)
        save_late_interaction(workdir / "checkpoint-late-interaction.bin", params, tc)
        log_path = workdir / "log-late-interaction.jsonl"
    with log_path.open("w", encoding="utf-8") as fh:
        for entry in log:
            fh.write(json.dumps(entry, ensure_ascii=False, sort_keys=True) + "\n")
    best = max((e["recall_at_5"] for e in log), default=0.0)
    print(f"trained {model_name}: {len(log)} epochs, best val R@5 {best:.4f} -> checkpoint-{model_name}.bin")
    return EXIT_OK


def cmd_encode(config: PipelineConfig, model_name: str) -> int:
    workdir = config.workdir()
    corpus = load_corpus(_require(config.path("corpus"), "synth"))
    if model_name == "two-tower":
        ckpt = _require(workdir / "checkpoint-two-tower.bin", "train two-tower")
        model, tc = load_two_tower(ckpt)
        matrix = encode_corpus(model.passage_tower, corpus, tc.max_passage_tokens)
        matrix.save(workdir / "embeddings.bin")
        print(f"encoded {len(matrix.pids)} passages -> embeddings.bin")
    else:
        ckpt = _require(workdir / "checkpoint-late-interaction.bin", "train late-interaction")
        params, tc = load_late_interaction(ckpt)
        store = build_token_store(params, corpus, tc.max_passage_tokens)
        store.save(workdir / "tokenstore.bin")
        print(f"token store for {len(store.pids)} passages -> tokenstore.bin")
    return EXIT_OK


def cmd_search(config: PipelineConfig, model_name: str, k: int | None) -> int:
    workdir = config.workdir()
    _, _, _, split = _load_inputs(config)
    k = k or config["bm25"]["top_k"]
    if model_name == "two-tower":
        model, tc = load_two_tower(_require(workdir / "checkpoint-two-tower.bin", "train two-tower"))
        matrix = EmbeddingMatrix.load(_require(workdir / "embeddings.bin", "encode --model two-tower"))
        run = [
            search_text(model.question_tower, matrix, qa.qid, qa.question, k, tc.max_query_tokens)
            for qa in split.test
        ]
        out = workdir / "run-two-tower.trec"
        write_run_file(run, out, tag="two-tower")
    else:
        params, tc = load_late_interaction(
            _require(workdir / "checkpoint-late-interaction.bin", "train late-interaction"))
        store = TokenEmbeddingStore.load(
            _require(workdir / "tokenstore.bin", "encode --model late-interaction"))
        run = [
            search_maxsim(params, store, qa.qid, qa.question, k, tc.max_query_tokens)
            for qa in split.test
        ]
        out = workdir / "run-late-interaction.trec"
        write_run_file(run, out, tag="late-interaction")
    print(f"searched {len(run)} test questions -> {out}")
    return EXIT_OK


def _retriever_handle(config: PipelineConfig, selector: str):
    workdir = config.workdir()
    if selector in ("none", "gold"):
        return None
    if selector == "bm25":
        return BM25Handle(bm25.BM25Index.load(_require(workdir / "index.bin", "index build")))
    if selector == "two-tower":
        model, tc = load_two_tower(_require(workdir / "checkpoint-two-tower.bin", "train two-tower"))
        matrix = EmbeddingMatrix.load(_require(workdir / "embeddings.bin", "encode --model two-tower"))
        return TwoTowerHandle(model.question_tower, matrix, tc.max_query_tokens)
    model, tc = load_late_interaction(
        _require(workdir / "checkpoint-late-interaction.bin", "train late-interaction"))
    store = TokenEmbeddingStore.load(
        _require(workdir / "tokenstore.bin", "encode --model late-interaction"))
    return LateInteractionHandle(model, store, tc.max_query_tokens)


def cmd_qa(config: PipelineConfig, selector: str | None) -> int:
    workdir = config.workdir()
    corpus, _, qrels, split = _load_inputs(config)
    selector = selector or config["qa"]["retriever"]
    qa_config = QAConfig(
        retriever=selector, top_n=config["qa"]["top_n"], max_tokens=config["qa"]["max_tokens"]
    )
    retriever = _retriever_handle(config, selector)
    client = _generation_client(config)
    out_path = workdir / f"generations-{selector}.jsonl"
    answers, summary = run_qa_batch(
        qa_config, split.test, retriever, client, corpus, _template(config), qrels, out_path
    )
    print(
        f"qa[{selector}]: {summary['generated']} generated, {summary['resumed']} resumed, "
        f"mean latency {summary['mean_latency_ms']:.1f} ms -> {out_path.name}"
    )
    return EXIT_OK


def _load_generations(path: Path) -> dict[str, str]:
    out = {}
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            out[rec["qid"]] = rec["answer"]
    return out


def cmd_eval_retrieval(config: PipelineConfig, systems: list[str]) -> int:
    workdir = config.workdir()
    _, _, qrels, _ = _load_inputs(config)
    rows = []
    for system in systems:
        run_path = workdir / f"run-{system}.trec"
        hint = {"bm25": "index search --split test", "two-tower": "search --model two-tower",
                "late-interaction": "search --model late-interaction"}.get(system, "search")
        run = read_run_file(_require(run_path, hint))
        for k in (1, 5, 50):
            rows.append({"section": "retrieval", "system": system, "metric": f"recall@{k}",
                         "value": recall_at_k(run, qrels, k)})
        rows.append({"section": "retrieval", "system": system, "metric": "mrr@5",
                     "value": mrr_at_k(run, qrels, 5)})
        printable = "  ".join(f"{r['metric']}={r['value']:.4f}" for r in rows if r["system"] == system)
        print(f"{system}: {printable}")
    _update_report(workdir, rows)
    return EXIT_OK


def cmd_eval_qa(config: PipelineConfig, selectors: list[str], versus: str | None) -> int:
    workdir = config.workdir()
    _, qa_pairs, _, split = _load_inputs(config)
    test_pairs = split.test
    reports = {}
    rows = []
    for selector in selectors:
        gen_path = _require(workdir / f"generations-{selector}.jsonl", f"qa run --retriever {selector}")
        report = evaluate_qa(_load_generations(gen_path), test_pairs)
        reports[selector] = report
        for metric, mean in report.means.items():
            rows.append({"section": "qa", "system": selector, "metric": metric, "value": mean})
        print(
            f"qa[{selector}]: "
            + "  ".join(f"{m}={report.means[m]:.4f}" for m in report.metric_names)
        )
    if versus:
        base_path = _require(workdir / f"generations-{versus}.jsonl", f"qa run --retriever {versus}")
        base = evaluate_qa(_load_generations(base_path), test_pairs)
        qids = [qa.qid for qa in test_pairs]
        for selector, report in reports.items():
            if selector == versus:
                continue
            for metric in report.metric_names:
                a = [report.per_question[metric][q] for q in qids]
                b = [base.per_question[metric][q] for q in qids]
                t, p = paired_t_test(a, b)
                report.annotate_significance(metric, t, p, versus)
                for row in rows:
                    if row["system"] == selector and row["metric"] == metric:
                        row["note"] = f"t={t:.4f} p={p:.4g} vs {versus}"
            report.save_json(workdir / f"report-qa-{selector}.json")
    _update_report(workdir, rows)
    return EXIT_OK


def cmd_e2e(config: PipelineConfig) -> int:
    """Chain every stage offline; requires scorer.mode == mock."""
    if config["scorer"]["mode"] != "mock":
        raise ConfigError("e2e is the offline path; set scorer.mode = 'mock'")
    workdir = config.workdir()
    workdir.mkdir(parents=True, exist_ok=True)
    if not config["paths"]["corpus"]:
        defaults_exist = (workdir / "corpus.jsonl").exists()
        config["paths"]["corpus"] = str(workdir / "corpus.jsonl")
        config["paths"]["qa"] = str(workdir / "qa.jsonl")
        config["paths"]["qrels"] = str(workdir / "qrels.tsv")
        if not defaults_exist:
            cmd_synth(config)
    cmd_index_build(config)
    cmd_index_search(config, None, "train", None)
    cmd_index_search(config, None, "test", None)
    cmd_weaklabel_run(config)
    cmd_weaklabel_eval(config)
    cmd_train(config, "two-tower")
    cmd_train(config, "late-interaction")
    cmd_encode(config, "two-tower")
    cmd_encode(config, "late-interaction")
    cmd_search(config, "two-tower", None)
    cmd_search(config, "late-interaction", None)
    cmd_eval_retrieval(config, ["bm25", "two-tower", "late-interaction"])
    for selector in ("none", "gold", "bm25", "two-tower", "late-interaction"):
        cmd_qa(config, selector)
    cmd_eval_qa(config, ["none", "gold", "bm25", "two-tower", "late-interaction"], versus="none")
    print(f"e2e complete; consolidated report at {workdir / 'report.tsv'}")
    return EXIT_OK


def dispatch(command: str, config: PipelineConfig, options: dict) -> int:
    if command == "synth":
        return cmd_synth(config)
    if command == "index":
        if options.get("action") == "build":
            return cmd_index_build(config)
        return cmd_index_search(
            config, options.get("query"), options.get("split", "test"), options.get("k")
        )
    if command == "weaklabel":
        if options.get("action") == "run":
            return cmd_weaklabel_run(config)
        return cmd_weaklabel_eval(config)
    if command == "train":
        return cmd_train(config, options["model"])
    if command == "encode":
        return cmd_encode(config, options["model"])
    if command == "search":
        return cmd_search(config, options["model"], options.get("k"))
    if command == "qa":
        return cmd_qa(config, options.get("retriever"))
    if command == "eval":
        if options.get("what") == "retrieval":
            return cmd_eval_retrieval(config, options["systems"])
        return cmd_eval_qa(config, options["selectors"], options.get("versus"))
    if command == "e2e":
        return cmd_e2e(config)
    raise ConfigError(f"unknown command {command!r}")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ragkit",
        description="Weakly supervised retriever training and RAG evaluation pipeline.",
    )
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
        help="override a config value, e.g. --set two_tower.alpha=10 or --set seed=13",
    )
    parser.add_argument("--seed", type=int, help="shorthand for --set seed=N")
    parser.add_argument("--workdir", help="shorthand for --set paths.workdir=...")
    parser.add_argument("--corpus", help="shorthand for --set paths.corpus=...")
    parser.add_argument("--qa-file", help="shorthand for --set paths.qa=...")
    parser.add_argument("--qrels", help="shorthand for --set paths.qrels=...")
    parser.add_argument("--alpha", type=float, help="shorthand for --set two_tower.alpha=X")

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", help="generate the bundled synthetic dataset")

    p_index = sub.add_parser("index", help="build or query the lexical index")
    index_sub = p_index.add_subparsers(dest="action", required=True)
    index_sub.add_parser("build")
    p_is = index_sub.add_parser("search")
    p_is.add_argument("--query", help="single ad-hoc query (prints results)")
    p_is.add_argument("--split", choices=("train", "val", "test"), default="test")
    p_is.add_argument("-k", type=int, default=None)

    p_wl = sub.add_parser("weaklabel", help="generate or evaluate weak labels")
    wl_sub = p_wl.add_subparsers(dest="action", required=True)
    wl_sub.add_parser("run")
    wl_sub.add_parser("eval")

    p_train = sub.add_parser("train", help="train a retriever on weak labels")
    p_train.add_argument("model", choices=("two-tower", "late-interaction"))

    p_encode = sub.add_parser("encode", help="encode the corpus with a trained retriever")
    p_encode.add_argument("--model", choices=("two-tower", "late-interaction"), required=True)

    p_search = sub.add_parser("search", help="run dense retrieval over the test split")
    p_search.add_argument("--model", choices=("two-tower", "late-interaction"), required=True)
    p_search.add_argument("-k", type=int, default=None)

    p_qa = sub.add_parser("qa", help="answer test questions with retrieved evidence")
    qa_sub = p_qa.add_subparsers(dest="action", required=True)
    p_qa_run = qa_sub.add_parser("run")
    p_qa_run.add_argument(
        "--retriever", choices=("bm25", "two-tower", "late-interaction", "none", "gold")
    )

    p_eval = sub.add_parser("eval", help="score runs or generations")
    eval_sub = p_eval.add_subparsers(dest="what", required=True)
    p_er = eval_sub.add_parser("retrieval")
    p_er.add_argument("--systems", nargs="+", default=["bm25", "two-tower", "late-interaction"])
    p_eq = eval_sub.add_parser("qa")
    p_eq.add_argument("--selectors", nargs="+", default=["none", "two-tower"])
    p_eq.add_argument("--versus", default=None, help="baseline selector for paired t-tests")

    sub.add_parser("e2e", help="run the whole pipeline offline with the mock scorer")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK

    overrides = list(args.overrides)
    for flag, key in (
        ("seed", "seed"),
        ("workdir", "paths.workdir"),
        ("corpus", "paths.corpus"),
        ("qa_file", "paths.qa"),
        ("qrels", "paths.qrels"),
        ("alpha", "two_tower.alpha"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            overrides.append(f"{key}={json.dumps(value) if not isinstance(value, str) else value}")

    try:
        config = parse_config(args.config, overrides)
        options = {k: v for k, v in vars(args).items()
                   if k not in ("config", "overrides", "command")}
        return dispatch(args.command, config, options)
    except (ConfigError, DataFormatError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MissingArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING_ARTIFACT
    except TransportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT


if __name__ == "__main__":
    sys.exit(main())
