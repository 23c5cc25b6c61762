"""Command-line pipeline orchestration.

Subcommands bind the stages into reproducible runs: each run directory is
named after a digest of the effective config, every stage writes JSON-lines
artifacts plus an append-only manifest entry, and a lock file keeps stages
from racing. Exit codes: 0 success, 2 config error, 3 stage error, 4
perplexity gate failed (original traces shipped).
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import (
    Dataset,
    DatasetKind,
    EventPair,
    FoldSpec,
    Granularity,
    analysis_split,
    load_corpus,
    make_folds,
    sample_doc_level,
)
from .errors import ConfigError, PipelineError, StageError
from .figures import render_report_figures
from .gateway import (
    EndpointConfig,
    Gateway,
    RetryPolicy,
    load_scripted_mock,
    register_mock,
)
from .metrics import (
    MetricsReport,
    emit_report_csv,
    run_evaluation,
    run_robustness,
)
from .prompts import TemplateId, load_default_demos
from .rewrite import GateMode, RewriteOutcome, ppl_gate, rewrite_traces
from .store import (
    ResponseCache,
    append_manifest_entry,
    atomic_write_text,
    file_bytes_digest,
    persist_jsonl,
    read_jsonl,
    sft_records,
    stable_digest,
)
from .tracegen import (
    CoTTrace,
    SelectionStrategy,
    filter_correct,
    generate_traces,
    select_traces,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3
EXIT_GATE = 4

ROLE_NAMES = ("generator", "target", "subject")


@dataclass
class PipelineConfig:
    config_dir: Path
    corpus_kind: DatasetKind
    corpus_path: str
    candidates: str
    k: int
    fold: int
    analysis_n_train: int | None
    granularity: str
    template: TemplateId
    rewrite_variant: TemplateId
    strategy_kind: str
    strategy_model: str | None
    excluded_models: tuple[str, ...]
    gate_mode: GateMode
    gate_tolerance: float
    seed: int
    n_neg: int
    out_root: str
    select_inputs: tuple[str, ...]
    endpoints: dict[str, EndpointConfig]
    mock_scripts: dict[str, str]
    roles: dict[str, str]
    effective: dict = field(default_factory=dict)

    def resolve(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.config_dir / p

    @property
    def run_id(self) -> str:
        return "run-" + stable_digest(self.effective)[:12]

    @property
    def run_dir(self) -> Path:
        return self.resolve(self.out_root) / self.run_id

    def endpoint_for(self, role: str) -> EndpointConfig:
        if role not in self.roles:
            raise ConfigError(f"no endpoint configured for role {role!r}")
        name = self.roles[role]
        if name not in self.endpoints:
            raise ConfigError(f"role {role!r} names unknown endpoint {name!r}")
        return self.endpoints[name]

    def strategy(self) -> SelectionStrategy:
        kind = self.strategy_kind
        if kind == "per_model":
            if not self.strategy_model:
                raise ConfigError("per_model selection needs strategy_model")
            return SelectionStrategy.per_model(self.strategy_model)
        if kind == "lowest_perplexity":
            return SelectionStrategy.lowest_perplexity()
        if kind == "long_only":
            return SelectionStrategy.long_only(self.excluded_models)
        raise ConfigError(f"unknown selection strategy {kind!r}")


def _parse_template(value: str) -> TemplateId:
    try:
        return TemplateId(value)
    except ValueError as exc:
        raise ConfigError(f"unknown template {value!r}") from exc


def load_config(path, overrides: dict | None = None) -> PipelineConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    overrides = overrides or {}

    def get(section: str, key: str, default=None):
        ov = overrides.get(f"{section}.{key}")
        if ov is not None:
            return ov
        if parser.has_option(section, key):
            return parser.get(section, key)
        return default

    try:
        corpus_kind = DatasetKind(get("corpus", "kind", "Synthetic"))
    except ValueError as exc:
        raise ConfigError(f"unknown corpus kind: {exc}") from exc
    corpus_path = get("corpus", "path")
    if not corpus_path:
        raise ConfigError("config lacks [corpus] path")

    endpoints: dict[str, EndpointConfig] = {}
    mock_scripts: dict[str, str] = {}
    for section in parser.sections():
        if not section.startswith("endpoint."):
            continue
        name = section.split(".", 1)[1]
        backoff = tuple(
            float(x) for x in parser.get(section, "retry_backoff",
                                         fallback="0.05,0.2,0.8").split(",")
        )
        endpoints[name] = EndpointConfig(
            base_url=parser.get(section, "base_url"),
            model_name=parser.get(section, "model_name", fallback=name),
            temperature=parser.getfloat(section, "temperature", fallback=0.0),
            max_tokens=parser.getint(section, "max_tokens", fallback=1024),
            want_logprobs=parser.getboolean(section, "want_logprobs", fallback=False),
            max_in_flight=parser.getint(section, "max_in_flight", fallback=1),
            retry=RetryPolicy(
                max_attempts=parser.getint(section, "retry_max_attempts", fallback=3),
                backoff=backoff,
            ),
            auth_token_env=parser.get(section, "auth_token_env", fallback=None) or None,
            timeout=parser.getfloat(section, "timeout", fallback=120.0),
        )
        script = parser.get(section, "mock_script", fallback=None)
        if script:
            mock_scripts[name] = script

    roles = {}
    if parser.has_section("roles"):
        roles.update(parser.items("roles"))
    for role in ROLE_NAMES:
        ov = overrides.get(f"roles.{role}")
        if ov is not None:
            roles[role] = ov

    excluded = tuple(
        x.strip() for x in (get("pipeline", "excluded_models", "") or "").split(",") if x.strip()
    )
    select_inputs = tuple(
        x.strip() for x in (get("pipeline", "select_inputs", "") or "").split(",") if x.strip()
    )
    analysis_raw = get("split", "analysis_n_train")

    cfg = PipelineConfig(
        config_dir=path.parent.resolve(),
        corpus_kind=corpus_kind,
        corpus_path=corpus_path,
        candidates=get("corpus", "candidates", "all"),
        k=int(get("split", "k", "5")),
        fold=int(get("split", "fold", "1")),
        analysis_n_train=int(analysis_raw) if analysis_raw is not None else None,
        granularity=get("pipeline", "granularity", "intra"),
        template=_parse_template(get("pipeline", "template", "zero_shot")),
        rewrite_variant=_parse_template(get("pipeline", "rewrite_variant", "rewrite_official")),
        strategy_kind=get("pipeline", "strategy", "per_model"),
        strategy_model=get("pipeline", "strategy_model"),
        excluded_models=excluded,
        gate_mode=GateMode(get("pipeline", "gate_mode", "CorpusMean")),
        gate_tolerance=float(get("pipeline", "gate_tolerance", "0")),
        seed=int(get("pipeline", "seed", "0")),
        n_neg=int(get("pipeline", "n_neg", "0")),
        out_root=get("output", "root", "runs"),
        select_inputs=select_inputs,
        endpoints=endpoints,
        mock_scripts=mock_scripts,
        roles=roles,
    )
    if cfg.granularity not in ("intra", "inter", "all"):
        raise ConfigError(f"granularity must be intra, inter, or all, got {cfg.granularity!r}")
    if cfg.strategy_kind == "per_model" and not cfg.strategy_model:
        cfg.strategy_model = cfg.endpoint_for("generator").model_name if \
            cfg.roles.get("generator") in cfg.endpoints else None
    cfg.effective = _effective_dict(cfg)
    return cfg


def _effective_dict(cfg: PipelineConfig) -> dict:
    return {
        "corpus": {"kind": cfg.corpus_kind.value, "path": cfg.corpus_path,
                   "candidates": cfg.candidates},
        "split": {"k": cfg.k, "fold": cfg.fold, "analysis_n_train": cfg.analysis_n_train},
        "pipeline": {
            "granularity": cfg.granularity,
            "template": cfg.template.value,
            "rewrite_variant": cfg.rewrite_variant.value,
            "strategy": cfg.strategy_kind,
            "strategy_model": cfg.strategy_model,
            "excluded_models": list(cfg.excluded_models),
            "gate_mode": cfg.gate_mode.value,
            "gate_tolerance": cfg.gate_tolerance,
            "seed": cfg.seed,
            "n_neg": cfg.n_neg,
            "select_inputs": list(cfg.select_inputs),
        },
        "output": {"root": cfg.out_root},
        "endpoints": {
            name: {
                "base_url": ep.base_url,
                "model_name": ep.model_name,
                "temperature": ep.temperature,
                "max_tokens": ep.max_tokens,
                "max_in_flight": ep.max_in_flight,
                "mock_script": cfg.mock_scripts.get(name),
            }
            for name, ep in sorted(cfg.endpoints.items())
        },
        "roles": dict(sorted(cfg.roles.items())),
    }


class StageLock:
    """One stage at a time per run directory."""

    def __init__(self, run_dir: Path):
        self.path = run_dir / ".lock"

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise StageError(
                f"run directory is locked by another stage: {self.path} "
                "(remove the file if the previous run crashed)"
            ) from None
        with os.fdopen(fd, "w") as fh:
            fh.write(str(os.getpid()))
        return self

    def __exit__(self, *exc_info):
        try:
            self.path.unlink()
        except FileNotFoundError:
            pass
        return False


def _register_mocks(cfg: PipelineConfig) -> None:
    for name, script in cfg.mock_scripts.items():
        ep = cfg.endpoints[name]
        if ep.is_mock():
            mock_name = ep.base_url[len("mock://"):].strip("/")
            register_mock(mock_name, load_scripted_mock(cfg.resolve(script)))


def _gateway(cfg: PipelineConfig) -> Gateway:
    cache_root = cfg.resolve(cfg.out_root) / "cache"
    return Gateway(cache=ResponseCache(cache_root))


def _require(run_dir: Path, name: str) -> Path:
    path = run_dir / name
    if not path.exists():
        raise StageError(f"missing prerequisite artifact: {path} (run the earlier stage first)")
    return path


def _manifest_entry(cfg: PipelineConfig, stage: str, inputs: dict, outputs: dict,
                    extra: dict | None = None) -> dict:
    entry = {
        "stage": stage,
        "timestamp": time.time(),
        "config_digest": stable_digest(cfg.effective),
        "seed": cfg.seed,
        "inputs": inputs,
        "outputs": outputs,
    }
    if extra:
        entry.update(extra)
    return entry


def _load_dataset(run_dir: Path) -> Dataset:
    rows = read_jsonl(_require(run_dir, "dataset.jsonl"))
    pairs = [EventPair.from_json_dict(r) for r in rows]
    kind = pairs[0].dataset if pairs else DatasetKind.SYNTHETIC
    return Dataset(pairs=pairs, source_kind=kind)


def _load_folds(run_dir: Path) -> tuple[list[FoldSpec], FoldSpec | None]:
    doc = json.loads(_require(run_dir, "folds.json").read_text("utf-8"))
    folds = [FoldSpec.from_json_dict(f) for f in doc["folds"]]
    analysis = FoldSpec.from_json_dict(doc["analysis"]) if doc.get("analysis") else None
    return folds, analysis


def _stage_pairs(cfg: PipelineConfig, run_dir: Path, split: str) -> list[EventPair]:
    """The fold- and granularity-filtered pair list a stage operates on."""
    dataset = _load_dataset(run_dir)
    folds, analysis = _load_folds(run_dir)
    if cfg.fold == 0:
        if analysis is None:
            raise StageError("fold 0 selects the analysis split, but none was configured")
        fold = analysis
    else:
        matching = [f for f in folds if f.fold_index == cfg.fold]
        if not matching:
            raise StageError(f"fold {cfg.fold} not present in folds.json")
        fold = matching[0]
    topics = set(fold.train_topics if split == "train" else fold.test_topics)
    pairs = [p for p in dataset.pairs if p.topic_id in topics]
    if cfg.granularity == "intra":
        pairs = [p for p in pairs if p.granularity is Granularity.INTRA_SENTENCE]
    elif cfg.granularity == "inter":
        pairs = [p for p in pairs if p.granularity is Granularity.INTER_SENTENCE]
        if cfg.n_neg > 0:
            sampled = sample_doc_level(
                dataset.subset(pairs), n_neg=cfg.n_neg, seed=cfg.seed
            )
            pairs = sampled.pairs
    pairs.sort(key=lambda p: p.pair_id)
    if not pairs:
        raise StageError(f"no pairs remain for fold {cfg.fold} ({split}, {cfg.granularity})")
    return pairs


# --- subcommands --------------------------------------------------------------

def cmd_ingest(cfg: PipelineConfig) -> int:
    dataset = load_corpus(cfg.corpus_kind, cfg.resolve(cfg.corpus_path), cfg.candidates)
    run_dir = cfg.run_dir
    with StageLock(run_dir):
        digest = persist_jsonl(dataset.pairs, run_dir / "dataset.jsonl")
        append_manifest_entry(
            run_dir,
            _manifest_entry(cfg, "ingest", {}, {"dataset.jsonl": digest},
                            {"counts": dataset.counts(), "provenance": dataset.provenance}),
            config=cfg.effective,
        )
    print(f"ingest: {dataset.counts()['total']} pairs -> {run_dir / 'dataset.jsonl'}")
    return EXIT_OK


def cmd_split(cfg: PipelineConfig) -> int:
    run_dir = cfg.run_dir
    with StageLock(run_dir):
        dataset = _load_dataset(run_dir)
        topics = sorted({p.topic_id for p in dataset.pairs})
        folds = make_folds(topics, cfg.k)
        analysis = None
        if cfg.analysis_n_train is not None:
            analysis = analysis_split(topics, cfg.analysis_n_train)
        doc = {
            "folds": [f.to_json_dict() for f in folds],
            "analysis": analysis.to_json_dict() if analysis else None,
        }
        text = json.dumps(doc, ensure_ascii=False, indent=2)
        atomic_write_text(run_dir / "folds.json", text)
        append_manifest_entry(
            run_dir,
            _manifest_entry(cfg, "split", {"dataset.jsonl": None},
                            {"folds.json": stable_digest(doc)},
                            {"k": cfg.k, "topics": topics}),
            config=cfg.effective,
        )
    print(f"split: {len(folds)} folds over {len(topics)} topics -> {run_dir / 'folds.json'}")
    return EXIT_OK


def cmd_generate(cfg: PipelineConfig) -> int:
    _register_mocks(cfg)
    run_dir = cfg.run_dir
    generator = cfg.endpoint_for("generator")
    with StageLock(run_dir):
        pairs = _stage_pairs(cfg, run_dir, "train")
        demos = load_default_demos()
        failures: list = []
        traces = generate_traces(pairs, generator, demos, gateway=_gateway(cfg),
                                 seed=cfg.seed, failures=failures)
        if pairs and not traces and failures:
            raise StageError(
                f"generator endpoint failed on all {len(pairs)} pairs; nothing to write"
            )
        correct = filter_correct(traces)
        d_raw = persist_jsonl(traces, run_dir / "traces_raw.jsonl")
        d_ok = persist_jsonl(correct, run_dir / "traces_correct.jsonl")
        d_fail = persist_jsonl(failures, run_dir / "failures.jsonl")
        append_manifest_entry(
            run_dir,
            _manifest_entry(
                cfg, "generate",
                {"dataset.jsonl": None, "folds.json": None},
                {"traces_raw.jsonl": d_raw, "traces_correct.jsonl": d_ok,
                 "failures.jsonl": d_fail},
                {"endpoint_fingerprint": generator.fingerprint,
                 "n_pairs": len(pairs), "n_traces": len(traces),
                 "n_correct": len(correct), "n_failures": len(failures)},
            ),
            config=cfg.effective,
        )
    print(f"generate: {len(correct)}/{len(traces)} correct traces "
          f"({len(failures)} failures) -> {run_dir / 'traces_correct.jsonl'}")
    return EXIT_OK


def cmd_rewrite(cfg: PipelineConfig) -> int:
    _register_mocks(cfg)
    run_dir = cfg.run_dir
    target = cfg.endpoint_for("target")
    with StageLock(run_dir):
        rows = read_jsonl(_require(run_dir, "traces_correct.jsonl"))
        traces = [CoTTrace.from_json_dict(r) for r in rows]
        if not traces:
            raise StageError("traces_correct.jsonl is empty; nothing to rewrite")
        gw = _gateway(cfg)
        outcomes = rewrite_traces(traces, target, cfg.rewrite_variant, gateway=gw)
        gate = ppl_gate(outcomes, target, cfg.gate_mode, cfg.gate_tolerance, gateway=gw)
        d_out = persist_jsonl(outcomes, run_dir / "outcomes.jsonl")
        d_final = persist_jsonl([o.final for o in outcomes], run_dir / "traces_final.jsonl")
        append_manifest_entry(
            run_dir,
            _manifest_entry(
                cfg, "rewrite",
                {"traces_correct.jsonl": None},
                {"outcomes.jsonl": d_out, "traces_final.jsonl": d_final},
                {"endpoint_fingerprint": target.fingerprint,
                 "gate": gate.to_json_dict(),
                 "reasons": _reason_counts(outcomes)},
            ),
            config=cfg.effective,
        )
    status = "passed" if gate.passed else "FAILED (originals shipped)"
    print(f"rewrite: gate {status}; mean ppl {gate.mean_ppl_original:.4f} -> "
          f"{gate.mean_ppl_final:.4f}; outcomes -> {run_dir / 'outcomes.jsonl'}")
    return EXIT_OK if gate.passed else EXIT_GATE


def _reason_counts(outcomes: list[RewriteOutcome]) -> dict:
    counts: dict[str, int] = {}
    for o in outcomes:
        counts[o.reason.value] = counts.get(o.reason.value, 0) + 1
    return counts


def cmd_select(cfg: PipelineConfig) -> int:
    run_dir = cfg.run_dir
    with StageLock(run_dir):
        if cfg.select_inputs:
            paths = [cfg.resolve(p) for p in cfg.select_inputs]
            for p in paths:
                if not p.exists():
                    raise StageError(f"missing select input: {p}")
        else:
            paths = [_require(run_dir, "traces_final.jsonl")]
        pools: dict[str, list[CoTTrace]] = {}
        for p in paths:
            for row in read_jsonl(p):
                t = CoTTrace.from_json_dict(row)
                origin = t.meta.get("rewritten_from") or t.source_model_id
                pools.setdefault(origin, []).append(t)
        selected = select_traces(pools, cfg.strategy())
        chosen = [selected[pid] for pid in sorted(selected)]
        d_sel = persist_jsonl(chosen, run_dir / "selected.jsonl")
        input_names = list(cfg.select_inputs) or ["traces_final.jsonl"]
        append_manifest_entry(
            run_dir,
            _manifest_entry(
                cfg, "select",
                {name: None for name in input_names},
                {"selected.jsonl": d_sel},
                {"strategy": cfg.strategy_kind, "n_selected": len(chosen),
                 "pools": {m: len(ts) for m, ts in sorted(pools.items())}},
            ),
            config=cfg.effective,
        )
    print(f"select: {len(chosen)} traces ({cfg.strategy_kind}) -> {run_dir / 'selected.jsonl'}")
    return EXIT_OK


def cmd_export(cfg: PipelineConfig) -> int:
    run_dir = cfg.run_dir
    with StageLock(run_dir):
        rows = read_jsonl(_require(run_dir, "selected.jsonl"))
        traces = [CoTTrace.from_json_dict(r) for r in rows]
        records = sft_records(traces)
        d_sft = persist_jsonl(records, run_dir / "sft.jsonl")
        append_manifest_entry(
            run_dir,
            _manifest_entry(cfg, "export", {"selected.jsonl": None},
                            {"sft.jsonl": d_sft}, {"n_records": len(records)}),
            config=cfg.effective,
        )
    print(f"export: {len(records)} instruction/response rows -> {run_dir / 'sft.jsonl'}")
    return EXIT_OK


def cmd_evaluate(cfg: PipelineConfig) -> int:
    _register_mocks(cfg)
    run_dir = cfg.run_dir
    subject = cfg.endpoint_for("subject")
    with StageLock(run_dir):
        pairs = _stage_pairs(cfg, run_dir, "test")
        demos = load_default_demos() if cfg.template is TemplateId.FEW_SHOT_ICL else None
        raw: list = []
        report, records = run_evaluation(subject, pairs, cfg.template, demos,
                                         gateway=_gateway(cfg), raw_sink=raw)
        d_pred = persist_jsonl(records, run_dir / "predictions.jsonl")
        d_raw = persist_jsonl(raw, run_dir / "raw_outputs.jsonl")
        report_doc = report.to_json_dict()
        atomic_write_text(run_dir / "evaluation_report.json",
                          json.dumps(report_doc, ensure_ascii=False, indent=2))
        append_manifest_entry(
            run_dir,
            _manifest_entry(
                cfg, "evaluate",
                {"dataset.jsonl": None, "folds.json": None},
                {"predictions.jsonl": d_pred, "raw_outputs.jsonl": d_raw,
                 "evaluation_report.json": stable_digest(report_doc)},
                {"endpoint_fingerprint": subject.fingerprint,
                 "template": cfg.template.value, "n_pairs": len(pairs)},
            ),
            config=cfg.effective,
        )
    print(f"evaluate: {len(records)} pairs, gap "
          f"{_fmt_pct(report.chr)} / mean acc {_fmt_pct(report.m_acc)} "
          f"-> {run_dir / 'evaluation_report.json'}")
    return EXIT_OK


def cmd_robustness(cfg: PipelineConfig) -> int:
    _register_mocks(cfg)
    run_dir = cfg.run_dir
    subject = cfg.endpoint_for("subject")
    with StageLock(run_dir):
        pairs = _stage_pairs(cfg, run_dir, "test")
        raw: list = []
        records: list = []
        report = run_robustness(subject, pairs, gateway=_gateway(cfg),
                                raw_sink=raw, records_sink=records)
        d_pred = persist_jsonl(records, run_dir / "predictions_intervention.jsonl")
        d_raw = persist_jsonl(raw, run_dir / "raw_intervention.jsonl")
        report_doc = report.to_json_dict()
        atomic_write_text(run_dir / "robustness_report.json",
                          json.dumps(report_doc, ensure_ascii=False, indent=2))
        append_manifest_entry(
            run_dir,
            _manifest_entry(
                cfg, "robustness",
                {"dataset.jsonl": None, "folds.json": None},
                {"predictions_intervention.jsonl": d_pred,
                 "raw_intervention.jsonl": d_raw,
                 "robustness_report.json": stable_digest(report_doc)},
                {"endpoint_fingerprint": subject.fingerprint, "n_pairs": len(pairs)},
            ),
            config=cfg.effective,
        )
    print(f"robustness: {len(records)} pairs under intervention, mean acc "
          f"{_fmt_pct(report.m_acc)} -> {run_dir / 'robustness_report.json'}")
    return EXIT_OK


def cmd_report(cfg: PipelineConfig) -> int:
    run_dir = cfg.run_dir
    with StageLock(run_dir):
        sources = [
            ("evaluation", run_dir / "evaluation_report.json"),
            ("robustness", run_dir / "robustness_report.json"),
        ]
        reports: list[tuple[str, MetricsReport]] = []
        for label, path in sources:
            if path.exists():
                doc = json.loads(path.read_text("utf-8"))
                reports.append((label, MetricsReport(**doc)))
        if not reports:
            raise StageError(
                f"no report JSON found in {run_dir}; run evaluate or robustness first"
            )
        csv_path = emit_report_csv(reports, run_dir / "report.csv")
        figure_paths = render_report_figures(reports, run_dir / "figures")
        outputs = {"report.csv": file_bytes_digest(csv_path)}
        for p in figure_paths:
            outputs[f"figures/{p.name}"] = file_bytes_digest(p)
        append_manifest_entry(
            run_dir,
            _manifest_entry(cfg, "report",
                            {label: None for label, _p in reports}, outputs,
                            {"n_reports": len(reports)}),
            config=cfg.effective,
        )
    print(f"report: {len(reports)} rows -> {csv_path} (+{len(figure_paths)} figures)")
    return EXIT_OK


def _fmt_pct(fraction: float | None) -> str:
    return "n/a" if fraction is None else f"{fraction * 100:.2f}%"


# --- argument parsing ---------------------------------------------------------

COMMANDS = {
    "ingest": cmd_ingest,
    "split": cmd_split,
    "generate": cmd_generate,
    "rewrite": cmd_rewrite,
    "select": cmd_select,
    "export": cmd_export,
    "evaluate": cmd_evaluate,
    "robustness": cmd_robustness,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ecitrace",
        description="Causal-reasoning trace pipeline and hallucination evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} stage")
        p.add_argument("--config", required=True, help="pipeline config file (INI)")
        p.add_argument("--fold", type=int, default=None,
                       help="fold index (0 selects the analysis split)")
        p.add_argument("--strategy", default=None,
                       help="per_model | lowest_perplexity | long_only")
        p.add_argument("--gate-mode", default=None, help="CorpusMean | PerTrace")
        p.add_argument("--template", default=None, help="prompt template id")
        p.add_argument("--endpoint", action="append", default=[],
                       metavar="ROLE=NAME", help="override a role's endpoint")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None, help="output root directory")
    return parser


def _overrides_from_args(args: argparse.Namespace) -> dict:
    overrides: dict[str, str] = {}
    if args.fold is not None:
        overrides["split.fold"] = str(args.fold)
    if args.strategy:
        overrides["pipeline.strategy"] = args.strategy
    if args.gate_mode:
        overrides["pipeline.gate_mode"] = args.gate_mode
    if args.template:
        overrides["pipeline.template"] = args.template
    if args.seed is not None:
        overrides["pipeline.seed"] = str(args.seed)
    if args.out:
        overrides["output.root"] = args.out
    for item in args.endpoint:
        role, _sep, name = item.partition("=")
        if not _sep:
            raise ConfigError(f"--endpoint expects ROLE=NAME, got {item!r}")
        overrides[f"roles.{role}"] = name
    return overrides


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, _overrides_from_args(args))
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PipelineError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
