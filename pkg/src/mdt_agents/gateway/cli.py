"""Command-line entry point: ``mdt-agents <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Sequence

from ..agents.backends import ScriptedBackend, load_transcripts, save_transcripts
from ..case import DatasetSplit, PatientCase, case_from_dict, case_to_dict, check_unique_ids, split_dataset
from ..errors import MdtError, PipelineError
from ..orchestrator import execute
from .config import PipelineSettings, ServiceSettings, config_fingerprint

log = logging.getLogger("mdt_agents.cli")


# ---------------------------------------------------------------------------
# Loading helpers
# ---------------------------------------------------------------------------


def _read_json(path: str | Path) -> Any:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise MdtError(f"{path}: {exc}") from None


def load_cases(path: str | Path) -> list[PatientCase]:
    """Cases from a directory of ``*.json``, a JSON object or list, or JSON lines."""
    path = Path(path)
    docs: list[Any] = []
    if path.is_dir():
        docs = [_read_json(f) for f in sorted(path.glob("*.json"))]
    elif path.suffix == ".jsonl":
        docs = [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]
    else:
        doc = _read_json(path)
        docs = doc if isinstance(doc, list) else [doc]
    cases = [case_from_dict(d) for d in docs]
    check_unique_ids(cases)
    return cases


def _settings(args: argparse.Namespace) -> PipelineSettings:
    if args.config:
        settings = PipelineSettings.load(args.config)
        return settings.mocked(args.mock) if args.mock else settings
    if args.mock:
        return PipelineSettings.scripted(args.mock)
    raise MdtError("either --config or --mock is required")


def _pipeline_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="pipeline settings JSON")
    p.add_argument("--mock", help="scripted transcripts (file or directory); replaces every backend")
    p.add_argument("--rules", help="rule table CSV (overrides the config)")


def _build(args: argparse.Namespace):
    settings = _settings(args)
    config, rules = settings.build()
    if getattr(args, "rules", None):
        from ..rules import RuleTable

        rules = RuleTable.load(args.rules)
    return config, rules


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_run(args: argparse.Namespace) -> int:
    source = args.cases or args.case_opt
    if not source:
        raise MdtError("no case file given")
    config, rules = _build(args)
    cases = load_cases(source)
    out = Path(args.out) if args.out else None
    failures = 0
    for case in cases:
        try:
            run = execute(case, config, rules)
        except PipelineError as exc:
            failures += 1
            print(f"{case.case_id}: failed: {exc}", file=sys.stderr)
            continue
        if out is None:
            print(run.report.to_json() if args.format == "json" else run.report.render_text())
            continue
        d = out / case.case_id
        d.mkdir(parents=True, exist_ok=True)
        (d / "report.json").write_text(run.report.to_json(), encoding="utf-8")
        (d / "report.txt").write_text(run.report.render_text(), encoding="utf-8")
        (d / "context.txt").write_text(run.context, encoding="utf-8")
        (d / "log.json").write_text(json.dumps(run.stage_log, indent=2, sort_keys=True), encoding="utf-8")
        (d / "evidence.json").write_text(
            json.dumps(run.evidence.to_dict(), indent=2, sort_keys=True, ensure_ascii=False), encoding="utf-8"
        )
    if out is not None:
        (out / "fingerprint.txt").write_text(config_fingerprint(config, rules) + "\n", encoding="utf-8")
        print(f"{len(cases) - failures}/{len(cases)} reports written to {out}")
    return 1 if failures else 0


def cmd_sweep(args: argparse.Namespace) -> int:
    from ..evaluation.ablation import export_sweep_table, run_ablation_sweep

    config, rules = _build(args)
    cases = load_cases(args.cases)
    result = run_ablation_sweep(cases, config, rules, max_workers=args.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, reports in result.items():
        d = out / name.replace("/", "").replace(" ", "_").replace("(", "").replace(")", "")
        d.mkdir(exist_ok=True)
        for case_id, r in reports.items():
            if isinstance(r, PipelineError):
                (d / f"{case_id}.error.txt").write_text(str(r), encoding="utf-8")
            else:
                (d / f"{case_id}.json").write_text(r.to_json(), encoding="utf-8")
    export_sweep_table(result, out / "sweep.csv")
    print(f"{len(result)} configurations x {len(cases)} cases -> {out}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    from ..evaluation.scoring import composite_by_system, format_composite_table, inter_rater_agreement, load_cards_csv

    source = args.cards or args.cards_opt
    if not source:
        raise MdtError("no score-card file given")
    cards = load_cards_csv(source)
    print(format_composite_table(composite_by_system(cards)))
    if args.agreement:
        for a in inter_rater_agreement(cards):
            print(
                f"{a.rater_pair[0]} vs {a.rater_pair[1]}: n={a.n_items} "
                f"exact={a.exact_agreement:.3f} mean_abs_diff={a.mean_abs_difference:.3f}"
            )
    return 0


def _report_texts(directory: str | Path) -> dict[str, str]:
    out = {}
    for f in sorted(Path(directory).iterdir()):
        if f.suffix == ".json":
            doc = _read_json(f)
            if isinstance(doc, dict) and "sections" in doc:
                from ..report import SECTION_KEYS, SECTION_TITLES

                out[doc.get("case_id", f.stem)] = "\n\n".join(
                    f"{SECTION_TITLES[k]}:\n{doc['sections'].get(k, '')}" for k in SECTION_KEYS
                )
        elif f.suffix == ".txt":
            out[f.stem] = f.read_text(encoding="utf-8")
    return out


def cmd_judge(args: argparse.Namespace) -> int:
    from ..evaluation.judge import run_pairwise_judging

    a, b = _report_texts(args.a), _report_texts(args.b)
    case_ids = sorted(set(a) & set(b))
    if not case_ids:
        raise MdtError("no case has a report in both directories")
    judge = ScriptedBackend(load_transcripts(args.judge_transcripts), model_name="judge")
    rubric = Path(args.rubric).read_text(encoding="utf-8") if args.rubric else None
    verdicts, summary = run_pairwise_judging(
        case_ids, a, b, judge, rubric, seed=args.seed, labels=(args.label_a, args.label_b),
        transcript_dir=args.out,
    )
    print(
        json.dumps(
            {
                "cases": len(verdicts),
                "wins_a": summary.wins_a,
                "wins_b": summary.wins_b,
                "ties": summary.ties,
                "invalid": summary.invalid,
                "win_rate_a": round(summary.win_rate_a, 4),
                "win_rate_b": round(summary.win_rate_b, 4),
            },
            indent=2,
        )
    )
    return 0


def cmd_gen(args: argparse.Namespace) -> int:
    from ..evaluation.synthetic import generate_synthetic_cases

    corpus = generate_synthetic_cases(args.n, seed=args.seed, prefix=args.prefix)
    out = Path(args.out)
    (out / "cases").mkdir(parents=True, exist_ok=True)
    for case in corpus.cases:
        (out / "cases" / f"{case.case_id}.json").write_text(
            json.dumps(case_to_dict(case), indent=2, ensure_ascii=False), encoding="utf-8"
        )
    save_transcripts(out / "transcripts", corpus.transcripts)
    (out / "expected.json").write_text(
        json.dumps(
            {c: {"scenario": corpus.scenarios[c], "flags": [getattr(f, "value", f) for f in corpus.expected_flags[c]]}
             for c in sorted(corpus.scenarios)},
            indent=2,
        ),
        encoding="utf-8",
    )
    print(f"{len(corpus.cases)} cases written to {out}")
    return 0


def cmd_split(args: argparse.Namespace) -> int:
    if args.ids:
        ids = [line.strip() for line in Path(args.ids).read_text(encoding="utf-8").splitlines() if line.strip()]
    else:
        ids = [c.case_id for c in load_cases(args.cases)]
    proportions = [float(x) for x in args.proportions.split(",")]
    split = split_dataset(ids, proportions, args.seed)
    Path(args.out).write_text(json.dumps(split.to_dict(), indent=2), encoding="utf-8")
    print("train={} val={} test={}".format(*split.sizes()))
    return 0


def _read_samples(path: str | Path):
    from ..curation import CuratedSample

    return [
        CuratedSample.from_dict(json.loads(line))
        for line in Path(path).read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]


def _write_samples(path: str | Path, samples) -> None:
    from ..curation import write_jsonl

    write_jsonl(path, (s.to_dict() for s in samples))


def cmd_curate(args: argparse.Namespace) -> int:
    from .. import curation

    if args.step == "decompose":
        teacher = ScriptedBackend(load_transcripts(args.teacher_transcripts), model_name="teacher")
        jobs = curation.build_decomposition_jobs(load_cases(args.cases), teacher)
        samples = curation.run_decomposition(jobs, max_workers=args.workers)
        _write_samples(args.out, samples)
        print(f"{len(samples)}/{len(jobs)} samples generated")
    elif args.step == "filter":
        cases = {c.case_id: c for c in load_cases(args.cases)}
        samples = curation.filter_samples(_read_samples(args.samples), cases, tolerance=args.tolerance)
        _write_samples(args.out, samples)
        rejected = sum(s.filter_status is curation.FilterStatus.REJECTED_CONTRADICTION for s in samples)
        print(f"{len(samples) - rejected} passed, {rejected} rejected")
    elif args.step == "audit":
        samples = curation.audit_sample(_read_samples(args.samples), args.rate, args.seed)
        _write_samples(args.out, samples)
        chosen = [s.sample_id for s in samples if s.audit_status is curation.AuditStatus.SAMPLED]
        print("\n".join(chosen))
    elif args.step == "review":
        samples = curation.apply_reviews(_read_samples(args.samples), curation.load_review_file(args.reviews))
        _write_samples(args.out, samples)
    elif args.step == "export":
        split = DatasetSplit.from_dict(_read_json(args.split))
        records = curation.export_training_set(_read_samples(args.samples), split)
        n = curation.write_jsonl(args.out, records)
        print(f"{n} training records written to {args.out}")
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app
    from .store import RunStore

    service = ServiceSettings.load(args.config) if args.config else ServiceSettings()
    config, rules = _build(args)
    token = os.environ.get(service.auth_token_env) if service.auth_token_env else None
    app = create_app(
        config, rules, RunStore(args.store or service.store_dir),
        max_concurrent=service.max_concurrent, auth_token=token,
    )
    uvicorn.run(app, host=args.host or service.host, port=args.port or service.port)
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mdt-agents", description="Multi-agent MDT report generation.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log stage records to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="generate MDT reports for one or more cases")
    p.add_argument("cases", nargs="?", help="case file, JSON lines file or directory of case files")
    p.add_argument("--case", dest="case_opt", help="same as the positional argument")
    _pipeline_args(p)
    p.add_argument("--out", help="write per-case artifacts into this directory")
    p.add_argument("--format", choices=("json", "text"), default="json")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("sweep", help="run the six-configuration ablation sweep")
    p.add_argument("cases")
    _pipeline_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=4)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("evaluate", help="composite scores from expert score cards")
    p.add_argument("cards", nargs="?", help="score-card CSV")
    p.add_argument("--cards", dest="cards_opt", help="same as the positional argument")
    p.add_argument("--agreement", action="store_true", help="also report inter-rater agreement")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("judge", help="pairwise judging of two report directories")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--judge-transcripts", required=True)
    p.add_argument("--rubric")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--label-a", default="A")
    p.add_argument("--label-b", default="B")
    p.add_argument("--out", help="directory for verdict transcripts")
    p.set_defaults(fn=cmd_judge)

    p = sub.add_parser("gen", help="generate synthetic cases with scripted transcripts")
    p.add_argument("n", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--prefix", default="SYN")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("split", help="deterministic train/val/test split")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--ids", help="file with one case id per line")
    src.add_argument("--cases")
    p.add_argument("--proportions", default="0.69,0.08,0.23", help="train,val,test")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_split)

    p = sub.add_parser("curate", help="training-data curation steps")
    steps = p.add_subparsers(dest="step", required=True)
    s = steps.add_parser("decompose")
    s.add_argument("--cases", required=True)
    s.add_argument("--teacher-transcripts", required=True)
    s.add_argument("--workers", type=int, default=4)
    s.add_argument("--out", required=True)
    s = steps.add_parser("filter")
    s.add_argument("--cases", required=True)
    s.add_argument("--samples", required=True)
    s.add_argument("--tolerance", type=float, default=0.05)
    s.add_argument("--out", required=True)
    s = steps.add_parser("audit")
    s.add_argument("--samples", required=True)
    s.add_argument("--rate", type=float, default=0.10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s = steps.add_parser("review")
    s.add_argument("--samples", required=True)
    s.add_argument("--reviews", required=True)
    s.add_argument("--out", required=True)
    s = steps.add_parser("export")
    s.add_argument("--samples", required=True)
    s.add_argument("--split", required=True)
    s.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_curate)

    p = sub.add_parser("serve", help="start the HTTP intake service")
    _pipeline_args(p)
    p.add_argument("--store")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.set_defaults(fn=cmd_serve)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
    try:
        return args.fn(args)
    except (MdtError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
