"""Command-line entry points.

Subcommands: ``synth-gen``, ``run``, ``eval``, ``report``. All configs are
UTF-8 JSON; unknown keys are tolerated. Exit codes: 0 ok, 2 config error,
3 data error, 4 undefined-metric error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .adapters import average_bank, read_bank_checkpoint
from .errors import (
    ConfigError,
    ContractViolationError,
    DataError,
    UndefinedMetricError,
)
from .featio import load_manifest, read_text_bank
from .harness import (
    RunState,
    load_run_reports,
    render_table,
    report_to_dict,
    run_scenario,
    scenario_from_dict,
    synth_from_dict,
    synth_generate,
    evaluate_classes,
    write_report_csv,
)
from .scoring import ScoreConfig
from .training import TrainConfig


def _load_json(path, what: str) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"{what} file not found: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{what} {path}: invalid JSON ({exc})") from exc


def _config_from_dict(cls, doc: dict, what: str):
    known = set(cls.__dataclass_fields__)
    kwargs = {k: v for k, v in doc.items() if k in known}
    try:
        return cls(**kwargs)
    except ContractViolationError as exc:
        raise ConfigError(f"invalid {what}: {exc}") from exc


def cmd_synth_gen(args) -> int:
    spec = synth_from_dict(_load_json(args.spec, "synth spec"))
    manifest = synth_generate(spec, args.out)
    print(f"wrote {len(manifest.classes)} classes under {args.out}")
    return 0


def cmd_run(args) -> int:
    scenario_path = Path(args.scenario)
    spec = scenario_from_dict(
        _load_json(scenario_path, "scenario"), base_dir=scenario_path.parent
    )
    if args.seed is not None:
        spec.seed = args.seed
    train_cfg = TrainConfig()
    if args.train is not None:
        train_cfg = _config_from_dict(
            TrainConfig, _load_json(args.train, "train config"), "train config"
        )
    score_cfg = ScoreConfig()
    if args.score is not None:
        score_cfg = _config_from_dict(
            ScoreConfig, _load_json(args.score, "score config"), "score config"
        )
    run = run_scenario(spec, train_cfg, score_cfg, out_dir=args.out)
    print(render_table(_labelled(run)))
    return 0


def _labelled(run: RunState):
    out = [(f"checkpoint_{r.checkpoint_id:03d}", r) for r in run.history]
    out.extend((f"zero_shot_{i:03d}", r) for i, r in enumerate(run.zero_shot))
    return out


def cmd_eval(args) -> int:
    bank = read_bank_checkpoint(args.bank)
    manifest = load_manifest(args.manifest)
    text = read_text_bank(args.text)
    score_cfg = ScoreConfig()
    if args.score is not None:
        score_cfg = _config_from_dict(
            ScoreConfig, _load_json(args.score, "score config"), "score config"
        )
    class_ids = [c for c in args.classes.split(",") if c]
    if not class_ids:
        raise ConfigError("no classes given")
    report = evaluate_classes(
        average_bank(bank), class_ids, manifest, text, args.alpha, score_cfg,
        checkpoint_id=len(bank.tasks),
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "eval.json").write_text(
        json.dumps(report_to_dict(report), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    write_report_csv([("eval", report)], out_dir / "eval.csv")
    print(render_table([("eval", report)]))
    return 0


def cmd_report(args) -> int:
    reports = load_run_reports(args.run)
    reports_dir = Path(args.run) / "reports"
    if args.fmt == "csv":
        write_report_csv(reports, reports_dir / "report.csv")
        print(f"wrote {reports_dir / 'report.csv'}")
    else:
        doc = {"reports": [{"report_id": rid, **report_to_dict(r)} for rid, r in reports]}
        (reports_dir / "report.json").write_text(
            json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        print(f"wrote {reports_dir / 'report.json'}")
    print(render_table(reports))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adbank",
        description="Continual anomaly detection on encoder feature grids",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-gen", help="generate a synthetic dataset tree")
    p.add_argument("--spec", required=True, help="SynthSpec JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth_gen)

    p = sub.add_parser("run", help="run a full continual scenario")
    p.add_argument("--scenario", required=True, help="ScenarioSpec JSON")
    p.add_argument("--train", help="TrainConfig JSON (defaults if omitted)")
    p.add_argument("--score", help="ScoreConfig JSON (defaults if omitted)")
    p.add_argument("--out", required=True, help="run output directory")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="evaluate classes with a bank checkpoint")
    p.add_argument("--bank", required=True, help="adapter bank checkpoint (.cmab)")
    p.add_argument("--manifest", required=True, help="dataset manifest JSON")
    p.add_argument("--text", required=True, help="text bank (.cmtx)")
    p.add_argument("--classes", required=True, help="comma-separated class ids")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--score", help="ScoreConfig JSON")
    p.add_argument("--alpha", type=float, default=0.9, help="residual blend ratio")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="re-emit reports for a completed run")
    p.add_argument("--run", required=True, help="run directory")
    p.add_argument("--fmt", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except UndefinedMetricError as exc:
        print(f"undefined metric: {exc}", file=sys.stderr)
        return 4
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
