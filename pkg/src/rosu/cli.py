"""Command-line entry point: ``rosu {audit,run,ablate,couple,sweep}``.

Exit codes: 0 on success, 1 when an audit assertion fails, 2 on
configuration or file errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import audit as audit_mod
from . import experiments as ex
from .errors import ConfigError, ReportIOError

EXIT_OK, EXIT_AUDIT_FAILED, EXIT_USAGE = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rosu", description="Retain-orthogonal unlearning experiments and audits.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, needs_config=True):
        sp.add_argument("--config", type=Path, required=needs_config, help="JSON config file")
        sp.add_argument("--out", type=Path, default=Path("."), help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--format", choices=("csv", "jsonl"), default="csv")

    a = sub.add_parser("audit", help="run the claim registry and write a JSONL report")
    common(a, needs_config=False)
    a.add_argument("--quick", action="store_true", help="small instance counts (smoke test)")
    common(sub.add_parser("run", help="single experiment"))
    common(sub.add_parser("ablate", help="full / zero-order / beta-delta-only / eta-v-only"))
    common(sub.add_parser("couple", help="per-step gradient coupling"))
    common(sub.add_parser("sweep", help="grid of experiments: {\"base\": {...}, \"grid\": {...}}"))
    return p


def _with_seed(cfg: ex.ExperimentConfig, seed):
    return cfg if seed is None else cfg.replace(seed=seed)


def _rows_name(stem: str, fmt: str) -> str:
    return f"{stem}.{fmt}"


def _cmd_audit(args) -> int:
    seed = 0 if args.seed is None else args.seed
    if args.config is not None:
        raise ConfigError("audit takes no --config")
    scale = audit_mod.QUICK_SCALE if args.quick else audit_mod.FULL_SCALE
    records = audit_mod.run_registry(seed, scale)
    path = args.out / "audit_report.jsonl"
    audit_mod.emit_report(records, path)
    summary = audit_mod.summarize(records)
    failed = [r for r in records if not r.passed]
    print(f"audit: {summary['n_records'] - len(failed)}/{summary['n_records']} records passed -> {path}")
    for claim_id, c in summary["summary"].items():
        if c["passed"] != c["total"]:
            print(f"  FAILED {claim_id}: {c['passed']}/{c['total']}", file=sys.stderr)
    return EXIT_OK if not failed else EXIT_AUDIT_FAILED


def _cmd_run(args) -> int:
    cfg = _with_seed(ex.load_config(args.config), args.seed)
    rec = ex.run(cfg)
    ex.write_rows(rec.rows, args.out / _rows_name("run", args.format), args.format)
    ex.write_text(args.out / "summary.json", ex.summary_json(rec))
    print(f"run: {len(rec.rows)} rows -> {args.out}")
    return EXIT_OK


def _cmd_ablate(args) -> int:
    base = _with_seed(ex.load_config(args.config), args.seed)
    summaries = {}
    for name, cfg in ex.ablation_configs(base).items():
        rec = ex.run(cfg)
        ex.write_rows(rec.rows, args.out / _rows_name(f"ablation_{name}", args.format), args.format)
        summaries[name] = rec.final_summary
    ex.write_text(args.out / "ablation_summary.json",
                  json.dumps(summaries, indent=2, sort_keys=True, allow_nan=False) + "\n")
    print(f"ablate: {len(summaries)} variants -> {args.out}")
    return EXIT_OK


def _cmd_couple(args) -> int:
    cfg = _with_seed(ex.load_config(args.config), args.seed)
    values = ex.coupling_diagnosis(cfg)
    if args.format == "csv":
        text = "step,cos_coupling\n" + "".join(f"{t},{v:.17g}\n" for t, v in enumerate(values))
    else:
        text = "".join(json.dumps({"step": t, "cos_coupling": v}) + "\n" for t, v in enumerate(values))
    ex.write_text(args.out / _rows_name("coupling", args.format), text)
    print(f"couple: {len(values)} steps, mean {sum(values) / len(values):.4f} -> {args.out}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    try:
        spec = json.loads(args.config.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{args.config}: invalid JSON: {exc}") from exc
    if not isinstance(spec, dict) or set(spec) != {"base", "grid"}:
        raise ConfigError("sweep config must be an object with exactly 'base' and 'grid'")
    base = _with_seed(ex.ExperimentConfig.from_dict(spec["base"]), args.seed)
    configs = ex.sweep_configs(base, spec["grid"])
    keys = sorted(spec["grid"])
    index_rows = []
    summary_keys: list[str] = []
    for i, cfg in enumerate(configs):
        rec = ex.run(cfg)
        ex.write_rows(rec.rows, args.out / _rows_name(f"sweep_{i:03d}", args.format), args.format)
        summary_keys = summary_keys or sorted(rec.final_summary)
        d = cfg.to_dict()
        index_rows.append([str(i)] + [ex._fmt(d[k]) for k in keys]
                          + [ex._fmt(rec.final_summary.get(k)) for k in summary_keys])
    header = ["cell"] + keys + summary_keys
    text = ",".join(header) + "\n" + "".join(",".join(r) + "\n" for r in index_rows)
    ex.write_text(args.out / "sweep_index.csv", text)
    print(f"sweep: {len(configs)} cells -> {args.out}")
    return EXIT_OK


COMMANDS = {"audit": _cmd_audit, "run": _cmd_run, "ablate": _cmd_ablate, "couple": _cmd_couple,
            "sweep": _cmd_sweep}


def main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:  # argparse usage errors
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](args)
    except (ConfigError, ReportIOError, OSError) as exc:
        print(f"rosu {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
