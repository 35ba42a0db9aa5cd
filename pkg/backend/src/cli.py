"""
Command-line surface.

    python cli.py synth    --config run.yaml --out out/
    python cli.py validate --config run.yaml
    python cli.py solve    --config run.yaml
    python cli.py sweep    --config run.yaml --threads 8
    python cli.py report   --config run.yaml --out out/
    python cli.py audit    --out out/

Exit codes: 0 success, 1 validation or data failure, 2 revenue audit failure.
"""

import argparse
import sys
from pathlib import Path
from typing import Iterable, List, Optional

from billing import AuditResult
from config import get_settings
from domain import read_attributes_csv, validate_rule_table, write_attributes_csv
from error_handler import EXIT_OK, EXIT_VALIDATION, ErrorContext, ErrorHandler
from exceptions import AuditFailure, TariffSimError
from logging_config import setup_logging
from metering import classify_block, parse_metering, write_exclusion_report, write_issue_log, write_metering_csv
from models import RunConfig, load_run_config, with_overrides
from reports import (
    BILLS_NAME,
    MANIFEST_NAME,
    audit_export,
    emit_rates_table,
    write_reports,
    write_sweep_outputs,
    write_table,
)
from sweep import resolve_rules, run_sweep, solve_run
from synthpop import (
    ShapeLibrary,
    annual_energy,
    apportion_categories,
    category_keys,
    generate_population,
    iter_profile_blocks,
    load_population_spec,
)

logger = setup_logging(__name__)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None,
                        help="Run configuration YAML (default: bundled default run)")
    common.add_argument("--out", type=Path, default=None, help="Output directory (overrides output_dir)")
    common.add_argument("--seed", type=int, default=None, help="Synthetic population seed")
    common.add_argument("--threads", type=int, default=None,
                        help="Worker threads; changes speed only, never output")
    common.add_argument("--strict", action="store_true", default=None,
                        help="Fail on unmapped combinations instead of reporting them")

    parser = argparse.ArgumentParser(
        prog="tariffsim",
        description="Revenue-neutral grid tariff design and cross-subsidy analysis",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    synth = commands.add_parser("synth", parents=[common], help="Generate a synthetic population")
    synth.add_argument("--households", type=int, default=None, help="Override the household count")
    synth.add_argument("--gzip", action="store_true", help="Compress the metering file")

    commands.add_parser("validate", parents=[common], help="Check rule table, population and input data")
    commands.add_parser("solve", parents=[common], help="Print solved rates per scenario")
    commands.add_parser("sweep", parents=[common], help="Bill all scenarios x factors and audit them")
    commands.add_parser("report", parents=[common], help="Sweep and write the report tables")

    audit = commands.add_parser("audit", parents=[common], help="Re-verify a bill export")
    audit.add_argument("--bills", type=Path, default=None, help=f"Bill export (default: <out>/{BILLS_NAME})")
    audit.add_argument("--manifest", type=Path, default=None,
                       help=f"Run manifest (default: <out>/{MANIFEST_NAME})")
    return parser


def load_config(args: argparse.Namespace) -> RunConfig:
    """Read the run file and apply command-line overrides."""
    config = load_run_config(args.config)
    overrides = {}
    if args.out is not None:
        overrides["output_dir"] = args.out
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.threads is not None:
        overrides["threads"] = args.threads
    if args.strict:
        overrides["strict"] = True
    if getattr(args, "households", None) is not None:
        overrides["households"] = args.households
    return with_overrides(config, overrides)


def _print_lines(lines: Iterable[str]):
    for line in lines:
        print(line)


def raise_on_failed(audits: List[AuditResult]):
    failed = [a for a in audits if not a.passed]
    for audit in failed:
        print(f"audit failed: {audit.cell} residual {audit.residual} exceeds {audit.tolerance} quanta",
              file=sys.stderr)
    if failed:
        worst = max(failed, key=lambda a: abs(a.residual))
        raise AuditFailure(worst.cell, worst.residual, worst.tolerance)


def cmd_synth(args: argparse.Namespace, config: RunConfig) -> int:
    rules = resolve_rules(config)
    spec = load_population_spec(config.population, households=config.households, seed=config.seed,
                                strict=config.strict)
    population = generate_population(spec, rules)
    annual = annual_energy(population)
    shapes = ShapeLibrary.default(spec.hours, spec.shape_parameters)

    out = Path(config.output_dir)
    write_attributes_csv(out / "attributes.csv", population.attributes)
    metering_path = out / ("metering.csv.gz" if args.gzip else "metering.csv")
    rows = write_metering_csv(metering_path, iter_profile_blocks(population, shapes, annual,
                                                                 get_settings().chunk_households))
    print(f"wrote {len(population)} households and {rows} readings to {out}")
    return EXIT_OK


def cmd_validate(args: argparse.Namespace, config: RunConfig) -> int:
    rules = resolve_rules(config)
    report = validate_rule_table(rules)
    _print_lines(report.entries())
    print(f"rule table: {len(rules.rules)} rules, {len(rules.keys)} admitted keys, {len(report)} problems")
    ok = report.is_valid

    if config.uses_metering:
        attributes = read_attributes_csv(config.attributes)
        block, issues = parse_metering(config.metering)
        _, exclusions = classify_block(block, attributes, rules, strict=config.strict)
        out = Path(config.output_dir)
        if issues:
            write_issue_log(out / "metering_issues.csv", issues)
        if exclusions:
            write_exclusion_report(out / "exclusions.csv", exclusions)
        print(f"metering: {len(block)} households, {int(block.faulty.sum())} faulty slots, "
              f"{len(issues)} issues, {len(exclusions)} unclassified")
        if config.strict and (issues or exclusions):
            ok = False
    else:
        spec = load_population_spec(config.population, households=config.households, seed=config.seed,
                                    strict=config.strict)
        counts = apportion_categories(spec)
        category_keys(spec, rules)
        print(f"population: {spec.households} households over {len(counts)} categories")
    return EXIT_OK if ok else EXIT_VALIDATION


def cmd_solve(args: argparse.Namespace, config: RunConfig) -> int:
    solved = solve_run(config)
    table = emit_rates_table(solved.rates)
    print(table.to_csv(index=False, lineterminator="\n"), end="")
    if args.out is not None:
        write_table(table, Path(config.output_dir) / "rates.csv")
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace, config: RunConfig) -> int:
    result = run_sweep(config)
    write_sweep_outputs(result, config.output_dir)
    print(f"{len(result.cells)} cells, {len(result.failed_audits())} failed audits")
    raise_on_failed(result.audits())
    return EXIT_OK


def cmd_report(args: argparse.Namespace, config: RunConfig) -> int:
    result = run_sweep(config)
    paths = write_sweep_outputs(result, config.output_dir)
    paths += write_reports(result, config.output_dir, config.reported_factors())
    _print_lines(str(p) for p in paths)
    raise_on_failed(result.audits())
    return EXIT_OK


def cmd_audit(args: argparse.Namespace, config: RunConfig) -> int:
    out = Path(config.output_dir)
    results = audit_export(args.bills or out / BILLS_NAME, args.manifest or out / MANIFEST_NAME)
    for audit in results:
        print(f"{audit.cell}: residual {audit.residual} / {audit.tolerance} quanta "
              f"{'ok' if audit.passed else 'FAILED'}")
    raise_on_failed(results)
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "validate": cmd_validate,
    "solve": cmd_solve,
    "sweep": cmd_sweep,
    "report": cmd_report,
    "audit": cmd_audit,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args)
        with ErrorContext(args.command, {"config": str(args.config) if args.config else "default"}):
            return COMMANDS[args.command](args, config)
    except TariffSimError as e:
        print(f"error: {e}", file=sys.stderr)
        return ErrorHandler.exit_code_for(e)


if __name__ == "__main__":
    sys.exit(main())
