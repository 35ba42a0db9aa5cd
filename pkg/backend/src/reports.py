"""
Report tables and bill export for a finished sweep.

All tables are pandas frames with string-rendered numbers (dot decimals,
half-even), written with ``to_csv`` so the files are byte-stable.
"""

import json
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import pandas as pd

from billing import BASE_CASE_ID, AuditResult, BillTotals, audit_revenue, component_shares
from domain import STATUS_TECH_GROUPS, Status, Tech, enumerate_groups
from exceptions import FormatError, file_operation_error
from logging_config import setup_logging
from metering import write_exclusion_report, write_issue_log
from money import CENTS, DECI, dkk_to_quanta, format_dkk, format_fraction, format_percent
from streaming_csv import StreamingCSVWriter
from sweep import SweepResult, cell_label, factor_label
from tariff import TariffRates

logger = setup_logging(__name__)

BILL_COLUMNS = ["group", "status", "tech", "scenario", "factor", "subscription", "offpeak", "peak", "total"]
MANIFEST_NAME = "run_manifest.json"
BILLS_NAME = "bills.csv"
# an export line rendered at 2 decimals is off by at most half a cent
EXPORT_ROUNDING_QUANTA = 50


def _factors(result: SweepResult, factors: Optional[Sequence[Fraction]]) -> List[Fraction]:
    return [Fraction(f) for f in factors] if factors is not None else list(result.factors)


def _avg_dkk(totals: Optional[BillTotals]) -> str:
    if totals is None or not totals.households:
        return ""
    return format_dkk(totals.exact_total, DECI)


def emit_avg_bill_table(result: SweepResult, factors: Optional[Sequence[Fraction]] = None) -> pd.DataFrame:
    """Average bill per status x tech group: base case, then every scenario at each factor."""
    factors = _factors(result, factors)
    rows = []
    for group in STATUS_TECH_GROUPS:
        row = {"group": group.label, BASE_CASE_ID: _avg_dkk(result.base_groups.get(group))}
        for scenario in result.scenarios:
            for factor in factors:
                row[cell_label(scenario.id, factor)] = _avg_dkk(result.cell(scenario.id, factor).groups.get(group))
        rows.append(row)
    return pd.DataFrame(rows)


def _share_row(group: str, scenario: str, factor: str, totals: Optional[BillTotals]) -> Dict[str, str]:
    if totals is None:
        return {"group": group, "scenario": scenario, "factor": factor,
                "subscription_pct": "", "offpeak_pct": "", "peak_pct": ""}
    sub, off, peak = component_shares(totals)
    return {"group": group, "scenario": scenario, "factor": factor,
            "subscription_pct": format_percent(sub), "offpeak_pct": format_percent(off),
            "peak_pct": format_percent(peak)}


def emit_component_share_table(result: SweepResult,
                               factors: Optional[Sequence[Fraction]] = None) -> pd.DataFrame:
    """Subscription, off-peak and peak share of each group's average bill."""
    factors = _factors(result, factors)
    rows = []
    for group in STATUS_TECH_GROUPS:
        rows.append(_share_row(group.label, BASE_CASE_ID, factor_label(Fraction(1)),
                               result.base_groups.get(group)))
        for scenario in result.scenarios:
            for factor in factors:
                rows.append(_share_row(group.label, scenario.id, factor_label(factor),
                                       result.cell(scenario.id, factor).groups.get(group)))
    return pd.DataFrame(rows)


def emit_delta_table(result: SweepResult) -> pd.DataFrame:
    """Percent change of each group's average bill against its own base-case average."""
    rows = []
    for group in result.groups:
        for scenario in result.scenarios:
            for factor in result.factors:
                delta = result.delta(scenario.id, factor, group)
                rows.append({
                    "group": group.label,
                    "scenario": scenario.id,
                    "factor": factor_label(factor),
                    "delta_pct": format_percent(delta.delta),
                })
    return pd.DataFrame(rows, columns=["group", "scenario", "factor", "delta_pct"])


def emit_aggregate_table(result: SweepResult, scenario_id: Optional[str] = None,
                         factor: Optional[Fraction] = None) -> pd.DataFrame:
    """
    Total paid per status x tech cell with row and column margins, in DKK.

    Defaults to the base case; pass ``scenario_id`` and ``factor`` for a sweep cell.
    """
    if scenario_id is None:
        groups = result.base_groups
    else:
        groups = result.cell(scenario_id, 1 if factor is None else factor).groups

    techs = list(Tech)
    rows = []
    column_totals = {tech: 0 for tech in techs}
    for status in Status:
        row = {"status": status.value}
        row_total = 0
        for tech in techs:
            totals = next((t for g, t in groups.items() if g.status is status and g.tech is tech), None)
            amount = totals.total if totals else 0
            row[tech.value] = format_dkk(amount)
            row_total += amount
            column_totals[tech] += amount
        row["Total"] = format_dkk(row_total)
        rows.append(row)
    grand = sum(column_totals.values())
    rows.append({"status": "Total", **{t.value: format_dkk(column_totals[t]) for t in techs},
                 "Total": format_dkk(grand)})
    return pd.DataFrame(rows, columns=["status"] + [t.value for t in techs] + ["Total"])


def emit_rates_table(rates_list: Sequence[TariffRates]) -> pd.DataFrame:
    """Solved fee and effective ToU rates per scenario."""
    rows = []
    for rates in rates_list:
        rows.append({
            "scenario": rates.scenario_id,
            "volumetric_share": format_fraction(rates.volumetric_share, 6),
            "fee_dkk": format_dkk(rates.fee_quanta),
            "offpeak_ore_per_kwh": format_fraction(rates.gt_base_eff, 6),
            "peak_ore_per_kwh": format_fraction(rates.gt_peak_eff, 6),
            "peak_ratio": format_fraction(rates.calibration.peak_ratio, 3),
        })
    return pd.DataFrame(rows)


def write_table(frame: pd.DataFrame, path: Union[str, Path]) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, lineterminator="\n")
    except OSError as e:
        raise file_operation_error(str(e), str(path), "write_table")
    logger.info("Wrote report", extra={"path": str(path), "rows": len(frame)})
    return path


def write_bill_export(result: SweepResult, out_dir: Union[str, Path]) -> Path:
    """Per group key bill sums for the base case and every sweep cell, in DKK."""
    path = Path(out_dir) / BILLS_NAME
    groups = {key.id: group for key, group in enumerate_groups(result.rules)}

    def row(key_id: int, scenario: str, factor: str, totals: BillTotals) -> List[str]:
        group = groups[key_id]
        return [result.rules.keys[key_id].label, group.status.value, group.tech.value, scenario, factor,
                format_dkk(totals.subscription, CENTS), format_dkk(totals.offpeak, CENTS),
                format_dkk(totals.peak, CENTS), format_dkk(totals.total, CENTS)]

    with StreamingCSVWriter(path, BILL_COLUMNS) as writer:
        for key_id, totals in sorted(result.base_keys.items()):
            writer.write_row(row(key_id, BASE_CASE_ID, factor_label(Fraction(1)), totals))
        for scenario in result.scenarios:
            for factor in result.factors:
                for key_id, totals in sorted(result.cell(scenario.id, factor).keys.items()):
                    writer.write_row(row(key_id, scenario.id, factor_label(factor), totals))
        logger.info("Wrote bill export", extra={"path": str(path), "rows": writer.row_count})
    return path


def build_manifest(result: SweepResult) -> Dict[str, Any]:
    cells = {audit.cell: audit.tolerance for audit in result.audits()}
    return {
        "audited": result.audited,
        "target_quanta": result.target_quanta,
        "households": len(result.households),
        "groups": len(result.base_keys),
        "tolerance_quanta": cells,
    }


def write_manifest(result: SweepResult, out_dir: Union[str, Path]) -> Path:
    path = Path(out_dir) / MANIFEST_NAME
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(build_manifest(result), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as e:
        raise file_operation_error(str(e), str(path), "write_manifest")
    return path


def read_manifest(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise file_operation_error(str(e), str(path), "read_manifest")
    except json.JSONDecodeError as e:
        raise FormatError(f"Manifest is not valid JSON: {e.msg}", file_path=str(path), line=e.lineno)
    for key in ("audited", "target_quanta", "tolerance_quanta"):
        if key not in manifest:
            raise FormatError(f"Manifest lacks '{key}'", file_path=str(path), column=key)
    return manifest


def audit_export(bills_path: Union[str, Path], manifest_path: Union[str, Path]) -> List[AuditResult]:
    """
    Re-verify revenue neutrality of a bill export against its manifest.

    Each exported line may be off by half a cent, so the recorded tolerance
    is widened by that much per line.
    """
    manifest = read_manifest(manifest_path)
    if not manifest["audited"]:
        logger.warning("Export was produced from a pinned base case; nothing to audit",
                       extra={"path": str(bills_path)})
        return []
    try:
        frame = pd.read_csv(bills_path, dtype=str, keep_default_na=False)
    except OSError as e:
        raise file_operation_error(str(e), str(bills_path), "audit_export")
    missing = [c for c in BILL_COLUMNS if c not in frame.columns]
    if missing:
        raise FormatError(f"Bill export lacks columns {missing}", file_path=str(bills_path), line=1)

    tolerances = manifest["tolerance_quanta"]
    results = []
    for (scenario, factor), rows in frame.groupby(["scenario", "factor"], sort=False):
        label = f"{scenario}@{factor}"
        if label not in tolerances:
            raise FormatError(f"Export cell {label} is not in the manifest", file_path=str(bills_path))
        collected = sum(dkk_to_quanta(v) for v in rows["total"])
        tolerance = int(tolerances[label]) + EXPORT_ROUNDING_QUANTA * len(rows)
        results.append(audit_revenue(collected, int(manifest["target_quanta"]), tolerance, cell=label))
    return results


def write_sweep_outputs(result: SweepResult, out_dir: Union[str, Path]) -> List[Path]:
    """Bill export, manifest and, for metering runs, the exclusion and issue logs."""
    out_dir = Path(out_dir)
    paths = [write_bill_export(result, out_dir), write_manifest(result, out_dir)]
    if result.households.exclusions:
        path = out_dir / "exclusions.csv"
        write_exclusion_report(path, result.households.exclusions)
        paths.append(path)
    if result.households.issues:
        path = out_dir / "metering_issues.csv"
        write_issue_log(path, result.households.issues)
        paths.append(path)
    return paths


def write_reports(result: SweepResult, out_dir: Union[str, Path],
                  report_factors: Optional[Sequence[Fraction]] = None) -> List[Path]:
    """The four report tables plus the rates table."""
    out_dir = Path(out_dir)
    return [
        write_table(emit_rates_table([result.rates[s.id] for s in result.scenarios]), out_dir / "rates.csv"),
        write_table(emit_avg_bill_table(result, report_factors), out_dir / "avg_bills.csv"),
        write_table(emit_component_share_table(result, report_factors), out_dir / "component_shares.csv"),
        write_table(emit_delta_table(result), out_dir / "deltas.csv"),
        write_table(emit_aggregate_table(result), out_dir / "aggregate_base.csv"),
    ]
