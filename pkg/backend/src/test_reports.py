import json
from decimal import Decimal
from fractions import Fraction
from unittest.mock import patch

import pandas as pd
import pytest

from conftest import small_run, write_yaml
from exceptions import FormatError
from models import load_run_config
from money import format_dkk
from reports import (
    BILLS_NAME,
    MANIFEST_NAME,
    audit_export,
    build_manifest,
    emit_aggregate_table,
    emit_avg_bill_table,
    emit_component_share_table,
    emit_delta_table,
    emit_rates_table,
    read_manifest,
    write_reports,
    write_sweep_outputs,
)
from sweep import run_sweep


@pytest.fixture(scope="module")
def result(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("reports")
    run = small_run(tmp, scenarios=[{"id": "subs_100", "volumetric_share": 0},
                                    {"id": "vol_100", "volumetric_share": 1}],
                    factor_grid=[1.0, 0.0], report_factors=[1.0, 0.0])
    return run_sweep(load_run_config(write_yaml(tmp / "run.yaml", run)))


def shift_total(bills_path, row, dkk):
    frame = pd.read_csv(bills_path, dtype=str, keep_default_na=False)
    frame.loc[row, "total"] = str(Decimal(frame.loc[row, "total"]) + Decimal(dkk))
    frame.to_csv(bills_path, index=False, lineterminator="\n")


class TestTables:
    def test_avg_bill_table(self, result):
        table = emit_avg_bill_table(result)
        assert list(table.columns) == ["group", "base", "subs_100@1.0", "subs_100@0.0", "vol_100@1.0", "vol_100@0.0"]
        assert len(table) == 8
        fee = format_dkk(result.rates["subs_100"].fee_quanta, Decimal("0.1"))
        assert set(table["subs_100@1.0"]) == {fee}
        assert table.loc[0, "subs_100@0.0"] == "0.0"
        assert table["vol_100@1.0"].equals(table["vol_100@0.0"])

    def test_report_factor_subset(self, result):
        table = emit_avg_bill_table(result, [Fraction(0)])
        assert list(table.columns) == ["group", "base", "subs_100@0.0", "vol_100@0.0"]

    def test_component_shares(self, result):
        table = emit_component_share_table(result)
        assert len(table) == 8 * (1 + 2 * 2)
        subs = table[(table["scenario"] == "subs_100") & (table["factor"] == "1.0")]
        assert set(subs["subscription_pct"]) == {"100.00"}
        vol = table[(table["scenario"] == "vol_100")]
        assert set(vol["subscription_pct"]) == {"0.00"}
        base = table[table["scenario"] == "base"]
        for _, row in base.iterrows():
            assert abs(float(row["subscription_pct"]) + float(row["offpeak_pct"]) - 100) < 0.02
            assert row["peak_pct"] == "0.00"

    def test_delta_table(self, result):
        table = emit_delta_table(result)
        assert len(table) == 8 * 2 * 2
        low = table[(table["group"] == "Low/NoTech") & (table["scenario"] == "subs_100")]
        assert float(low[low["factor"] == "0.0"]["delta_pct"].iloc[0]) == -100.0

    def test_aggregate_table(self, result):
        table = emit_aggregate_table(result)
        assert list(table.columns) == ["status", "NoTech", "HP", "EV", "Total"]
        assert list(table["status"]) == ["Low", "Medium", "High", "Total"]
        assert table.loc[0, "EV"] == "0.00"
        collected = sum(t.total for t in result.base_groups.values())
        assert table.loc[3, "Total"] == format_dkk(collected)

    def test_aggregate_table_for_cell(self, result):
        table = emit_aggregate_table(result, "subs_100", Fraction(0))
        assert table.loc[0, "Total"] == "0.00"

    def test_rates_table(self, result):
        table = emit_rates_table([result.rates["subs_100"], result.rates["vol_100"]])
        assert list(table["scenario"]) == ["subs_100", "vol_100"]
        assert table.loc[0, "offpeak_ore_per_kwh"] == "0.000000"
        assert table.loc[1, "fee_dkk"] == "0.00"


class TestExport:
    def test_outputs_and_audit(self, result, tmp_path):
        paths = write_sweep_outputs(result, tmp_path)
        assert [p.name for p in paths] == [BILLS_NAME, MANIFEST_NAME]
        audits = audit_export(tmp_path / BILLS_NAME, tmp_path / MANIFEST_NAME)
        assert len(audits) == 1 + 2 * 2
        assert all(a.passed for a in audits)
        assert audits[0].cell == "base@1.0"

    def test_one_krone_error_fails_audit(self, result, tmp_path):
        write_sweep_outputs(result, tmp_path)
        frame = pd.read_csv(tmp_path / BILLS_NAME, dtype=str)
        row = int(frame.index[frame["scenario"] == "vol_100"][0])
        shift_total(tmp_path / BILLS_NAME, row, 1)
        failed = [a for a in audit_export(tmp_path / BILLS_NAME, tmp_path / MANIFEST_NAME) if not a.passed]
        assert [a.cell for a in failed] == ["vol_100@1.0"]
        assert failed[0].residual > 9_000

    def test_bill_export_is_byte_stable(self, result, tmp_path):
        first = write_sweep_outputs(result, tmp_path / "a")[0].read_bytes()
        second = write_sweep_outputs(result, tmp_path / "b")[0].read_bytes()
        assert first == second
        assert first.startswith(b"group,status,tech,scenario,factor,subscription,offpeak,peak,total\n")

    def test_manifest(self, result):
        manifest = build_manifest(result)
        assert manifest["audited"] is True
        assert manifest["households"] == 240
        assert manifest["target_quanta"] == result.target_quanta
        assert set(manifest["tolerance_quanta"]) == {"base@1.0", "subs_100@1.0", "subs_100@0.0",
                                                    "vol_100@1.0", "vol_100@0.0"}

    def test_reports_written(self, result, tmp_path):
        paths = write_reports(result, tmp_path, [Fraction(1), Fraction(0)])
        assert [p.name for p in paths] == ["rates.csv", "avg_bills.csv", "component_shares.csv",
                                           "deltas.csv", "aggregate_base.csv"]
        assert all(p.exists() for p in paths)


class TestManifestErrors:
    def test_invalid_json(self, tmp_path):
        path = tmp_path / MANIFEST_NAME
        path.write_text("{not json", encoding="utf-8")
        with pytest.raises(FormatError, match="not valid JSON"):
            read_manifest(path)

    def test_missing_key(self, tmp_path):
        path = tmp_path / MANIFEST_NAME
        path.write_text(json.dumps({"audited": True, "target_quanta": 1}), encoding="utf-8")
        with pytest.raises(FormatError, match="tolerance_quanta"):
            read_manifest(path)

    def test_unaudited_export_is_skipped(self, tmp_path):
        manifest = tmp_path / MANIFEST_NAME
        manifest.write_text(json.dumps({"audited": False, "target_quanta": 0, "tolerance_quanta": {}}),
                            encoding="utf-8")
        with patch("reports.logger") as mock_logger:
            assert audit_export(tmp_path / BILLS_NAME, manifest) == []
        mock_logger.warning.assert_called_once()

    def test_cell_missing_from_manifest(self, result, tmp_path):
        write_sweep_outputs(result, tmp_path)
        manifest = json.loads((tmp_path / MANIFEST_NAME).read_text(encoding="utf-8"))
        del manifest["tolerance_quanta"]["vol_100@0.0"]
        (tmp_path / MANIFEST_NAME).write_text(json.dumps(manifest), encoding="utf-8")
        with pytest.raises(FormatError, match="vol_100@0.0"):
            audit_export(tmp_path / BILLS_NAME, tmp_path / MANIFEST_NAME)
