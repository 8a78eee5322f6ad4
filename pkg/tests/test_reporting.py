import csv

import pytest

from tenantgate.evalkit.abac_cases import run_abac_matrix
from tenantgate.evalkit.reporting import assemble_report, emit_report, render_summary
from tenantgate.policy import DENY, PERMIT


class TestAbacMatrix:
    def test_48_cases_all_correct(self):
        report = run_abac_matrix()
        assert report["total"] == 48
        assert report["correct"] == 48
        assert report["accuracy"] == 1.0
        assert report["false_positives"] == 0

    def test_owner_rows_permit_under_default_policy(self):
        rows = run_abac_matrix()["cases"]
        owner_default = [r for r in rows if r["case_id"].startswith("owner/") and "/default/" in r["case_id"]]
        assert len(owner_default) == 8
        assert all(r["actual"] == PERMIT for r in owner_default)

    def test_explicit_deny_rows_deny_despite_overlap(self):
        rows = run_abac_matrix()["cases"]
        denies = [r for r in rows if "default_plus_tenant_deny" in r["case_id"]]
        assert len(denies) == 24
        assert all(r["actual"] == DENY for r in denies)

    def test_request_granularity_agrees(self):
        rows = {r["case_id"]: r["actual"] for r in run_abac_matrix()["cases"]}
        for case_id, actual in rows.items():
            if case_id.endswith("/resource"):
                assert rows[case_id.replace("/resource", "/chunk")] == actual


def sample_report() -> dict:
    return assemble_report(
        7,
        64,
        {
            "security": {
                "A": {
                    "orchestration": "client",
                    "retrieval": "ungated",
                    "ctlr": 1.0,
                    "avr": 0.5,
                    "injection_probes": 90,
                    "injection_leaked": 90,
                    "injection_leak_rate": 1.0,
                    "api_calls": 10,
                    "leaked_calls": 5,
                },
                "D": {
                    "orchestration": "server",
                    "retrieval": "gated",
                    "ctlr": 0.0,
                    "avr": 0.0,
                    "injection_probes": 90,
                    "injection_leaked": 0,
                    "injection_leak_rate": 0.0,
                    "api_calls": 10,
                    "leaked_calls": 0,
                },
                "checks": [{"name": "demo_check", "passed": True, "detail": "ok"}],
            },
            "abac": run_abac_matrix(),
        },
    )


class TestEmitReport:
    def test_same_report_twice_is_byte_identical(self, tmp_path):
        report = sample_report()
        paths_a = emit_report(report, tmp_path / "a")
        paths_b = emit_report(report, tmp_path / "b")
        for key in ("json", "csv", "summary"):
            assert paths_a[key].read_bytes() == paths_b[key].read_bytes()

    def test_csv_rows_are_configs_times_metrics(self, tmp_path):
        report = sample_report()
        paths = emit_report(report, tmp_path)
        with open(paths["csv"]) as fh:
            rows = [r for r in csv.reader(fh)][1:]
        security_rows = [r for r in rows if r[0].startswith("security.") and not r[0].startswith("security.checks")]
        configs = {r[0].split(".")[1] for r in security_rows}
        metrics_per_config = len(security_rows) / len(configs)
        assert configs == {"A", "D"}
        assert len(security_rows) == len(configs) * metrics_per_config
        assert metrics_per_config == 9

    def test_summary_carries_seed_and_environment(self, tmp_path):
        report = sample_report()
        summary = (emit_report(report, tmp_path)["summary"]).read_text()
        assert "seed: 7" in summary
        assert "numpy=" in summary and "python=" in summary
        assert "PASS demo_check" in summary

    def test_checks_aggregate(self):
        report = sample_report()
        names = [c["name"] for c in report["checks"]]
        assert "demo_check" in names and "abac_matrix_all_correct" in names

    def test_render_summary_handles_all_sections(self):
        text = render_summary(sample_report())
        assert "[authorization matrix]" in text
        assert "48/48 correct" in text

    def test_unwritable_path_raises(self, tmp_path):
        from tenantgate.errors import ValidationError

        target = tmp_path / "file"
        target.write_text("occupied")
        with pytest.raises(ValidationError):
            emit_report(sample_report(), target / "nested")
