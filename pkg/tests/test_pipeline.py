import time

import pytest
import yaml

from attackcorr.correlator import AlertEvent
from attackcorr.errors import InputError
from attackcorr.pipeline import (
    PHASES,
    CorrelationReport,
    PhaseError,
    RunConfig,
    bundled,
    parse_machine_report,
    prepare,
    read_alerts,
    render_report,
    run_pipeline,
)

EXPECTED_PR = {
    "Exploit Vulnerabilities of Web Services": 0.3,
    "Access Credential Data for VPN": 0.53,
    "VPN Server Configuration Compromised": 0.13,
    "Insider Attack": 0.33,
    "Dictionary Attack": 0.3,
    "Access to DSR Platform": 0.26,
    "Escalation of Privileges": 0.25,
    "Remote Control of DSR Platform": 0.61,
    "Theft of Personal Data": 0.61,
    "Manipulation of Smart Meter Data": 0.96,
    "Manipulation of Historical Data": 0.24,
    "Manipulation of Future Forecast Data": 0.06,
    "Sending Grid Harmful Control Commands": 0.93,
}
FIRED = {"Dictionary Attack", "Access to DSR Platform", "Escalation of Privileges", "Manipulation of Smart Meter Data"}


@pytest.fixture(scope="module")
def case_report(case_model, case_alerts):
    return case_model.report(case_alerts)


def test_case_study_rows(case_report):
    rows = {r.label: r for r in case_report.rows}
    assert set(rows) == set(EXPECTED_PR)
    assert {label: round(r.pr, 2) for label, r in rows.items()} == EXPECTED_PR
    assert {r.label for r in case_report.rows if r.fired} == FIRED
    assert [r.label for r in case_report.rows if r.predicted] == ["Sending Grid Harmful Control Commands"]
    assert case_report.display_probability == 0.93
    assert case_report.noise_assignments == []


def test_text_table(case_report):
    text = render_report(case_report)
    lines = text.splitlines()
    assert [c.strip() for c in lines[0].split("|")] == ["Attack Step", "Pr", "A_a", "A_p"]
    assert len(lines) == 2 + len(EXPECTED_PR)
    cells = {}
    for line in lines[2:]:
        parts = [c.strip() for c in line.split("|")]
        cells[parts[0]] = parts
    squeezed = [" ".join(line.split()) for line in lines]
    assert "Manipulation of Smart Meter Data | 0.96 | X |" in squeezed
    assert cells["Manipulation of Smart Meter Data"][1:] == ["0.96", "X", ""]
    assert cells["Sending Grid Harmful Control Commands"][1:] == ["0.93", "", "X"]
    assert cells["Insider Attack"][1:] == ["0.33", "", ""]


def test_empty_report_is_header_only():
    text = render_report(CorrelationReport([], {p: 0.0 for p in PHASES}, {}))
    assert len(text.splitlines()) == 2
    assert text.startswith("Attack Step | Pr | A_a | A_p")
    with pytest.raises(InputError):
        render_report(CorrelationReport([], {}, {}), "html")


def test_machine_round_trip(case_report):
    text = render_report(case_report, "machine")
    assert parse_machine_report(text) == case_report
    assert set(case_report.timings) == set(PHASES)


def test_machine_report_is_deterministic(case_alerts):
    config = RunConfig(timings=False, alerts=str(bundled("case_study_alerts.txt")))
    a = render_report(run_pipeline(config), "machine")
    b = render_report(run_pipeline(config), "machine")
    assert a == b


def test_counts_match_model(case_model, case_report):
    assert case_report.model_counts == {
        "kb_nodes": len(case_model.kg.nodes),
        "facts": len(case_model.facts),
        "hcpn_nodes": case_model.hcpn.node_count,
    }
    assert abs(case_report.model_counts["kb_nodes"] - 232) <= 0.2 * 232
    assert abs(case_report.model_counts["facts"] - 860) <= 0.2 * 860
    assert abs(case_report.model_counts["hcpn_nodes"] - 198) <= 0.2 * 198


def test_report_leaves_prepared_model_untouched(case_model, case_alerts):
    before = len(case_model.kg.nodes)
    case_model.report(case_alerts)
    assert len(case_model.kg.nodes) == before


def test_wall_time_budget():
    start = time.monotonic()
    report = run_pipeline(RunConfig(alerts=str(bundled("case_study_alerts.txt"))))
    assert time.monotonic() - start <= 10.0
    assert all(v >= 0.0 for v in report.timings.values())


def test_zero_detectors_and_empty_stream(tmp_path, case_path):
    doc = yaml.safe_load(case_path.read_text())
    doc["detectors"] = []
    scenario = tmp_path / "quiet.yaml"
    scenario.write_text(yaml.safe_dump(doc))
    alerts = tmp_path / "none.txt"
    alerts.write_text("")
    config = RunConfig(scenario=scenario, alerts=alerts, timings=False)
    model = prepare(config)
    report = model.report([])
    assert not any(r.fired for r in report.rows)
    hcpn = model.hcpn
    start = hcpn.closure(hcpn.initial_marking)
    enabled = [r for r in report.rows if hcpn.enabled(r.transition_id, start)]
    best = max(enabled, key=lambda r: (r.posterior, [-ord(c) for c in r.transition_id]))
    assert [r.label for r in report.rows if r.predicted] == [best.label]
    assert run_pipeline(config) == report


def test_truncated_stream(case_model, case_alerts):
    report = case_model.report(case_alerts[:2])
    assert [r.label for r in report.rows if r.fired] == ["Dictionary Attack"]
    assert [r.label for r in report.rows if r.predicted] == ["Access to DSR Platform"]


def test_unpinned_smart_meter_outranks_other_tampering(case_model_unpinned, case_alerts):
    before = {r.label: r for r in case_model_unpinned.report([]).rows}
    after = {r.label: r for r in case_model_unpinned.report(case_alerts).rows}
    meter = after["Manipulation of Smart Meter Data"]
    for other in ("Manipulation of Historical Data", "Manipulation of Future Forecast Data"):
        assert meter.posterior > after[other].posterior
        assert before["Manipulation of Smart Meter Data"].posterior == pytest.approx(before[other].posterior)
    for r in after.values():
        assert 0.0 <= r.pr <= 1.0 and 0.0 <= r.posterior <= 1.0


def test_unmatched_only_stream(case_model):
    alerts = [AlertEvent(10 * j, "net-ids-1", "dns_tunnel", "dsr-platform") for j in range(4)]
    report = case_model.report(alerts)
    assert not any(r.fired for r in report.rows)
    assert report.noise_assignments == [0, 1, 2, 3]


def test_config_checks(tmp_path):
    with pytest.raises(InputError):
        RunConfig().check()
    with pytest.raises(InputError):
        RunConfig(alerts="a", listen=1).check()
    with pytest.raises(InputError):
        RunConfig(alerts="a", format="xml").check()
    with pytest.raises(InputError):
        RunConfig(alerts="a", fp_rate=0.0).check()
    with pytest.raises(PhaseError) as info:
        run_pipeline(RunConfig(alerts=tmp_path / "missing.txt"))
    assert info.value.phase == "correlation" and info.value.exit_code == 2
    with pytest.raises(InputError):
        read_alerts(tmp_path / "missing.txt")


def test_errors_carry_phase(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("hosts:\n  - id: h\n    runs: [ghost]\n")
    alerts = tmp_path / "a.txt"
    alerts.write_text("")
    with pytest.raises(PhaseError) as info:
        run_pipeline(RunConfig(scenario=bad, alerts=alerts))
    assert info.value.phase == "kb_population"
    assert info.value.exit_code in (2, 3)
