"""Run the bundled case study end to end and print the report with phase timings."""

import argparse

from attackcorr.pipeline import RunConfig, bundled, prepare, read_alerts, render_report


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--alerts", default=str(bundled("case_study_alerts.txt")))
    parser.add_argument("--no-pin-risks", action="store_true")
    parser.add_argument("--limit", type=int, help="replay only the first N alerts")
    args = parser.parse_args()

    alerts = read_alerts(args.alerts)[: args.limit]
    model = prepare(RunConfig(alerts=args.alerts, pin_risks=not args.no_pin_risks))
    report = model.report(alerts)
    print(render_report(report))
    for phase, ms in report.timings.items():
        print(f"{phase:<24} {ms:8.2f} ms")
    print(f"{'total':<24} {sum(report.timings.values()):8.2f} ms")
    counts = report.model_counts
    print(f"kb nodes {counts['kb_nodes']}, facts {counts['facts']}, hcpn nodes {counts['hcpn_nodes']}")


if __name__ == "__main__":
    main()
