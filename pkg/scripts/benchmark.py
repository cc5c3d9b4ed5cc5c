"""Time the pipeline as the number of households grows.

Each size regenerates the scenario with ``generate_case_study.build``,
prepares the model and correlates the case-study alert stream.
"""

import argparse
import sys
import tempfile
import time
from pathlib import Path

import yaml

sys.path.insert(0, str(Path(__file__).parent))

from generate_case_study import ALERTS, build  # noqa: E402

from attackcorr.correlator import parse_alerts  # noqa: E402
from attackcorr.pipeline import RunConfig, prepare  # noqa: E402


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sizes", type=int, nargs="+", default=[0, 7, 14, 28, 56])
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()

    alerts = parse_alerts("\n".join(ALERTS))
    print(f"{'households':>10} {'kb':>6} {'facts':>6} {'hcpn':>6} {'prepare ms':>11} {'report ms':>10}")
    with tempfile.TemporaryDirectory() as tmp:
        for n in args.sizes:
            path = Path(tmp) / f"scenario_{n}.yaml"
            path.write_text(yaml.safe_dump(build(n), sort_keys=False))
            best_prep = best_rep = float("inf")
            for _ in range(args.repeat):
                t0 = time.monotonic()
                model = prepare(RunConfig(scenario=path, timings=False))
                t1 = time.monotonic()
                report = model.report(alerts)
                t2 = time.monotonic()
                best_prep, best_rep = min(best_prep, t1 - t0), min(best_rep, t2 - t1)
            c = report.model_counts
            print(f"{n:>10} {c['kb_nodes']:>6} {c['facts']:>6} {c['hcpn_nodes']:>6} "
                  f"{best_prep * 1000:>11.1f} {best_rep * 1000:>10.1f}")


if __name__ == "__main__":
    main()
