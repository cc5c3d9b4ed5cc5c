"""Command-line entry point.

Exit codes: 0 ok, 2 input error, 3 model error.
"""

from __future__ import annotations

import argparse
import json
import socketserver
import sys
import threading
from typing import Sequence

from .attack_graph import export_document as export_graph
from .correlator import AlertEvent, correlate, map_alerts, parse_alert
from .errors import AttackCorrError, InputError, SchemaError
from .hcpn import export_document as export_hcpn
from .knowledge_graph import load_scenario, validate_schema
from .pipeline import PhaseError, PreparedModel, RunConfig, bundled, prepare, read_alerts, render_report, run_pipeline
from .predictor import predict_next


def _config(args: argparse.Namespace) -> RunConfig:
    return RunConfig(
        scenario=args.scenario or bundled("case_study.yaml"),
        rules=args.rules,
        alerts=getattr(args, "alerts", None),
        listen=getattr(args, "listen", None),
        format=args.format,
        pin_risks=args.pin_risks,
        fp_rate=args.fp_rate,
        miss_penalty=args.miss_penalty,
        threshold=args.threshold,
        timings=not args.no_timings,
    )


def _emit(doc, out) -> None:
    out.write(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def cmd_validate(args, out) -> int:
    kg = load_scenario(args.scenario or bundled("case_study.yaml"))
    problems = validate_schema(kg)
    for v in problems:
        out.write(f"{v.code}\t{v.subject}\t{v.message}\n")
    if problems:
        raise SchemaError(f"{len(problems)} schema violation(s)")
    out.write(f"ok: {len(kg.nodes)} nodes, {len(kg.edges)} edges\n")
    return 0


def cmd_facts(args, out) -> int:
    out.write(prepare(_config(args)).facts.dump())
    return 0


def cmd_graph(args, out) -> int:
    _emit(export_graph(prepare(_config(args)).ag), out)
    return 0


def cmd_hcpn(args, out) -> int:
    _emit(export_hcpn(prepare(_config(args)).hcpn), out)
    return 0


def _correlated(args):
    model = prepare(_config(args))
    alerts = read_alerts(args.alerts)
    result = correlate(model.hcpn, map_alerts(model.kg, model.hcpn, alerts), args.miss_penalty)
    return model, result


def cmd_correlate(args, out) -> int:
    _, result = _correlated(args)
    if args.format == "machine":
        _emit({
            "steps": [{"transition_id": s.transition_id, "label": s.label, "risk": s.risk,
                       "supports": list(s.supports)} for s in result.steps],
            "noise_assignments": result.noise_assignments,
            "log_likelihood": result.log_likelihood,
        }, out)
        return 0
    for s in result.steps:
        out.write(f"{s.transition_id}\t{s.risk:.2f}\t{s.label}\tsupports={list(s.supports)}\n")
    out.write(f"noise={result.noise_assignments}\tlog_likelihood={result.log_likelihood:.6f}\n")
    return 0


def cmd_predict(args, out) -> int:
    model, result = _correlated(args)
    pred = predict_next(model.bn, result, args.threshold)
    chosen = pred.predicted_next.transition_id if pred.predicted_next else None
    if args.format == "machine":
        _emit({
            "ranking": [{"transition_id": r.transition_id, "label": r.label, "posterior": r.posterior,
                         "risk": r.risk} for r in pred.ranking],
            "predicted_next": chosen,
            "display_probability": pred.display_probability,
        }, out)
        return 0
    for r in pred.ranking:
        mark = "*" if r.transition_id == chosen else " "
        state = "fired" if r.transition_id in pred.fired else ""
        out.write(f"{mark} {r.transition_id}\t{r.posterior:.4f}\t{r.label}\t{state}\n".rstrip("\t\n") + "\n")
    return 0


def cmd_run(args, out) -> int:
    config = _config(args)
    config.listen = None
    out.write(render_report(run_pipeline(config), args.format))
    return 0


class AlertServer(socketserver.ThreadingTCPServer):
    """Line-protocol alert intake with an append-only queue.

    Each line is an alert record; ``REPORT`` answers with the machine report
    over everything received so far, followed by a blank line; ``QUIT``
    closes the connection.  Malformed records are answered with ``ERR``.
    """

    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address, model: PreparedModel):
        super().__init__(address, _AlertHandler)
        self.model = model
        self.queue: list[AlertEvent] = []
        self.queue_lock = threading.Lock()
        self.worker_lock = threading.Lock()

    def append(self, alert: AlertEvent) -> None:
        with self.queue_lock:
            self.queue.append(alert)

    def snapshot(self) -> list[AlertEvent]:
        with self.queue_lock:
            return list(self.queue)

    def report_text(self) -> str:
        alerts = self.snapshot()
        with self.worker_lock:
            return render_report(self.model.report(alerts), "machine")


class _AlertHandler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        server: AlertServer = self.server  # type: ignore[assignment]
        for raw in self.rfile:
            line = raw.decode("utf-8", "replace").strip()
            if not line or line.startswith("#"):
                continue
            if line == "QUIT":
                return
            if line == "REPORT":
                try:
                    text = server.report_text()
                except AttackCorrError as exc:
                    text = f"ERR {exc}\n"
                self.wfile.write((text + "\n").encode())
                self.wfile.flush()
                continue
            try:
                server.append(parse_alert(line))
            except AttackCorrError as exc:
                self.wfile.write(f"ERR {exc}\n".encode())
                self.wfile.flush()


def cmd_serve(args, out) -> int:
    config = _config(args)
    config.alerts = None
    config.check()
    server = AlertServer((args.host, args.listen), prepare(config))
    host, port = server.server_address[:2]
    out.write(f"listening on {host}:{port}\n")
    out.flush()
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def _probability(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"must lie in [0, 1]: {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", help="scenario document (default: bundled case study)")
    common.add_argument("--rules", help="rule library (default: bundled library)")
    common.add_argument("--format", choices=("text", "machine"), default="text")
    common.add_argument("--pin-risks", action=argparse.BooleanOptionalAction, default=True,
                        help="apply the scenario's pinned step risks")
    common.add_argument("--fp-rate", type=_probability, default=0.05, help="default detector false-positive rate")
    common.add_argument("--miss-penalty", type=_probability, default=0.3,
                        help="probability factor for a fired step without observations")
    common.add_argument("--threshold", type=_probability, default=0.5, help="enabling threshold for prediction")
    common.add_argument("--no-timings", action="store_true", help="report zero phase timings (reproducible output)")

    parser = argparse.ArgumentParser(prog="attackcorr", description="Model-based multi-stage attack correlation")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("validate", parents=[common], help="check a scenario against the schema")
    sub.add_parser("facts", parents=[common], help="print the extracted fact base")
    sub.add_parser("graph", parents=[common], help="print the risk-assessed attack graph")
    sub.add_parser("hcpn", parents=[common], help="print the HCPN model")
    for name, text in (("correlate", "decode the most likely attack sequence"),
                       ("predict", "rank the attacker's likely next steps"),
                       ("run", "full pipeline and correlation report")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--alerts", required=True, help="alert file, one record per line")
    p = sub.add_parser("serve", parents=[common], help="receive alerts over TCP and report on demand")
    p.add_argument("--listen", type=int, required=True, help="TCP port (0 picks a free port)")
    p.add_argument("--host", default="127.0.0.1")
    return parser


COMMANDS = {
    "validate": cmd_validate, "facts": cmd_facts, "graph": cmd_graph, "hcpn": cmd_hcpn,
    "correlate": cmd_correlate, "predict": cmd_predict, "run": cmd_run, "serve": cmd_serve,
}


def main(argv: Sequence[str] | None = None, out=None) -> int:
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args, out)
    except PhaseError as exc:
        print(f"error in {exc.phase}: {exc.cause}", file=sys.stderr)
        return exc.exit_code
    except AttackCorrError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
