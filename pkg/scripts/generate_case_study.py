#!/usr/bin/env python3
"""Write the bundled DSR-platform case-study scenario and its alert stream.

The scenario is a microgrid run by a demand-side-response (DSR) platform:
an Internet-facing DMZ, the DSR network, a process network with the
control components, an office network and one LAN per household (smart
meter gateway, meter, PV inverter, battery).  The attacker starts on the
Internet, brute-forces SSH on the DSR platform, logs in, escalates via a
SUID binary, tampers with smart-meter data and is then one step away from
sending grid-harmful control commands.

Usage: python scripts/generate_case_study.py [--households N] [--out DIR]
"""

from __future__ import annotations

import argparse
from pathlib import Path

import yaml

DATA = Path(__file__).resolve().parents[1] / "src" / "attackcorr" / "data"

STEP_PINS = {
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

STEP_LABELS = {
    "remote_exploit:exec_code(web-portal,user)": "Exploit Vulnerabilities of Web Services",
    "credential_bruteforce:has_credentials(vpn-gateway,vpn-admin)": "Access Credential Data for VPN",
    "authenticated_login:exec_code(vpn-gateway,root)": "VPN Server Configuration Compromised",
    "local_privilege_escalation:exec_code(web-portal,root)": "Insider Attack",
    "credential_bruteforce:has_credentials(dsr-platform,operator)": "Dictionary Attack",
    "authenticated_login:exec_code(dsr-platform,user)": "Access to DSR Platform",
    "local_privilege_escalation:exec_code(dsr-platform,root)": "Escalation of Privileges",
    "remote_exploit:exec_code(dsr-platform,root)": "Remote Control of DSR Platform",
    "data_tampering:data_tampered(personal-data)": "Theft of Personal Data",
    "data_tampering:data_tampered(smart-meter-data)": "Manipulation of Smart Meter Data",
    "data_tampering:data_tampered(historical-data)": "Manipulation of Historical Data",
    "data_tampering:data_tampered(forecast-data)": "Manipulation of Future Forecast Data",
    "mission_compromise:mission_compromised(self-consumption-optimization)": "Sending Grid Harmful Control Commands",
}

ALERTS = [
    "1000|net-ids-1|ssh_login_attempt|dsr-platform|src=203.0.113.66,user=admin",
    "61000|net-ids-1|ssh_bruteforce|dsr-platform|src=203.0.113.66,attempts=412",
    "95000|net-ids-1|ssh_login|dsr-platform|src=203.0.113.66,user=operator",
    "140000|host-ids-dsr|executed_program|dsr-platform|path=/usr/bin/pkexec,uid=0",
    "229000|process-monitor|process_anomaly|dsr-platform|series=smart-meter,deviation=0.41",
]


def port(number: int, protocol: str = "tcp") -> dict:
    return {"port_number": number, "protocol": protocol}


def host(hid: str, name: str, addresses: list[tuple[str, str]], runs: list[str], **extra) -> dict:
    entry = {"id": hid, "name": name, "addresses": [{"address": a, "network": n} for a, n in addresses], "runs": runs}
    entry.update(extra)
    return entry


def build(households: int) -> dict:
    networks = [
        {"id": "internet", "name": "Internet", "cidr": "203.0.113.0/24"},
        {"id": "dmz", "name": "DMZ", "cidr": "172.16.0.0/24"},
        {"id": "dsr-net", "name": "DSR network", "cidr": "10.10.0.0/24"},
        {"id": "process-net", "name": "Process network", "cidr": "10.20.0.0/24"},
        {"id": "office-net", "name": "Office network", "cidr": "10.30.0.0/24"},
    ]
    hh = [f"hh-{i:02d}" for i in range(1, households + 1)]
    networks += [{"id": h, "name": f"Household {h[3:]} LAN", "cidr": f"10.100.{int(h[3:])}.0/24"} for h in hh]

    routers = [
        {"id": "edge-router", "name": "Edge router", "routes": ["internet", "dmz", "dsr-net"]},
        {"id": "core-router", "name": "Core router", "routes": ["dsr-net", "process-net", "office-net", *hh]},
    ]

    edge_rules = [
        ("allow", "internet", "dmz", 443, "tcp"),
        ("allow", "internet", "dmz", 1194, "udp"),
        ("allow", "internet", "dmz", 25, "tcp"),
        ("allow", "internet", "dmz", 53, "udp"),
        ("allow", "internet", "dsr-net", 22, "tcp"),
        ("allow", "internet", "dsr-net", 8443, "tcp"),
    ]
    edge_rules += [("allow", "any", h, port_, "tcp") for h in hh for port_ in (443, 8883)]
    edge_rules += [
        ("block", "internet", "any", "any", "any"),
        ("allow", "dmz", "dsr-net", 5432, "tcp"),
        ("allow", "office-net", "dmz", "any", "any"),
    ]
    process_rules = [
        ("allow", "dsr-net", "process-net", 2404, "tcp"),
        ("allow", "dsr-net", "process-net", 502, "tcp"),
        ("allow", "dsr-net", "any", 4059, "tcp"),
        ("allow", "process-net", "any", 502, "tcp"),
        ("allow", "office-net", "dsr-net", 22, "tcp"),
        ("block", "any", "process-net", "any", "any"),
    ]

    def rules(fw: str, spec: list, start: int) -> list[dict]:
        return [
            {"id": f"{fw}-r{start + i:03d}", "action": a, "src_network": s, "dst_network": d, "dst_port": p,
             "protocol": proto, "order": start + i}
            for i, (a, s, d, p, proto) in enumerate(spec)
        ]

    firewalls = [
        {"id": "fw-internet", "name": "Internet firewall", "rules": rules("fw-internet", edge_rules, 10)},
        {"id": "fw-process", "name": "Process network firewall", "rules": rules("fw-process", process_rules, 500)},
    ]

    software = [
        {"id": "openssh-7.7", "name": "sshd", "version": "7.7p1", "ports": [port(22)]},
        {"id": "dsr-console", "name": "DSR remote management console", "version": "2.3", "privilege": "root",
         "ports": [port(8443)], "uses": ["log4j-2.14"]},
        {"id": "log4j-2.14", "name": "log4j", "version": "2.14.1"},
        {"id": "polkit-0.105", "name": "polkit pkexec", "version": "0.105"},
        {"id": "ems-optimizer", "name": "EMS self-consumption optimizer", "version": "1.8"},
        {"id": "postgresql-12", "name": "postgresql", "version": "12.4", "ports": [port(5432)]},
        {"id": "apache-2.4.49", "name": "httpd", "version": "2.4.49", "ports": [port(443)]},
        {"id": "openvpn-as", "name": "OpenVPN Access Server", "version": "2.8.3", "privilege": "root",
         "ports": [port(1194, "udp")]},
        {"id": "postfix", "name": "postfix", "version": "3.4", "ports": [port(25)]},
        {"id": "bind9", "name": "named", "version": "9.16", "ports": [port(53, "udp")]},
        {"id": "scada-server", "name": "SCADA front end", "version": "5.1", "ports": [port(2404)]},
        {"id": "modbus-gw", "name": "Modbus gateway", "version": "1.2", "ports": [port(502)]},
        {"id": "office-suite", "name": "office workstation image", "version": "22H2"},
        {"id": "hems-gateway", "name": "smart meter gateway", "version": "4.0", "ports": [port(443), port(8883), port(4059)]},
        {"id": "meter-fw", "name": "smart meter firmware", "version": "3.2", "ports": [port(4059)]},
        {"id": "inverter-fw", "name": "PV inverter firmware", "version": "1.9", "ports": [port(502)]},
        {"id": "bss-fw", "name": "battery controller firmware", "version": "2.0", "ports": [port(502)]},
    ]

    vulnerabilities = [
        {"id": "cve-2018-15473", "cve_id": "CVE-2018-15473", "cvss_base_score": 5.3, "locality": "remote",
         "effect": "weak_auth", "software": "openssh-7.7"},
        {"id": "cve-2021-4034", "cve_id": "CVE-2021-4034", "cvss_base_score": 7.8, "locality": "local",
         "effect": "priv_esc", "software": "polkit-0.105"},
        {"id": "cve-2021-44228", "cve_id": "CVE-2021-44228", "cvss_base_score": 10.0, "locality": "remote",
         "effect": "code_exec", "software": "dsr-console"},
        {"id": "cve-2021-42013", "cve_id": "CVE-2021-42013", "cvss_base_score": 9.8, "locality": "remote",
         "effect": "code_exec", "software": "apache-2.4.49"},
        {"id": "cve-2020-15078", "cve_id": "CVE-2020-15078", "cvss_base_score": 7.5, "locality": "remote",
         "effect": "weak_auth", "software": "openvpn-as"},
        {"id": "cve-2020-1472", "cve_id": "CVE-2020-1472", "cvss_base_score": 10.0, "locality": "remote",
         "effect": "priv_esc", "software": "office-suite"},
    ]

    data_assets = [
        {"id": "smart-meter-data", "name": "Smart Meter Data"},
        {"id": "historical-data", "name": "Historical Data"},
        {"id": "forecast-data", "name": "Future Forecast Data"},
        {"id": "personal-data", "name": "Personal Data"},
    ]
    missions = [
        {"id": "self-consumption-optimization", "name": "optimization of self-consumption",
         "depends_on": ["smart-meter-data"]},
        {"id": "grid-state-estimation", "name": "grid state estimation", "depends_on": ["historical-data", "forecast-data"]},
    ]

    hosts = [
        host("dsr-platform", "DSR platform", [("10.10.0.5", "dsr-net"), ("10.20.0.5", "process-net")],
             ["openssh-7.7", "dsr-console", "polkit-0.105", "ems-optimizer"],
             stores=["smart-meter-data", "historical-data", "forecast-data", "personal-data"],
             provides=["self-consumption-optimization"]),
        host("dsr-db", "DSR database", [("10.10.0.6", "dsr-net")], ["postgresql-12"]),
        host("web-portal", "Customer web portal", [("172.16.0.10", "dmz")], ["apache-2.4.49", "polkit-0.105"]),
        host("vpn-gateway", "VPN gateway", [("172.16.0.11", "dmz")], ["openvpn-as"]),
        host("mail-relay", "Mail relay", [("172.16.0.12", "dmz")], ["postfix"]),
        host("dns-server", "DNS server", [("172.16.0.13", "dmz")], ["bind9"]),
        host("scada-fe", "SCADA front end", [("10.20.0.10", "process-net")], ["scada-server"]),
        host("ems-controller", "EMS controller", [("10.20.0.11", "process-net")], ["modbus-gw"]),
        host("eng-ws", "Engineering workstation", [("10.30.0.20", "office-net")], ["office-suite"]),
        host("office-ws", "Office workstation", [("10.30.0.21", "office-net")], ["office-suite"]),
    ]
    for h in hh:
        i = int(h[3:])
        hosts += [
            host(f"{h}-gw", f"{h} meter gateway", [(f"10.100.{i}.1", h)], ["hems-gateway"]),
            host(f"{h}-meter", f"{h} smart meter", [(f"10.100.{i}.2", h)], ["meter-fw"]),
            host(f"{h}-pv", f"{h} PV inverter", [(f"10.100.{i}.3", h)], ["inverter-fw"]),
            host(f"{h}-bss", f"{h} battery storage", [(f"10.100.{i}.4", h)], ["bss-fw"]),
        ]

    accounts = [
        {"id": "operator", "host": "dsr-platform", "name": "operator", "privilege": "user", "principal": "dsr-operators"},
        {"id": "dsr-root", "host": "dsr-platform", "name": "root", "privilege": "root", "principal": "administrators"},
        {"id": "db-admin", "host": "dsr-db", "name": "postgres", "privilege": "root", "principal": "administrators"},
        {"id": "www", "host": "web-portal", "name": "www-data", "privilege": "user", "principal": "services"},
        {"id": "vpn-admin", "host": "vpn-gateway", "name": "openvpn", "privilege": "root", "principal": "administrators"},
        {"id": "engineer", "host": "eng-ws", "name": "engineer", "privilege": "user", "principal": "engineers"},
        {"id": "clerk", "host": "office-ws", "name": "clerk", "privilege": "user", "principal": "staff"},
    ]

    detectors = [
        {"id": "net-ids-1", "name": "net-ids-1", "monitors": ["dsr-net"],
         "indicator_types": ["ssh_login_attempt", "ssh_bruteforce", "ssh_login", "exploit_payload"],
         "witnesses": {"ssh_login_attempt": ["credential_bruteforce"], "ssh_bruteforce": ["credential_bruteforce"],
                       "ssh_login": ["authenticated_login"], "exploit_payload": ["remote_exploit"]}},
        {"id": "host-ids-dsr", "name": "host-ids-dsr", "monitors": ["dsr-platform"],
         "indicator_types": ["executed_program", "file_integrity"],
         "witnesses": {"executed_program": ["local_privilege_escalation"], "file_integrity": ["data_tampering"]}},
        {"id": "process-monitor", "name": "process-monitor", "monitors": ["dsr-platform"],
         "indicator_types": ["process_anomaly", "harmful_command"],
         "witnesses": {"process_anomaly": ["data_tampered(smart-meter-data)"],
                       "harmful_command": ["mission_compromise"]}},
        {"id": "dmz-ids", "name": "dmz-ids", "monitors": ["dmz"],
         "indicator_types": ["web_exploit", "vpn_bruteforce", "vpn_login"],
         "witnesses": {"web_exploit": ["remote_exploit"], "vpn_bruteforce": ["credential_bruteforce"],
                       "vpn_login": ["authenticated_login"]}},
    ]

    return {
        "networks": networks,
        "routers": routers,
        "firewalls": firewalls,
        "software": software,
        "vulnerabilities": vulnerabilities,
        "data_assets": data_assets,
        "missions": missions,
        "hosts": hosts,
        "accounts": accounts,
        "detectors": detectors,
        "attacker": {"location": "internet"},
        "local_probabilities": {"mission_compromise": 0.95},
        "step_labels": STEP_LABELS,
        "pinned_risk": STEP_PINS,
    }


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--households", type=int, default=14)
    ap.add_argument("--out", type=Path, default=DATA)
    args = ap.parse_args()
    header = "# Generated by scripts/generate_case_study.py; edit the script, not this file.\n"
    text = yaml.safe_dump(build(args.households), sort_keys=False, default_flow_style=False, width=120)
    (args.out / "case_study.yaml").write_text(header + text)
    (args.out / "case_study_alerts.txt").write_text("\n".join(ALERTS) + "\n")


if __name__ == "__main__":
    main()
