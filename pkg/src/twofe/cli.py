"""The twofe command line.

Primary-device commands: enroll, put, get, ls, rm, restore, migrate,
recover, invalidate, approvals.  Infrastructure: daemon (the secondary),
cloud-server, bench, scenario, schema.  Every protocol error maps to a
stable nonzero exit code (see errors.py).
"""

from __future__ import annotations

import argparse
import getpass
import json
import os
import sys
from typing import Optional

from . import errors
from .config import DeviceConfig, load_config, split_hostport
from .engine import EngineConfig, PrimaryDevice, SecondaryDevice
from .errors import TwofeError, exit_code_for
from .group import production_group
from .state import DeviceState, load_state, save_state
from .transport import PeerLink, TcpChannel, WireLog


def _password(args) -> str:
    if args.password:
        return args.password
    env = os.environ.get("TWOFE_PASSWORD")
    if env:
        return env
    return getpass.getpass("account password: ")


def _load_device_state(cfg: DeviceConfig) -> DeviceState:
    path = cfg.state_path()
    if os.path.exists(path):
        return load_state(path)
    return DeviceState(role=cfg.role, device_id=cfg.device_id,
                       account_id=cfg.account)


def _primary(cfg: DeviceConfig, args, need_link: bool = True,
             fresh_pair: bool = False) -> PrimaryDevice:
    from .cloudhttp import HttpCloudClient
    from .group import Rng
    from .transport import client_handshake

    state = _load_device_state(cfg)
    log = WireLog()
    cloud = HttpCloudClient(cfg.cloud, log, cafile=cfg.cloud_ca or None)
    link = None
    if need_link:
        host, port = split_hostport(cfg.peer)
        channel = TcpChannel.connect(host, port)
        if state.channel_key and not fresh_pair:
            # authenticated, per-connection channel keys from the pairing
            channel = client_handshake(channel, production_group(),
                                       state.channel_key, Rng())
        config = EngineConfig()
        link = PeerLink(channel, log, "secondary",
                        timeout=config.peer_timeout)
    device = PrimaryDevice(production_group(), state, cloud, _password(args),
                           link=link, config=EngineConfig())
    return device


def _persist(device, cfg: DeviceConfig) -> None:
    save_state(device.state, cfg.state_path())


def cmd_enroll(args) -> int:
    cfg = load_config(args.config)
    device = _primary(cfg, args)
    secret = args.recovery_secret or \
        getpass.getpass("recovery secret (for device-loss verification): ")
    sas = device.pair()
    print(f"pairing code (must match the helper's screen): {sas}")
    device.enroll(secret)
    _persist(device, cfg)
    print(f"enrolled account {cfg.account!r}; state at {cfg.state_path()}")
    return 0


def cmd_put(args) -> int:
    cfg = load_config(args.config)
    device = _primary(cfg, args)
    with open(args.file, "rb") as fh:
        data = fh.read()
    name = args.name or os.path.basename(args.file)
    tag = device.encrypt_flow(data, name)
    _persist(device, cfg)
    print(f"stored {name!r} ({len(data)} bytes) under tag {tag.hex()}")
    return 0


def cmd_get(args) -> int:
    cfg = load_config(args.config)
    device = _primary(cfg, args)
    target = args.name
    if len(target) == 32 and all(c in "0123456789abcdef" for c in target):
        plaintext = device.decrypt_flow(tag=bytes.fromhex(target))
    else:
        plaintext = device.decrypt_flow(name=target)
    out = args.output or target.replace("/", "_")
    with open(out, "wb") as fh:
        fh.write(plaintext)
    print(f"decrypted {len(plaintext)} bytes into {out}")
    return 0


def cmd_ls(args) -> int:
    cfg = load_config(args.config)
    device = _primary(cfg, args, need_link=False)
    for name, tag in sorted(device.list_files().items()):
        print(f"{tag.hex()}  {name}")
    return 0


def cmd_rm(args) -> int:
    cfg = load_config(args.config)
    device = _primary(cfg, args, need_link=False)
    device.delete_file(args.name)
    print(f"moved {args.name!r} to the trash bin (30-day retention)")
    return 0


def cmd_restore(args) -> int:
    cfg = load_config(args.config)
    device = _primary(cfg, args, need_link=False)
    device.undelete_file(args.name)
    print(f"restored {args.name!r}")
    return 0


def cmd_invalidate(args) -> int:
    cfg = load_config(args.config)
    device = _primary(cfg, args, need_link=False)
    target = device.state.peer_device_id if args.target == "peer" \
        else device.state.device_id
    device.invalidate_session_of(target)
    print(f"invalidated session of {args.target}")
    return 0


def cmd_approvals(args) -> int:
    """Answer pending replacement pings on this (primary) device."""
    cfg = load_config(args.config)
    device = _primary(cfg, args, need_link=False)
    device.approvals.policy = cfg.approval_policy()
    if args.yes:
        device.approvals.decider = lambda req: True
    elif args.no:
        device.approvals.decider = lambda req: False
    device.poll_and_prompt()
    _persist(device, cfg)
    print("processed pending authorizations")
    return 0


def _claimer_via_console(console_url: str, console_token: str):
    import urllib.request

    def claim(case_id: str, claim_secret: bytes) -> None:
        req = urllib.request.Request(
            console_url.rstrip("/") + "/admin/claim",
            data=json.dumps({"case_id": case_id,
                             "claim_secret": claim_secret.hex()}).encode(),
            headers={"Content-Type": "application/json",
                     "X-Console-Token": console_token},
            method="POST")
        with urllib.request.urlopen(req, timeout=10):
            pass

    return claim


def _replace_secondary(args, intent: str) -> int:
    cfg = load_config(args.config)
    # cfg.peer must point at the NEW daemon; pairing starts from scratch
    device = _primary(cfg, args, fresh_pair=True)
    sas = device.pair(flow="Migrate")
    print(f"pairing code for the new helper: {sas}")
    claimer = _claimer_via_console(args.new_console, args.new_console_token)
    device.replace_secondary(bytes.fromhex(args.new_device_id), claimer,
                             intent, recovery_secret=args.recovery_secret)
    _persist(device, cfg)
    print(f"{intent} of the helper completed; key shares refreshed")
    return 0


def _replace_primary(args, intent: str) -> int:
    cfg = load_config(args.config)  # config of the NEW primary
    device = _primary(cfg, args, fresh_pair=True)
    sas = device.pair(flow="Migrate", expect_catalog_key=True)
    print(f"pairing code: {sas}")
    device.adopt_primary_role(intent, recovery_secret=args.recovery_secret)
    _persist(device, cfg)
    print(f"{intent} of the primary completed; this device now holds the "
          "primary share")
    return 0


def cmd_migrate(args) -> int:
    if args.which == "secondary":
        return _replace_secondary(args, "migrate")
    return _replace_primary(args, "migrate")


def cmd_recover(args) -> int:
    if args.which == "secondary":
        return _replace_secondary(args, "recover")
    return _replace_primary(args, "recover")


def cmd_daemon(args) -> int:
    from .cloudhttp import HttpCloudClient
    from .daemon import SecondaryDaemon
    from .agents import ApprovalQueue

    cfg = load_config(args.config)
    if args.policy:
        cfg.policy = args.policy
    state = _load_device_state(cfg)
    state.role = "secondary"
    log = WireLog()
    cloud = HttpCloudClient(args.cloud or cfg.cloud, log,
                            cafile=cfg.cloud_ca or None)
    device = SecondaryDevice(production_group(), state, cloud,
                             _password(args),
                             approvals=ApprovalQueue(cfg.approval_policy()))
    device.state_path = cfg.state_path()
    listen_host, listen_port = split_hostport(args.listen or cfg.listen)
    console_host, console_port = split_hostport(cfg.console)
    static_dir = args.static_dir
    if static_dir is None:
        bundled = os.path.join(os.path.dirname(__file__), "..", "..",
                               "frontend", "dist")
        static_dir = bundled if os.path.isdir(bundled) else None
    daemon = SecondaryDaemon(device, listen_host, listen_port,
                             console_host, console_port,
                             static_dir=static_dir,
                             console_token=cfg.console_token)
    daemon.start()
    print(f"helper daemon: protocol on {listen_host}:{daemon.listen_port}, "
          f"console on http://{console_host}:{daemon.console_port}/"
          f"?token={daemon.console_token}")
    try:
        import time as _time

        while True:
            _time.sleep(3600)
    except KeyboardInterrupt:
        daemon.stop()
        save_state(device.state, cfg.state_path())
    return 0


def cmd_cloud_server(args) -> int:
    from .cloud import CloudService
    from .cloudhttp import CloudHttpServer

    service = CloudService(persist_dir=args.data)
    tls_dir = (args.data or "twofe-tls") if args.tls else None
    server = CloudHttpServer(service, args.host, args.port, tls_dir=tls_dir)
    server.start()
    print(f"cloud service on {server.scheme}://{args.host}:{server.port} "
          f"(data: {args.data or 'memory only'})")
    if server.cert_path:
        print(f"pin this certificate on the devices (cloud_ca): "
              f"{server.cert_path}")
    try:
        import time as _time

        while True:
            _time.sleep(3600)
    except KeyboardInterrupt:
        server.stop()
        service.close()
    return 0


def cmd_bench(args) -> int:
    from .bench import run_bench, structural_checks
    from .report import bench_table, render_bench_figures, write_bench_jsonl

    sizes = [int(s) for s in args.sizes.split(",")] if args.sizes else None
    transports = tuple(args.transports.split(","))
    report = run_bench(sizes=sizes, reps=args.reps, transports=transports)
    checks = structural_checks(report)
    os.makedirs(args.out, exist_ok=True)
    write_bench_jsonl(report, os.path.join(args.out, "bench.jsonl"))
    table = bench_table(report, checks)
    with open(os.path.join(args.out, "bench.txt"), "w") as fh:
        fh.write(table)
    figures = render_bench_figures(report, args.out)
    print(table)
    print("figures:", ", ".join(figures))
    return 0 if all(ok for _name, ok, _d in checks) else 1


def cmd_scenario(args) -> int:
    from .report import (
        render_scenario_figure,
        scenario_table,
        write_scenario_jsonl,
    )
    from .scenarios import check_table_markings, run_all

    verdicts = run_all(seed=args.seed)
    table_assertions = check_table_markings(verdicts)
    os.makedirs(args.out, exist_ok=True)
    write_scenario_jsonl(verdicts, table_assertions,
                         os.path.join(args.out, "scenarios.jsonl"))
    table = scenario_table(verdicts, table_assertions)
    with open(os.path.join(args.out, "scenarios.txt"), "w") as fh:
        fh.write(table)
    figure = render_scenario_figure(verdicts, args.out)
    print(table)
    print(f"figure: {figure}")
    ok = all(v.passed for v in verdicts) and \
        all(a.passed for a in table_assertions)
    return 0 if ok else 1


def cmd_schema(args) -> int:
    from .wire import write_schema

    write_schema(args.out)
    print(f"wrote message schema to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="twofe",
        description="two-factor encrypted cloud storage")
    parser.add_argument("--config", help="device config file")
    parser.add_argument("--password", help="account password "
                        "(or TWOFE_PASSWORD, or prompted)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("enroll", help="create the account and split keys")
    p.add_argument("--recovery-secret")
    p.set_defaults(fn=cmd_enroll)

    p = sub.add_parser("put", help="encrypt and upload a file")
    p.add_argument("file")
    p.add_argument("--name")
    p.set_defaults(fn=cmd_put)

    p = sub.add_parser("get", help="download and decrypt by name or tag")
    p.add_argument("name")
    p.add_argument("-o", "--output")
    p.set_defaults(fn=cmd_get)

    p = sub.add_parser("ls", help="list the catalog")
    p.set_defaults(fn=cmd_ls)

    p = sub.add_parser("rm", help="move a file to the trash bin")
    p.add_argument("name")
    p.set_defaults(fn=cmd_rm)

    p = sub.add_parser("restore", help="restore a file from the trash bin")
    p.add_argument("name")
    p.set_defaults(fn=cmd_restore)

    for verb, fn in (("migrate", cmd_migrate), ("recover", cmd_recover)):
        p = sub.add_parser(verb, help=f"{verb} a device")
        p.add_argument("which", choices=["primary", "secondary"])
        p.add_argument("--new-device-id", help="hex id of the replacement "
                       "helper (secondary replacement)")
        p.add_argument("--new-console", help="console URL of the new helper")
        p.add_argument("--new-console-token", default="")
        p.add_argument("--recovery-secret")
        p.set_defaults(fn=fn)

    p = sub.add_parser("invalidate", help="kill a session token")
    p.add_argument("--target", choices=["self", "peer"], default="peer")
    p.set_defaults(fn=cmd_invalidate)

    p = sub.add_parser("approvals", help="answer pending device-replacement "
                       "prompts on this device")
    p.add_argument("--yes", action="store_true")
    p.add_argument("--no", action="store_true")
    p.set_defaults(fn=cmd_approvals)

    p = sub.add_parser("daemon", help="run the helper daemon")
    p.add_argument("--policy", choices=["auto", "notify", "prompt"])
    p.add_argument("--cloud")
    p.add_argument("--listen")
    p.add_argument("--static-dir", help="console app bundle to serve")
    p.set_defaults(fn=cmd_daemon)

    p = sub.add_parser("cloud-server", help="run the storage service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=7800)
    p.add_argument("--data", help="persistence directory")
    p.add_argument("--tls", action="store_true",
                   help="serve https with a generated self-signed cert")
    p.set_defaults(fn=cmd_cloud_server)

    p = sub.add_parser("bench", help="key-derivation benchmark")
    p.add_argument("--sizes", help="comma-separated byte counts")
    p.add_argument("--reps", type=int, default=30)
    p.add_argument("--transports", default="in-process,tcp-loopback")
    p.add_argument("--out", default="bench-out")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("scenario", help="run the threat-scenario suite")
    p.add_argument("--seed", type=int, default=20260809)
    p.add_argument("--out", default="scenario-out")
    p.set_defaults(fn=cmd_scenario)

    p = sub.add_parser("schema", help="write the message schema")
    p.add_argument("--out", default="schema/messages.json")
    p.set_defaults(fn=cmd_schema)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except TwofeError as exc:
        print(f"error: {exc.code}: {exc}", file=sys.stderr)
        return exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
