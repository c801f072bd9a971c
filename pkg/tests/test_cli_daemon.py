"""Full-stack integration: the CLI against a real cloud HTTP server and a
real helper daemon over TCP loopback, including the console approval loop."""

import json
import os
import threading
import time
import urllib.request

import pytest

from twofe import cli
from twofe.agents import ApprovalPolicy, ApprovalQueue
from twofe.cloud import CloudService
from twofe.cloudhttp import CloudHttpServer, HttpCloudClient
from twofe.daemon import SecondaryDaemon
from twofe.engine import SecondaryDevice
from twofe.errors import PolicyDenied
from twofe.group import production_group
from twofe.state import DeviceState
from twofe.transport import WireLog

PASSWORD = "hunter2 but longer"
RECOVERY = "drivers-license-photo"


@pytest.fixture(scope="module")
def stack(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("stack")
    service = CloudService()
    cloud_server = CloudHttpServer(service)
    cloud_server.start()
    cloud_url = f"http://127.0.0.1:{cloud_server.port}"

    sec_state = DeviceState(role="secondary", device_id=b"\x21" * 16,
                            account_id="alice")
    device = SecondaryDevice(production_group(), sec_state,
                             HttpCloudClient(cloud_url, WireLog()), PASSWORD,
                             approvals=ApprovalQueue(ApprovalPolicy()))
    daemon = SecondaryDaemon(device, ping_interval=0.1,
                             console_token="test-token")
    daemon.start()

    cfg_path = tmp / "primary.conf"
    cfg_path.write_text(
        f"account = alice\n"
        f"device_id = {'11' * 16}\n"
        f"role = primary\n"
        f"peer = 127.0.0.1:{daemon.listen_port}\n"
        f"cloud = {cloud_url}\n"
        f"state = {tmp / 'primary.state'}\n")
    os.environ["TWOFE_PASSWORD"] = PASSWORD
    yield {"cfg": str(cfg_path), "daemon": daemon, "device": device,
           "cloud_url": cloud_url, "tmp": tmp,
           "console": f"http://127.0.0.1:{daemon.console_port}"}
    daemon.stop()
    cloud_server.stop()


def run_cli(args) -> int:
    return cli.main(args)


class TestCliRoundtrip:
    def test_enroll_put_get(self, stack):
        assert run_cli(["--config", stack["cfg"], "enroll",
                        "--recovery-secret", RECOVERY]) == 0
        src = stack["tmp"] / "hello.txt"
        src.write_bytes(b"two devices, one file")
        assert run_cli(["--config", stack["cfg"], "put", str(src),
                        "--name", "docs/hello.txt"]) == 0
        out = stack["tmp"] / "fetched.txt"
        assert run_cli(["--config", stack["cfg"], "get", "docs/hello.txt",
                        "-o", str(out)]) == 0
        assert out.read_bytes() == b"two devices, one file"

    def test_ls_shows_catalog(self, stack, capsys):
        assert run_cli(["--config", stack["cfg"], "ls"]) == 0
        assert "docs/hello.txt" in capsys.readouterr().out

    def test_unknown_name_maps_to_exit_code(self, stack):
        from twofe.errors import NameNotFound

        code = run_cli(["--config", stack["cfg"], "get", "missing.txt",
                        "-o", str(stack["tmp"] / "x")])
        assert code == NameNotFound.exit_code

    def test_trash_roundtrip(self, stack):
        assert run_cli(["--config", stack["cfg"], "rm",
                        "docs/hello.txt"]) == 0
        assert run_cli(["--config", stack["cfg"], "restore",
                        "docs/hello.txt"]) == 0


class TestConsoleApi:
    def _api(self, stack, method, path, body=None):
        req = urllib.request.Request(
            stack["console"] + path,
            data=json.dumps(body).encode() if body is not None else None,
            headers={"Content-Type": "application/json",
                     "X-Console-Token": "test-token"},
            method=method)
        with urllib.request.urlopen(req, timeout=5) as resp:
            return json.loads(resp.read())

    def test_bad_token_rejected(self, stack):
        req = urllib.request.Request(stack["console"] + "/requests")
        with pytest.raises(urllib.error.HTTPError) as err:
            urllib.request.urlopen(req, timeout=5)
        assert err.value.code == 403

    def test_prompt_deny_through_console(self, stack):
        stack["device"].approvals.policy = ApprovalPolicy(
            mode="prompt", approval_window=0)
        results = {}

        def attempt():
            results["code"] = run_cli(["--config", stack["cfg"], "get",
                                       "docs/hello.txt", "-o",
                                       str(stack["tmp"] / "denied.txt")])

        worker = threading.Thread(target=attempt)
        worker.start()
        deadline = time.monotonic() + 10
        pending = []
        while not pending and time.monotonic() < deadline:
            pending = self._api(stack, "GET", "/requests")["pending"]
            time.sleep(0.05)
        assert pending, "prompt never surfaced in the console API"
        rid = pending[0]["request_id"]
        assert self._api(stack, "POST", f"/requests/{rid}/decision",
                         {"decision": "deny"}) == {"ok": True}
        worker.join(timeout=15)
        assert results["code"] == PolicyDenied.exit_code

    def test_approve_through_console(self, stack):
        results = {}

        def attempt():
            results["code"] = run_cli(["--config", stack["cfg"], "get",
                                       "docs/hello.txt", "-o",
                                       str(stack["tmp"] / "approved.txt")])

        worker = threading.Thread(target=attempt)
        worker.start()
        deadline = time.monotonic() + 10
        pending = []
        while not pending and time.monotonic() < deadline:
            pending = self._api(stack, "GET", "/requests")["pending"]
            time.sleep(0.05)
        rid = pending[0]["request_id"]
        self._api(stack, "POST", f"/requests/{rid}/decision",
                  {"decision": "approve"})
        worker.join(timeout=15)
        assert results["code"] == 0
        assert (stack["tmp"] / "approved.txt").read_bytes() \
            == b"two devices, one file"
        stack["device"].approvals.policy = ApprovalPolicy(mode="notify")

    def test_notifications_listed(self, stack):
        notes = self._api(stack, "GET", "/notifications")["notifications"]
        assert any(n["outcome"] in ("approved", "denied") for n in notes)

    def test_event_stream_pushes_requests(self, stack):
        stack["device"].approvals.policy = ApprovalPolicy(
            mode="prompt", approval_window=0)
        events = {}

        def listen():
            req = urllib.request.Request(
                stack["console"] + "/events",
                headers={"X-Console-Token": "test-token"})
            with urllib.request.urlopen(req, timeout=10) as resp:
                buffer = []
                for raw in resp:
                    line = raw.decode().strip()
                    if line.startswith("event:"):
                        buffer.append(line.split(":", 1)[1].strip())
                    if line.startswith("data:") and buffer:
                        events["first"] = (buffer[-1],
                                           json.loads(line.split(":", 1)[1]))
                        return

        listener = threading.Thread(target=listen, daemon=True)
        listener.start()
        time.sleep(0.3)

        def attempt():
            run_cli(["--config", stack["cfg"], "get", "docs/hello.txt",
                     "-o", str(stack["tmp"] / "sse.txt")])

        worker = threading.Thread(target=attempt, daemon=True)
        worker.start()
        listener.join(timeout=10)
        assert "first" in events, "no event arrived on the stream"
        name, payload = events["first"]
        assert name == "request" and payload["kind"] == "decrypt"
        rid = payload["request_id"]
        self._api(stack, "POST", f"/requests/{rid}/decision",
                  {"decision": "approve"})
        worker.join(timeout=15)
        stack["device"].approvals.policy = ApprovalPolicy(mode="notify")
