"""Benchmark harness: key-derivation latency for encryption and decryption,
full-flow breakdowns across file sizes, and structural assertions (relative
shape, not absolute milliseconds, which depend on the machine and network).

Two transports are measured and reported separately: the in-process channel
(pure compute plus dispatch) and a real TCP loopback socket.  Compute time
is accumulated inside the crypto sections of both devices during the same
runs, so compute <= total holds per sample by construction.
"""

from __future__ import annotations

import socket
import statistics
import time
from dataclasses import dataclass, field
from typing import Optional

from .deploy import Deployment
from .engine import EngineConfig
from .transport import PeerLink, ChannelServer, TcpChannel

DEFAULT_SIZES = [100 * 1024, 1024 * 1024, 5 * 1024 * 1024, 10 * 1024 * 1024]
DEFAULT_REPS = 30

ENCRYPT_DERIVATION_MESSAGES = 5   # coin toss (3) + blinded evaluation (2)
DECRYPT_DERIVATION_MESSAGES = 2   # request carrying (tag, seed) + response


@dataclass
class OpStats:
    samples_ms: list[float] = field(default_factory=list)
    compute_ms: list[float] = field(default_factory=list)

    def summary(self) -> dict:
        med = statistics.median(self.samples_ms)
        comp = statistics.median(self.compute_ms)
        return {
            "median_ms": round(med, 3),
            "stdev_ms": round(statistics.pstdev(self.samples_ms), 3),
            "compute_median_ms": round(comp, 3),
            "compute_fraction": round(comp / med, 3) if med else 1.0,
            "n": len(self.samples_ms),
        }


def _tcp_loopback_deployment() -> Deployment:
    """Wall-clock deployment whose device link crosses a real socket."""
    dep = Deployment(seed=None, config=EngineConfig())
    listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    listener.bind(("127.0.0.1", 0))
    listener.listen(1)
    port = listener.getsockname()[1]
    client = socket.create_connection(("127.0.0.1", port))
    server_conn, _ = listener.accept()
    listener.close()
    server = ChannelServer(TcpChannel(server_conn), dep.secondary.handle,
                           dep.secondary.log, device=dep.secondary)
    server.start()
    dep.primary.link = PeerLink(TcpChannel(client), dep.primary_log,
                                "secondary")
    dep._tcp_server = server  # keep alive
    return dep


def _one_encrypt_derivation(dep: Deployment, enc: OpStats
                            ) -> tuple[bytes, bytes]:
    from . import filecrypto

    dep.primary.perf = {"compute": 0.0}
    dep.secondary.perf = dep.primary.perf
    t0 = time.perf_counter()
    session_id = dep.primary.rng.randbytes(16)
    tag = filecrypto.generate_tag(dep.primary.rng)
    sr, seed = dep.primary._run_seed_exchange(session_id)
    dep.primary._derive_key("Encrypt", session_id, tag, seed)
    enc.samples_ms.append((time.perf_counter() - t0) * 1000)
    enc.compute_ms.append(dep.primary.perf["compute"] * 1000)
    sr.abort()
    return tag, seed


def _one_decrypt_derivation(dep: Deployment, dec: OpStats, tag: bytes,
                            seed: bytes) -> None:
    dep.primary.perf = {"compute": 0.0}
    dep.secondary.perf = dep.primary.perf
    session_id = dep.primary.rng.randbytes(16)
    t0 = time.perf_counter()
    dep.primary._derive_key("Decrypt", session_id, tag, seed)
    dec.samples_ms.append((time.perf_counter() - t0) * 1000)
    dec.compute_ms.append(dep.primary.perf["compute"] * 1000)


def _measure_full_flows(dep: Deployment, size: int, reps: int) -> dict:
    """Whole-flow timing split into derivation / cipher work / storage."""
    import os

    payload = os.urandom(size)
    totals, derivs = [], []
    for i in range(reps):
        dep.primary.perf = {"compute": 0.0}
        dep.secondary.perf = dep.primary.perf
        t0 = time.perf_counter()
        tag = dep.primary.encrypt_flow(payload, f"bench/{size}/{i}")
        totals.append((time.perf_counter() - t0) * 1000)
        derivs.append(dep.primary.perf["compute"] * 1000)
        t0 = time.perf_counter()
        got = dep.primary.decrypt_flow(tag=tag)
        assert got == payload
    dep.primary.perf = None
    dep.secondary.perf = None
    return {
        "encrypt_total_median_ms": round(statistics.median(totals), 3),
        "derivation_compute_median_ms": round(statistics.median(derivs), 3),
    }


def derivation_message_counts(dep: Deployment) -> dict[str, int]:
    """Count device<->device frames per derivation off the wire log."""
    dep.primary.log.clear()
    tag = dep.primary.encrypt_flow(b"count me", "bench/count")
    enc_msgs = [e for e in dep.primary.log.entries
                if e.peer == "secondary"
                and e.message.msg_type in ("SR_COMMIT", "SR_SHARE",
                                           "SR_REVEAL", "TPRF_REQ",
                                           "TPRF_RESP")]
    dep.primary.log.clear()
    dep.primary.decrypt_flow(tag=tag)
    dec_msgs = [e for e in dep.primary.log.entries
                if e.peer == "secondary"
                and e.message.msg_type in ("SR_COMMIT", "SR_SHARE",
                                           "SR_REVEAL", "TPRF_REQ",
                                           "TPRF_RESP")]
    return {"encrypt": len(enc_msgs), "decrypt": len(dec_msgs)}


def slope_confidence_interval(sizes: list[int],
                              samples: dict[int, list[float]],
                              alpha: float = 0.05) -> dict:
    """OLS slope of derivation latency against file size, with its CI."""
    from scipy import stats as sstats

    if len(set(sizes)) < 2:
        return {"slope_ms_per_byte": None, "ci_low": None, "ci_high": None,
                "n": sum(len(v) for v in samples.values())}
    xs, ys = [], []
    for size in sizes:
        for y in samples[size]:
            xs.append(size)
            ys.append(y)
    fit = sstats.linregress(xs, ys)
    df = len(xs) - 2
    tcrit = sstats.t.ppf(1 - alpha / 2, df)
    return {
        "slope_ms_per_byte": fit.slope,
        "ci_low": fit.slope - tcrit * fit.stderr,
        "ci_high": fit.slope + tcrit * fit.stderr,
        "n": len(xs),
    }


def run_bench(sizes: Optional[list[int]] = None, reps: int = DEFAULT_REPS,
              transports: tuple[str, ...] = ("in-process", "tcp-loopback")
              ) -> dict:
    """The benchmark report: per-transport derivation stats, per-size flow
    breakdowns, the latency-vs-size regression, and message counts."""
    sizes = sizes or DEFAULT_SIZES
    report: dict = {"sizes": sizes, "reps": reps, "transports": {}}

    for transport in transports:
        if transport == "in-process":
            dep = Deployment(seed=None, config=EngineConfig())
        elif transport == "tcp-loopback":
            dep = _tcp_loopback_deployment()
        else:
            raise ValueError(f"unknown transport {transport!r}")
        dep.enroll()

        # derivation samples are interleaved round-robin across sizes so
        # machine-load drift over the run cannot alias onto file size in
        # the regression (derivation itself never touches the payload)
        enc_stats = {size: OpStats() for size in sizes}
        dec_stats = {size: OpStats() for size in sizes}
        for _round in range(reps):
            for size in sizes:
                tag, seed = _one_encrypt_derivation(dep, enc_stats[size])
                _one_decrypt_derivation(dep, dec_stats[size], tag, seed)
        dep.primary.perf = None
        dep.secondary.perf = None

        per_size: dict[int, dict] = {}
        deriv_samples: dict[int, list[float]] = {}
        for size in sizes:
            flows = _measure_full_flows(dep, size, max(3, reps // 10))
            per_size[size] = {
                "encrypt_derivation": enc_stats[size].summary(),
                "decrypt_derivation": dec_stats[size].summary(),
                **flows,
            }
            deriv_samples[size] = enc_stats[size].samples_ms

        counts = derivation_message_counts(dep)
        report["transports"][transport] = {
            "per_size": per_size,
            "messages": counts,
            "slope": slope_confidence_interval(sizes, deriv_samples),
        }
    return report


def structural_checks(report: dict) -> list[tuple[str, bool, str]]:
    """The pass/fail gates derived from the report."""
    checks = []
    for transport, data in report["transports"].items():
        slope = data["slope"]
        if slope["slope_ms_per_byte"] is not None:
            checks.append((
                f"{transport}: derivation independent of file size",
                slope["ci_low"] <= 0.0 <= slope["ci_high"],
                f"slope CI [{slope['ci_low']:.3g}, {slope['ci_high']:.3g}]"))
        counts = data["messages"]
        checks.append((
            f"{transport}: decrypt needs fewer messages than encrypt",
            counts["decrypt"] < counts["encrypt"],
            f"decrypt {counts['decrypt']} < encrypt {counts['encrypt']}"))
        checks.append((
            f"{transport}: encrypt derivation uses {ENCRYPT_DERIVATION_MESSAGES} messages",
            counts["encrypt"] == ENCRYPT_DERIVATION_MESSAGES,
            f"saw {counts['encrypt']}"))
    inproc = report["transports"].get("in-process")
    if inproc:
        some_size = report["sizes"][0]
        med = inproc["per_size"][some_size]["encrypt_derivation"][
            "compute_median_ms"]
        checks.append(("compute-only derivation median under 250 ms",
                       med < 250.0, f"{med:.1f} ms"))
    return checks
