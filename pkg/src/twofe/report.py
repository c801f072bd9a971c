"""Report rendering: line-delimited records and a human table for both the
benchmark and the scenario suite, plus the benchmark figures."""

from __future__ import annotations

import json
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _size_label(size: int) -> str:
    if size >= 1024 * 1024:
        return f"{size // (1024 * 1024)}MB"
    if size >= 1024:
        return f"{size // 1024}KB"
    return f"{size}B"


def write_bench_jsonl(report: dict, path: str) -> None:
    with open(path, "w") as fh:
        for transport, data in report["transports"].items():
            for size, stats in data["per_size"].items():
                fh.write(json.dumps({"record": "derivation",
                                     "transport": transport,
                                     "size": size, **stats}) + "\n")
            fh.write(json.dumps({"record": "messages",
                                 "transport": transport,
                                 **data["messages"]}) + "\n")
            fh.write(json.dumps({"record": "slope", "transport": transport,
                                 **data["slope"]}) + "\n")


def bench_table(report: dict, checks: list[tuple[str, bool, str]]) -> str:
    lines = []
    header = (f"{'transport':<14}{'size':>8}{'enc median':>12}"
              f"{'dec median':>12}{'compute':>10}{'fraction':>10}")
    lines.append(header)
    lines.append("-" * len(header))
    for transport, data in report["transports"].items():
        for size, stats in data["per_size"].items():
            enc = stats["encrypt_derivation"]
            dec = stats["decrypt_derivation"]
            lines.append(
                f"{transport:<14}{_size_label(size):>8}"
                f"{enc['median_ms']:>10.2f}ms{dec['median_ms']:>10.2f}ms"
                f"{enc['compute_median_ms']:>8.2f}ms"
                f"{enc['compute_fraction']:>10.2f}")
        counts = data["messages"]
        lines.append(f"{transport:<14} messages: encrypt={counts['encrypt']} "
                     f"decrypt={counts['decrypt']}")
    lines.append("")
    for name, ok, detail in checks:
        lines.append(f"[{'PASS' if ok else 'FAIL'}] {name} ({detail})")
    return "\n".join(lines) + "\n"


def render_bench_figures(report: dict, out_dir: str) -> list[str]:
    """Two figures: derivation latency vs file size per transport, and a
    stacked breakdown of the encryption flow."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []

    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for transport, data in report["transports"].items():
        sizes = sorted(data["per_size"])
        med = [data["per_size"][s]["encrypt_derivation"]["median_ms"]
               for s in sizes]
        dec = [data["per_size"][s]["decrypt_derivation"]["median_ms"]
               for s in sizes]
        labels = [_size_label(s) for s in sizes]
        ax.plot(labels, med, marker="o", label=f"{transport} enc")
        ax.plot(labels, dec, marker="s", linestyle="--",
                label=f"{transport} dec")
    ax.set_xlabel("file size")
    ax.set_ylabel("key derivation latency (ms)")
    ax.set_title("Key derivation latency is flat across file sizes")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    path = os.path.join(out_dir, "bench_derivation_latency.png")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    paths.append(path)

    transport = next(iter(report["transports"]))
    data = report["transports"][transport]
    sizes = sorted(data["per_size"])
    labels = [_size_label(s) for s in sizes]
    deriv = [data["per_size"][s]["derivation_compute_median_ms"]
             for s in sizes]
    total = [data["per_size"][s]["encrypt_total_median_ms"] for s in sizes]
    rest = [max(t - d, 0.0) for t, d in zip(total, deriv)]
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    ax.bar(labels, deriv, label="key derivation (compute)")
    ax.bar(labels, rest, bottom=deriv, label="cipher + storage + transport")
    ax.set_xlabel("file size")
    ax.set_ylabel("encrypt flow time (ms)")
    ax.set_title(f"Encryption flow breakdown ({transport})")
    ax.legend(fontsize=8)
    path = os.path.join(out_dir, "bench_flow_breakdown.png")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    paths.append(path)
    return paths


def render_scenario_figure(verdicts, out_dir: str) -> str:
    """Verdict grid: one row per scenario, one cell per assertion."""
    os.makedirs(out_dir, exist_ok=True)
    names = [v.scenario for v in verdicts]
    width = max(len(v.assertions) for v in verdicts)
    fig, ax = plt.subplots(
        figsize=(1.2 + 0.55 * width, 0.8 + 0.38 * len(names)))
    for row, verdict in enumerate(verdicts):
        for col, assertion in enumerate(verdict.assertions):
            color = "#7fd18a" if assertion.passed else "#d17f7f"
            ax.add_patch(plt.Rectangle((col, len(names) - 1 - row), 0.92,
                                       0.92, color=color))
    ax.set_xlim(0, width)
    ax.set_ylim(0, len(names))
    ax.set_yticks([len(names) - 1 - i + 0.46 for i in range(len(names))])
    ax.set_yticklabels(names, fontsize=7)
    ax.set_xticks([])
    ax.set_title("Threat scenarios: one cell per assertion", fontsize=9)
    path = os.path.join(out_dir, "scenario_verdicts.png")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def write_scenario_jsonl(verdicts, table_assertions, path: str) -> None:
    with open(path, "w") as fh:
        for v in verdicts:
            fh.write(json.dumps(v.to_dict()) + "\n")
        for a in table_assertions:
            fh.write(json.dumps({"scenario": "table-markings",
                                 "assertion": a.name, "passed": a.passed,
                                 "detail": a.detail}) + "\n")


def scenario_table(verdicts, table_assertions) -> str:
    lines = []
    for v in verdicts:
        lines.append(f"[{'PASS' if v.passed else 'FAIL'}] {v.scenario}")
        for a in v.assertions:
            mark = "ok" if a.passed else "FAILED"
            lines.append(f"    {mark:<7}{a.name}"
                         + (f" ({a.detail})" if a.detail else ""))
    lines.append("")
    for a in table_assertions:
        lines.append(f"[{'PASS' if a.passed else 'FAIL'}] {a.name} "
                     f"({a.detail})")
    return "\n".join(lines) + "\n"
