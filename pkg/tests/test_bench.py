"""Benchmark harness smoke test: small sizes, both transports, all report
artifacts produced, structural gates pass."""

import json
import os

from twofe.bench import run_bench, structural_checks
from twofe.report import bench_table, render_bench_figures, write_bench_jsonl


class TestBenchHarness:
    def test_report_and_artifacts(self, tmp_path):
        report = run_bench(sizes=[50_000, 200_000], reps=6)
        checks = structural_checks(report)
        assert all(ok for _name, ok, _detail in checks), checks

        jsonl = tmp_path / "bench.jsonl"
        write_bench_jsonl(report, str(jsonl))
        records = [json.loads(line) for line in jsonl.read_text().splitlines()]
        kinds = {r["record"] for r in records}
        assert kinds == {"derivation", "messages", "slope"}

        table = bench_table(report, checks)
        assert "messages: encrypt=5 decrypt=2" in table

        figures = render_bench_figures(report, str(tmp_path))
        assert len(figures) == 2
        for fig in figures:
            assert os.path.getsize(fig) > 5000  # a real rendered png

    def test_compute_never_exceeds_total(self):
        report = run_bench(sizes=[50_000], reps=8,
                           transports=("in-process",))
        for size, stats in report["transports"]["in-process"][
                "per_size"].items():
            for op in ("encrypt_derivation", "decrypt_derivation"):
                assert stats[op]["compute_median_ms"] \
                    <= stats[op]["median_ms"] + 1e-6
