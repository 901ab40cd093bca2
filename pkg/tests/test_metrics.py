import json
from zipfile import ZipFile

from intersnap_archive.definitions import pipeline_stages
from intersnap_archive.metrics import MetricsReport, metric_tables, export_metrics, wall_clock_columns
from intersnap_archive.visualise import plot_snapshot_latency, plot_snapshot_throughput, plot_stage_counts, \
    write_figures


def make_report():

    report = MetricsReport()
    for i, (nid, height) in enumerate([("N1", 24), ("N2", 24), ("N1", 49)]):
        report.snapshots.append({"network_id": nid, "tick": 10 * i, "snapshot_id": f"s{i}", "cid": f"cid1-{i}",
                                 "epoch": 0, "from_height": height - 24, "to_height": height,
                                 "block_count": 24, "archived_transactions": 30 + i,
                                 "plaintext_bytes": 4000, "compressed_bytes": 3000, "encrypted_bytes": 3041,
                                 "capture_s": 0.01, "compress_s": 0.002, "encrypt_s": 0.004,
                                 "store_put_s": 0.001, "total_s": 0.017 + i * 0.001})
    for stage in pipeline_stages:
        for _ in range(4):
            report.attempt(stage)
            report.passed(stage)
    report.attempt("encrypt")
    report.failed("encrypt")
    report.verdicts.append({"tick": 50, "case_id": "abc", "claimant": "N1", "respondent": "N2",
                            "kind": "demand_fulfillment", "outcome": "claim_upheld",
                            "rationale": "case1_valid_receipt", "evidence_count": 2})
    report.counters["sets_completed"] += 3
    return report


def test_summary():

    report = make_report()
    assert report.reconciles()
    assert report.success_rate() == 20 / 21

    summary = report.summary()
    assert summary["snapshots"] == 3
    assert summary["archived_transactions"] == 93
    assert summary["stages"]["encrypt"] == {"attempts": 5, "passed": 4, "failed": 1}
    assert summary["verdicts"] == {"claim_upheld/case1_valid_receipt": 1}
    assert summary["counters"] == {"sets_completed": 3}
    assert summary["snapshots_per_min_wall"] > 0

    tick_only = report.summary(wall_clock=False)
    assert "snapshots_per_min_wall" not in tick_only
    assert "mean_snapshot_s" not in tick_only

    # Unbalanced counters don't reconcile
    report.attempt("archive")
    assert not report.reconciles()
    assert MetricsReport().success_rate() == 1.0


def test_metric_tables():

    tables = metric_tables(make_report())
    assert set(tables) == {"snapshot_latency.csv", "snapshot_throughput.csv", "transfer_time.csv",
                           "stage_counts.csv", "bootstrap.csv", "verdicts.csv"}

    throughput = tables["snapshot_throughput.csv"]
    assert list(throughput["ledger_height"]) == [24, 24, 49]
    assert abs(throughput["snapshots_per_min_wall"].iloc[0] - 60 / 0.017) < 1e-6

    assert list(tables["stage_counts.csv"]["stage"]) == pipeline_stages
    assert len(tables["transfer_time.csv"]) == 0

    tick_only = metric_tables(make_report(), wall_clock=False)
    for df in tick_only.values():
        assert not set(df.columns) & set(wall_clock_columns)


def test_export_metrics(tmp_path):

    report = make_report()
    written = export_metrics(report, tmp_path / "metrics")
    assert "summary.json" in written
    assert sorted(n for n in written if "_wall" in n) == ["bootstrap_wall.csv", "snapshot_latency_wall.csv",
                                                         "snapshot_throughput_wall.csv", "summary_wall.json",
                                                         "transfer_time_wall.csv"]
    latency = (tmp_path / "metrics" / "snapshot_latency.csv").read_text()
    assert latency.startswith("network_id,tick,snapshot_id")
    assert "total_s" not in latency
    summary = json.loads((tmp_path / "metrics" / "summary.json").read_text())
    assert summary["stages_reconcile"]
    assert "mean_snapshot_s" not in summary

    # Wall-clock values live in their own files, keyed like the main tables
    wall = (tmp_path / "metrics" / "snapshot_latency_wall.csv").read_text().splitlines()
    assert wall[0] == "network_id,tick,snapshot_id,capture_s,compress_s,encrypt_s,store_put_s,total_s"
    assert len(wall) == 4
    assert abs(json.loads((tmp_path / "metrics" / "summary_wall.json").read_text())["max_snapshot_s"] - 0.019) < 1e-9

    export_metrics(report, tmp_path / "metrics.zip", wall_clock=False)
    with ZipFile(tmp_path / "metrics.zip") as z:
        assert "metrics/verdicts.csv" in z.namelist()
        assert b"total_s" not in z.read("metrics/snapshot_latency.csv")
        assert not [n for n in z.namelist() if "_wall" in n]


def test_figures(tmp_path):

    report = make_report()
    assert len(plot_snapshot_latency(report).data) == 2
    assert [trace.name for trace in plot_snapshot_throughput(report).data] == ["N1", "N2"]
    stages = plot_stage_counts(report)
    assert [trace.name for trace in stages.data] == ["passed", "failed"]
    assert stages.layout.barmode == "stack"

    written = write_figures(report, tmp_path / "figures")
    assert sorted(p.name for p in written) == ["snapshot_latency.html", "snapshot_throughput.html",
                                               "stage_counts.html"]
    assert all(p.exists() for p in written)
