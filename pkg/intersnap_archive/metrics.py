from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import pandas as pd

from intersnap_archive.definitions import pipeline_stages
from intersnap_archive.util import archive_write_csv, canonical_json


# Columns measured in wall-clock time. Everything else is a function of (scenario, seed)
wall_clock_columns = ["capture_s", "compress_s", "encrypt_s", "store_put_s", "total_s",
                      "snapshots_per_min_wall", "download_s", "decrypt_s", "restore_s"]

latency_columns = ["network_id", "tick", "snapshot_id", "cid", "epoch", "from_height", "to_height",
                   "block_count", "archived_transactions", "archive_snapshots", "plaintext_bytes", "compressed_bytes",
                   "encrypted_bytes", "capture_s", "compress_s", "encrypt_s", "store_put_s", "total_s"]

throughput_columns = ["network_id", "tick", "ledger_height", "snapshots_per_min_wall"]

transfer_columns = ["source_network", "dest_network", "set_id", "cid", "initiated_tick",
                    "received_tick", "completed_tick", "response_ticks", "download_s", "decrypt_s"]

bootstrap_columns = ["network_id", "peer_id", "tick", "source", "archives", "restored_height",
                     "blocks", "ok", "error", "restore_s"]

verdict_columns = ["tick", "case_id", "claimant", "respondent", "kind", "outcome", "rationale",
                   "evidence_count"]

# Row keys repeated in each *_wall.csv file
wall_key_columns = {"snapshot_latency.csv": ["network_id", "tick", "snapshot_id"],
                    "snapshot_throughput.csv": ["network_id", "tick", "ledger_height"],
                    "transfer_time.csv": ["source_network", "dest_network", "set_id"],
                    "bootstrap.csv": ["network_id", "peer_id", "tick"]}


@dataclass
class StageCounter:
    attempts: int = 0
    passed: int = 0
    failed: int = 0

    @property
    def reconciles(self):
        return self.attempts == self.passed + self.failed


class MetricsReport:
    """Per-run measurements: snapshot latencies, archive transfers, bootstraps,
    verdicts and pass/fail counters for each pipeline stage
    """

    def __init__(self):
        self.stages = {stage: StageCounter() for stage in pipeline_stages}
        self.snapshots = []
        self.transfers = []
        self.bootstraps = []
        self.verdicts = []
        self.counters = Counter()

    def attempt(self, stage):
        self.stages[stage].attempts += 1

    def passed(self, stage):
        self.stages[stage].passed += 1

    def failed(self, stage):
        self.stages[stage].failed += 1

    def reconciles(self):
        return all(counter.reconciles for counter in self.stages.values())

    def success_rate(self):
        attempts = sum(c.attempts for c in self.stages.values())
        if attempts == 0:
            return 1.0
        return sum(c.passed for c in self.stages.values()) / attempts

    def stage_table(self):
        return pd.DataFrame([{"stage": stage, "attempts": c.attempts, "passed": c.passed, "failed": c.failed}
                             for stage, c in self.stages.items()],
                            columns=["stage", "attempts", "passed", "failed"])

    def summary(self, wall_clock=True):
        """Totals for summary.json

        Args:
            wall_clock (bool, optional): Include wall-clock aggregates. Defaults to True.

        Returns:
            dict: Summary
        """

        out = {"snapshots": len(self.snapshots),
               "archived_transactions": sum(r["archived_transactions"] for r in self.snapshots),
               "transfers": len(self.transfers),
               "transfers_completed": sum(1 for r in self.transfers if r["completed_tick"] is not None),
               "bootstraps": len(self.bootstraps),
               "verdicts": {},
               "stages": {stage: {"attempts": c.attempts, "passed": c.passed, "failed": c.failed}
                          for stage, c in self.stages.items()},
               "stages_reconcile": self.reconciles(),
               "success_rate": round(self.success_rate(), 6),
               "counters": dict(sorted(self.counters.items()))}

        for row in self.verdicts:
            key = f"{row['outcome']}/{row['rationale']}"
            out["verdicts"][key] = out["verdicts"].get(key, 0) + 1

        if wall_clock and self.snapshots:
            totals = [r["total_s"] for r in self.snapshots]
            out["mean_snapshot_s"] = sum(totals) / len(totals)
            out["max_snapshot_s"] = max(totals)
            wall = sum(totals)
            out["snapshots_per_min_wall"] = 60 * len(totals) / wall if wall > 0 else None

        return out


def _frame(rows, columns, wall_clock):
    df = pd.DataFrame(rows, columns=columns).convert_dtypes()
    if not wall_clock:
        df = df.drop(columns=[c for c in columns if c in wall_clock_columns])
    return df


def metric_tables(report, wall_clock=True):
    """One DataFrame per figure family

    Args:
        report (MetricsReport): Finalized report
        wall_clock (bool, optional): Keep wall-clock columns. Defaults to True.

    Returns:
        dict: filename to DataFrame
    """

    throughput = []
    for row in report.snapshots:
        rate = 60 / row["total_s"] if row.get("total_s") else None
        throughput.append({"network_id": row["network_id"], "tick": row["tick"],
                           "ledger_height": row["to_height"], "snapshots_per_min_wall": rate})

    return {"snapshot_latency.csv": _frame(report.snapshots, latency_columns, wall_clock),
            "snapshot_throughput.csv": _frame(throughput, throughput_columns, wall_clock),
            "transfer_time.csv": _frame(report.transfers, transfer_columns, wall_clock),
            "stage_counts.csv": report.stage_table(),
            "bootstrap.csv": _frame(report.bootstraps, bootstrap_columns, wall_clock),
            "verdicts.csv": _frame(report.verdicts, verdict_columns, wall_clock)}


def wall_clock_tables(report):
    """Wall-clock measurements split from metric_tables, keyed by the columns
    that identify each row

    Returns:
        dict: filename (``<family>_wall.csv``) to DataFrame
    """

    tables = {}
    for filename, df in metric_tables(report).items():
        wall = [c for c in df.columns if c in wall_clock_columns]
        if not wall:
            continue
        keys = wall_key_columns[filename]
        tables[filename.replace(".csv", "_wall.csv")] = df[keys + wall]
    return tables


def export_metrics(report, path, wall_clock=True):
    """Write one CSV per figure family and summary.json to a directory or zip archive.
    These files depend only on (scenario, seed). Wall-clock measurements go to
    separate ``*_wall.csv`` files and summary_wall.json.

    Args:
        report (MetricsReport): Finalized report
        path (str or Path): Output directory or .zip archive
        wall_clock (bool, optional): Also write the wall-clock files. Defaults to True.

    Raises:
        OSError: Files can't be written

    Returns:
        list: Names of the files written
    """

    path = Path(path)

    written = []
    for filename, df in metric_tables(report, wall_clock=False).items():
        archive_write_csv(path, filename, df.to_csv(index=False, lineterminator="\n"))
        written.append(filename)

    archive_write_csv(path, "summary.json", canonical_json(report.summary(wall_clock=False)) + "\n")
    written.append("summary.json")

    if wall_clock:
        for filename, df in wall_clock_tables(report).items():
            archive_write_csv(path, filename, df.to_csv(index=False, lineterminator="\n"))
            written.append(filename)
        summary = report.summary(wall_clock=True)
        wall = {k: summary[k] for k in ["mean_snapshot_s", "max_snapshot_s", "snapshots_per_min_wall"]
                if k in summary}
        archive_write_csv(path, "summary_wall.json", canonical_json(wall) + "\n")
        written.append("summary_wall.json")

    return written
