import json
from pathlib import Path

from intersnap_archive.config import Paths, data_file_path, data_file_list
from intersnap_archive.util import archive_write_csv, archive_read_text, canonical_json


default_suite = "intersnap_test"


def scenario_sub_path(suite):
    """Scenario folder of a suite, from config.yaml if set"""
    paths = Paths(suite, errors="ignore")
    return getattr(paths, "scenario_path", "scenarios")


def list_scenarios(suite=default_suite, this_repo=False):
    """Names of the scenario files in a suite

    Args:
        suite (str, optional): Suite. Defaults to "intersnap_test".
        this_repo (bool, optional): Look in this repository, ignoring the working directory.

    Returns:
        list: Scenario names (file names without .json)
    """

    sub_path = "scenarios" if this_repo else scenario_sub_path(suite)
    _, _, files = data_file_list(suite=suite, sub_path=sub_path, pattern="*.json", this_repo=this_repo)
    return [Path(f).stem for f in files]


def read_scenario(scenario, suite=default_suite, this_repo=False):
    """Read a scenario file

    Args:
        scenario (str or Path): Path to a JSON file, or the name of a scenario in the suite
        suite (str, optional): Suite. Defaults to "intersnap_test".
        this_repo (bool, optional): Look in this repository, ignoring the working directory.

    Raises:
        FileNotFoundError: No such scenario

    Returns:
        dict: Scenario, not yet validated
    """

    pth = Path(scenario)
    if not (pth.suffix == ".json" and pth.exists()):
        sub_path = "scenarios" if this_repo else scenario_sub_path(suite)
        pth = data_file_path(f"{pth.stem}.json", suite=suite, sub_path=sub_path,
                             this_repo=this_repo, errors="raise")

    with open(pth, encoding="utf-8") as f:
        return json.load(f)


def write_scenario(scenario, pth):
    pth = Path(pth)
    pth.parent.mkdir(parents=True, exist_ok=True)
    with open(pth, "w", encoding="utf-8") as f:
        json.dump(scenario, f, indent=4, sort_keys=True)
        f.write("\n")
    return pth


def write_json(out_path, filename, obj):
    """Canonical JSON file in a run output directory or zip archive"""
    archive_write_csv(out_path, filename, canonical_json(obj) + "\n")


def read_json(out_path, filename):
    return json.loads(archive_read_text(out_path, filename))


def write_jsonl(out_path, filename, rows):
    archive_write_csv(out_path, filename, "".join(canonical_json(row) + "\n" for row in rows))


def read_jsonl(out_path, filename):
    return [json.loads(line) for line in archive_read_text(out_path, filename).splitlines() if line]
