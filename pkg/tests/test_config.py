from pathlib import Path
import yaml
import pytest

from intersnap_archive.config import Paths, setup, data_file_path, open_data_file, data_file_list, \
    output_path, delete_output, create_output, load_defaults, load_scenario_schema


repo_path = Path(__file__).resolve().parents[1]


def test_paths(tmp_path):

    # Check that "this_repo" option returns the repository path
    path_this_repo = Paths(this_repo=True)
    assert path_this_repo.root == repo_path / "intersnap_archive"
    assert path_this_repo.data == repo_path / "data"

    # Suite paths come from the config file
    config_file = setup(config_file=tmp_path / "config.yaml", user="tester")
    path = Paths("intersnap_test", config_file=config_file, errors="ignore")
    assert path.user == "tester"
    assert path.scenario_path == "scenarios"
    assert path.output_path == "output"

    with pytest.raises(KeyError):
        Paths("non_existent_suite", config_file=config_file, errors="raise")

    # If we try to retrieve a suite that doesn't exist with errors ignored, it should not error
    Paths("non_existent_suite", config_file=config_file, errors="ignore")


def test_setup(tmp_path):

    config_file = setup(suite="my_suite", config_file=tmp_path / "config.yaml", user="someone")
    with open(config_file) as f:
        text = f.read()
    assert text.startswith("# Use this file")

    config = yaml.safe_load(text)
    assert config["user"]["name"] == "someone"
    assert config["paths"]["my_suite"] == {"scenario_path": "scenarios",
                                           "output_path": "output"}


def test_data_file_path():

    assert data_file_path("empty.json", "intersnap_test", "scenarios", this_repo=True).exists()
    assert data_file_path("defaults.json", this_repo=True).exists()

    with pytest.raises(FileNotFoundError):
        data_file_path("missing.json", "intersnap_test", "scenarios", this_repo=True, errors="raise")


def test_open_data_file():

    with open_data_file("fault_handlers.json", this_repo=True) as f:
        assert b"fault_peer_crash" in f.read()


def test_data_file_list():

    suite, sub_path, files = data_file_list("intersnap_test", "scenarios", pattern="*.json", this_repo=True)
    assert suite == "intersnap_test"
    assert sub_path == "scenarios"
    assert "fault_case_1.json" in files
    assert files == sorted(files)

    assert data_file_list("intersnap_test", "no_such_folder", this_repo=True)[2] == []


def test_defaults_and_schema():

    defaults = load_defaults()
    assert defaults["payload_bytes"] == 1024
    assert defaults["archive"]["kdf_iterations"] == 65536
    assert defaults["crosschain"]["timeout"] == 30

    # A fresh copy each time
    defaults["seed"] = 99
    assert load_defaults()["seed"] == 0

    assert load_scenario_schema()["properties"]["schema"] == {"const": 1}


def test_output_path(tmp_path):

    config_file = setup(config_file=tmp_path / "config.yaml", user="tester")
    paths = Paths("intersnap_test", config_file=config_file, errors="ignore")

    out = output_path("intersnap_test", "baseline", 3, errors="ignore", config_file=config_file)
    assert out == paths.data / "intersnap_test" / "output" / "baseline-seed3"
    assert output_path("intersnap_test", errors="ignore", config_file=config_file) == \
        paths.data / "intersnap_test" / "output"


def test_create_and_delete_output(tmp_path):

    out = tmp_path / "run"
    create_output(out)
    (out / "state.json").write_text("{}")
    (out / "store").mkdir()
    (out / "store" / "swarm.key").write_text("x")

    delete_output(out)
    assert out.exists()
    assert list(out.iterdir()) == []

    zipped = tmp_path / "run.zip"
    create_output(zipped)
    assert zipped.exists()
    delete_output(zipped)
    assert not zipped.exists()

    with pytest.raises(ValueError):
        delete_output(Paths(this_repo=True).data)
