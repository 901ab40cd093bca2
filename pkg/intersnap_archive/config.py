from pathlib import Path as _Path
import json
from functools import lru_cache
from zipfile import ZipFile
import yaml
from fnmatch import fnmatch, filter
from shutil import rmtree


class Paths():

    def __init__(self,
                suite = "",
                this_repo = False,
                errors = "ignore",
                config_file = None):
        """Class to store paths to data folders

        Args:
            suite (str, optional): Scenario suite name (sub-folder of data/). Defaults to "".
            this_repo (bool, optional): If True, look for the root and data folder within this repository (no config).
                If False, will look for the root and data folders and config file in the working directory.
                Defaults to False.
            errors (str, optional): If "raise", raise FileNotFoundError if file not found.
                If "ignore", return path.
                If "ignore_inputs", ignore errors in input paths.
                If "ignore_outputs", ignore errors in output paths.
                Defaults to "ignore".
            config_file (str or Path, optional): Read this config file instead of the one in the package folder.

        Raises:
            FileNotFoundError: If config file doesn't exist
            KeyError: If suite isn't in the config file
            FileNotFoundError: If folder or zip archive doesn't exist
        """

        # Repository root is the first folder, walking up from the working directory,
        # that contains a .git folder or a pyproject.toml
        if not this_repo:
            working_directory = _Path.cwd()
            while True:
                if (working_directory / ".git").exists() or \
                    (working_directory / "pyproject.toml").exists():
                    break
                else:
                    if working_directory == working_directory.parent:
                        raise FileNotFoundError("Can't find repository root")
                    working_directory = working_directory.parent
        else:
            working_directory = _Path(__file__).parent.parent

        # Within working directory find package folder
        # by looking for folder name with "_archive" in it, and __init__.py
        for pth in sorted(working_directory.glob("*_archive")):
            if (pth / "__init__.py").exists():
                self.root = pth
                break
        else:
            raise FileNotFoundError("Can't find package folder. Make sure your package has '_archive' in the folder name and __init__.py")

        self.data = self.root.parent / "data"

        # If this_repo is set and no config file is given, exit, to avoid config file confusion
        if this_repo and config_file is None:
            return

        self.config_file = _Path(config_file) if config_file else self.root / "config.yaml"
        if not self.config_file.exists():
            if errors == "ignore":
                return
            raise FileNotFoundError(
                "Config file not found. Try running config.setup first")

        with open(self.config_file) as f:
            config = yaml.safe_load(f)

        self.user = config["user"]["name"]

        if not suite:
            return

        if suite not in config["paths"].keys():
            if errors == "ignore":
                return
            else:
                raise KeyError(f"Suite {suite} not found in config file")

        # Read all sub-paths associated with suite
        for key, value in config["paths"][suite].items():
            self.__setattr__(key, value)

            if key == "output_path":
                check = errors in ["raise", "ignore_inputs"]
            else:
                check = errors in ["raise", "ignore_outputs"]

            if check:
                full_path = self.data / suite / value
                if not full_path.exists():
                    raise FileNotFoundError(f"Folder or zip archive {full_path} doesn't exist")
                if not (full_path.is_dir() or full_path.suffix == ".zip"):
                    raise FileNotFoundError(f"{full_path} is not a folder or zip archive")

        if "output_path" not in config["paths"][suite] and errors in ["raise", "ignore_inputs"]:
            raise KeyError("Output path not found in config file")


def setup(suite = "", config_file = None, user = None):
    """ Setup the config.yaml file for the intersnap_archive package.

    Args:
        suite (str, optional): Suite name. If empty, the intersnap_test suite is written.
        config_file (str or Path, optional): Where to write the file. Defaults to the package folder.
        user (str, optional): User name. If None, prompt for it.

    Returns:
        pathlib.Path: Path to the config file
    """

    paths = Paths(errors="ignore")

    header = '''# Use this file to store configuration settings
# All paths are relative to the suite subfolder in the data directory
# If you need to put scenario files or outputs elsewhere, use symlinks
---
'''

    config = {}

    if user is None:
        user = input("Name (press enter for system ID):") or ""
    config["user"] = {"name": user}

    config["paths"] = {
        suite or "intersnap_test":
            {
                "scenario_path": "scenarios",
                "output_path": "output",
            }
    }

    config_file = _Path(config_file) if config_file else paths.root / "config.yaml"

    with open(config_file, 'w') as f:
        f.write(header)
        yaml.dump(config, f,
                  default_flow_style=False,
                  sort_keys=False)

    print(f"Config file written to {config_file}")
    print("Config file has been populated with default sub-paths relative to data/suite. " + \
          "If you want to move scenarios or outputs elsewhere, manually modify the sub-paths in the config file.")

    return config_file


def data_file_list(suite = "",
                   sub_path = "",
                   pattern = "*",
                   ignore_hidden = True,
                   errors = "ignore",
                   this_repo = False):
    """List files in data directory. Structure is data/suite/sub_path
    sub_path can be a zip archive

    Args:
        suite (str, optional): Suite. Defaults to "".
        sub_path (str, optional): Sub-path. Defaults to "".
        pattern (str, optional): Pattern to match. Defaults to "*".
        ignore_hidden (bool, optional): Ignore hidden files. Defaults to True.
        errors (str, optional): See options in Paths class. Defaults to "ignore".
        this_repo (bool, optional): Look in this repository, ignoring the working directory.

    Returns:
        tuple: Tuple containing suite, sub-path and sorted list of files
    """

    pth = data_file_path("", suite=suite, sub_path=sub_path, errors=errors, this_repo=this_repo)

    if pth.suffix == ".zip":

        if not pth.exists() and "ignore" in errors:
            return suite, sub_path, []

        with ZipFile(pth, "r") as z:
            files = [f.filename for f in z.filelist
                     if fnmatch(f.filename, pattern) and not (ignore_hidden and f.filename.startswith("."))]
    else:
        if not pth.exists() and "ignore" in errors:
            return suite, sub_path, []

        files = []
        # Same output as for the zip archive
        for f in pth.glob("**/*"):
            if f.is_file() and fnmatch(f.name, pattern) and not (ignore_hidden and f.name.startswith(".")):
                files.append(str(f.relative_to(pth)))

    return suite, sub_path, sorted(files)


def data_file_path(filename,
                   suite = "",
                   sub_path = "",
                   this_repo = False,
                   errors = "ignore"):
    """Get path to data file. Structure is data/suite/sub_path
    sub_path can be a zip archive, in which case the path to the zip archive is returned

    Args:
        filename (str): Filename
        suite (str, optional): Suite. Defaults to "".
        sub_path (str, optional): Sub-path. Defaults to ""
        this_repo (bool, optional): If True, look for the root and data folder within this repository (no config).
        errors (str, optional): If "raise", raise FileNotFoundError if file not found. If "ignore", return path

    Raises:
        FileNotFoundError: Can't find file

    Returns:
        pathlib.Path: Path to file
    """

    paths = Paths(suite,
                  this_repo=this_repo,
                  errors=errors)

    pth = paths.data / suite if suite else paths.data

    if sub_path:
        pth = pth / sub_path

    if not pth.exists() and errors == "raise":
        raise FileNotFoundError(f"Can't find path {pth}")

    if pth.suffix == ".zip":
        if filename == "":
            return pth
        with ZipFile(pth, "r") as z:
            if filename in z.namelist():
                return pth
        if errors == "raise":
            raise FileNotFoundError(f"Can't find {filename} in {pth}")
        return pth
    else:
        full = pth / filename
        if filename and errors == "raise" and not full.exists():
            raise FileNotFoundError(f"Can't find {full}")
        return full


def open_data_file(filename,
                   suite = "",
                   sub_path = "",
                   verbose = False,
                   this_repo = False,
                   errors = "ignore"):
    """Open data file in binary mode. Structure is data/suite/sub_path
    sub_path can be a zip archive

    Args:
        filename (str): Filename
        suite (str, optional): Suite. Defaults to "".
        sub_path (str, optional): Sub-path. Can be a zip archive or directory
        verbose (bool, optional): Print verbose output. Defaults to False.
        this_repo (bool, optional): If True, look for the root and data folder within this repository.

    Raises:
        FileNotFoundError: Can't find file

    Returns:
        file: File object
    """

    pth = data_file_path("", suite=suite,
                         sub_path=sub_path,
                         this_repo=this_repo,
                         errors=errors)

    if verbose:
        print(f"... opening {pth / filename}")

    if pth.suffix == ".zip":
        z = ZipFile(pth, "r")
        matches = filter(z.namelist(), filename)
        if not matches:
            raise FileNotFoundError(f"Can't find {filename} in {pth}")
        return z.open(matches[0])
    else:
        return (pth / filename).open("rb")


@lru_cache(maxsize=None)
def _load_json_definition(filename):
    with open_data_file(filename, this_repo=True) as f:
        return json.load(f)


def load_defaults():
    """Protocol defaults from data/defaults.json

    Returns:
        dict: Defaults (a fresh copy, safe to modify)
    """
    return json.loads(json.dumps(_load_json_definition("defaults.json")))


def load_scenario_schema():
    return _load_json_definition("scenario_schema.json")


def output_path(suite,
                scenario = "",
                seed = None,
                errors = "ignore_inputs",
                config_file = None):
    '''Determine the run output directory. Structure is data/suite/output_path/scenario-seedN

    Args:
        suite (str): Suite
        scenario (str, optional): Scenario name. If empty, the suite output folder is returned.
        seed (int, optional): Seed. Appended to the folder name if given.
        errors (str, optional): How to handle errors if path doesn't exist. Defaults to "ignore_inputs".
        config_file (str or Path, optional): Config file to read.

    Raises:
        AttributeError: Output path not set in config file

    Returns:
        pathlib.Path: Path to output directory
    '''

    paths = Paths(suite, errors=errors, config_file=config_file)

    if not hasattr(paths, "output_path"):
        raise AttributeError("Output path not set in config.yaml")

    pth = paths.data / suite / paths.output_path

    if scenario:
        name = scenario if seed is None else f"{scenario}-seed{seed}"
        if pth.suffix == ".zip":
            pth = pth.with_name(pth.stem + "-" + name + ".zip")
        else:
            pth = pth / name

    return pth


def delete_output(out_pth):
    """Delete all files in a run output directory (or the output zip archive)

    Args:
        out_pth (Path): Output directory or zip archive

    Raises:
        ValueError: If out_pth is the repository, package or data folder
    """

    out_pth = _Path(out_pth)

    if not out_pth.exists():
        print(f"Output directory or archive {out_pth} does not exist, continuing")
        return

    paths = Paths(errors="ignore")
    if out_pth.resolve() in [paths.root.resolve(), paths.root.parent.resolve(), paths.data.resolve()]:
        raise ValueError(f"Refusing to delete {out_pth}")

    print(f'Deleting all files in {out_pth}')

    if out_pth.suffix == ".zip":
        out_pth.unlink()
    else:
        for f in out_pth.iterdir():
            if f.is_dir():
                rmtree(f)
            else:
                f.unlink()


def create_output(out_pth):
    """Create an empty output zip file or folder

    Args:
        out_pth (Path): Output directory or zip archive
    """

    out_pth = _Path(out_pth)

    if out_pth.suffix == ".zip":
        if not out_pth.exists():
            out_pth.parent.mkdir(parents=True, exist_ok=True)
            with ZipFile(out_pth, "w"):
                pass
    else:
        out_pth.mkdir(parents=True, exist_ok=True)


if __name__ == "__main__":

    setup()
