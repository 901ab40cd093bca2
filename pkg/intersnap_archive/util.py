import os
import json
import base64
import struct
import hashlib
import traceback
import unicodedata
from pathlib import Path
from zipfile import ZipFile, ZIP_DEFLATED

from intersnap_archive.config import Paths


def pack_fields(*fields):
    """Canonical binary encoding: each field as a 4-byte big-endian length
    followed by its bytes. Strings are UTF-8 encoded, integers are
    8-byte big-endian signed.

    Args:
        *fields (bytes, str or int): Fields, in declaration order

    Returns:
        bytes: Encoded fields
    """

    out = []
    for field in fields:
        if isinstance(field, bool):
            raise TypeError("Booleans can't be packed, use an integer")
        if isinstance(field, int):
            data = struct.pack(">q", field)
        elif isinstance(field, str):
            data = field.encode("utf-8")
        elif isinstance(field, (bytes, bytearray)):
            data = bytes(field)
        else:
            raise TypeError(f"Can't pack field of type {type(field).__name__}")
        out.append(struct.pack(">I", len(data)))
        out.append(data)
    return b"".join(out)


def unpack_fields(data):
    """Inverse of pack_fields. Returns raw bytes for every field

    Args:
        data (bytes): Encoded fields

    Raises:
        ValueError: Truncated or trailing data

    Returns:
        list: List of bytes
    """

    fields = []
    pos = 0
    while pos < len(data):
        if pos + 4 > len(data):
            raise ValueError("Truncated length prefix")
        (n,) = struct.unpack(">I", data[pos:pos + 4])
        pos += 4
        if pos + n > len(data):
            raise ValueError("Truncated field")
        fields.append(bytes(data[pos:pos + n]))
        pos += n
    return fields


def unpack_int(data):
    if len(data) != 8:
        raise ValueError("Integer fields must be 8 bytes")
    return struct.unpack(">q", data)[0]


def canonical_json(obj):
    """Sorted-key, compact JSON text"""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def canonical_bytes(obj):
    return canonical_json(obj).encode("utf-8")


def content_hash(data):
    """SHA-256 hex digest of bytes (or of the UTF-8 encoding of a string)"""
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha256(data).hexdigest()


def b64encode(data):
    return base64.b64encode(data).decode("ascii")


def b64decode(text):
    return base64.b64decode(text.encode("ascii"), validate=True)


def get_error(e):
    """Get error message from exception

    Args:
        e (Exception): Exception object

    Returns:
        str: Error message
    """
    tb = traceback.extract_tb(e.__traceback__)

    stack_files_and_lines = []

    for t in tb:
        if "_archive" in t.filename:
            # Only include the filename and line no, not the full path
            stack_files_and_lines.append(f"{Path(t.filename).stem} (line {t.lineno})")

    error_type = type(e).__name__
    return f"{error_type} in stack: {' / '.join(stack_files_and_lines)}. {str(e)}"


def lookup_username():
    '''Look up username

    Returns:
        str: Username
    '''

    paths = Paths(errors="ignore")

    # Take username from config file if it exists, otherwise try to get it from the system
    user = getattr(paths, "user", "")
    if user:
        return user

    for var in ["USER", "USERNAME", "LOGNAME"]:
        if os.environ.get(var):
            return os.environ[var]
    return "unknown user"


def archive_write_csv(archive_path, filename, data):
    """Write text to a file in an output archive or directory.

    Args:
        archive_path (Path): Path to the archive (.zip) or directory
        filename (str): Name of the file to write
        data (str): Data to write to the file
    """

    if isinstance(archive_path, str):
        archive_path = Path(archive_path)

    if isinstance(data, str):
        data = unicodedata.normalize('NFC', data)

    if archive_path.suffix == ".zip":
        archive_path.parent.mkdir(parents=True, exist_ok=True)
        with ZipFile(archive_path, mode="a", compression=ZIP_DEFLATED, compresslevel=6) as z:
            # prepend the archive name to the output filename so that it unzips to a folder
            output_filename = archive_path.name.split(".zip")[0] + "/" + filename
            z.writestr(output_filename, data.encode("utf-8"))
    else:
        file_parent = (archive_path / filename).parent
        if not file_parent.exists():
            file_parent.mkdir(parents=True, exist_ok=True)

        with open(archive_path / filename, mode="w", encoding="utf-8", newline="") as f:
            f.write(data)


def archive_read_text(archive_path, filename):
    """Read a text file written by archive_write_csv

    Args:
        archive_path (Path): Path to the archive (.zip) or directory
        filename (str): Name of the file

    Raises:
        FileNotFoundError: File not in archive or directory

    Returns:
        str: File contents
    """

    archive_path = Path(archive_path)

    if archive_path.suffix == ".zip":
        if not archive_path.exists():
            raise FileNotFoundError(f"Can't find {archive_path}")
        with ZipFile(archive_path, "r") as z:
            name = archive_path.name.split(".zip")[0] + "/" + filename
            if name not in z.namelist():
                raise FileNotFoundError(f"Can't find {filename} in {archive_path}")
            return z.read(name).decode("utf-8")
    else:
        with open(archive_path / filename, mode="r", encoding="utf-8") as f:
            return f.read()


def write_error_log(out_path, errors, header=""):
    """Append errors to error_log.txt in the output directory

    Args:
        out_path (Path): Output directory
        errors (list): List of error strings
        header (str, optional): Header line. Defaults to "".
    """

    if not errors:
        return

    out_path = Path(out_path)
    out_path.mkdir(parents=True, exist_ok=True)
    with open(out_path / "error_log.txt", "a", encoding="utf-8") as f:
        if header:
            f.write(header + "\n")
        for error in errors:
            f.write(error + "\n")
