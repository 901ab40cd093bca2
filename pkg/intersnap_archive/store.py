"""Private content-addressed store, gated by a swarm key.

Layout of a persisted store::

    <root>/objects/<cid>.bin
    <root>/manifest.json
    <root>/swarm.key        (64 hex characters)
"""

import re
import json
import hashlib
from dataclasses import dataclass
from pathlib import Path

from intersnap_archive.definitions import InterSnapError, CID_PREFIX
from intersnap_archive.util import canonical_json, canonical_bytes


class StoreError(InterSnapError):
    code = "store_error"


class FetchFailure(StoreError):
    code = "fetch_failure"


class NotFound(FetchFailure):
    code = "not_found"


class IntegrityMismatch(FetchFailure):
    code = "integrity_mismatch"


class AccessDenied(StoreError):
    code = "access_denied"


class StoreTampered(StoreError):
    code = "store_tampered"


_cid_pattern = re.compile(r"^" + re.escape(CID_PREFIX) + r"([0-9a-f]{64})$")


@dataclass(frozen=True, order=True)
class ContentId:
    digest: str

    @classmethod
    def of(cls, data):
        return cls(hashlib.sha256(data).hexdigest())

    @classmethod
    def from_text(cls, text):
        match = _cid_pattern.match(str(text))
        if not match:
            raise ValueError(f"Not a content id: {text}")
        return cls(match.group(1))

    @property
    def text(self):
        return CID_PREFIX + self.digest

    def __str__(self):
        return self.text


@dataclass(frozen=True)
class SwarmKey:
    secret: bytes
    holders: frozenset

    def __post_init__(self):
        if len(self.secret) != 32:
            raise ValueError("Swarm key secret must be 32 bytes")
        object.__setattr__(self, "holders", frozenset(self.holders))

    @classmethod
    def generate(cls, rng, holders):
        return cls(rng.bytes(32), frozenset(holders))

    @property
    def hex(self):
        return self.secret.hex()

    def admits(self, caller):
        return caller in self.holders


def write_swarm_key(root, swarm_key):
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    (root / "swarm.key").write_text(swarm_key.hex + "\n")


def read_swarm_key(root, holders):
    text = (Path(root) / "swarm.key").read_text().strip()
    if not re.fullmatch(r"[0-9a-f]{64}", text):
        raise StoreError("swarm.key must hold 64 hex characters")
    return SwarmKey(bytes.fromhex(text), frozenset(holders))


class ContentStore:
    """Content-addressed table CID -> bytes, optionally persisted under root.
    Independent of every ledger: no fault event touches it.
    """

    def __init__(self, swarm_key, root=None):
        self.swarm_key = swarm_key
        self.root = Path(root) if root else None
        self._objects = {}
        if self.root is not None:
            (self.root / "objects").mkdir(parents=True, exist_ok=True)
            write_swarm_key(self.root, swarm_key)
            self.reload()

    def __len__(self):
        return len(self._objects)

    def __contains__(self, cid):
        return str(cid) in self._objects

    def cids(self):
        return [ContentId.from_text(c) for c in sorted(self._objects)]

    def _check_access(self, swarm_key, caller):
        if swarm_key is None or swarm_key.secret != self.swarm_key.secret \
                or not self.swarm_key.admits(caller):
            raise AccessDenied(f"{caller} doesn't hold the swarm key")

    def _object_path(self, cid_text):
        return self.root / "objects" / f"{cid_text}.bin"

    def _write_manifest(self):
        manifest = {"format": 1, "objects": sorted(self._objects)}
        (self.root / "manifest.json").write_text(canonical_json(manifest) + "\n")

    def put(self, data, swarm_key, caller):
        """Store bytes, idempotently

        Raises:
            AccessDenied: Caller doesn't hold the swarm key

        Returns:
            ContentId: SHA-256 of the bytes
        """
        self._check_access(swarm_key, caller)
        data = bytes(data)
        cid = ContentId.of(data)
        if cid.text in self._objects:
            return cid
        if self.root is not None:
            self._object_path(cid.text).write_bytes(data)
            self._objects[cid.text] = None
            self._write_manifest()
        else:
            self._objects[cid.text] = data
        return cid

    def get(self, cid, swarm_key, caller):
        """Retrieve bytes and re-verify their hash

        Raises:
            AccessDenied: Caller doesn't hold the swarm key
            NotFound: Unknown CID
            IntegrityMismatch: Stored bytes no longer hash to the CID

        Returns:
            bytes: Content
        """
        self._check_access(swarm_key, caller)
        if not isinstance(cid, ContentId):
            try:
                cid = ContentId.from_text(cid)
            except ValueError:
                raise NotFound(f"{cid} is not a content id")
        if cid.text not in self._objects:
            raise NotFound(f"{cid.text} not in store")
        if self.root is not None:
            try:
                data = self._object_path(cid.text).read_bytes()
            except FileNotFoundError:
                raise NotFound(f"{cid.text} missing from {self.root}")
        else:
            data = self._objects[cid.text]
        if hashlib.sha256(data).hexdigest() != cid.digest:
            raise IntegrityMismatch(f"Content of {cid.text} doesn't match its CID")
        return data

    def reload(self):
        """Rebuild the table from the persistence root"""
        if self.root is None:
            return self
        manifest_file = self.root / "manifest.json"
        if manifest_file.exists():
            names = json.loads(manifest_file.read_text())["objects"]
        else:
            names = [p.stem for p in (self.root / "objects").glob("*.bin")]
        self._objects = {name: None for name in sorted(names)}
        return self

    def raw(self, cid):
        """Stored bytes without access or integrity checks (for digests)"""
        cid = str(cid)
        if self.root is not None:
            return self._object_path(cid).read_bytes()
        return self._objects[cid]


def store_digest(store):
    """Hash over every (CID, content) pair"""
    h = hashlib.sha256()
    for cid in sorted(store._objects):
        h.update(cid.encode("ascii"))
        h.update(hashlib.sha256(store.raw(cid)).digest())
    return h.hexdigest()


def custody_digest(store, wallets=()):
    """Hash over the store contents and every wallet's archive keys"""
    h = hashlib.sha256(store_digest(store).encode("ascii"))
    for wallet in wallets:
        h.update(canonical_bytes(wallet.to_dict()))
    return h.hexdigest()


def survive_fault(store, fault, digest_before, wallets=()):
    """Check that a fault left the store and the key wallets untouched

    Args:
        store (ContentStore): Store
        fault: Fault event (anything with a ``kind``)
        digest_before (str): custody_digest taken before the fault ran
        wallets (iterable, optional): Key wallets included in digest_before

    Raises:
        StoreTampered: Store contents or wallet keys changed

    Returns:
        ContentStore: The same store
    """
    if custody_digest(store, wallets) != digest_before:
        kind = getattr(fault, "kind", fault)
        raise StoreTampered(f"{getattr(kind, 'value', kind)} changed archived state")
    return store
