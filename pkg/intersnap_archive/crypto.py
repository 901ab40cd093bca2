"""Archive key derivation, authenticated archive encryption, key wallets and
public-key envelopes for handing (CID, key) to another network.
"""

import json
import struct
import hashlib
from dataclasses import dataclass, field

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF
from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey, X25519PublicKey

from intersnap_archive.definitions import InterSnapError, ENCRYPTED_FORMAT_VERSION, \
    KEY_BYTES, SALT_BYTES, NONCE_BYTES, TAG_BYTES, KDF_ITERATIONS
from intersnap_archive.ledger import raw_public_bytes
from intersnap_archive.store import ContentId
from intersnap_archive.util import canonical_bytes, content_hash, b64encode, b64decode


class CryptoError(InterSnapError):
    code = "crypto_error"


class EmptyPassphrase(CryptoError):
    code = "empty_passphrase"


class AuthFailure(CryptoError):
    code = "auth_failure"


class UnknownDestination(CryptoError):
    code = "unknown_destination"


class UnwrapFailure(CryptoError):
    code = "unwrap_failure"


HEADER_FORMAT = ">B8sI"
HEADER_BYTES = struct.calcsize(HEADER_FORMAT)
ENVELOPE_INFO = b"intersnap-envelope-v1"


@dataclass(frozen=True)
class DerivedKey:
    key: bytes = field(repr=False)
    salt: bytes
    iterations: int
    passphrase_fingerprint: str

    def to_dict(self):
        return {"key": b64encode(self.key),
                "salt": b64encode(self.salt),
                "iterations": self.iterations,
                "passphrase_fingerprint": self.passphrase_fingerprint}

    @classmethod
    def from_dict(cls, d):
        return cls(b64decode(d["key"]), b64decode(d["salt"]), d["iterations"], d["passphrase_fingerprint"])


def derive_key(passphrase, salt, iterations=KDF_ITERATIONS):
    """Iterated SHA-512 over salt and passphrase, truncated to 128 bits

    The first round hashes salt + passphrase, every further round hashes
    the previous digest + salt + passphrase.

    Args:
        passphrase (bytes): Passphrase
        salt (bytes): 8-byte salt
        iterations (int, optional): Number of hash rounds. Defaults to 65536.

    Raises:
        EmptyPassphrase: Empty passphrase
        ValueError: Bad salt length or iteration count

    Returns:
        DerivedKey: Key and the parameters that produced it
    """

    if not passphrase:
        raise EmptyPassphrase("Passphrase must be non-empty")
    if len(salt) != SALT_BYTES:
        raise ValueError(f"Salt must be {SALT_BYTES} bytes")
    if iterations < 1:
        raise ValueError("iterations must be at least 1")

    passphrase = bytes(passphrase)
    salt = bytes(salt)
    digest = hashlib.sha512(salt + passphrase).digest()
    for _ in range(iterations - 1):
        digest = hashlib.sha512(digest + salt + passphrase).digest()

    return DerivedKey(digest[:KEY_BYTES], salt, iterations, hashlib.sha256(passphrase).hexdigest())


def key_fingerprint(key):
    """SHA-256 of the key bytes, safe to record on a ledger"""
    return content_hash(key.key if isinstance(key, DerivedKey) else key)


@dataclass(frozen=True)
class EncryptedArchive:
    version: int
    salt: bytes
    iterations: int
    nonce: bytes
    ciphertext: bytes = field(repr=False)
    tag: bytes

    @property
    def header(self):
        return struct.pack(HEADER_FORMAT, self.version, self.salt, self.iterations)

    def to_bytes(self):
        """version | salt | iterations (big-endian u32) | nonce | ciphertext | tag"""
        return self.header + self.nonce + self.ciphertext + self.tag

    @classmethod
    def from_bytes(cls, data):
        """Raises AuthFailure for input too short to hold a header, nonce and tag"""
        data = bytes(data)
        if len(data) < HEADER_BYTES + NONCE_BYTES + TAG_BYTES:
            raise AuthFailure("Encrypted archive truncated")
        version, salt, iterations = struct.unpack(HEADER_FORMAT, data[:HEADER_BYTES])
        nonce = data[HEADER_BYTES:HEADER_BYTES + NONCE_BYTES]
        body = data[HEADER_BYTES + NONCE_BYTES:]
        return cls(version, salt, iterations, nonce, body[:-TAG_BYTES], body[-TAG_BYTES:])


def encrypt_archive(plaintext, key, nonce_source):
    """AES-128-GCM encryption, header bound as associated data

    Args:
        plaintext (bytes): Non-empty archive bytes
        key (DerivedKey): Key
        nonce_source (numpy.random.Generator): Seeded generator for the nonce

    Raises:
        ValueError: Empty plaintext

    Returns:
        EncryptedArchive: Encrypted archive
    """

    if not plaintext:
        raise ValueError("Nothing to encrypt")

    nonce = nonce_source.bytes(NONCE_BYTES)
    header = struct.pack(HEADER_FORMAT, ENCRYPTED_FORMAT_VERSION, key.salt, key.iterations)
    sealed = AESGCM(key.key).encrypt(nonce, bytes(plaintext), header)
    return EncryptedArchive(ENCRYPTED_FORMAT_VERSION, key.salt, key.iterations, nonce,
                            sealed[:-TAG_BYTES], sealed[-TAG_BYTES:])


def decrypt_archive(archive, key):
    """Authenticate and decrypt. Tampering and wrong keys are indistinguishable

    Args:
        archive (EncryptedArchive or bytes): Encrypted archive
        key (DerivedKey or bytes): Key

    Raises:
        AuthFailure: Wrong key, tampered or truncated archive

    Returns:
        bytes: Plaintext
    """

    if not isinstance(archive, EncryptedArchive):
        archive = EncryptedArchive.from_bytes(archive)
    key_bytes = key.key if isinstance(key, DerivedKey) else bytes(key)

    try:
        return AESGCM(key_bytes).decrypt(archive.nonce, archive.ciphertext + archive.tag, archive.header)
    except (InvalidTag, ValueError) as e:
        raise AuthFailure("Archive failed authentication") from e


@dataclass(frozen=True)
class Envelope:
    recipient: str
    ephemeral_public: bytes
    nonce: bytes
    ciphertext: bytes = field(repr=False)

    def to_bytes(self):
        return canonical_bytes({"recipient": self.recipient,
                                "ephemeral_public": b64encode(self.ephemeral_public),
                                "nonce": b64encode(self.nonce),
                                "ciphertext": b64encode(self.ciphertext)})

    @classmethod
    def from_bytes(cls, data):
        try:
            d = json.loads(bytes(data).decode("utf-8"))
            return cls(d["recipient"], b64decode(d["ephemeral_public"]),
                       b64decode(d["nonce"]), b64decode(d["ciphertext"]))
        except (ValueError, KeyError, TypeError) as e:
            raise UnwrapFailure(f"Not an envelope: {e}")


def _envelope_key(shared_secret):
    return HKDF(algorithm=hashes.SHA256(), length=KEY_BYTES, salt=None,
                info=ENVELOPE_INFO).derive(shared_secret)


def wrap_for_destination(cid, key, dest_network, registry, rng, metadata=None):
    """Encrypt (CID, key, metadata) to a network's public key

    Ephemeral X25519 agreement, HKDF-SHA256, then AES-128-GCM with the
    recipient id as associated data.

    Args:
        cid (ContentId or str): Archive CID
        key (DerivedKey): Archive key
        dest_network (str): Recipient id
        registry (IdentityRegistry): Holds recipient public keys
        rng (numpy.random.Generator): Seeded generator for the ephemeral key and nonce
        metadata (dict, optional): Extra fields for the recipient

    Raises:
        UnknownDestination: No public key registered for the recipient

    Returns:
        Envelope: Envelope
    """

    public_key = registry.network_key(dest_network)
    if public_key is None:
        raise UnknownDestination(f"No public key registered for {dest_network}")

    ephemeral = X25519PrivateKey.from_private_bytes(rng.bytes(32))
    wrapping_key = _envelope_key(ephemeral.exchange(public_key))
    nonce = rng.bytes(NONCE_BYTES)
    plaintext = canonical_bytes({"cid": str(cid), "key": key.to_dict(), "metadata": metadata or {}})
    ciphertext = AESGCM(wrapping_key).encrypt(nonce, plaintext, dest_network.encode("utf-8"))
    return Envelope(dest_network, raw_public_bytes(ephemeral.public_key()), nonce, ciphertext)


def unwrap(envelope, private_key):
    """Recover (CID, key, metadata) with the recipient's private key

    Raises:
        UnwrapFailure: Wrong private key or tampered envelope

    Returns:
        tuple: (ContentId, DerivedKey, dict)
    """

    if isinstance(envelope, (bytes, bytearray)):
        envelope = Envelope.from_bytes(envelope)

    try:
        shared = private_key.exchange(X25519PublicKey.from_public_bytes(envelope.ephemeral_public))
        plaintext = AESGCM(_envelope_key(shared)).decrypt(envelope.nonce, envelope.ciphertext,
                                                          envelope.recipient.encode("utf-8"))
        d = json.loads(plaintext.decode("utf-8"))
        return ContentId.from_text(d["cid"]), DerivedKey.from_dict(d["key"]), d["metadata"]
    except (InvalidTag, ValueError, KeyError) as e:
        raise UnwrapFailure("Envelope can't be opened with this key") from e


class KeyWallet:
    """Off-ledger archive keys held by one organization"""

    def __init__(self, owner):
        self.owner = owner
        self._keys = {}

    def __len__(self):
        return len(self._keys)

    def __contains__(self, archive_id):
        return str(archive_id) in self._keys

    def items(self):
        return sorted(self._keys.items())

    def to_dict(self):
        return {"owner": self.owner,
                "keys": {archive_id: key.to_dict() for archive_id, key in self.items()}}

    @classmethod
    def from_dict(cls, d):
        wallet = cls(d["owner"])
        for archive_id, key in d["keys"].items():
            wallet_put(wallet, archive_id, DerivedKey.from_dict(key))
        return wallet


def wallet_put(wallet, archive_id, key):
    wallet._keys[str(archive_id)] = key
    return wallet


def wallet_get(wallet, archive_id):
    """Stored key, or None if the archive id is unknown"""
    return wallet._keys.get(str(archive_id))
