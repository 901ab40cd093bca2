import struct
import hashlib

import numpy as np
import pytest
from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey

from intersnap_archive.definitions import KEY_BYTES, SALT_BYTES, NONCE_BYTES, TAG_BYTES
from intersnap_archive.ledger import NetworkConfig, Network
from intersnap_archive.crosschain import IdentityRegistry
from intersnap_archive.crypto import DerivedKey, EncryptedArchive, KeyWallet, derive_key, key_fingerprint, \
    encrypt_archive, decrypt_archive, wrap_for_destination, unwrap, wallet_put, wallet_get, \
    EmptyPassphrase, AuthFailure, UnknownDestination, UnwrapFailure
from intersnap_archive.store import ContentId


def test_derive_key():

    key = derive_key(b"correct horse", b"12345678", 100)
    assert len(key.key) == KEY_BYTES
    assert key.salt == b"12345678"
    assert key.iterations == 100
    assert derive_key(b"correct horse", b"12345678", 100) == key

    # Salt, passphrase and iterations each change the key
    assert derive_key(b"correct horse", b"12345679", 100).key != key.key
    assert derive_key(b"correct horsf", b"12345678", 100).key != key.key
    assert derive_key(b"correct horse", b"12345678", 101).key != key.key

    # Default iteration count
    assert derive_key(b"x", b"abcdefgh").iterations == 65536

    with pytest.raises(EmptyPassphrase):
        derive_key(b"", b"12345678", 100)
    with pytest.raises(ValueError):
        derive_key(b"x", b"short", 100)

    assert DerivedKey.from_dict(key.to_dict()) == key
    assert key_fingerprint(key) == key_fingerprint(key.key)
    assert "key=" not in repr(key)


def test_derive_key_fixed_vectors():

    zero_salt = bytes(SALT_BYTES)
    assert derive_key(b"a", zero_salt, 1).key == hashlib.sha512(zero_salt + b"a").digest()[:16]

    first = hashlib.sha512(zero_salt + b"a").digest()
    second = hashlib.sha512(first + zero_salt + b"a").digest()
    assert derive_key(b"a", zero_salt, 2).key == second[:16]
    assert KEY_BYTES == 16


def test_distinct_salts_give_distinct_keys():

    rng = np.random.default_rng(0)
    salts = set()
    while len(salts) < 10000:
        salts.add(rng.bytes(SALT_BYTES))
    keys = {derive_key(b"shared passphrase", salt, 1).key for salt in salts}
    assert len(keys) == 10000


def test_encrypted_archive_layout():

    rng = np.random.default_rng(1)
    key = derive_key(b"p", b"saltsalt", 10)
    archive = encrypt_archive(b"archive bytes", key, rng)
    data = archive.to_bytes()

    version, salt, iterations = struct.unpack(">B8sI", data[:13])
    assert version == 1
    assert salt == b"saltsalt"
    assert iterations == 10
    assert len(data) == 13 + NONCE_BYTES + len(b"archive bytes") + TAG_BYTES
    assert EncryptedArchive.from_bytes(data) == archive

    with pytest.raises(AuthFailure):
        EncryptedArchive.from_bytes(data[:20])
    with pytest.raises(ValueError):
        encrypt_archive(b"", key, rng)


def test_crypto_round_trips_and_tampering():
    """1,000 round trips, 1,000 single-bit flips and 1,000 wrong-key decrypts"""

    rng = np.random.default_rng(2)

    for i in range(1000):
        key = derive_key(rng.bytes(32), rng.bytes(SALT_BYTES), 2)
        plaintext = rng.bytes(int(rng.integers(1, 2048)))
        data = encrypt_archive(plaintext, key, rng).to_bytes()
        assert decrypt_archive(data, key) == plaintext

        # Flip one bit anywhere, header included
        position = int(rng.integers(len(data)))
        flipped = bytearray(data)
        flipped[position] ^= 1 << int(rng.integers(8))
        with pytest.raises(AuthFailure):
            decrypt_archive(bytes(flipped), key)

        wrong = derive_key(rng.bytes(32), key.salt, 2)
        with pytest.raises(AuthFailure):
            decrypt_archive(data, wrong)


def test_envelope():

    rng = np.random.default_rng(4)
    registry = IdentityRegistry()
    networks = {}
    for nid in ["N1", "N2"]:
        networks[nid] = Network(NetworkConfig(nid, 4))
        registry.register_network(networks[nid])

    cid = ContentId.of(b"some archive")
    key = derive_key(b"p", b"saltsalt", 10)
    envelope = wrap_for_destination(cid, key, "N2", registry, rng, {"network_id": "N1"})

    assert unwrap(envelope.to_bytes(), networks["N2"].envelope_key) == (cid, key, {"network_id": "N1"})
    assert unwrap(envelope, networks["N2"].envelope_key)[0] == cid

    with pytest.raises(UnwrapFailure):
        unwrap(envelope, networks["N1"].envelope_key)
    with pytest.raises(UnwrapFailure):
        unwrap(envelope, X25519PrivateKey.generate())
    with pytest.raises(UnwrapFailure):
        unwrap(b"garbage", networks["N2"].envelope_key)
    with pytest.raises(UnknownDestination):
        wrap_for_destination(cid, key, "N9", registry, rng)

    # Envelope readdressed to another recipient
    data = envelope.to_bytes().replace(b'"recipient":"N2"', b'"recipient":"N1"')
    with pytest.raises(UnwrapFailure):
        unwrap(data, networks["N2"].envelope_key)


def test_wallet():

    wallet = KeyWallet("N1")
    key = derive_key(b"p", b"saltsalt", 10)
    cid = ContentId.of(b"x")
    assert wallet_get(wallet, cid) is None

    wallet_put(wallet, cid, key)
    assert cid in wallet
    assert cid.text in wallet
    assert wallet_get(wallet, cid.text) == key
    assert len(wallet) == 1

    restored = KeyWallet.from_dict(wallet.to_dict())
    assert restored.owner == "N1"
    assert wallet_get(restored, cid) == key
