from dataclasses import replace
from time import perf_counter

import numpy as np
import pytest

from intersnap_archive.definitions import TxKind, SALT_BYTES
from intersnap_archive.ledger import NetworkConfig, Network, Transaction, Block, seal_block, sync_replicas, \
    endorse, commit_transaction, truncate_ledger
from intersnap_archive.crosschain import IdentityRegistry
from intersnap_archive.snapshot import capture_snapshot, assemble_archive, compress_archive, serialize_archive
from intersnap_archive.crypto import derive_key, encrypt_archive, AuthFailure
from intersnap_archive.store import ContentStore, SwarmKey, ContentId, NotFound
from intersnap_archive.bootstrap import ChainVerificationFailure, bootstrap_peer_from_archive, \
    restore_peer_from_archive, restore_peer_from_local
from intersnap_archive.snapshot import parse_archive


def build(height, chunk=250, nid="N1"):
    """Network grown to height, archived every chunk blocks

    Returns:
        tuple: network, list of (snapshot, compressed archive)
    """

    network = Network(NetworkConfig(nid, 4))
    registry = IdentityRegistry()
    registry.register_network(network)

    archives = []
    last = -1
    for tick in range(1, height + 1):
        tx = Transaction(f"tx {tick}".encode(), TxKind.LOCAL, nid, tick)
        assert commit_transaction(network.ledger, tx, endorse(network, tx), registry, tick).committed
        seal_block(network.ledger, tick)
        if tick % chunk == 0 or tick == height:
            sync_replicas(network)
            snapshot = capture_snapshot(network, f"{nid}-p0", last, tick)
            archives.append((snapshot, assemble_archive([snapshot])))
            last = snapshot.to_height
    return network, archives


def publish(archives, rng):
    swarm_key = SwarmKey(bytes(range(32)), {"N1", "N2", "auditor"})
    store = ContentStore(swarm_key)
    published = []
    for _, compressed in archives:
        key = derive_key(b"passphrase", rng.bytes(SALT_BYTES), 2)
        cid = store.put(encrypt_archive(compressed, key, rng).to_bytes(), swarm_key, "N1")
        published.append((cid, key))
    return store, swarm_key, published


@pytest.mark.parametrize("height", [100, 500, 2000])
def test_restore_after_total_loss(height):
    """Replaying every archive after losing the whole chain gives back the
    same chain, with every replica a prefix of it
    """

    rng = np.random.default_rng(height)
    network, archives = build(height)
    old_hashes = [b.block_hash for b in network.ledger.blocks]
    store, swarm_key, published = publish(archives, rng)

    truncate_ledger(network, -1)
    assert network.ledger.height == 0

    for cid, key in published:
        peer = bootstrap_peer_from_archive(network, cid, key, store, swarm_key, "N1-p2")

    assert peer.peer_id == "N1-p2"
    assert peer.ready
    assert [b.block_hash for b in peer.blocks] == old_hashes
    assert [b.block_hash for b in network.ledger.blocks] == old_hashes
    for replica in network.peers.values():
        assert [b.block_hash for b in replica.blocks] == old_hashes[:replica.height + 1]


def test_restore_extends_partial_replica():

    network, archives = build(60, chunk=20)
    old_hashes = [b.block_hash for b in network.ledger.blocks]
    truncate_ledger(network, 20)

    # The first archive ends at 20, the replica continues from there
    for _, compressed in archives[1:]:
        peer = restore_peer_from_local(network, compressed, "N1-p1")
    assert [b.block_hash for b in peer.blocks] == old_hashes

    # An archive beyond the replica head leaves a gap
    truncate_ledger(network, 10)
    with pytest.raises(ChainVerificationFailure):
        restore_peer_from_local(network, archives[2][1], "N1-p1")


def test_restore_failures():

    rng = np.random.default_rng(0)
    network, archives = build(30, chunk=30)
    store, swarm_key, published = publish(archives, rng)
    cid, key = published[0]

    other, other_archives = build(5, nid="N2")
    with pytest.raises(ChainVerificationFailure):
        restore_peer_from_local(network, other_archives[0][1])

    with pytest.raises(AuthFailure):
        bootstrap_peer_from_archive(network, cid, derive_key(b"wrong", key.salt, 2), store, swarm_key)
    with pytest.raises(NotFound):
        bootstrap_peer_from_archive(network, ContentId.of(b"missing"), key, store, swarm_key)
    with pytest.raises(ChainVerificationFailure):
        restore_peer_from_local(network, b"not an archive")
    with pytest.raises(KeyError):
        restore_peer_from_local(network, archives[0][1], "N1-p9")

    # A tampered block inside an otherwise well-formed archive
    snapshot = archives[0][0]
    block = snapshot.blocks[5]
    tx, e = block.transactions[0]
    bad_tx = Transaction(b"rewritten", tx.kind, tx.origin_network, tx.logical_time)
    bad_block = Block(block.height, block.prev_hash, block.tick, block.network_id, ((bad_tx, e),), block.block_hash)
    blocks = snapshot.blocks[:5] + (bad_block,) + snapshot.blocks[6:]
    tampered = parse_archive(compress_archive(serialize_archive([replace(snapshot, blocks=blocks)])))
    with pytest.raises(ChainVerificationFailure):
        restore_peer_from_archive(network, tampered, "N1-p3")


def test_store_restore_within_five_times_local():

    rng = np.random.default_rng(1)
    network, archives = build(1000)
    store, swarm_key, published = publish(archives, rng)

    def timed(func):
        best = None
        for _ in range(3):
            start = perf_counter()
            func()
            elapsed = perf_counter() - start
            best = elapsed if best is None else min(best, elapsed)
        return best

    def from_store():
        for cid, key in published:
            bootstrap_peer_from_archive(network, cid, key, store, swarm_key, "N1-p1")

    def from_local():
        for _, compressed in archives:
            restore_peer_from_local(network, compressed, "N1-p2")

    assert timed(from_store) <= 5 * timed(from_local)
