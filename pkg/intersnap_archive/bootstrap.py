"""Rebuild a peer replica from a snapshot archive, either fetched from the
content store or held in local peer storage.
"""

from intersnap_archive.definitions import InterSnapError
from intersnap_archive.crypto import decrypt_archive
from intersnap_archive.ledger import genesis_block, verify_chain, sync_replicas
from intersnap_archive.snapshot import parse_archive, MalformedArchive
from intersnap_archive.store import StoreError, FetchFailure


class ChainVerificationFailure(InterSnapError):
    code = "chain_verification_failure"


def _pick_peer(network, peer_id):
    if peer_id is None:
        # Lowest replica first, ties by configuration order
        peer_id = min(network.config.peer_ids, key=lambda pid: network.peers[pid].height)
    if peer_id not in network.peers:
        raise KeyError(f"{peer_id} is not a peer of {network.network_id}")
    return network.peers[peer_id]


def restore_peer_from_archive(network, archive, peer_id=None):
    """Extend (or rebuild) a replica with the blocks of a parsed archive

    An archive starting at genesis replaces the replica. Any other archive must
    start at or below the replica's head and replaces the blocks above its
    start. The canonical chain adopts the restored replica when the canonical
    chain is a prefix of it.

    Args:
        network (Network): Network
        archive (SnapshotArchive): Parsed archive of this network
        peer_id (str, optional): Peer to restore. Defaults to the lowest replica.

    Raises:
        ChainVerificationFailure: Archive of another network, gap to the replica head,
            or blocks failing hash chain verification

    Returns:
        Peer: Restored peer, ready with no lag
    """

    peer = _pick_peer(network, peer_id)

    if archive.network_id != network.network_id:
        raise ChainVerificationFailure(f"Archive belongs to {archive.network_id}, not {network.network_id}")

    blocks = archive.blocks
    if archive.from_height == -1:
        if blocks[0].block_hash != genesis_block(network.network_id).block_hash:
            raise ChainVerificationFailure("Archive genesis doesn't match the network genesis")
        base = []
        prev_hash = None
    else:
        if not peer.blocks or archive.from_height > peer.height:
            raise ChainVerificationFailure(
                f"Archive starts after height {archive.from_height}, replica {peer.peer_id} is at {peer.height}")
        base = peer.blocks[:archive.from_height + 1]
        prev_hash = base[-1].block_hash

    bad = verify_chain(blocks, prev_hash=prev_hash)
    if bad is not None:
        raise ChainVerificationFailure(f"Archived block {blocks[bad].height} fails verification")

    peer.blocks = base + list(blocks)
    peer.ready = True
    peer.lag = 0

    canonical = network.ledger.blocks
    if len(peer.blocks) > len(canonical) and not network.ledger.pending \
            and peer.blocks[len(canonical) - 1].block_hash == canonical[-1].block_hash:
        network.ledger.adopt(list(peer.blocks))
        sync_replicas(network)

    return peer


def bootstrap_peer_from_archive(network, cid, key, store, swarm_key, peer_id=None, caller=None):
    """Fetch, decrypt and verify an archive from the store, then restore a replica from it

    Args:
        network (Network): Network
        cid (ContentId or str): Archive CID
        key (DerivedKey): Archive key, from the network's wallet
        store (ContentStore): Content store
        swarm_key (SwarmKey): Swarm key
        peer_id (str, optional): Peer to restore
        caller (str, optional): Store caller. Defaults to the network id.

    Raises:
        FetchFailure: Archive missing, corrupted in the store, or access denied
        AuthFailure: Key doesn't decrypt the archive
        ChainVerificationFailure: Archive doesn't parse or doesn't verify against the replica

    Returns:
        Peer: Restored peer
    """

    try:
        data = store.get(cid, swarm_key, caller or network.network_id)
    except FetchFailure:
        raise
    except StoreError as e:
        raise FetchFailure(str(e)) from e

    plaintext = decrypt_archive(data, key)

    try:
        archive = parse_archive(plaintext)
    except MalformedArchive as e:
        raise ChainVerificationFailure(str(e)) from e

    return restore_peer_from_archive(network, archive, peer_id)


def restore_peer_from_local(network, compressed_plaintext, peer_id=None):
    """Restore a replica from an unencrypted archive kept in peer storage

    Raises:
        ChainVerificationFailure: Archive doesn't parse or doesn't verify against the replica

    Returns:
        Peer: Restored peer
    """

    try:
        archive = parse_archive(compressed_plaintext)
    except MalformedArchive as e:
        raise ChainVerificationFailure(str(e)) from e
    return restore_peer_from_archive(network, archive, peer_id)
