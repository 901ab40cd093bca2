"""Permissioned ledger model: peers replicating a hash-chained ledger,
endorsement quorum validation, batched block sealing and topology discovery.
"""

import hashlib
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple, Optional

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey
from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey

from intersnap_archive.definitions import TxKind, InterSnapError, GENESIS_PREV_HASH
from intersnap_archive.util import pack_fields, unpack_fields, unpack_int, \
    content_hash, b64encode, b64decode


class LedgerError(InterSnapError):
    code = "ledger_error"


class OutOfRange(LedgerError):
    code = "out_of_range"


def raw_public_bytes(public_key):
    return public_key.public_bytes(encoding=serialization.Encoding.Raw,
                                   format=serialization.PublicFormat.Raw)


def derive_seed_bytes(label, network_id, genesis_seed, name=""):
    """32 deterministic bytes for key generation"""
    return hashlib.sha256(pack_fields(label, network_id, genesis_seed, name)).digest()


@dataclass(frozen=True)
class NetworkConfig:
    network_id: str
    peer_count: int
    genesis_seed: int = 0
    peer_ids: tuple = ()

    def __post_init__(self):
        if not self.network_id:
            raise ValueError("network_id must be non-empty")
        if self.peer_count < 1:
            raise ValueError("peer_count must be at least 1")
        if not self.peer_ids:
            object.__setattr__(self, "peer_ids",
                               tuple(f"{self.network_id}-p{i}" for i in range(self.peer_count)))
        if len(self.peer_ids) != self.peer_count:
            raise ValueError("peer_ids must have peer_count entries")
        if len(set(self.peer_ids)) != len(self.peer_ids):
            raise ValueError("peer identifiers must be unique within a network")

    @property
    def quorum(self):
        return quorum_threshold(self.peer_count)

    @property
    def peer_keys(self):
        """Public signing key (hex) for each peer"""
        return {pid: raw_public_bytes(peer_signing_key(self, pid).public_key()).hex()
                for pid in self.peer_ids}


def peer_signing_key(config, peer_id):
    return Ed25519PrivateKey.from_private_bytes(
        derive_seed_bytes("intersnap-peer", config.network_id, config.genesis_seed, peer_id))


@dataclass(frozen=True)
class Transaction:
    payload: bytes
    kind: TxKind
    origin_network: str
    logical_time: int
    dest_network: str = ""
    reference: str = ""
    # Last tick a receipt may carry, -1 when the transaction has no deadline
    deadline: int = -1

    def __post_init__(self):
        object.__setattr__(self, "kind", TxKind(self.kind))
        if self.logical_time < 0:
            raise ValueError("logical_time must be non-negative")
        if self.deadline < -1:
            raise ValueError("deadline must be -1 or a tick")
        if self.kind == TxKind.CROSS_RECEIPT and not self.reference:
            raise ValueError("Receipt transactions must reference a cross-chain invoke")

    def canonical_bytes(self):
        return pack_fields(self.payload, self.kind.value, self.origin_network,
                           self.logical_time, self.dest_network, self.reference, self.deadline)

    @cached_property
    def tx_id(self):
        return content_hash(self.canonical_bytes())

    @classmethod
    def from_bytes(cls, data):
        fields = unpack_fields(data)
        if len(fields) != 7:
            raise ValueError("Transaction encoding must have 7 fields")
        payload, kind, origin, tick, dest, reference, deadline = fields
        return cls(payload, TxKind(kind.decode("utf-8")), origin.decode("utf-8"),
                   unpack_int(tick), dest.decode("utf-8"), reference.decode("utf-8"), unpack_int(deadline))

    def to_dict(self):
        return {"payload": b64encode(self.payload),
                "kind": self.kind.value,
                "origin_network": self.origin_network,
                "logical_time": self.logical_time,
                "dest_network": self.dest_network,
                "reference": self.reference,
                "deadline": self.deadline,
                "tx_id": self.tx_id}

    @classmethod
    def from_dict(cls, d):
        tx = cls(b64decode(d["payload"]), TxKind(d["kind"]), d["origin_network"],
                 d["logical_time"], d.get("dest_network", ""), d.get("reference", ""), d.get("deadline", -1))
        if "tx_id" in d and d["tx_id"] != tx.tx_id:
            raise ValueError(f"tx_id mismatch for transaction {d['tx_id']}")
        return tx


@dataclass(frozen=True)
class EndorsementSet:
    subject_tx: str
    signer_network: str
    signatures: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "signatures",
                           tuple((pid, bytes(sig)) for pid, sig in self.signatures))

    @property
    def count(self):
        return len(self.signatures)

    @property
    def peer_ids(self):
        return [pid for pid, _ in self.signatures]

    def canonical_bytes(self):
        return pack_fields(self.subject_tx, self.signer_network,
                           *[pack_fields(pid, sig) for pid, sig in self.signatures])

    @classmethod
    def from_bytes(cls, data):
        fields = unpack_fields(data)
        if len(fields) < 2:
            raise ValueError("Endorsement set encoding must have at least 2 fields")
        signatures = []
        for f in fields[2:]:
            pid, sig = unpack_fields(f)
            signatures.append((pid.decode("utf-8"), sig))
        return cls(fields[0].decode("utf-8"), fields[1].decode("utf-8"), tuple(signatures))

    def to_dict(self):
        return {"subject_tx": self.subject_tx,
                "signer_network": self.signer_network,
                "signatures": [[pid, b64encode(sig)] for pid, sig in self.signatures]}

    @classmethod
    def from_dict(cls, d):
        return cls(d["subject_tx"], d["signer_network"],
                   tuple((pid, b64decode(sig)) for pid, sig in d["signatures"]))


@dataclass(frozen=True)
class Block:
    height: int
    prev_hash: str
    tick: int
    network_id: str
    transactions: tuple
    block_hash: str

    @staticmethod
    def compute_hash(height, prev_hash, tick, network_id, transactions):
        body = hashlib.sha256()
        for tx, endorsements in transactions:
            body.update(pack_fields(tx.canonical_bytes(), endorsements.canonical_bytes()))
        return content_hash(pack_fields(height, prev_hash, tick, network_id, body.digest()))

    @classmethod
    def create(cls, height, prev_hash, tick, network_id, transactions=()):
        transactions = tuple(transactions)
        return cls(height, prev_hash, tick, network_id, transactions,
                   cls.compute_hash(height, prev_hash, tick, network_id, transactions))

    def hash_is_valid(self):
        return self.block_hash == self.compute_hash(self.height, self.prev_hash, self.tick,
                                                    self.network_id, self.transactions)

    def to_dict(self):
        return {"height": self.height,
                "prev_hash": self.prev_hash,
                "tick": self.tick,
                "network_id": self.network_id,
                "transactions": [{"tx": tx.to_dict(), "endorsements": e.to_dict()}
                                 for tx, e in self.transactions],
                "block_hash": self.block_hash}

    @classmethod
    def from_dict(cls, d):
        transactions = tuple((Transaction.from_dict(t["tx"]), EndorsementSet.from_dict(t["endorsements"]))
                             for t in d["transactions"])
        return cls(d["height"], d["prev_hash"], d["tick"], d["network_id"], transactions, d["block_hash"])


def genesis_block(network_id):
    return Block.create(0, GENESIS_PREV_HASH, 0, network_id)


class Ledger:
    """Canonical chain of one network, plus the batch of transactions
    committed during the current tick and not yet sealed into a block.
    """

    def __init__(self, network_id):
        self.network_id = network_id
        self.blocks = [genesis_block(network_id)]
        self.pending = []
        self.pending_tick = None
        self.tx_index = {}

    @property
    def height(self):
        return self.blocks[-1].height

    @property
    def head_hash(self):
        return self.blocks[-1].block_hash

    def contains(self, tx_id):
        return tx_id in self.tx_index

    def adopt(self, blocks):
        """Replace the canonical chain (data loss recovery and bootstrap)"""
        self.blocks = list(blocks)
        self.pending = []
        self.pending_tick = None
        self.tx_index = {tx.tx_id: b.height for b in self.blocks for tx, _ in b.transactions}

    def append_unchecked(self, tx, endorsements, now):
        """Add a transaction to the pending batch without endorsement checks.
        Only a network that controls its own ledger (a malicious one) does this.
        """
        if self.pending and self.pending_tick != now:
            seal_block(self, self.pending_tick)
        self.pending.append((tx, endorsements))
        self.pending_tick = now
        self.tx_index[tx.tx_id] = self.height + 1
        return self.height + 1


@dataclass
class Peer:
    peer_id: str
    signing_key: Ed25519PrivateKey = field(repr=False)
    blocks: list = field(default_factory=list, repr=False)
    ready: bool = True
    byzantine: bool = False
    lag: int = 0

    @property
    def height(self):
        return self.blocks[-1].height if self.blocks else -1

    @property
    def public_key(self):
        return self.signing_key.public_key()


class PeerStatus(NamedTuple):
    peer_id: str
    height: int
    ready: bool


class Network:
    """One permissioned network: its peers, canonical ledger and
    interop contract state.
    """

    def __init__(self, config):
        self.config = config
        self.ledger = Ledger(config.network_id)
        self.peers = {pid: Peer(pid, peer_signing_key(config, pid), blocks=list(self.ledger.blocks))
                      for pid in config.peer_ids}
        self.envelope_key = X25519PrivateKey.from_private_bytes(
            derive_seed_bytes("intersnap-envelope", config.network_id, config.genesis_seed))
        self.epoch = 0
        # Interop contract state
        self.sets = {}
        self.acknowledged = {}
        self.outbox = []

    @property
    def network_id(self):
        return self.config.network_id

    @property
    def replica_heights(self):
        return {pid: peer.height for pid, peer in self.peers.items()}

    def live_peers(self):
        return [p for p in self.peers.values() if p.ready and not p.byzantine]

    def is_down(self):
        return not any(p.ready for p in self.peers.values())


def quorum_threshold(n):
    """Smallest endorser count t with t >= 2n/3

    Args:
        n (int): Number of peers in the network

    Raises:
        ValueError: n < 1

    Returns:
        int: Quorum threshold
    """
    if n < 1:
        raise ValueError("Quorum is only defined for n >= 1")
    return (2 * n + 2) // 3


def check_endorsements(message, endorsements, registry):
    """Check every signature of an endorsement set over message bytes and
    count them against the signer network's quorum.

    Args:
        message (bytes): Signed bytes (canonical bytes of the subject transaction)
        endorsements (EndorsementSet): Endorsements
        registry (IdentityRegistry): Peer public keys and network sizes

    Returns:
        str or None: None if valid, otherwise one of "unknown_peer", "bad_signature",
            "insufficient_quorum"
    """

    seen = set()
    for peer_id, signature in endorsements.signatures:
        if peer_id in seen:
            return "bad_signature"
        seen.add(peer_id)
        key = registry.peer_key(endorsements.signer_network, peer_id)
        if key is None:
            return "unknown_peer"
        try:
            key.verify(signature, message)
        except (InvalidSignature, ValueError):
            return "bad_signature"

    peer_count = registry.peer_count(endorsements.signer_network)
    if not peer_count or endorsements.count < quorum_threshold(peer_count):
        return "insufficient_quorum"
    return None


class CommitOutcome(NamedTuple):
    committed: bool
    height: Optional[int] = None
    reason: str = ""


def commit_transaction(ledger, tx, endorsements, registry, now):
    """Validate endorsements and add a transaction to the block sealed at the end of this tick

    Args:
        ledger (Ledger): Ledger to commit to
        tx (Transaction): Transaction
        endorsements (EndorsementSet): Endorsements from the signer network
        registry (IdentityRegistry): Public keys of the signing peers
        now (int): Current tick

    Returns:
        CommitOutcome: committed with the height of the block it will land in,
            or rejected with reason duplicate_tx, bad_signature or insufficient_quorum
    """

    if ledger.contains(tx.tx_id):
        return CommitOutcome(False, reason="duplicate_tx")

    if endorsements.subject_tx != tx.tx_id:
        return CommitOutcome(False, reason="bad_signature")

    reason = check_endorsements(tx.canonical_bytes(), endorsements, registry)
    if reason == "unknown_peer":
        reason = "bad_signature"
    if reason:
        return CommitOutcome(False, reason=reason)

    height = ledger.append_unchecked(tx, endorsements, now)
    return CommitOutcome(True, height=height)


def seal_block(ledger, now):
    """Seal the pending batch into one block

    Args:
        ledger (Ledger): Ledger
        now (int): Tick of the batch

    Returns:
        Block or None: New block, None if nothing was pending
    """

    if not ledger.pending:
        return None
    tick = ledger.pending_tick if ledger.pending_tick is not None else now
    block = Block.create(ledger.height + 1, ledger.head_hash, tick, ledger.network_id, ledger.pending)
    ledger.blocks.append(block)
    ledger.pending = []
    ledger.pending_tick = None
    return block


def endorse(network, tx):
    """Collect signatures from every ready, honest peer"""
    message = tx.canonical_bytes()
    signatures = tuple((p.peer_id, p.signing_key.sign(message))
                       for p in sorted(network.live_peers(), key=lambda p: p.peer_id))
    return EndorsementSet(tx.tx_id, network.network_id, signatures)


def discover_topology(network):
    """Peer ids, replica heights and readiness, in configuration order. Read only"""
    return [PeerStatus(pid, network.peers[pid].height, network.peers[pid].ready)
            for pid in network.config.peer_ids]


def blocks_since(ledger, from_height):
    """Blocks with height > from_height, in height order

    Args:
        ledger (Ledger or list): Ledger, or a replica's block list starting at genesis
        from_height (int): Exclusive lower bound. -1 includes genesis

    Raises:
        OutOfRange: from_height outside -1..height

    Returns:
        list: Blocks
    """

    blocks = ledger.blocks if isinstance(ledger, Ledger) else ledger
    height = blocks[-1].height if blocks else -1
    if from_height < -1 or from_height > height:
        raise OutOfRange(f"from_height {from_height} outside -1..{height}")
    return list(blocks[from_height + 1:])


def verify_chain(blocks, prev_hash=None):
    """Check heights, links and hashes of consecutive blocks

    Args:
        blocks (list): Blocks in height order
        prev_hash (str, optional): Expected prev_hash of the first block

    Returns:
        int or None: Index of the first failing block, None if the chain verifies
    """

    for i, block in enumerate(blocks):
        if i == 0:
            if prev_hash is not None and block.prev_hash != prev_hash:
                return 0
            if block.height == 0 and block.prev_hash != GENESIS_PREV_HASH:
                return 0
        else:
            if block.height != blocks[i - 1].height + 1 or block.prev_hash != blocks[i - 1].block_hash:
                return i
        if not block.hash_is_valid():
            return i
    return None


def sync_peer(network, peer_id):
    """Bring a ready replica to the canonical height minus its lag"""

    peer = network.peers[peer_id]
    if not peer.ready:
        return peer
    canonical = network.ledger.blocks
    target = max(0, network.ledger.height - peer.lag)

    # A replica restored from an older epoch may have left the canonical chain
    common = min(peer.height, target)
    if common >= 0 and peer.blocks[common].block_hash != canonical[common].block_hash:
        while common >= 0 and peer.blocks[common].block_hash != canonical[common].block_hash:
            common -= 1
        del peer.blocks[common + 1:]

    if peer.height > target:
        del peer.blocks[target + 1:]
    elif peer.height < target:
        peer.blocks.extend(network.ledger.blocks[peer.height + 1:target + 1])
    return peer


def sync_replicas(network):
    for peer_id in network.config.peer_ids:
        sync_peer(network, peer_id)


def truncate_ledger(network, retain_height):
    """Lose every block above retain_height on the canonical chain and all replicas.
    retain_height = -1 loses everything and rebuilds genesis.

    Args:
        network (Network): Network
        retain_height (int): Last block to keep

    Returns:
        int: Height after truncation
    """

    retain = min(retain_height, network.ledger.height)
    if retain < 0:
        blocks = [genesis_block(network.network_id)]
    else:
        blocks = network.ledger.blocks[:retain + 1]
    network.ledger.adopt(blocks)
    for peer in network.peers.values():
        peer.blocks = list(blocks[:min(len(blocks), len(peer.blocks))]) or [blocks[0]]
    network.epoch += 1

    # Contract state lives on the ledger, so it is lost with it
    ledger = network.ledger
    network.sets = {sid: s for sid, s in network.sets.items()
                    if ledger.contains(s.invoke.tx_id)
                    and (s.receipt is None or ledger.contains(s.receipt.tx_id))}
    network.acknowledged = {sid: rt for sid, rt in network.acknowledged.items() if ledger.contains(rt)}
    network.outbox = []
    return network.ledger.height


def ledger_to_dict(network):
    """Sorted-key friendly export of the canonical chain and replica heads"""
    return {"network_id": network.network_id,
            "epoch": network.epoch,
            "height": network.ledger.height,
            "blocks": [b.to_dict() for b in network.ledger.blocks],
            "replicas": {pid: [b.block_hash for b in p.blocks] for pid, p in network.peers.items()},
            "peer_keys": network.config.peer_keys}
