"""Need-based snapshot scheduling, snapshot peer selection, ledger delta
capture and the canonical compressed archive format.

Archive plaintext is the magic line, a manifest record and one record per
snapshot, each a sorted-key JSON line. The plaintext is DEFLATE compressed
with fixed parameters so identical snapshots give identical bytes.
"""

import json
import zlib
import struct
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

from intersnap_archive.definitions import TxKind, SetStatus, Decision, InterSnapError, \
    ARCHIVE_MAGIC, COMPRESS_LEVEL
from intersnap_archive.ledger import Block, Transaction, EndorsementSet, blocks_since, \
    check_endorsements
from intersnap_archive.crosschain import compute_set_id, parse_receipt_payload
from intersnap_archive.util import canonical_json, content_hash, pack_fields


class SnapshotError(InterSnapError):
    code = "snapshot_error"


class NoReadyPeer(SnapshotError):
    code = "no_ready_peer"


class PeerUnavailable(SnapshotError):
    code = "peer_unavailable"


class EmptyDelta(SnapshotError):
    code = "empty_delta"


class NonContiguousSnapshots(SnapshotError):
    code = "non_contiguous_snapshots"


class MalformedArchive(SnapshotError):
    code = "malformed_archive"


@dataclass(frozen=True)
class SchedulerConfig:
    blocks_per_period: Fraction
    window: Fraction
    poll_interval: int = 1

    def __post_init__(self):
        object.__setattr__(self, "blocks_per_period", Fraction(str(self.blocks_per_period)))
        object.__setattr__(self, "window", Fraction(str(self.window)))
        if self.blocks_per_period < 0:
            raise ValueError("blocks_per_period must be non-negative")
        if self.window <= 0:
            raise ValueError("window must be positive")
        if int(self.poll_interval) != self.poll_interval or self.poll_interval <= 0:
            raise ValueError("poll_interval must be a positive integer")

    @property
    def threshold(self):
        return self.blocks_per_period * self.window


@dataclass(frozen=True)
class SchedulerState:
    network_id: str
    last_snapshot_height: int = -1


def process_snapshot(state, ledger_height, delta):
    """Decide whether ledger growth since the last snapshot warrants a new one

    Args:
        state (SchedulerState): Scheduler state
        ledger_height (int): Current ledger height
        delta (Fraction or number): Threshold G x T

    Raises:
        ValueError: ledger_height below the last snapshot height

    Returns:
        tuple: (Decision, SchedulerState). On trigger the new state records ledger_height
    """

    if ledger_height < state.last_snapshot_height:
        raise ValueError(f"Ledger height {ledger_height} below last snapshot height {state.last_snapshot_height}")

    if ledger_height - state.last_snapshot_height >= Fraction(str(delta)):
        return Decision.TRIGGER, SchedulerState(state.network_id, ledger_height)
    return Decision.SKIP, state


def select_snapshot_peer(topology, rng):
    """Ready peer with the maximum replica height, ties broken by the seeded rng

    Args:
        topology (list): Output of discover_topology
        rng (numpy.random.Generator): Seeded generator

    Raises:
        NoReadyPeer: No peer is ready

    Returns:
        str: Peer id
    """

    ready = [entry for entry in topology if entry.ready]
    if not ready:
        raise NoReadyPeer("No ready peer to generate a snapshot")
    best = max(entry.height for entry in ready)
    candidates = [entry.peer_id for entry in ready if entry.height == best]
    if len(candidates) == 1:
        return candidates[0]
    return candidates[int(rng.integers(len(candidates)))]


@dataclass(frozen=True)
class SetRecord:
    """Evidence for one transaction set, as seen by the capturing network"""

    set_id: str
    role: str
    status: SetStatus
    invoke: Transaction
    invoke_endorsements: EndorsementSet
    receipt: Optional[Transaction] = None
    receipt_endorsements: Optional[EndorsementSet] = None
    block_height: int = -1
    block_tick: int = -1
    deadline: Optional[int] = None
    expired_tick: Optional[int] = None

    def to_dict(self):
        return {"set_id": self.set_id,
                "role": self.role,
                "status": SetStatus(self.status).value,
                "invoke": self.invoke.to_dict(),
                "invoke_endorsements": self.invoke_endorsements.to_dict(),
                "receipt": self.receipt.to_dict() if self.receipt else None,
                "receipt_endorsements": self.receipt_endorsements.to_dict() if self.receipt_endorsements else None,
                "block_height": self.block_height,
                "block_tick": self.block_tick,
                "deadline": self.deadline,
                "expired_tick": self.expired_tick}

    @classmethod
    def from_dict(cls, d):
        return cls(d["set_id"], d["role"], SetStatus(d["status"]),
                   Transaction.from_dict(d["invoke"]),
                   EndorsementSet.from_dict(d["invoke_endorsements"]),
                   Transaction.from_dict(d["receipt"]) if d.get("receipt") else None,
                   EndorsementSet.from_dict(d["receipt_endorsements"]) if d.get("receipt_endorsements") else None,
                   d.get("block_height", -1), d.get("block_tick", -1),
                   d.get("deadline"), d.get("expired_tick"))


def verify_set_record(record, registry):
    """Re-verify a completed set record: both endorsement sets, and that the
    receipt embeds exactly the archived invoke and source endorsements

    Args:
        record (SetRecord): Completed set record
        registry (IdentityRegistry): Identity registry

    Returns:
        str or None: None if the record verifies, otherwise a reason
    """

    invoke, psi_source = record.invoke, record.invoke_endorsements
    if record.set_id != compute_set_id(invoke.tx_id):
        return "set_id_mismatch"
    if invoke.kind != TxKind.CROSS_INVOKE or psi_source.subject_tx != invoke.tx_id \
            or psi_source.signer_network != invoke.origin_network:
        return "bad_invoke"
    reason = check_endorsements(invoke.canonical_bytes(), psi_source, registry)
    if reason:
        return f"invoke_{reason}"

    if record.status != SetStatus.COMPLETE:
        return None

    receipt, psi_dest = record.receipt, record.receipt_endorsements
    if receipt is None or psi_dest is None:
        return "missing_receipt"
    if receipt.kind != TxKind.CROSS_RECEIPT or receipt.reference != invoke.tx_id \
            or receipt.origin_network != invoke.dest_network:
        return "bad_receipt"
    try:
        embedded, embedded_psi, _, _ = parse_receipt_payload(receipt.payload)
    except (ValueError, struct.error):
        return "bad_receipt"
    if embedded != invoke or embedded_psi != psi_source:
        return "bad_receipt"
    if psi_dest.subject_tx != receipt.tx_id or psi_dest.signer_network != invoke.dest_network:
        return "receipt_bad_signature"
    reason = check_endorsements(receipt.canonical_bytes(), psi_dest, registry)
    if reason:
        return f"receipt_{reason}"
    return None


@dataclass(frozen=True)
class Snapshot:
    snapshot_id: str
    network_id: str
    epoch: int
    peer_id: str
    from_height: int
    to_height: int
    blocks: tuple
    completed_sets: tuple
    incomplete_sets: tuple
    state_digest: str
    capture_tick: int

    @property
    def transaction_count(self):
        return sum(len(b.transactions) for b in self.blocks)

    def to_dict(self):
        return {"snapshot_id": self.snapshot_id,
                "network_id": self.network_id,
                "epoch": self.epoch,
                "peer_id": self.peer_id,
                "from_height": self.from_height,
                "to_height": self.to_height,
                "blocks": [b.to_dict() for b in self.blocks],
                "completed_sets": [s.to_dict() for s in self.completed_sets],
                "incomplete_sets": [s.to_dict() for s in self.incomplete_sets],
                "state_digest": self.state_digest,
                "capture_tick": self.capture_tick}

    @classmethod
    def from_dict(cls, d):
        return cls(d["snapshot_id"], d["network_id"], d["epoch"], d["peer_id"],
                   d["from_height"], d["to_height"],
                   tuple(Block.from_dict(b) for b in d["blocks"]),
                   tuple(SetRecord.from_dict(s) for s in d["completed_sets"]),
                   tuple(SetRecord.from_dict(s) for s in d["incomplete_sets"]),
                   d["state_digest"], d["capture_tick"])


def completed_set_records(network_id, blocks):
    """Set records evidenced by receipts committed in the given blocks.
    Each receipt embeds the invoke and its source endorsements.

    A receipt issued after the invoke's deadline yields an INCOMPLETE
    destination record: the source has already expired that set.
    """

    records = []
    for block in blocks:
        for tx, endorsements in block.transactions:
            if tx.kind != TxKind.CROSS_RECEIPT:
                continue
            try:
                invoke, psi_source, _, _ = parse_receipt_payload(tx.payload)
            except (ValueError, struct.error):
                continue
            if invoke.tx_id != tx.reference:
                continue
            role = "source" if invoke.origin_network == network_id else "destination"
            status = SetStatus.COMPLETE
            if 0 <= invoke.deadline < tx.logical_time:
                status = SetStatus.INCOMPLETE
            records.append(SetRecord(compute_set_id(invoke.tx_id), role, status,
                                     invoke, psi_source, tx, endorsements,
                                     block_height=block.height, block_tick=block.tick,
                                     deadline=invoke.deadline if invoke.deadline >= 0 else None))
    return records


def capture_snapshot(network, peer_id, from_height, now):
    """Capture the ledger delta after from_height as seen by one peer

    Args:
        network (Network): Network
        peer_id (str): Snapshot peer
        from_height (int): Exclusive lower bound (the last snapshot height)
        now (int): Current tick

    Raises:
        PeerUnavailable: Peer unknown or not ready
        EmptyDelta: Peer replica not above from_height

    Returns:
        Snapshot: Snapshot
    """

    peer = network.peers.get(peer_id)
    if peer is None or not peer.ready:
        raise PeerUnavailable(f"Peer {peer_id} of {network.network_id} is not available")
    if peer.height <= from_height:
        raise EmptyDelta(f"Peer {peer_id} at height {peer.height}, nothing after {from_height}")

    blocks = tuple(blocks_since(peer.blocks, from_height))
    to_height = blocks[-1].height

    records = completed_set_records(network.network_id, blocks)
    completed = [r for r in records if r.status == SetStatus.COMPLETE]

    incomplete = [r for r in records if r.status == SetStatus.INCOMPLETE]
    for tset in network.sets.values():
        if tset.status == SetStatus.INCOMPLETE and tset.expired_height is not None \
                and from_height < tset.expired_height <= to_height:
            incomplete.append(SetRecord(tset.set_id, "source", SetStatus.INCOMPLETE,
                                        tset.invoke, tset.invoke_endorsements,
                                        deadline=tset.deadline, expired_tick=tset.expired_tick))
    incomplete.sort(key=lambda r: r.set_id)

    state_digest = content_hash(pack_fields(network.network_id, network.epoch, to_height,
                                            blocks[-1].block_hash))
    snapshot_id = content_hash(pack_fields(network.network_id, network.epoch,
                                           from_height, to_height, state_digest))

    return Snapshot(snapshot_id, network.network_id, network.epoch, peer_id,
                    from_height, to_height, blocks, tuple(completed), tuple(incomplete),
                    state_digest, now)


@dataclass(frozen=True)
class SnapshotArchive:
    snapshots: tuple

    @property
    def network_id(self):
        return self.snapshots[0].network_id

    @property
    def from_height(self):
        return self.snapshots[0].from_height

    @property
    def to_height(self):
        return self.snapshots[-1].to_height

    @property
    def blocks(self):
        return [b for s in self.snapshots for b in s.blocks]

    @property
    def manifest(self):
        return {"network_id": self.network_id,
                "epoch": self.snapshots[-1].epoch,
                "from_height": self.from_height,
                "to_height": self.to_height,
                "snapshot_count": len(self.snapshots),
                "snapshot_ids": [s.snapshot_id for s in self.snapshots],
                "capture_ticks": [s.capture_tick for s in self.snapshots]}


def check_contiguous(snapshots):
    if not snapshots:
        raise NonContiguousSnapshots("An archive needs at least one snapshot")
    for previous, current in zip(snapshots[:-1], snapshots[1:]):
        if current.network_id != previous.network_id:
            raise NonContiguousSnapshots("Snapshots from different networks")
        if current.from_height != previous.to_height:
            raise NonContiguousSnapshots(
                f"Snapshot {current.snapshot_id} starts at {current.from_height}, previous ends at {previous.to_height}")


def serialize_archive(snapshots):
    """Canonical plaintext: magic line, manifest line, one line per snapshot

    Raises:
        NonContiguousSnapshots: Empty or not height-contiguous
    """

    snapshots = tuple(snapshots)
    check_contiguous(snapshots)
    archive = SnapshotArchive(snapshots)
    lines = [ARCHIVE_MAGIC.decode("ascii"), canonical_json(archive.manifest)]
    lines += [canonical_json(s.to_dict()) for s in snapshots]
    return ("\n".join(lines) + "\n").encode("utf-8")


def compress_archive(plaintext):
    return zlib.compress(plaintext, COMPRESS_LEVEL)


def assemble_archive(snapshots):
    """Serialize then compress. Identical input always yields identical bytes

    Raises:
        NonContiguousSnapshots: Empty or not height-contiguous
    """
    return compress_archive(serialize_archive(snapshots))


def parse_archive(data):
    """Inverse of assemble_archive

    Raises:
        MalformedArchive: Not an archive, or its manifest doesn't match its snapshots

    Returns:
        SnapshotArchive: Archive
    """

    try:
        plaintext = zlib.decompress(data)
    except zlib.error as e:
        raise MalformedArchive(f"Can't decompress archive: {e}")

    lines = plaintext.decode("utf-8", errors="replace").split("\n")
    if lines and lines[-1] == "":
        lines = lines[:-1]
    if len(lines) < 3 or lines[0].encode("ascii", errors="replace") != ARCHIVE_MAGIC:
        raise MalformedArchive("Missing archive magic or records")

    try:
        manifest = json.loads(lines[1])
        snapshots = tuple(Snapshot.from_dict(json.loads(line)) for line in lines[2:])
        check_contiguous(snapshots)
    except (ValueError, KeyError, TypeError, NonContiguousSnapshots) as e:
        raise MalformedArchive(f"Can't parse archive records: {e}")

    archive = SnapshotArchive(snapshots)
    if manifest != archive.manifest:
        raise MalformedArchive("Archive manifest doesn't match its snapshots")
    return archive
