"""Receipt-enforced cross-chain transaction sets.

The path between two networks has three layers. The interop contract
(initiate_cross_tx, accept_and_receipt, complete_set, expire_sets) runs on the
ledgers and writes InteropMessages to the network's outbox. The driver
(encode_message, decode_message) converts messages to and from the wire format.
The relay (Relay, relay_deliver) moves wire bytes between networks.
"""

import json
import struct
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

from intersnap_archive.definitions import TxKind, SetStatus, Direction, InterSnapError
from intersnap_archive.ledger import Transaction, EndorsementSet, commit_transaction, \
    check_endorsements, endorse, quorum_threshold
from intersnap_archive.util import pack_fields, unpack_fields, content_hash, \
    canonical_bytes, b64encode, b64decode


class CrossChainError(InterSnapError):
    code = "crosschain_error"


class SourceQuorumUnreachable(CrossChainError):
    code = "source_quorum_unreachable"


class DestQuorumUnreachable(CrossChainError):
    code = "dest_quorum_unreachable"


class AttestationRejected(CrossChainError):
    code = "attestation_rejected"

    def __init__(self, reason):
        self.reason = reason
        super().__init__(f"attestation rejected: {reason}")


class CommitRejected(CrossChainError):
    code = "commit_rejected"

    def __init__(self, reason):
        self.reason = reason
        super().__init__(f"commit rejected: {reason}")


class UnknownSet(CrossChainError):
    code = "unknown_set"


class LateReceipt(CrossChainError):
    code = "late_receipt"


class RelayDown(CrossChainError):
    code = "relay_down"


class MalformedMessage(CrossChainError):
    code = "malformed_message"


class IdentityRegistry:
    """Public keys of every peer and network, shared by all networks and the auditor"""

    def __init__(self):
        self._peer_keys = {}
        self._peer_counts = {}
        self._network_keys = {}

    def register_network(self, network):
        self._peer_counts[network.network_id] = network.config.peer_count
        for peer in network.peers.values():
            self.register_peer(network.network_id, peer.peer_id, peer.public_key)
        self.register_network_key(network.network_id, network.envelope_key.public_key())

    def register_peer(self, network_id, peer_id, public_key):
        self._peer_keys[(network_id, peer_id)] = public_key
        self._peer_counts.setdefault(network_id, 0)
        self._peer_counts[network_id] = max(self._peer_counts[network_id],
                                            sum(1 for n, _ in self._peer_keys if n == network_id))

    def remove_peer(self, network_id, peer_id):
        self._peer_keys.pop((network_id, peer_id), None)

    def register_network_key(self, network_id, public_key):
        self._network_keys[network_id] = public_key

    def peer_key(self, network_id, peer_id):
        return self._peer_keys.get((network_id, peer_id))

    def peer_count(self, network_id):
        return self._peer_counts.get(network_id, 0)

    def network_key(self, network_id):
        return self._network_keys.get(network_id)

    def networks(self):
        return sorted(self._peer_counts)


def compute_set_id(invoke_tx_id):
    return content_hash(pack_fields("transaction-set", invoke_tx_id))


@dataclass
class TransactionSet:
    invoke: Transaction
    invoke_endorsements: EndorsementSet
    deadline: int
    initiated_tick: int
    status: SetStatus = SetStatus.PENDING
    receipt: Optional[Transaction] = None
    receipt_endorsements: Optional[EndorsementSet] = None
    completed_tick: Optional[int] = None
    expired_tick: Optional[int] = None
    expired_height: Optional[int] = None
    late_receipts: list = field(default_factory=list)
    rejected_receipts: list = field(default_factory=list)
    history: list = field(default_factory=list)

    @property
    def set_id(self):
        return compute_set_id(self.invoke.tx_id)

    @property
    def source_network(self):
        return self.invoke.origin_network

    @property
    def dest_network(self):
        return self.invoke.dest_network

    def transition(self, status, now):
        self.status = status
        self.history.append((now, status.value))

    def to_dict(self):
        return {"set_id": self.set_id,
                "source_network": self.source_network,
                "dest_network": self.dest_network,
                "invoke_tx": self.invoke.tx_id,
                "receipt_tx": self.receipt.tx_id if self.receipt else None,
                "status": self.status.value,
                "deadline": self.deadline,
                "initiated_tick": self.initiated_tick,
                "completed_tick": self.completed_tick,
                "expired_tick": self.expired_tick,
                "late_receipts": [list(r) for r in self.late_receipts],
                "rejected_receipts": [list(r) for r in self.rejected_receipts],
                "history": [list(h) for h in self.history]}


@dataclass(frozen=True)
class InteropMessage:
    direction: Direction
    source_network: str
    dest_network: str
    body: bytes
    attestation_chain: tuple
    sent_tick: int = 0

    def transaction(self):
        return Transaction.from_bytes(self.body)


def receipt_payload(invoke, invoke_endorsements):
    """Receipt payload: the invoke and its source endorsements, exactly as received"""
    return pack_fields(invoke.canonical_bytes(), invoke_endorsements.canonical_bytes())


def parse_receipt_payload(payload):
    """Inverse of receipt_payload

    Raises:
        ValueError: Not a receipt payload

    Returns:
        tuple: (Transaction, EndorsementSet, invoke bytes, endorsement bytes)
    """
    fields = unpack_fields(payload)
    if len(fields) != 2:
        raise ValueError("Receipt payload must have 2 fields")
    return Transaction.from_bytes(fields[0]), EndorsementSet.from_bytes(fields[1]), fields[0], fields[1]


class Verification(NamedTuple):
    accepted: bool
    reason: str = ""


def verify_attestations(msg, registry):
    """Check that a message's attestations cover its body and meet the sender's quorum.
    Pure, no state change.

    Args:
        msg (InteropMessage): Request or response
        registry (IdentityRegistry): Identity registry

    Returns:
        Verification: accepted, or rejected with reason unknown_peer, bad_signature
            or insufficient_quorum
    """

    if not msg.attestation_chain:
        return Verification(False, "insufficient_quorum")

    try:
        tx = Transaction.from_bytes(msg.body)
    except (ValueError, struct.error):
        return Verification(False, "bad_signature")

    primary = msg.attestation_chain[0]
    if primary.subject_tx != tx.tx_id or primary.signer_network != msg.source_network:
        return Verification(False, "bad_signature")

    reason = check_endorsements(msg.body, primary, registry)
    if reason:
        return Verification(False, reason)

    if msg.direction == Direction.RESPONSE:
        # The receipt embeds the invoke and the source endorsements it acknowledges
        if tx.kind != TxKind.CROSS_RECEIPT or len(msg.attestation_chain) != 2:
            return Verification(False, "bad_signature")
        try:
            invoke, invoke_endorsements, invoke_bytes, _ = parse_receipt_payload(tx.payload)
        except (ValueError, struct.error):
            return Verification(False, "bad_signature")
        if invoke_endorsements != msg.attestation_chain[1] or invoke.tx_id != tx.reference:
            return Verification(False, "bad_signature")
        reason = check_endorsements(invoke_bytes, invoke_endorsements, registry)
        if reason:
            return Verification(False, reason)

    return Verification(True)


def initiate_cross_tx(source, dest_network, payload, now, timeout, registry):
    """Endorse and commit a cross-chain invoke at the source, and emit the request

    Args:
        source (Network): Source network
        dest_network (str): Destination network id
        payload (bytes): Non-empty payload
        now (int): Current tick
        timeout (int): Ticks until the deadline
        registry (IdentityRegistry): Identity registry

    Raises:
        ValueError: Empty payload
        SourceQuorumUnreachable: Too few live source peers to endorse
        CommitRejected: Source ledger rejected the invoke (e.g. duplicate)

    Returns:
        TransactionSet: Pending set, deadline = now + timeout
    """

    if not payload:
        raise ValueError("Cross-chain payload must be non-empty")

    tx = Transaction(bytes(payload), TxKind.CROSS_INVOKE, source.network_id, now, dest_network=dest_network,
                     deadline=now + timeout)
    endorsements = endorse(source, tx)
    if endorsements.count < quorum_threshold(source.config.peer_count):
        raise SourceQuorumUnreachable(
            f"{endorsements.count} live peers at {source.network_id}, quorum is {quorum_threshold(source.config.peer_count)}")

    outcome = commit_transaction(source.ledger, tx, endorsements, registry, now)
    if not outcome.committed:
        raise CommitRejected(outcome.reason)

    tset = TransactionSet(tx, endorsements, deadline=now + timeout, initiated_tick=now)
    tset.history.append((now, SetStatus.PENDING.value))
    source.sets[tset.set_id] = tset
    source.outbox.append(InteropMessage(Direction.REQUEST, source.network_id, dest_network,
                                        tx.canonical_bytes(), (endorsements,), now))
    return tset


def accept_and_receipt(dest, msg, now, registry):
    """Verify a request, commit the invoke at the destination and issue the receipt

    Args:
        dest (Network): Destination network
        msg (InteropMessage): Request
        now (int): Current tick
        registry (IdentityRegistry): Identity registry

    Raises:
        AttestationRejected: Request failed verification. Nothing committed
        DestQuorumUnreachable: Too few live destination peers. Nothing committed

    Returns:
        InteropMessage: Response carrying the receipt and the destination endorsements
    """

    verification = verify_attestations(msg, registry)
    if not verification.accepted:
        raise AttestationRejected(verification.reason)
    if msg.direction != Direction.REQUEST or msg.dest_network != dest.network_id:
        raise AttestationRejected("wrong_destination")

    invoke = Transaction.from_bytes(msg.body)
    if invoke.kind != TxKind.CROSS_INVOKE or invoke.dest_network != dest.network_id:
        raise AttestationRejected("wrong_destination")

    quorum = quorum_threshold(dest.config.peer_count)
    if len(dest.live_peers()) < quorum:
        raise DestQuorumUnreachable(f"{len(dest.live_peers())} live peers at {dest.network_id}, quorum is {quorum}")

    invoke_endorsements = msg.attestation_chain[0]
    outcome = commit_transaction(dest.ledger, invoke, invoke_endorsements, registry, now)
    if not outcome.committed:
        raise AttestationRejected(outcome.reason)

    receipt = Transaction(receipt_payload(invoke, invoke_endorsements), TxKind.CROSS_RECEIPT,
                          dest.network_id, now, dest_network=invoke.origin_network, reference=invoke.tx_id)
    receipt_endorsements = endorse(dest, receipt)
    outcome = commit_transaction(dest.ledger, receipt, receipt_endorsements, registry, now)
    if not outcome.committed:
        raise DestQuorumUnreachable(outcome.reason)

    dest.acknowledged[compute_set_id(invoke.tx_id)] = receipt.tx_id

    response = InteropMessage(Direction.RESPONSE, dest.network_id, invoke.origin_network,
                              receipt.canonical_bytes(), (receipt_endorsements, invoke_endorsements), now)
    dest.outbox.append(response)
    return response


def complete_set(source, response, now, registry):
    """Apply a receipt to its pending set at the source

    Args:
        source (Network): Source network
        response (InteropMessage): Response from the destination
        now (int): Current tick
        registry (IdentityRegistry): Identity registry

    Raises:
        UnknownSet: Response doesn't reference a set of this network
        LateReceipt: Receipt arrived after the deadline (recorded on the set)

    Returns:
        TransactionSet: The set, complete if the receipt verified, otherwise still pending
    """

    try:
        receipt = Transaction.from_bytes(response.body)
    except (ValueError, struct.error):
        raise UnknownSet("Response body is not a transaction")

    set_id = compute_set_id(receipt.reference) if receipt.reference else ""
    tset = source.sets.get(set_id)
    if tset is None:
        raise UnknownSet(f"No set {set_id} at {source.network_id}")

    if tset.status == SetStatus.COMPLETE:
        return tset

    if now > tset.deadline or tset.status == SetStatus.INCOMPLETE:
        tset.late_receipts.append((now, receipt.tx_id))
        raise LateReceipt(f"Receipt for set {set_id} arrived at tick {now}, deadline {tset.deadline}")

    verification = verify_attestations(response, registry)
    if verification.accepted and response.source_network != tset.dest_network:
        verification = Verification(False, "wrong_destination")
    if not verification.accepted:
        tset.rejected_receipts.append((now, verification.reason))
        return tset

    receipt_endorsements = response.attestation_chain[0]
    if response.attestation_chain[1] != tset.invoke_endorsements:
        tset.rejected_receipts.append((now, "bad_signature"))
        return tset

    outcome = commit_transaction(source.ledger, receipt, receipt_endorsements, registry, now)
    if not outcome.committed:
        tset.rejected_receipts.append((now, outcome.reason))
        return tset

    tset.receipt = receipt
    tset.receipt_endorsements = receipt_endorsements
    tset.completed_tick = now
    tset.transition(SetStatus.COMPLETE, now)
    return tset


def expire_sets(network, now):
    """Mark every pending set with deadline < now as incomplete

    Returns:
        list: Sets that became incomplete
    """

    expired = []
    for tset in network.sets.values():
        if tset.status == SetStatus.PENDING and tset.deadline < now:
            tset.expired_tick = now
            # Flagged in the snapshot that captures the next block
            tset.expired_height = network.ledger.height + 1
            tset.transition(SetStatus.INCOMPLETE, now)
            expired.append(tset)
    return expired


def encode_message(msg):
    """Driver: InteropMessage to wire bytes (sorted-key JSON, base64 byte fields)"""
    return canonical_bytes({"direction": msg.direction.value,
                            "source_network": msg.source_network,
                            "dest_network": msg.dest_network,
                            "body": b64encode(msg.body),
                            "attestation_chain": [e.to_dict() for e in msg.attestation_chain],
                            "sent_tick": msg.sent_tick})


def decode_message(data):
    """Driver: wire bytes to InteropMessage

    Raises:
        MalformedMessage: Not a wire message
    """
    try:
        d = json.loads(data.decode("utf-8"))
        return InteropMessage(Direction(d["direction"]), d["source_network"], d["dest_network"],
                              b64decode(d["body"]),
                              tuple(EndorsementSet.from_dict(e) for e in d["attestation_chain"]),
                              d.get("sent_tick", 0))
    except (ValueError, KeyError, TypeError) as e:
        raise MalformedMessage(str(e))


@dataclass
class Relay:
    latency: int = 1
    jitter: int = 0
    drop_rate: float = 0.0
    outages: list = field(default_factory=list)

    def __post_init__(self):
        if self.latency < 0 or self.jitter < 0:
            raise ValueError("Relay latency and jitter must be non-negative")
        if not 0.0 <= self.drop_rate <= 1.0:
            raise ValueError("Relay drop_rate must be between 0 and 1")

    def is_down(self, tick):
        return any(start <= tick <= end for start, end in self.outages)


class DeliveryResult(NamedTuple):
    delivered: bool
    deliver_tick: Optional[int] = None
    reason: str = ""


def relay_deliver(msg, world):
    """Schedule a message for the destination driver at now + latency (+ jitter)

    Args:
        msg (InteropMessage): Message
        world: Object with ``tick``, ``rng``, ``relay`` and ``schedule(tick, kind, data)``

    Raises:
        RelayDown: Relay outage covers the send tick. The message is lost

    Returns:
        DeliveryResult: Delivery tick, or dropped
    """

    relay = world.relay
    if relay.is_down(world.tick):
        raise RelayDown(f"Relay down at tick {world.tick}")

    if relay.drop_rate > 0 and world.rng.random() < relay.drop_rate:
        return DeliveryResult(False, reason="dropped")

    delay = relay.latency
    if relay.jitter:
        delay += int(world.rng.integers(0, relay.jitter + 1))

    deliver_tick = world.tick + delay
    world.schedule(deliver_tick, "deliver", {"wire": encode_message(msg)})
    return DeliveryResult(True, deliver_tick)


def check_atomicity(networks):
    """Atomicity violations across networks

    Every complete set has its invoke and receipt on both ledgers. No incomplete set
    has its receipt on the source ledger. No set goes from incomplete to complete.
    A destination that suffered data loss is not checked for sets it held before the loss.

    Args:
        networks (dict): network_id to Network

    Returns:
        list: Violation descriptions
    """

    violations = []
    for network in networks.values():
        for set_id, tset in network.sets.items():
            statuses = [s for _, s in tset.history]
            if SetStatus.INCOMPLETE.value in statuses and \
                    SetStatus.COMPLETE.value in statuses[statuses.index(SetStatus.INCOMPLETE.value):]:
                violations.append(f"{set_id}: incomplete set became complete")

            if tset.status == SetStatus.COMPLETE:
                if tset.receipt is None or not network.ledger.contains(tset.receipt.tx_id):
                    violations.append(f"{set_id}: complete without receipt at source")
                if not network.ledger.contains(tset.invoke.tx_id):
                    violations.append(f"{set_id}: complete without invoke at source")
                dest = networks.get(tset.dest_network)
                if dest is not None and dest.epoch == 0:
                    if not dest.ledger.contains(tset.invoke.tx_id):
                        violations.append(f"{set_id}: complete without invoke at destination")
                    if tset.receipt is None or not dest.ledger.contains(tset.receipt.tx_id):
                        violations.append(f"{set_id}: complete without receipt at destination")

            if tset.status == SetStatus.INCOMPLETE and tset.receipt is not None \
                    and network.ledger.contains(tset.receipt.tx_id):
                violations.append(f"{set_id}: incomplete set with receipt at source")
    return violations
