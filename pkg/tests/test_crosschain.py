import numpy as np
import pytest

from intersnap_archive.definitions import SetStatus, Direction, TxKind
from intersnap_archive.ledger import NetworkConfig, Network, Transaction, EndorsementSet, seal_block
from intersnap_archive.crosschain import IdentityRegistry, InteropMessage, Relay, RelayDown, \
    AttestationRejected, DestQuorumUnreachable, SourceQuorumUnreachable, UnknownSet, LateReceipt, \
    MalformedMessage, initiate_cross_tx, accept_and_receipt, complete_set, expire_sets, verify_attestations, \
    encode_message, decode_message, relay_deliver, compute_set_id, check_atomicity, parse_receipt_payload


def make_pair(peers=4):
    registry = IdentityRegistry()
    networks = {}
    for i, nid in enumerate(["N1", "N2"]):
        networks[nid] = Network(NetworkConfig(nid, peers, i))
        registry.register_network(networks[nid])
    return networks["N1"], networks["N2"], registry


def seal(*networks, tick=0):
    for network in networks:
        seal_block(network.ledger, tick)


class FakeWorld:
    """Relay host: tick, seeded rng and a schedule"""

    def __init__(self, relay, seed=0):
        self.relay = relay
        self.rng = np.random.default_rng(seed)
        self.tick = 0
        self.scheduled = []

    def schedule(self, tick, kind, data):
        self.scheduled.append((tick, kind, data))


def test_complete_round_trip():

    n1, n2, registry = make_pair()
    tset = initiate_cross_tx(n1, "N2", b"transfer 10", 1, 30, registry)
    assert tset.status == SetStatus.PENDING
    assert tset.deadline == 31
    assert tset.invoke.deadline == 31
    assert Transaction.from_bytes(tset.invoke.canonical_bytes()) == tset.invoke
    assert Transaction(b"transfer 10", TxKind.CROSS_INVOKE, "N1", 1, "N2").tx_id != tset.invoke.tx_id
    assert tset.set_id == compute_set_id(tset.invoke.tx_id)
    request = n1.outbox.pop()
    seal(n1, tick=1)

    response = accept_and_receipt(n2, request, 2, registry)
    assert n2.ledger.contains(tset.invoke.tx_id)
    receipt = response.transaction()
    assert receipt.kind == TxKind.CROSS_RECEIPT
    assert receipt.reference == tset.invoke.tx_id
    invoke, psi, _, _ = parse_receipt_payload(receipt.payload)
    assert invoke == tset.invoke
    assert psi == tset.invoke_endorsements
    seal(n2, tick=2)

    completed = complete_set(n1, response, 3, registry)
    assert completed.status == SetStatus.COMPLETE
    assert completed.completed_tick == 3
    assert n1.ledger.contains(receipt.tx_id)
    seal(n1, tick=3)

    # Replayed response changes nothing
    assert complete_set(n1, response, 4, registry).status == SetStatus.COMPLETE
    assert check_atomicity({"N1": n1, "N2": n2}) == []


def test_wire_round_trip_and_tampering():

    n1, n2, registry = make_pair()
    initiate_cross_tx(n1, "N2", b"payload", 1, 30, registry)
    request = n1.outbox.pop()

    decoded = decode_message(encode_message(request))
    assert decoded == request
    assert verify_attestations(decoded, registry).accepted

    with pytest.raises(MalformedMessage):
        decode_message(b"{not json")

    # Mutate one byte of the invoke payload
    tx = request.transaction()
    mutated_tx = Transaction(bytes([tx.payload[0] ^ 1]) + tx.payload[1:], tx.kind, tx.origin_network,
                             tx.logical_time, tx.dest_network)
    mutated = InteropMessage(Direction.REQUEST, "N1", "N2", mutated_tx.canonical_bytes(),
                             request.attestation_chain, 1)
    assert verify_attestations(mutated, registry).reason == "bad_signature"

    height = n2.ledger.height
    with pytest.raises(AttestationRejected):
        accept_and_receipt(n2, mutated, 2, registry)
    assert not n2.ledger.pending
    assert n2.ledger.height == height

    # Too few attestations
    short = InteropMessage(Direction.REQUEST, "N1", "N2", request.body,
                           (EndorsementSet(tx.tx_id, "N1", request.attestation_chain[0].signatures[:2]),), 1)
    assert verify_attestations(short, registry).reason == "insufficient_quorum"


def test_quorum_failures():

    n1, n2, registry = make_pair()
    for pid in ["N1-p0", "N1-p1"]:
        n1.peers[pid].ready = False
    with pytest.raises(SourceQuorumUnreachable):
        initiate_cross_tx(n1, "N2", b"x", 1, 30, registry)
    assert not n1.sets
    assert not n1.outbox

    n1, n2, registry = make_pair()
    initiate_cross_tx(n1, "N2", b"x", 1, 30, registry)
    request = n1.outbox.pop()
    for pid in ["N2-p0", "N2-p1"]:
        n2.peers[pid].ready = False
    with pytest.raises(DestQuorumUnreachable):
        accept_and_receipt(n2, request, 2, registry)
    assert not n2.ledger.pending


def test_expiry_and_late_receipt():

    n1, n2, registry = make_pair()
    tset = initiate_cross_tx(n1, "N2", b"x", 1, 5, registry)
    request = n1.outbox.pop()

    # Deadline is inclusive
    assert expire_sets(n1, 6) == []
    assert tset.status == SetStatus.PENDING
    assert expire_sets(n1, 7) == [tset]
    assert tset.status == SetStatus.INCOMPLETE

    response = accept_and_receipt(n2, request, 8, registry)
    with pytest.raises(LateReceipt):
        complete_set(n1, response, 8, registry)
    assert tset.status == SetStatus.INCOMPLETE
    assert tset.late_receipts
    assert not n1.ledger.contains(response.transaction().tx_id)
    assert check_atomicity({"N1": n1, "N2": n2}) == []


def test_receipt_at_deadline_completes():

    n1, n2, registry = make_pair()
    tset = initiate_cross_tx(n1, "N2", b"x", 1, 5, registry)
    response = accept_and_receipt(n2, n1.outbox.pop(), 3, registry)
    assert complete_set(n1, response, 6, registry).status == SetStatus.COMPLETE
    assert tset.completed_tick == 6


def test_forged_receipt_stays_pending():

    n1, n2, registry = make_pair()
    tset = initiate_cross_tx(n1, "N2", b"x", 1, 5, registry)
    response = accept_and_receipt(n2, n1.outbox.pop(), 2, registry)

    e = response.attestation_chain[0]
    forged_sigs = tuple((pid, bytes(64)) for pid, _ in e.signatures)
    forged = InteropMessage(Direction.RESPONSE, "N2", "N1", response.body,
                            (EndorsementSet(e.subject_tx, "N2", forged_sigs), response.attestation_chain[1]), 2)
    assert complete_set(n1, forged, 3, registry).status == SetStatus.PENDING
    assert tset.rejected_receipts[-1][1] == "bad_signature"

    expire_sets(n1, 7)
    assert tset.status == SetStatus.INCOMPLETE


def test_unknown_set():

    n1, n2, registry = make_pair()
    initiate_cross_tx(n2, "N1", b"x", 1, 5, registry)
    response = accept_and_receipt(n1, n2.outbox.pop(), 2, registry)
    # Delivered to the wrong network
    with pytest.raises(UnknownSet):
        complete_set(n1, response, 3, registry)


def test_relay():

    n1, n2, registry = make_pair()
    initiate_cross_tx(n1, "N2", b"x", 1, 5, registry)
    msg = n1.outbox.pop()

    world = FakeWorld(Relay(latency=2))
    world.tick = 4
    result = relay_deliver(msg, world)
    assert result.delivered
    assert result.deliver_tick == 6
    assert decode_message(world.scheduled[0][2]["wire"]) == msg

    world = FakeWorld(Relay(latency=1, outages=[(3, 5)]))
    world.tick = 5
    with pytest.raises(RelayDown):
        relay_deliver(msg, world)

    world = FakeWorld(Relay(drop_rate=1.0))
    assert relay_deliver(msg, world).reason == "dropped"

    world = FakeWorld(Relay(latency=1, jitter=3), seed=5)
    ticks = [relay_deliver(msg, world).deliver_tick for _ in range(50)]
    assert min(ticks) >= 1 and max(ticks) <= 4

    with pytest.raises(ValueError):
        Relay(drop_rate=1.5)


def test_atomicity_randomized():
    """Random delays, drops and expiries never complete a set without a verified receipt"""

    for seed in range(20):
        rng = np.random.default_rng(seed)
        n1, n2, registry = make_pair()
        in_flight = []
        for tick in range(60):
            if tick < 40 and rng.random() < 0.5:
                initiate_cross_tx(n1, "N2", rng.bytes(8), tick, int(rng.integers(1, 6)), registry)
            for msg in n1.outbox + n2.outbox:
                if rng.random() > 0.2:
                    in_flight.append((tick + int(rng.integers(1, 5)), msg))
            n1.outbox, n2.outbox = [], []
            for due, msg in [m for m in in_flight if m[0] == tick]:
                if msg.direction == Direction.REQUEST:
                    accept_and_receipt(n2, msg, tick, registry)
                else:
                    try:
                        complete_set(n1, msg, tick, registry)
                    except LateReceipt:
                        pass
            in_flight = [m for m in in_flight if m[0] > tick]
            expire_sets(n1, tick)
            seal(n1, n2, tick=tick)

        assert check_atomicity({"N1": n1, "N2": n2}) == []
        for tset in n1.sets.values():
            statuses = [s for _, s in tset.history]
            assert statuses[0] == "pending"
            assert len(statuses) <= 2
