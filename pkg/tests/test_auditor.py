from dataclasses import replace

import numpy as np
import pytest

from intersnap_archive.definitions import ClaimKind, Outcome, Rationale, TxKind, SetStatus, SALT_BYTES, AUDITOR_ID
from intersnap_archive.ledger import NetworkConfig, Network, Transaction, EndorsementSet, seal_block, \
    sync_replicas, endorse, commit_transaction
from intersnap_archive.crosschain import IdentityRegistry, initiate_cross_tx, accept_and_receipt, complete_set, \
    expire_sets, LateReceipt
from intersnap_archive.snapshot import capture_snapshot, assemble_archive, MalformedArchive
from intersnap_archive.crypto import derive_key, encrypt_archive, AuthFailure
from intersnap_archive.store import ContentStore, SwarmKey, ContentId, FetchFailure, NotFound
from intersnap_archive.auditor import AuditorState, DisputeCase, SpanNotCovered, ingest_snapshot, \
    resolve_dispute, cross_check_archives, auditor_to_dict, auditor_from_dict
from intersnap_archive.util import content_hash


class Setting:
    """Two networks with one completed and one expired N1 -> N2 set, snapshotted"""

    def __init__(self):
        self.rng = np.random.default_rng(8)
        self.registry = IdentityRegistry()
        self.networks = {}
        for i, nid in enumerate(["N1", "N2"]):
            self.networks[nid] = Network(NetworkConfig(nid, 4, i))
            self.registry.register_network(self.networks[nid])
        n1, n2 = self.networks["N1"], self.networks["N2"]

        self.done = initiate_cross_tx(n1, "N2", b"complete me", 1, 10, self.registry)
        self.lost = initiate_cross_tx(n1, "N2", b"never answered", 1, 2, self.registry)
        request = n1.outbox[0]
        n1.outbox = []
        seal_block(n1.ledger, 1)

        response = accept_and_receipt(n2, request, 2, self.registry)
        seal_block(n2.ledger, 2)
        complete_set(n1, response, 3, self.registry)
        seal_block(n1.ledger, 3)
        expire_sets(n1, 4)
        for tick in [5, 6]:
            tx = Transaction(f"tx {tick}".encode(), TxKind.LOCAL, "N1", tick)
            commit_transaction(n1.ledger, tx, endorse(n1, tx), self.registry, tick)
            seal_block(n1.ledger, tick)
        sync_replicas(n1)
        sync_replicas(n2)

        self.snapshots = {"N1": capture_snapshot(n1, "N1-p0", -1, 7),
                          "N2": capture_snapshot(n2, "N2-p0", -1, 7)}

        self.swarm_key = SwarmKey(bytes(range(32)), {"N1", "N2", AUDITOR_ID})
        self.store = ContentStore(self.swarm_key)

    def auditor(self):
        return AuditorState(self.store, self.registry, self.swarm_key)

    def put(self, snapshot, network_id=None):
        key = derive_key(b"passphrase", self.rng.bytes(SALT_BYTES), 2)
        data = encrypt_archive(assemble_archive([snapshot]), key, self.rng).to_bytes()
        return self.store.put(data, self.swarm_key, network_id or snapshot.network_id), key

    def publish(self, auditor, network_id, now=7):
        cid, key = self.put(self.snapshots[network_id])
        ingest_snapshot(auditor, network_id, cid, key, self.swarm_key, now)
        return cid, key


@pytest.fixture
def setting():
    return Setting()


def test_ingest(setting):

    auditor = setting.auditor()
    cid, key = setting.publish(auditor, "N1")
    assert [e.cid for e in auditor.archives("N1")] == [cid]
    assert auditor.covered_until("N1") == 6
    assert auditor.covered_until("N2") == -1
    assert auditor.log[-1] == (7, "N1", cid.text, "ingested")

    # Re-ingesting is a no-op
    ingest_snapshot(auditor, "N1", cid, key, setting.swarm_key, 8)
    assert len(auditor.archives("N1")) == 1

    cid2, _ = setting.put(setting.snapshots["N2"])
    with pytest.raises(AuthFailure):
        ingest_snapshot(auditor, "N2", cid2, key, setting.swarm_key, 8)
    assert auditor.log[-1][-1] == "auth_failure"

    with pytest.raises(NotFound):
        ingest_snapshot(auditor, "N2", ContentId.of(b"missing"), key, setting.swarm_key, 8)

    outsider = AuditorState(setting.store, setting.registry, setting.swarm_key, auditor_id="N3")
    with pytest.raises(FetchFailure):
        ingest_snapshot(outsider, "N1", cid, key, setting.swarm_key, 8)

    assert not auditor.archives("N2")


def test_ingest_quarantines_wrong_network(setting):

    auditor = setting.auditor()
    cid, key = setting.put(setting.snapshots["N1"])
    with pytest.raises(MalformedArchive):
        ingest_snapshot(auditor, "N2", cid, key, setting.swarm_key, 7)
    assert auditor.quarantine[0].network_id == "N2"
    assert not auditor.archives("N2")


def test_forged_receipt_is_quarantined(setting):

    snapshot = setting.snapshots["N1"]
    record = snapshot.completed_sets[0]
    e = record.receipt_endorsements
    forged_record = replace(record, receipt_endorsements=EndorsementSet(
        e.subject_tx, e.signer_network, tuple((pid, bytes(64)) for pid, _ in e.signatures)))
    forged = replace(snapshot, completed_sets=(forged_record,))

    auditor = setting.auditor()
    cid, key = setting.put(forged)
    with pytest.raises(MalformedArchive):
        ingest_snapshot(auditor, "N1", cid, key, setting.swarm_key, 7)
    assert auditor.quarantine[0].cid == cid
    assert "receipt_bad_signature" in auditor.quarantine[0].reason
    assert not auditor.archives("N1")

    verdict = resolve_dispute(auditor, DisputeCase("N1", "N2", ClaimKind.DEMAND_FULFILLMENT,
                                                   set_id=setting.done.set_id))
    assert verdict.outcome == Outcome.CLAIM_REFUTED
    assert verdict.rationale == Rationale.ENDORSEMENT_FAILURE
    assert verdict.evidence == ()


def test_dispute_outcomes(setting):

    auditor = setting.auditor()

    demand = DisputeCase("N1", "N2", ClaimKind.DEMAND_FULFILLMENT, set_id=setting.done.set_id, filed_tick=9)
    assert resolve_dispute(auditor, demand).rationale == Rationale.SPAN_NOT_COVERED

    cid1, _ = setting.publish(auditor, "N1")
    cid2, _ = setting.publish(auditor, "N2")

    # Case 1: the respondent's quorum signed the receipt
    verdict = resolve_dispute(auditor, demand)
    assert verdict.outcome == Outcome.CLAIM_UPHELD
    assert verdict.rationale == Rationale.CASE1_VALID_RECEIPT
    assert {c.network_id for c in verdict.evidence} == {"N1", "N2"}
    assert {c.cid for c in verdict.evidence} == {cid1.text, cid2.text}
    assert all(c.set_id == setting.done.set_id for c in verdict.evidence)
    assert verdict.to_dict()["case_id"] == demand.case_id

    # Denying a receipt that is archived
    deny = DisputeCase("N2", "N1", ClaimKind.DENY_RECEIPT, set_id=setting.done.set_id)
    verdict = resolve_dispute(auditor, deny)
    assert verdict.outcome == Outcome.CLAIM_REFUTED
    assert verdict.rationale == Rationale.CASE1_VALID_RECEIPT

    # Case 2: the expired set has no completed record anywhere
    missing = DisputeCase("N1", "N2", ClaimKind.DEMAND_FULFILLMENT, set_id=setting.lost.set_id)
    verdict = resolve_dispute(auditor, missing)
    assert verdict.outcome == Outcome.CLAIM_REFUTED
    assert verdict.rationale == Rationale.CASE2_NO_RECEIPT
    assert verdict.evidence == ()

    # By payload digest and tick span
    by_payload = DisputeCase("N1", "N2", ClaimKind.DEMAND_FULFILLMENT,
                             payload_digest=content_hash(b"complete me"), tick_span=(0, 2))
    assert resolve_dispute(auditor, by_payload).outcome == Outcome.CLAIM_UPHELD

    beyond = DisputeCase("N1", "N2", ClaimKind.DEMAND_FULFILLMENT,
                         payload_digest=content_hash(b"complete me"), tick_span=(0, 100))
    verdict = resolve_dispute(auditor, beyond)
    assert verdict.outcome == Outcome.INDETERMINATE
    assert verdict.rationale == Rationale.SPAN_NOT_COVERED

    with pytest.raises(ValueError):
        DisputeCase("N1", "N2", ClaimKind.DEMAND_FULFILLMENT, payload_digest="ab")


def test_cross_check_archives(setting):

    auditor = setting.auditor()
    setting.publish(auditor, "N1")
    with pytest.raises(SpanNotCovered):
        cross_check_archives(auditor, "N1", "N2", (0, 2))

    setting.publish(auditor, "N2")
    report = cross_check_archives(auditor, "N1", "N2", (0, 2))
    assert report.consistent
    assert report.to_dict()["only_in_a"] == []

    with pytest.raises(SpanNotCovered):
        cross_check_archives(auditor, "N1", "N2", (0, 7))


def test_auditor_from_dict(setting):

    auditor = setting.auditor()
    setting.publish(auditor, "N1")
    setting.publish(auditor, "N2", now=9)
    state = auditor_to_dict(auditor)

    restored = auditor_from_dict(state, setting.store, setting.registry, setting.swarm_key)
    assert auditor_to_dict(restored) == state
    assert restored.covered_until("N1") == 6


def local_block(setting, network_id, tick):
    network = setting.networks[network_id]
    tx = Transaction(f"{network_id} tx {tick}".encode(), TxKind.LOCAL, network_id, tick)
    commit_transaction(network.ledger, tx, endorse(network, tx), setting.registry, tick)
    seal_block(network.ledger, tick)


def publish_next(setting, auditor, network_id, now):
    """Snapshot everything after the setting's first snapshot and ingest it"""
    network = setting.networks[network_id]
    sync_replicas(network)
    snapshot = capture_snapshot(network, f"{network_id}-p0", setting.snapshots[network_id].to_height, now)
    cid, key = setting.put(snapshot)
    ingest_snapshot(auditor, network_id, cid, key, setting.swarm_key, now)
    return snapshot


def test_late_receipt_is_not_evidence(setting):

    n1, n2 = setting.networks["N1"], setting.networks["N2"]
    late = initiate_cross_tx(n1, "N2", b"answered too late", 8, 2, setting.registry)
    assert late.invoke.deadline == 10
    request = n1.outbox[-1]
    n1.outbox = []
    seal_block(n1.ledger, 8)
    expire_sets(n1, 11)

    response = accept_and_receipt(n2, request, 12, setting.registry)
    seal_block(n2.ledger, 12)
    with pytest.raises(LateReceipt):
        complete_set(n1, response, 13, setting.registry)
    local_block(setting, "N1", 13)

    auditor = setting.auditor()
    setting.publish(auditor, "N1")
    setting.publish(auditor, "N2")
    source = publish_next(setting, auditor, "N1", 14)
    dest = publish_next(setting, auditor, "N2", 14)

    assert [r.set_id for r in source.incomplete_sets] == [late.set_id]
    assert dest.completed_sets == ()
    assert [(r.set_id, r.role, r.status) for r in dest.incomplete_sets] == \
        [(late.set_id, "destination", SetStatus.INCOMPLETE)]
    assert dest.incomplete_sets[0].receipt.logical_time == 12
    assert dest.incomplete_sets[0].deadline == 10

    for kind in [ClaimKind.DEMAND_FULFILLMENT, ClaimKind.DENY_RECEIPT]:
        verdict = resolve_dispute(auditor, DisputeCase("N1", "N2", kind, set_id=late.set_id))
        assert verdict.outcome != Outcome.CLAIM_UPHELD
        assert verdict.rationale == Rationale.CASE2_NO_RECEIPT
        assert verdict.evidence == ()

    report = cross_check_archives(auditor, "N1", "N2", (0, 12))
    assert report.consistent


@pytest.mark.parametrize("timeout", [2, 20])
def test_dispute_after_archived_span(setting, timeout):

    auditor = setting.auditor()
    setting.publish(auditor, "N1")
    setting.publish(auditor, "N2")

    n1, n2 = setting.networks["N1"], setting.networks["N2"]
    fresh = initiate_cross_tx(n1, "N2", b"after the archives", 10, timeout, setting.registry)
    request = n1.outbox[-1]
    n1.outbox = []
    seal_block(n1.ledger, 10)
    response = accept_and_receipt(n2, request, 11, setting.registry)
    seal_block(n2.ledger, 11)
    complete_set(n1, response, 12, setting.registry)
    seal_block(n1.ledger, 12)

    demand = DisputeCase("N1", "N2", ClaimKind.DEMAND_FULFILLMENT, set_id=fresh.set_id, filed_tick=13)
    verdict = resolve_dispute(auditor, demand)
    assert verdict.outcome == Outcome.INDETERMINATE
    assert verdict.rationale == Rationale.SPAN_NOT_COVERED

    # Only N1 has archived the invoke so far
    publish_next(setting, auditor, "N1", 13)
    assert resolve_dispute(auditor, demand).rationale == Rationale.CASE1_VALID_RECEIPT

    publish_next(setting, auditor, "N2", 13)
    verdict = resolve_dispute(auditor, demand)
    assert verdict.outcome == Outcome.CLAIM_UPHELD
    assert {c.network_id for c in verdict.evidence} == {"N1", "N2"}


def test_pending_set_beyond_coverage(setting):

    auditor = setting.auditor()
    n1 = setting.networks["N1"]
    pending = initiate_cross_tx(n1, "N2", b"still waiting", 10, 20, setting.registry)
    n1.outbox = []
    seal_block(n1.ledger, 10)
    setting.publish(auditor, "N1")
    setting.publish(auditor, "N2")
    publish_next(setting, auditor, "N1", 13)
    local_block(setting, "N2", 12)
    publish_next(setting, auditor, "N2", 13)

    # The invoke is archived, but a receipt may still arrive up to tick 30
    assert auditor.find_invoke(pending.set_id, "N1", "N2").deadline == 30
    demand = DisputeCase("N1", "N2", ClaimKind.DEMAND_FULFILLMENT, set_id=pending.set_id)
    assert resolve_dispute(auditor, demand).rationale == Rationale.SPAN_NOT_COVERED
