"""Trusted auditor: ingests every network's snapshot archives and resolves
disputes from the archived receipts.

A completed set with a receipt endorsed by the respondent's quorum settles a
dispute on its own (case 1). When no archive of either party holds a matching
completed set, and the archives cover the claim, the set was never completed
(case 2).
"""

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

from intersnap_archive.definitions import ClaimKind, Outcome, Rationale, SetStatus, TxKind, InterSnapError, \
    AUDITOR_ID
from intersnap_archive.crosschain import compute_set_id
from intersnap_archive.crypto import decrypt_archive, KeyWallet, wallet_put, wallet_get, AuthFailure
from intersnap_archive.ledger import verify_chain
from intersnap_archive.snapshot import parse_archive, verify_set_record, MalformedArchive
from intersnap_archive.store import StoreError, FetchFailure, ContentId
from intersnap_archive.util import content_hash, canonical_json


class AuditorError(InterSnapError):
    code = "auditor_error"


class SpanNotCovered(AuditorError):
    code = "span_not_covered"


class ArchiveEntry(NamedTuple):
    cid: ContentId
    archive: object
    tick: int
    epoch: int


class QuarantineEntry(NamedTuple):
    network_id: str
    cid: ContentId
    archive: object
    reason: str
    tick: int


class AuditorState:

    def __init__(self, store, registry, swarm_key, auditor_id=AUDITOR_ID, private_key=None):
        self.store = store
        self.registry = registry
        self.swarm_key = swarm_key
        self.auditor_id = auditor_id
        self.private_key = private_key
        self.index = {}
        self.quarantine = []
        self.log = []
        self.wallet = KeyWallet(auditor_id)

    def archives(self, network_id):
        return self.index.get(network_id, [])

    def covered_until(self, network_id):
        """Last tick whose ledger activity this network's ingested archives
        account for, -1 if none. A snapshot captured at tick t holds every
        block sealed before t.
        """
        ticks = [b.tick for entry in self.archives(network_id) for b in entry.archive.blocks]
        ticks += [s.capture_tick - 1 for entry in self.archives(network_id) for s in entry.archive.snapshots]
        return max(ticks) if ticks else -1

    def flagged_incomplete(self, *network_ids):
        """Set ids any of these networks archived as incomplete"""
        return {record.set_id
                for nid in network_ids for entry in self.archives(nid)
                for snapshot in entry.archive.snapshots for record in snapshot.incomplete_sets}

    def find_invoke(self, set_id, *network_ids):
        """The archived cross-chain invoke of a set, None if no archive holds it"""
        for nid in network_ids:
            for entry in self.archives(nid):
                for block in entry.archive.blocks:
                    for tx, _ in block.transactions:
                        if tx.kind == TxKind.CROSS_INVOKE and compute_set_id(tx.tx_id) == set_id:
                            return tx
                for snapshot in entry.archive.snapshots:
                    for record in snapshot.completed_sets + snapshot.incomplete_sets:
                        if record.set_id == set_id:
                            return record.invoke
        return None


def auditor_to_dict(auditor):
    """Persistable auditor state. Archives are referenced by CID, keys come from the wallet"""
    return {"auditor_id": auditor.auditor_id,
            "index": {nid: [{"cid": e.cid.text, "tick": e.tick, "epoch": e.epoch,
                             "from_height": e.archive.from_height, "to_height": e.archive.to_height}
                            for e in entries]
                      for nid, entries in sorted(auditor.index.items())},
            "quarantine": [{"network_id": q.network_id, "cid": q.cid.text, "reason": q.reason, "tick": q.tick}
                           for q in auditor.quarantine],
            "log": [list(entry) for entry in auditor.log],
            "wallet": auditor.wallet.to_dict()}


def verify_archive(archive, registry):
    """Problems found in an archive: broken block links or hashes, and set
    records whose endorsements don't verify

    Returns:
        list: Problem descriptions (empty if the archive verifies)
    """

    problems = []
    blocks = archive.blocks
    bad = verify_chain(blocks)
    if bad is not None:
        problems.append(f"block {blocks[bad].height} fails hash chain verification")
    for snapshot in archive.snapshots:
        if snapshot.network_id != archive.network_id:
            problems.append(f"snapshot {snapshot.snapshot_id} belongs to {snapshot.network_id}")
        for record in snapshot.completed_sets + snapshot.incomplete_sets:
            reason = verify_set_record(record, registry)
            if reason:
                problems.append(f"set {record.set_id}: {reason}")
    return problems


def ingest_snapshot(auditor, network_id, cid, key, swarm_key, now=0):
    """Fetch, decrypt, parse and verify an archive, then index it

    Args:
        auditor (AuditorState): Auditor
        network_id (str): Publishing network
        cid (ContentId or str): Archive CID
        key (DerivedKey): Archive key, delivered by envelope
        swarm_key (SwarmKey): Store swarm key
        now (int, optional): Current tick

    Raises:
        FetchFailure: Archive can't be fetched (missing, corrupted or access denied)
        AuthFailure: Key doesn't decrypt the archive
        MalformedArchive: Archive can't be parsed or its contents don't verify (quarantined)

    Returns:
        AuditorState: The same auditor, updated
    """

    cid = cid if isinstance(cid, ContentId) else ContentId.from_text(cid)
    if any(entry.cid == cid for entry in auditor.archives(network_id)):
        return auditor

    try:
        data = auditor.store.get(cid, swarm_key, auditor.auditor_id)
    except FetchFailure as e:
        auditor.log.append((now, network_id, cid.text, e.code))
        raise
    except StoreError as e:
        auditor.log.append((now, network_id, cid.text, e.code))
        raise FetchFailure(str(e)) from e

    try:
        plaintext = decrypt_archive(data, key)
    except AuthFailure as e:
        auditor.log.append((now, network_id, cid.text, e.code))
        raise

    try:
        archive = parse_archive(plaintext)
    except MalformedArchive as e:
        auditor.quarantine.append(QuarantineEntry(network_id, cid, None, str(e), now))
        auditor.log.append((now, network_id, cid.text, e.code))
        raise

    problems = []
    if archive.network_id != network_id:
        problems.append(f"archive belongs to {archive.network_id}")
    problems += verify_archive(archive, auditor.registry)
    if problems:
        auditor.quarantine.append(QuarantineEntry(network_id, cid, archive, "; ".join(problems), now))
        auditor.log.append((now, network_id, cid.text, "quarantined"))
        raise MalformedArchive(f"Archive {cid.text} quarantined: {problems[0]}")

    wallet_put(auditor.wallet, cid.text, key)
    auditor.index.setdefault(network_id, []).append(
        ArchiveEntry(cid, archive, now, archive.snapshots[-1].epoch))
    auditor.log.append((now, network_id, cid.text, "ingested"))
    return auditor


def auditor_from_dict(state, store, registry, swarm_key, private_key=None):
    """Rebuild an auditor from auditor_to_dict output by re-ingesting its archives"""

    auditor = AuditorState(store, registry, swarm_key, state["auditor_id"], private_key)
    wallet = KeyWallet.from_dict(state["wallet"])
    for network_id, entries in state["index"].items():
        for entry in entries:
            ingest_snapshot(auditor, network_id, entry["cid"], wallet_get(wallet, entry["cid"]),
                            swarm_key, now=entry["tick"])
    auditor.log = [tuple(entry) for entry in state["log"]]
    return auditor


@dataclass(frozen=True)
class DisputeCase:
    claimant: str
    respondent: str
    kind: ClaimKind
    set_id: Optional[str] = None
    payload_digest: Optional[str] = None
    tick_span: Optional[tuple] = None
    filed_tick: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", ClaimKind(self.kind))
        if self.set_id is None and (self.payload_digest is None or self.tick_span is None):
            raise ValueError("A dispute references a set id, or a payload digest and a tick span")
        if self.tick_span is not None:
            object.__setattr__(self, "tick_span", tuple(self.tick_span))

    @property
    def case_id(self):
        return content_hash(canonical_json(self.to_dict(with_id=False)))[:16]

    def to_dict(self, with_id=True):
        d = {"claimant": self.claimant,
             "respondent": self.respondent,
             "kind": self.kind.value,
             "set_id": self.set_id,
             "payload_digest": self.payload_digest,
             "tick_span": list(self.tick_span) if self.tick_span else None,
             "filed_tick": self.filed_tick}
        if with_id:
            d["case_id"] = self.case_id
        return d


class Citation(NamedTuple):
    network_id: str
    cid: str
    snapshot_id: str
    set_id: str


@dataclass(frozen=True)
class Verdict:
    case_id: str
    outcome: Outcome
    rationale: Rationale
    evidence: tuple = field(default_factory=tuple)

    def to_dict(self):
        return {"case_id": self.case_id,
                "outcome": self.outcome.value,
                "rationale": self.rationale.value,
                "evidence": [c._asdict() for c in self.evidence]}


def _matches(record, case):
    parties = {case.claimant, case.respondent}
    if {record.invoke.origin_network, record.invoke.dest_network} != parties:
        return False
    if case.set_id is not None:
        return record.set_id == case.set_id
    start, end = case.tick_span
    return content_hash(record.invoke.payload) == case.payload_digest \
        and start <= record.invoke.logical_time <= end


def _covered(auditor, case):
    parties = [case.claimant, case.respondent]
    if case.set_id is None:
        return all(auditor.covered_until(nid) >= case.tick_span[1] for nid in parties)
    invoke = auditor.find_invoke(case.set_id, *parties)
    if invoke is None:
        return False
    # A receipt can land as late as the deadline
    last_tick = invoke.deadline if invoke.deadline >= 0 else invoke.logical_time
    return all(auditor.covered_until(nid) >= last_tick for nid in parties)


def resolve_dispute(auditor, case, registry=None):
    """Verdict for a dispute, from the archives of both parties

    Args:
        auditor (AuditorState): Auditor
        case (DisputeCase): Dispute
        registry (IdentityRegistry, optional): Registry used to re-verify evidence.
            Defaults to the auditor's registry.

    Returns:
        Verdict: Verdict with citations of every matching completed set. Sets
            either party archived as incomplete are never evidence
    """

    registry = registry or auditor.registry
    flagged = auditor.flagged_incomplete(case.claimant, case.respondent)

    evidence = []
    forged = False
    for network_id in sorted({case.claimant, case.respondent}):
        for entry in auditor.archives(network_id):
            for snapshot in entry.archive.snapshots:
                for record in snapshot.completed_sets:
                    if record.set_id in flagged or not _matches(record, case):
                        continue
                    if verify_set_record(record, registry) is None:
                        evidence.append((Citation(network_id, entry.cid.text, snapshot.snapshot_id, record.set_id),
                                         record))
                    else:
                        forged = True

    for q in auditor.quarantine:
        if q.archive is None or q.network_id not in (case.claimant, case.respondent):
            continue
        for snapshot in q.archive.snapshots:
            if any(_matches(r, case) for r in snapshot.completed_sets):
                forged = True

    citations = tuple(c for c, _ in evidence)

    if evidence:
        if case.kind == ClaimKind.DEMAND_FULFILLMENT:
            # Upheld when the respondent is the party whose quorum signed the receipt
            receipted_by_respondent = any(r.invoke.dest_network == case.respondent for _, r in evidence)
            outcome = Outcome.CLAIM_UPHELD if receipted_by_respondent else Outcome.CLAIM_REFUTED
        else:
            outcome = Outcome.CLAIM_REFUTED
        return Verdict(case.case_id, outcome, Rationale.CASE1_VALID_RECEIPT, citations)

    if forged:
        outcome = Outcome.CLAIM_REFUTED if case.kind == ClaimKind.DEMAND_FULFILLMENT else Outcome.INDETERMINATE
        return Verdict(case.case_id, outcome, Rationale.ENDORSEMENT_FAILURE)

    if not _covered(auditor, case):
        return Verdict(case.case_id, Outcome.INDETERMINATE, Rationale.SPAN_NOT_COVERED)

    if case.kind == ClaimKind.DEMAND_FULFILLMENT:
        return Verdict(case.case_id, Outcome.CLAIM_REFUTED, Rationale.CASE2_NO_RECEIPT)
    return Verdict(case.case_id, Outcome.INDETERMINATE, Rationale.CASE2_NO_RECEIPT)


@dataclass(frozen=True)
class ConsistencyReport:
    network_a: str
    network_b: str
    span: tuple
    only_in_a: tuple
    only_in_b: tuple
    mismatched: tuple

    @property
    def consistent(self):
        return not (self.only_in_a or self.only_in_b or self.mismatched)

    def to_dict(self):
        return {"network_a": self.network_a, "network_b": self.network_b,
                "span": list(self.span),
                "only_in_a": list(self.only_in_a), "only_in_b": list(self.only_in_b),
                "mismatched": list(self.mismatched)}


def _completed_between(auditor, network_id, other, span, flagged=frozenset()):
    start, end = span
    records = {}
    for entry in auditor.archives(network_id):
        for snapshot in entry.archive.snapshots:
            for record in snapshot.completed_sets:
                if record.status != SetStatus.COMPLETE or record.set_id in flagged:
                    continue
                if {record.invoke.origin_network, record.invoke.dest_network} != {network_id, other}:
                    continue
                if start <= record.invoke.logical_time <= end:
                    records.setdefault(record.set_id, record)
    return records


def cross_check_archives(auditor, network_a, network_b, span):
    """Completed sets between two networks held by only one of them, and sets
    whose archived endorsements differ between them

    Args:
        auditor (AuditorState): Auditor
        network_a (str): First network
        network_b (str): Second network
        span (tuple): Inclusive tick span of invoke ticks

    Raises:
        SpanNotCovered: Either network's archives end before the span does

    Returns:
        ConsistencyReport: Report
    """

    span = tuple(span)
    for nid in (network_a, network_b):
        if auditor.covered_until(nid) < span[1]:
            raise SpanNotCovered(f"Archives of {nid} end at tick {auditor.covered_until(nid)}, span ends at {span[1]}")

    # Sets either side flagged incomplete are settled as expired, not compared
    flagged = auditor.flagged_incomplete(network_a, network_b)
    a = _completed_between(auditor, network_a, network_b, span, flagged)
    b = _completed_between(auditor, network_b, network_a, span, flagged)

    mismatched = []
    for set_id in sorted(set(a) & set(b)):
        ra, rb = a[set_id], b[set_id]
        if ra.invoke_endorsements != rb.invoke_endorsements or ra.receipt != rb.receipt \
                or ra.receipt_endorsements != rb.receipt_endorsements:
            mismatched.append(set_id)

    return ConsistencyReport(network_a, network_b, span,
                             tuple(sorted(set(a) - set(b))),
                             tuple(sorted(set(b) - set(a))),
                             tuple(mismatched))
