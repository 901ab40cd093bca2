"""Deterministic discrete-event world.

One tick is one scheduling quantum. Within a tick, queued events run first
(ordered by tick, then insertion sequence), then workload submissions, then
the end-of-tick work: block sealing, replica sync, set expiry, scheduler polls
with snapshot publication, and relay of outgoing interop messages.
"""

import heapq
from time import perf_counter

import numpy as np
from tqdm import tqdm
from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey

from intersnap_archive.definitions import TxKind, SetStatus, Direction, Decision, InterSnapError, \
    ConfigInvalid, AUDITOR_ID, ENVELOPE_PREFIX, PASSPHRASE_BYTES, SALT_BYTES
from intersnap_archive.ledger import NetworkConfig, Network, Transaction, derive_seed_bytes, \
    endorse, commit_transaction, seal_block, sync_replicas, sync_peer, discover_topology
from intersnap_archive.crosschain import IdentityRegistry, Relay, RelayDown, MalformedMessage, \
    AttestationRejected, DestQuorumUnreachable, SourceQuorumUnreachable, CommitRejected, UnknownSet, \
    LateReceipt, initiate_cross_tx, accept_and_receipt, complete_set, expire_sets, relay_deliver, \
    decode_message, compute_set_id
from intersnap_archive.snapshot import SchedulerConfig, SchedulerState, process_snapshot, \
    select_snapshot_peer, capture_snapshot, serialize_archive, compress_archive, parse_archive
from intersnap_archive.crypto import KeyWallet, derive_key, encrypt_archive, decrypt_archive, \
    key_fingerprint, wallet_put, wallet_get, wrap_for_destination, unwrap
from intersnap_archive.store import ContentStore, SwarmKey
from intersnap_archive.auditor import AuditorState, DisputeCase, ingest_snapshot, resolve_dispute
from intersnap_archive.bootstrap import bootstrap_peer_from_archive, restore_peer_from_local
from intersnap_archive.faults import FaultEvent, inject_fault, apply_fault
from intersnap_archive.metrics import MetricsReport
from intersnap_archive.util import canonical_bytes, get_error


class World:
    """Networks, relay, content store and auditor driven by one seeded clock

    Args:
        config (dict): Resolved scenario (defaults merged, see run.load_scenario)
        store_root (Path, optional): Persist the content store under this folder
        verbose (bool, optional): Print progress. Defaults to False.
    """

    def __init__(self, config, store_root=None, verbose=False):

        self.config = config
        self.verbose = verbose
        self.seed = config["seed"]
        self.rng = np.random.default_rng(self.seed)
        self.tick = 0
        self._queue = []
        self._seq = 0

        self.registry = IdentityRegistry()
        self.networks = {}
        for spec in config["networks"]:
            nid = spec["network_id"]
            if nid in self.networks or nid == AUDITOR_ID:
                raise ConfigInvalid(f"Network id {nid} is used twice or reserved")
            network = Network(NetworkConfig(nid, spec["peer_count"], spec.get("genesis_seed", 0)))
            self.networks[nid] = network
            self.registry.register_network(network)

        self.auditor_key = X25519PrivateKey.from_private_bytes(
            derive_seed_bytes("intersnap-envelope", AUDITOR_ID, self.seed))
        self.registry.register_network_key(AUDITOR_ID, self.auditor_key.public_key())

        relay = config["relay"]
        self.relay = Relay(relay["latency"], relay["jitter"], relay["drop_rate"],
                           [tuple(window) for window in relay.get("outages", [])])

        self.swarm_key = SwarmKey.generate(self.rng, list(self.networks) + [AUDITOR_ID])
        self.store = ContentStore(self.swarm_key, store_root)
        self.auditor = AuditorState(self.store, self.registry, self.swarm_key, AUDITOR_ID, self.auditor_key)
        self.wallets = {nid: KeyWallet(nid) for nid in self.networks}

        self.scheduler_configs = {}
        self.scheduler_states = {}
        for spec in config["networks"]:
            scheduler = {**config["scheduler"], **spec.get("scheduler", {})}
            nid = spec["network_id"]
            self.scheduler_configs[nid] = SchedulerConfig(scheduler["blocks_per_period"], scheduler["window"],
                                                          scheduler["poll_interval"])
            self.scheduler_states[nid] = SchedulerState(nid)

        self.metrics = MetricsReport()
        self.error_log = []
        self.trace = []
        self.verdicts = []
        self.fabrications = {}
        self.denials = []
        self.publications = {nid: [] for nid in self.networks}
        self.local_backups = {nid: [] for nid in self.networks}
        # Snapshots carried by each network's latest archive
        self.archive_windows = {nid: [] for nid in self.networks}
        self.initiated = {nid: [] for nid in self.networks}
        self.byzantine_planned = {nid: set() for nid in self.networks}
        self._transfers = {}

        for workload in config["workload"]:
            for key in ["network", "dest"]:
                if key in workload and workload[key] not in self.networks:
                    raise ConfigInvalid(f"Workload refers to unknown network {workload[key]}")
            if workload["kind"] == "cross" and workload.get("dest", workload["network"]) == workload["network"]:
                raise ConfigInvalid("Cross-chain workload needs a foreign dest network")

        for fault in config["faults"]:
            inject_fault(self, FaultEvent.from_dict(fault))
        for dispute in config["disputes"]:
            self.schedule(dispute["tick"], "dispute", dict(dispute))
        for bootstrap in config["bootstraps"]:
            self.schedule(bootstrap["tick"], "bootstrap", dict(bootstrap))

    # Event queue

    def schedule(self, tick, kind, data):
        heapq.heappush(self._queue, (tick, self._seq, kind, data))
        self._seq += 1

    def trace_event(self, event, **fields):
        self.trace.append({"tick": self.tick, "seq": len(self.trace), "event": event, **fields})

    def record_error(self, e, context):
        self.error_log.append(f"tick {self.tick}, {context}: {get_error(e)}")
        self.trace_event("error", context=context, code=getattr(e, "code", type(e).__name__))

    def run(self):
        """Run every tick of the scenario

        Returns:
            World: The same world, final state
        """

        for tick in tqdm(range(self.config["run_ticks"]), disable=not self.verbose,
                         desc=self.config.get("name", "scenario")):
            self.tick = tick
            self.process_events(tick)
            self.submit_workload(tick)
            self.end_of_tick()

        self.tick = self.config["run_ticks"]
        self.metrics.counters["events_pending_at_end"] = len(self._queue)
        return self

    def process_events(self, tick):
        handlers = {"deliver": self._deliver,
                    "fault": self._fault,
                    "recover_peer": self._recover_peer,
                    "network_up": self._network_up,
                    "dispute": self._dispute,
                    "bootstrap": self._bootstrap}
        while self._queue and self._queue[0][0] <= tick:
            _, _, kind, data = heapq.heappop(self._queue)
            handlers[kind](data)

    # Workload

    def submit_workload(self, tick):
        for workload in self.config["workload"]:
            start = workload.get("start", 0)
            end = workload.get("end", self.config["run_ticks"] - 1)
            if tick < start or tick > end or (tick - start) % workload.get("every", 1):
                continue
            for _ in range(workload.get("count", 1)):
                self.submit(workload)

    def submit(self, workload):
        """Submit one transaction from a workload entry

        Returns:
            bool: True if the transaction was committed at its origin
        """

        network = self.networks[workload["network"]]
        payload = self.rng.bytes(workload.get("payload_bytes", self.config["payload_bytes"]))
        self.metrics.counters["tx_submitted"] += 1

        if workload["kind"] == "local":
            tx = Transaction(payload, TxKind.LOCAL, network.network_id, self.tick)
            outcome = commit_transaction(network.ledger, tx, endorse(network, tx), self.registry, self.tick)
            if not outcome.committed:
                self.metrics.counters["tx_rejected"] += 1
                self.trace_event("submit_rejected", network=network.network_id, reason=outcome.reason)
                return False
            self.metrics.counters["tx_local_committed"] += 1
            return True

        try:
            tset = initiate_cross_tx(network, workload["dest"], payload, self.tick,
                                     self.config["crosschain"]["timeout"], self.registry)
        except (SourceQuorumUnreachable, CommitRejected) as e:
            self.metrics.counters["tx_rejected"] += 1
            self.trace_event("submit_rejected", network=network.network_id, reason=e.code)
            return False

        self.initiated[network.network_id].append(tset.set_id)
        self.metrics.counters["sets_initiated"] += 1
        self.trace_event("set_initiated", network=network.network_id, dest=workload["dest"], set_id=tset.set_id)
        return True

    # End of tick

    def end_of_tick(self):
        self.seal_and_sync()

        for network in self.networks.values():
            for tset in expire_sets(network, self.tick):
                self.metrics.counters["sets_expired"] += 1
                self.trace_event("set_expired", network=network.network_id, set_id=tset.set_id)

        for nid, network in self.networks.items():
            if self.tick % self.scheduler_configs[nid].poll_interval == 0:
                self.poll_snapshot(network)

        self.seal_and_sync()
        self.flush_outboxes()

    def seal_and_sync(self):
        for network in self.networks.values():
            block = seal_block(network.ledger, self.tick)
            if block is not None:
                self.trace_event("block_sealed", network=network.network_id, height=block.height,
                                 block_hash=block.block_hash, transactions=len(block.transactions))
            sync_replicas(network)

    def flush_outboxes(self):
        for network in self.networks.values():
            outbox, network.outbox = network.outbox, []
            for msg in outbox:
                try:
                    result = relay_deliver(msg, self)
                except RelayDown:
                    self.metrics.counters["messages_lost"] += 1
                    self.trace_event("message_lost", reason="relay_down", source=msg.source_network,
                                     dest=msg.dest_network, direction=msg.direction.value)
                    continue
                if not result.delivered:
                    self.metrics.counters["messages_lost"] += 1
                    self.trace_event("message_lost", reason=result.reason, source=msg.source_network,
                                     dest=msg.dest_network, direction=msg.direction.value)
                else:
                    self.trace_event("message_sent", source=msg.source_network, dest=msg.dest_network,
                                     direction=msg.direction.value, deliver_tick=result.deliver_tick)

    # Snapshot pipeline

    def poll_snapshot(self, network):
        """One scheduler poll: trigger and publish a snapshot when growth reaches the threshold

        Returns:
            bool: True if a snapshot was published
        """

        nid = network.network_id
        state = self.scheduler_states[nid]
        topology = discover_topology(network)
        ready = [entry for entry in topology if entry.ready]
        if not ready:
            return False

        height = max(entry.height for entry in ready)
        if height <= state.last_snapshot_height:
            return False

        decision, new_state = process_snapshot(state, height, self.scheduler_configs[nid].threshold)
        if decision == Decision.SKIP:
            return False

        to_height = self.publish_snapshot(network, topology, state.last_snapshot_height)
        if to_height is None:
            return False
        self.scheduler_states[nid] = SchedulerState(nid, to_height)
        return True

    def _stage(self, stage, context, func):
        """Run one pipeline stage, counting the attempt and its outcome

        Returns:
            tuple: (passed, result, seconds)
        """
        self.metrics.attempt(stage)
        start = perf_counter()
        try:
            result = func()
        except Exception as e:
            self.metrics.failed(stage)
            self.record_error(e, f"{stage} stage for {context}")
            return False, None, perf_counter() - start
        self.metrics.passed(stage)
        return True, result, perf_counter() - start

    def publish_snapshot(self, network, topology, from_height):
        """Archive, compress, encrypt and upload one snapshot, record it on the
        ledger, hand it to the auditor and share it with every other network

        Returns:
            int or None: Snapshot to_height, None if a stage up to the upload failed
        """

        nid = network.network_id
        if self.verbose:
            print(f"... publishing snapshot of {nid} at tick {self.tick}")

        def archive():
            peer_id = select_snapshot_peer(topology, self.rng)
            snapshot = capture_snapshot(network, peer_id, from_height, self.tick)
            snapshots = self.archive_window(snapshot) + [snapshot]
            return snapshot, snapshots, serialize_archive(snapshots)

        ok, result, capture_s = self._stage("archive", nid, archive)
        if not ok:
            return None
        snapshot, snapshots, plaintext = result
        first = snapshots[0]

        ok, compressed, compress_s = self._stage("compress", nid, lambda: compress_archive(plaintext))
        if not ok:
            return None

        def encrypt():
            passphrase = self.rng.bytes(PASSPHRASE_BYTES)
            salt = self.rng.bytes(SALT_BYTES)
            key = derive_key(passphrase, salt, self.config["archive"]["kdf_iterations"])
            return key, encrypt_archive(compressed, key, self.rng).to_bytes()

        ok, result, encrypt_s = self._stage("encrypt", nid, encrypt)
        if not ok:
            return None
        key, data = result

        ok, cid, store_put_s = self._stage("store_upload", nid, lambda: self.store.put(data, self.swarm_key, nid))
        if not ok:
            return None

        wallet_put(self.wallets[nid], cid.text, key)
        self.archive_windows[nid] = snapshots
        if self.config["archive"]["local_backups"]:
            self.local_backups[nid].append((snapshot.epoch, compressed))
        publication = {"network_id": nid, "cid": cid.text, "snapshot_id": snapshot.snapshot_id,
                       "epoch": snapshot.epoch, "from_height": first.from_height,
                       "to_height": snapshot.to_height, "snapshot_count": len(snapshots), "tick": self.tick,
                       "key_fingerprint": key_fingerprint(key)}
        self.publications[nid].append(publication)
        self.record_archive(network, publication)

        self.metrics.snapshots.append({
            "network_id": nid, "tick": self.tick, "snapshot_id": snapshot.snapshot_id, "cid": cid.text,
            "epoch": snapshot.epoch, "from_height": snapshot.from_height, "to_height": snapshot.to_height,
            "block_count": len(snapshot.blocks), "archived_transactions": snapshot.transaction_count,
            "archive_snapshots": len(snapshots),
            "plaintext_bytes": len(plaintext), "compressed_bytes": len(compressed), "encrypted_bytes": len(data),
            "capture_s": capture_s, "compress_s": compress_s, "encrypt_s": encrypt_s, "store_put_s": store_put_s,
            "total_s": capture_s + compress_s + encrypt_s + store_put_s})
        self.trace_event("snapshot_published", network=nid, cid=cid.text, snapshot_id=snapshot.snapshot_id,
                         from_height=snapshot.from_height, to_height=snapshot.to_height, epoch=snapshot.epoch)

        metadata = {"network_id": nid, "from_height": first.from_height,
                    "to_height": snapshot.to_height, "epoch": snapshot.epoch}
        self.deliver_to_auditor(nid, cid, key, metadata)

        if self.config["archive"]["share_archives"]:
            for other in self.networks:
                if other != nid:
                    self._stage("interop_initiate", f"{nid} to {other}",
                                lambda other=other: self.share_archive(network, other, cid, key, metadata))

        return snapshot.to_height

    def archive_window(self, snapshot):
        """Earlier snapshots to carry in the archive of this snapshot: up to
        snapshots_per_archive - 1 of them, same epoch, ending where it starts
        """
        window = self.archive_windows[snapshot.network_id]
        keep = self.config["archive"]["snapshots_per_archive"] - 1
        if keep < 1 or not window or window[-1].epoch != snapshot.epoch \
                or window[-1].to_height != snapshot.from_height:
            return []
        return list(window[-keep:])

    def record_archive(self, network, publication):
        """Commit the CID, height span, epoch and key fingerprint as a local transaction"""
        record = {k: publication[k] for k in ["cid", "from_height", "to_height", "epoch", "key_fingerprint"]}
        tx = Transaction(canonical_bytes({"archive_record": record}), TxKind.LOCAL, network.network_id, self.tick)
        outcome = commit_transaction(network.ledger, tx, endorse(network, tx), self.registry, self.tick)
        if outcome.committed:
            self.metrics.counters["archive_records"] += 1
        else:
            self.error_log.append(f"tick {self.tick}, archive record for {publication['cid']} "
                                  f"not committed at {network.network_id}: {outcome.reason}")

    def deliver_to_auditor(self, nid, cid, key, metadata):
        try:
            envelope = wrap_for_destination(cid, key, AUDITOR_ID, self.registry, self.rng, metadata)
            cid_received, key_received, _ = unwrap(envelope.to_bytes(), self.auditor.private_key)
            ingest_snapshot(self.auditor, nid, cid_received, key_received, self.swarm_key, now=self.tick)
        except InterSnapError as e:
            self.metrics.counters["auditor_rejections"] += 1
            self.record_error(e, f"auditor ingestion of {cid.text} from {nid}")
            return False
        self.trace_event("auditor_ingested", network=nid, cid=cid.text)
        return True

    def share_archive(self, network, dest, cid, key, metadata):
        envelope = wrap_for_destination(cid, key, dest, self.registry, self.rng, metadata)
        tset = initiate_cross_tx(network, dest, ENVELOPE_PREFIX + envelope.to_bytes(), self.tick,
                                 self.config["crosschain"]["timeout"], self.registry)
        row = {"source_network": network.network_id, "dest_network": dest, "set_id": tset.set_id,
               "cid": cid.text, "initiated_tick": self.tick, "received_tick": None, "completed_tick": None,
               "response_ticks": None, "download_s": None, "decrypt_s": None}
        self._transfers[tset.set_id] = row
        self.metrics.transfers.append(row)
        self.trace_event("archive_shared", network=network.network_id, dest=dest, cid=cid.text, set_id=tset.set_id)
        return tset

    # Event handlers

    def _deliver(self, data):
        try:
            msg = decode_message(data["wire"])
        except MalformedMessage as e:
            self.record_error(e, "relay delivery")
            return

        network = self.networks.get(msg.dest_network)
        if network is None or network.is_down():
            self.metrics.counters["messages_lost"] += 1
            self.trace_event("message_lost", reason="network_down", source=msg.source_network,
                             dest=msg.dest_network, direction=msg.direction.value)
            return

        if msg.direction == Direction.REQUEST:
            self._accept(network, msg)
        else:
            self._complete(network, msg)

    def _accept(self, network, msg):
        try:
            response = accept_and_receipt(network, msg, self.tick, self.registry)
        except (AttestationRejected, DestQuorumUnreachable) as e:
            self.metrics.counters["requests_rejected"] += 1
            self.trace_event("request_rejected", network=network.network_id, source=msg.source_network,
                             reason=getattr(e, "reason", e.code))
            return

        invoke = msg.transaction()
        set_id = compute_set_id(invoke.tx_id)
        self.metrics.counters["receipts_issued"] += 1
        self.trace_event("receipt_issued", network=network.network_id, set_id=set_id,
                         receipt_tx=response.transaction().tx_id)

        if invoke.payload.startswith(ENVELOPE_PREFIX):
            self.receive_archive(network, invoke.payload[len(ENVELOPE_PREFIX):], set_id)

    def receive_archive(self, network, envelope_bytes, set_id):
        """Unwrap a shared archive envelope, fetch, decrypt and parse the archive,
        and keep its key in the receiving network's wallet
        """

        nid = network.network_id
        try:
            cid, key, metadata = unwrap(envelope_bytes, network.envelope_key)
            start = perf_counter()
            data = self.store.get(cid, self.swarm_key, nid)
            download_s = perf_counter() - start
            start = perf_counter()
            archive = parse_archive(decrypt_archive(data, key))
            decrypt_s = perf_counter() - start
            if archive.network_id != metadata.get("network_id"):
                raise ValueError(f"Shared archive {cid.text} belongs to {archive.network_id}")
        except (InterSnapError, ValueError) as e:
            self.record_error(e, f"receiving shared archive at {nid}")
            return False

        wallet_put(self.wallets[nid], cid.text, key)
        row = self._transfers.get(set_id)
        if row is not None:
            row.update({"received_tick": self.tick, "download_s": download_s, "decrypt_s": decrypt_s})
        self.trace_event("archive_received", network=nid, cid=cid.text, source=archive.network_id)
        return True

    def _complete(self, network, msg):
        try:
            tset = complete_set(network, msg, self.tick, self.registry)
        except (LateReceipt, UnknownSet) as e:
            self.metrics.counters[e.code] += 1
            self.trace_event(e.code, network=network.network_id, source=msg.source_network)
            return

        if tset.status == SetStatus.COMPLETE and tset.completed_tick == self.tick:
            self.metrics.counters["sets_completed"] += 1
            self.trace_event("set_completed", network=network.network_id, set_id=tset.set_id)
            row = self._transfers.get(tset.set_id)
            if row is not None:
                row.update({"completed_tick": self.tick, "response_ticks": self.tick - row["initiated_tick"]})
        elif tset.status == SetStatus.PENDING:
            self.trace_event("receipt_rejected", network=network.network_id, set_id=tset.set_id,
                             reason=tset.rejected_receipts[-1][1] if tset.rejected_receipts else "")

    def _fault(self, data):
        fault = data["fault"]
        if self.verbose:
            print(f"... injecting {fault.kind.value} at tick {self.tick}")
        apply_fault(self, fault)

    def _recover_peer(self, data):
        network = self.networks[data["network"]]
        network.peers[data["peer"]].ready = True
        sync_peer(network, data["peer"])
        self.trace_event("peer_recovered", network=network.network_id, peer=data["peer"])

    def _network_up(self, data):
        network = self.networks[data["network"]]
        for peer in network.peers.values():
            peer.ready = True
        sync_replicas(network)
        self.trace_event("network_up", network=network.network_id, height=network.ledger.height)

    def dispute_case(self, dispute):
        """Build a DisputeCase from a scenario dispute entry

        Raises:
            ValueError: The set reference can't be resolved
        """

        ref = dispute["set_ref"]
        common = {"claimant": dispute["claimant"], "respondent": dispute["respondent"],
                  "kind": dispute["kind"], "filed_tick": self.tick}

        if "set_id" in ref:
            return DisputeCase(set_id=ref["set_id"], **common)
        if "initiated" in ref:
            initiated = self.initiated.get(ref["network"], [])
            if ref["initiated"] >= len(initiated):
                raise ValueError(f"{ref['network']} initiated {len(initiated)} sets, "
                                 f"no set with index {ref['initiated']}")
            return DisputeCase(set_id=initiated[ref["initiated"]], **common)
        if "fabrication" in ref:
            if ref["fabrication"] not in self.fabrications:
                raise ValueError(f"No fabrication labelled {ref['fabrication']}")
            fabrication = self.fabrications[ref["fabrication"]]
            span = ref.get("span", [fabrication["tick"], fabrication["tick"]])
            return DisputeCase(payload_digest=fabrication["payload_digest"], tick_span=span, **common)
        return DisputeCase(payload_digest=ref["payload_digest"], tick_span=ref["span"], **common)

    def _dispute(self, dispute):
        try:
            case = self.dispute_case(dispute)
        except ValueError as e:
            self.record_error(e, "dispute filing")
            return

        verdict = resolve_dispute(self.auditor, case, self.registry)
        self.verdicts.append({"tick": self.tick, "case": case.to_dict(), "verdict": verdict.to_dict()})
        self.metrics.verdicts.append({"tick": self.tick, "case_id": case.case_id, "claimant": case.claimant,
                                      "respondent": case.respondent, "kind": case.kind.value,
                                      "outcome": verdict.outcome.value, "rationale": verdict.rationale.value,
                                      "evidence_count": len(verdict.evidence)})
        self.trace_event("verdict", case_id=case.case_id, outcome=verdict.outcome.value,
                         rationale=verdict.rationale.value)
        if self.verbose:
            print(f"... dispute {case.case_id}: {verdict.outcome.value} ({verdict.rationale.value})")

    def _bootstrap(self, data):
        """Restore a peer by replaying every archive of the network up to an epoch,
        fetched from the store (default) or from local backups
        """

        network = self.networks[data["network"]]
        nid = network.network_id
        epoch = data.get("epoch", max(network.epoch - 1, 0))
        source = data.get("source", "store")

        row = {"network_id": nid, "peer_id": data["peer"], "tick": self.tick, "source": source,
               "archives": 0, "restored_height": None, "blocks": None, "ok": False, "error": "",
               "restore_s": None}
        start = perf_counter()
        try:
            if source == "local":
                backups = [b for e, b in self.local_backups[nid] if e <= epoch]
                for compressed in backups:
                    peer = restore_peer_from_local(network, compressed, data["peer"])
                row["archives"] = len(backups)
            else:
                publications = [p for p in self.publications[nid] if p["epoch"] <= epoch]
                for publication in publications:
                    key = wallet_get(self.wallets[nid], publication["cid"])
                    peer = bootstrap_peer_from_archive(network, publication["cid"], key, self.store,
                                                       self.swarm_key, data["peer"])
                row["archives"] = len(publications)
            if row["archives"] == 0:
                raise ValueError(f"No archives of {nid} up to epoch {epoch}")
        except (InterSnapError, ValueError, KeyError) as e:
            row["error"] = getattr(e, "code", type(e).__name__)
            row["restore_s"] = perf_counter() - start
            self.metrics.bootstraps.append(row)
            self.record_error(e, f"bootstrap of {data['peer']} at {nid}")
            return

        row.update({"ok": True, "restored_height": peer.height, "blocks": len(peer.blocks),
                    "restore_s": perf_counter() - start})
        self.metrics.bootstraps.append(row)

        state = self.scheduler_states[nid]
        if network.ledger.height >= peer.height:
            self.scheduler_states[nid] = SchedulerState(nid, max(state.last_snapshot_height,
                                                                 min(peer.height, network.ledger.height)))
        self.trace_event("peer_bootstrapped", network=nid, peer=peer.peer_id, height=peer.height,
                         source=source, archives=row["archives"])
