"""Fault injection. Each fault kind has a handler named in data/fault_handlers.json.

Faults act on peers, ledgers and the relay only. The content store and the
key wallets are outside every fault's reach.
"""

import json
from dataclasses import dataclass, field
from functools import lru_cache

from intersnap_archive.config import open_data_file
from intersnap_archive.definitions import FaultKind, TxKind, InvalidFault
from intersnap_archive.crosschain import receipt_payload
from intersnap_archive.ledger import Transaction, EndorsementSet, endorse, commit_transaction, \
    truncate_ledger, sync_peer, quorum_threshold
from intersnap_archive.snapshot import SchedulerState
from intersnap_archive.store import survive_fault, custody_digest
from intersnap_archive.util import content_hash


@dataclass(frozen=True)
class FaultEvent:
    kind: FaultKind
    tick: int
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", FaultKind(self.kind))
        except ValueError:
            raise InvalidFault(f"Unknown fault kind {self.kind}")

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], d["tick"], dict(d.get("params", {})))

    def to_dict(self):
        return {"kind": self.kind.value, "tick": self.tick, "params": self.params}


def byzantine_cap(peer_count):
    """Most Byzantine peers a network may hold at once"""
    return max(0, peer_count // 3 - 1)


@lru_cache(maxsize=None)
def fault_handlers():
    with open_data_file("fault_handlers.json", this_repo=True) as f:
        return json.load(f)


def _network(world, fault, key="network"):
    nid = fault.params.get(key)
    if nid not in world.networks:
        raise InvalidFault(f"{fault.kind.value}: unknown network {nid!r}")
    return world.networks[nid]


def _peer(world, fault):
    network = _network(world, fault)
    pid = fault.params.get("peer")
    if pid not in network.peers:
        raise InvalidFault(f"{fault.kind.value}: unknown peer {pid!r} of {network.network_id}")
    return network, network.peers[pid]


def _int_param(fault, key, default=None, minimum=None):
    value = fault.params.get(key, default)
    if not isinstance(value, int) or isinstance(value, bool):
        raise InvalidFault(f"{fault.kind.value}: {key} must be an integer")
    if minimum is not None and value < minimum:
        raise InvalidFault(f"{fault.kind.value}: {key} must be at least {minimum}")
    return value


def validate_fault(world, fault):
    """Check a fault against the world it will be injected into

    Args:
        world (World): World
        fault (FaultEvent): Fault

    Raises:
        InvalidFault: Unknown target, bad parameters, trigger in the past,
            or too many Byzantine peers in one network
    """

    if not isinstance(fault.tick, int) or fault.tick < world.tick:
        raise InvalidFault(f"{fault.kind.value}: trigger tick {fault.tick} is in the past")

    kind = fault.kind

    if kind == FaultKind.PEER_CRASH:
        _peer(world, fault)
        if "recover_tick" in fault.params:
            _int_param(fault, "recover_tick", minimum=fault.tick + 1)

    elif kind == FaultKind.NETWORK_CRASH_WITH_DATA_LOSS:
        _network(world, fault)
        _int_param(fault, "retain_height", minimum=-1)
        _int_param(fault, "down_ticks", default=1, minimum=0)

    elif kind == FaultKind.MALICIOUS_FABRICATION:
        network = _network(world, fault)
        target = _network(world, fault, "target")
        if target.network_id == network.network_id:
            raise InvalidFault("malicious_fabrication: target must be a foreign network")
        _int_param(fault, "payload_bytes", default=world.config["payload_bytes"], minimum=1)

    elif kind == FaultKind.RECEIPT_DENIAL:
        _network(world, fault)
        _network(world, fault, "counterparty")
        if not isinstance(fault.params.get("set_ref"), dict):
            raise InvalidFault("receipt_denial: set_ref must be an object")
        _int_param(fault, "dispute_delay", default=0, minimum=0)

    elif kind == FaultKind.RELAY_OUTAGE:
        start = _int_param(fault, "start", default=fault.tick, minimum=0)
        end = _int_param(fault, "end", default=start)
        if end < start:
            raise InvalidFault("relay_outage: end before start")

    elif kind == FaultKind.PEER_LAG:
        _peer(world, fault)
        _int_param(fault, "behind_by", minimum=0)

    elif kind == FaultKind.BYZANTINE_PEER:
        network, peer = _peer(world, fault)
        planned = world.byzantine_planned[network.network_id] | {peer.peer_id}
        planned |= {p.peer_id for p in network.peers.values() if p.byzantine}
        if len(planned) > byzantine_cap(network.config.peer_count):
            raise InvalidFault(f"byzantine_peer: at most {byzantine_cap(network.config.peer_count)} "
                               f"Byzantine peers allowed in {network.network_id}")


def inject_fault(world, fault):
    """Validate a fault and schedule it at its trigger tick

    Raises:
        InvalidFault: See validate_fault

    Returns:
        World: The same world
    """

    if isinstance(fault, dict):
        fault = FaultEvent.from_dict(fault)
    validate_fault(world, fault)
    if fault.kind == FaultKind.BYZANTINE_PEER:
        world.byzantine_planned[fault.params["network"]].add(fault.params["peer"])
    world.schedule(fault.tick, "fault", {"fault": fault})
    return world


def apply_fault(world, fault):
    """Run the handler for a fault at its trigger tick

    Raises:
        StoreTampered: The handler changed the content store or a key wallet
    """
    wallets = [world.wallets[nid] for nid in sorted(world.wallets)]
    before = custody_digest(world.store, wallets)
    result = globals()[fault_handlers()[fault.kind.value]](world, fault)
    survive_fault(world.store, fault, before, wallets)
    return result


def fault_peer_crash(world, fault):
    network = world.networks[fault.params["network"]]
    peer = network.peers[fault.params["peer"]]
    peer.ready = False
    if "recover_tick" in fault.params:
        world.schedule(fault.params["recover_tick"], "recover_peer",
                       {"network": network.network_id, "peer": peer.peer_id})
    world.trace_event("peer_crash", network=network.network_id, peer=peer.peer_id)


def fault_network_crash_with_data_loss(world, fault):
    network = world.networks[fault.params["network"]]
    old_height = network.ledger.height
    retain = min(fault.params["retain_height"], old_height)
    new_height = truncate_ledger(network, retain)

    for peer in network.peers.values():
        peer.ready = False

    # The next snapshot continues from the surviving chain
    state = world.scheduler_states[network.network_id]
    world.scheduler_states[network.network_id] = SchedulerState(network.network_id,
                                                                min(state.last_snapshot_height, retain))

    down_ticks = fault.params.get("down_ticks", 1)
    world.schedule(world.tick + down_ticks, "network_up", {"network": network.network_id})
    world.trace_event("network_crash", network=network.network_id, old_height=old_height,
                      height=new_height, epoch=network.epoch, down_ticks=down_ticks)


def fault_malicious_fabrication(world, fault):
    """Commit a never-sent cross-chain invoke on the fabricator's own ledger,
    optionally followed by a receipt carrying forged signatures of the target
    """

    network = world.networks[fault.params["network"]]
    target = fault.params["target"]
    label = fault.params.get("label", f"fabrication-{fault.tick}")

    if "payload" in fault.params:
        payload = str(fault.params["payload"]).encode("utf-8")
    else:
        payload = world.rng.bytes(fault.params.get("payload_bytes", world.config["payload_bytes"]))

    invoke = Transaction(payload, TxKind.CROSS_INVOKE, network.network_id, world.tick, dest_network=target,
                         deadline=world.tick + world.config["crosschain"]["timeout"])
    endorsements = endorse(network, invoke)
    outcome = commit_transaction(network.ledger, invoke, endorsements, world.registry, world.tick)

    forged = bool(fault.params.get("forge_receipt", False))
    if outcome.committed and forged:
        receipt = Transaction(receipt_payload(invoke, endorsements), TxKind.CROSS_RECEIPT, target, world.tick,
                              dest_network=network.network_id, reference=invoke.tx_id)
        target_peers = world.networks[target].config.peer_ids
        quorum = quorum_threshold(len(target_peers))
        signatures = tuple((pid, world.rng.bytes(64)) for pid in target_peers[:quorum])
        network.ledger.append_unchecked(receipt, EndorsementSet(receipt.tx_id, target, signatures), world.tick)

    world.fabrications[label] = {"network": network.network_id,
                                 "target": target,
                                 "tx_id": invoke.tx_id,
                                 "payload_digest": content_hash(payload),
                                 "tick": world.tick,
                                 "committed": outcome.committed,
                                 "forged_receipt": forged and outcome.committed}
    world.trace_event("fabrication", network=network.network_id, target=target, label=label,
                      tx_id=invoke.tx_id, committed=outcome.committed, forged_receipt=forged)


def fault_receipt_denial(world, fault):
    denier = fault.params["network"]
    counterparty = fault.params["counterparty"]
    world.denials.append({"network": denier, "counterparty": counterparty,
                          "set_ref": fault.params["set_ref"], "tick": world.tick})
    world.schedule(world.tick + fault.params.get("dispute_delay", 0), "dispute",
                   {"claimant": denier, "respondent": counterparty, "kind": "deny_receipt",
                    "set_ref": fault.params["set_ref"]})
    world.trace_event("receipt_denial", network=denier, counterparty=counterparty)


def fault_relay_outage(world, fault):
    start = fault.params.get("start", fault.tick)
    end = fault.params.get("end", start)
    world.relay.outages.append((start, end))
    world.trace_event("relay_outage", start=start, end=end)


def fault_peer_lag(world, fault):
    network = world.networks[fault.params["network"]]
    peer = network.peers[fault.params["peer"]]
    peer.lag = fault.params["behind_by"]
    sync_peer(network, peer.peer_id)
    world.trace_event("peer_lag", network=network.network_id, peer=peer.peer_id, behind_by=peer.lag)


def fault_byzantine_peer(world, fault):
    network = world.networks[fault.params["network"]]
    peer = network.peers[fault.params["peer"]]
    peer.byzantine = True
    world.trace_event("byzantine_peer", network=network.network_id, peer=peer.peer_id)
