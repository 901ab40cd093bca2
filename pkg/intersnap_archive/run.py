import copy
import shutil
from multiprocessing import Pool
from pathlib import Path
from typing import NamedTuple

import pandas as pd
from tqdm import tqdm
from jsonschema import Draft202012Validator
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PublicKey

from intersnap_archive.config import load_defaults, load_scenario_schema
from intersnap_archive.definitions import SetStatus, Outcome, ConfigInvalid, AUDITOR_ID
from intersnap_archive.io import read_scenario, write_json, write_jsonl, read_json
from intersnap_archive.ledger import Block, ledger_to_dict, verify_chain, genesis_block, raw_public_bytes
from intersnap_archive.crosschain import IdentityRegistry, check_atomicity
from intersnap_archive.snapshot import parse_archive, verify_set_record
from intersnap_archive.crypto import KeyWallet, decrypt_archive, key_fingerprint, wallet_get
from intersnap_archive.store import ContentStore, StoreError, read_swarm_key, store_digest
from intersnap_archive.auditor import auditor_to_dict
from intersnap_archive.metrics import export_metrics
from intersnap_archive.world import World
from intersnap_archive.util import canonical_json, content_hash, write_error_log, lookup_username


def _merge(defaults, overrides):
    merged = copy.deepcopy(defaults)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def validate_scenario(scenario):
    """Check a scenario against data/scenario_schema.json and its internal references

    Raises:
        ConfigInvalid: Schema violation, or a reference to an unknown network or peer
    """

    validator = Draft202012Validator(load_scenario_schema())
    errors = sorted(validator.iter_errors(scenario), key=lambda e: [str(p) for p in e.path])
    if errors:
        messages = [f"{'/'.join(str(p) for p in e.path) or '<root>'}: {e.message}" for e in errors[:5]]
        raise ConfigInvalid("Scenario doesn't match schema 1: " + "; ".join(messages))

    networks = {}
    for spec in scenario["networks"]:
        if spec["network_id"] in networks or spec["network_id"] == AUDITOR_ID:
            raise ConfigInvalid(f"Network id {spec['network_id']} is used twice or reserved")
        networks[spec["network_id"]] = [f"{spec['network_id']}-p{i}" for i in range(spec["peer_count"])]

    def check_network(nid, where):
        if nid not in networks:
            raise ConfigInvalid(f"{where} refers to unknown network {nid}")

    for workload in scenario.get("workload", []):
        check_network(workload["network"], "workload")
        if workload["kind"] == "cross":
            if "dest" not in workload:
                raise ConfigInvalid("Cross-chain workload needs a dest network")
            check_network(workload["dest"], "workload")
    for dispute in scenario.get("disputes", []):
        check_network(dispute["claimant"], "dispute")
        check_network(dispute["respondent"], "dispute")
    for bootstrap in scenario.get("bootstraps", []):
        check_network(bootstrap["network"], "bootstrap")
        if bootstrap["peer"] not in networks[bootstrap["network"]]:
            raise ConfigInvalid(f"bootstrap refers to unknown peer {bootstrap['peer']}")


def load_scenario(scenario, seed=None, suite="intersnap_test"):
    """Validate a scenario and merge it over data/defaults.json

    Args:
        scenario (dict, str or Path): Scenario, scenario file or scenario name in the suite
        seed (int, optional): Overrides the scenario seed
        suite (str, optional): Suite to look up scenario names in

    Raises:
        ConfigInvalid: Invalid scenario

    Returns:
        dict: Resolved scenario
    """

    if not isinstance(scenario, dict):
        scenario = read_scenario(scenario, suite=suite, this_repo=not Path(scenario).exists())

    validate_scenario(scenario)
    resolved = _merge(load_defaults(), scenario)
    if seed is not None:
        if not isinstance(seed, int) or seed < 0:
            raise ConfigInvalid("seed must be a non-negative integer")
        resolved["seed"] = seed
    resolved.setdefault("name", "scenario")
    return resolved


class RunResult(NamedTuple):
    report: object
    state_hash: str
    world: object


def state_summary(world):
    """Everything a run determines, without wall-clock measurements"""

    networks = {}
    for nid, network in world.networks.items():
        networks[nid] = {"epoch": network.epoch,
                         "height": network.ledger.height,
                         "head_hash": network.ledger.head_hash,
                         "replicas": {pid: (p.blocks[-1].block_hash if p.blocks else None, p.ready)
                                      for pid, p in sorted(network.peers.items())},
                         "sets": sorted((sid, s.status.value) for sid, s in network.sets.items()),
                         "acknowledged": sorted(network.acknowledged)}

    return {"seed": world.seed,
            "tick": world.tick,
            "networks": networks,
            "store": store_digest(world.store),
            "wallets": {nid: [cid for cid, _ in wallet.items()] for nid, wallet in sorted(world.wallets.items())},
            "auditor": {nid: [e.cid.text for e in entries] for nid, entries in sorted(world.auditor.index.items())},
            "quarantine": [q.cid.text for q in world.auditor.quarantine],
            "verdicts": world.verdicts,
            "trace": content_hash("".join(canonical_json(row) + "\n" for row in world.trace)),
            "metrics": world.metrics.summary(wall_clock=False)}


def state_hash(world):
    return content_hash(canonical_json(state_summary(world)))


def run_scenario(config, seed=None, store_root=None, verbose=False):
    """Run one scenario end to end

    Args:
        config (dict, str or Path): Scenario
        seed (int, optional): Overrides the scenario seed
        store_root (Path, optional): Persist the content store here
        verbose (bool, optional): Print progress. Defaults to False.

    Raises:
        ConfigInvalid: Invalid scenario

    Returns:
        RunResult: Metrics report, final state hash and the world
    """

    config = load_scenario(config, seed=seed)
    if verbose:
        print(f"Running {config['name']} with seed {config['seed']} for {config['run_ticks']} ticks")

    world = World(config, store_root=store_root, verbose=verbose).run()

    if world.error_log and verbose:
        print(f"!!! Errors occurred during the run ({len(world.error_log)}). See error_log.txt for details")

    return RunResult(world.metrics, state_hash(world), world)


def battery_record(seed, result):
    """Picklable summary of one run"""
    world = result.world
    return {"seed": seed,
            "state_hash": result.state_hash,
            "summary": result.report.summary(wall_clock=False),
            "verdicts": world.verdicts,
            "fabrications": world.fabrications,
            "atomicity_violations": check_atomicity(world.networks),
            "errors": list(world.error_log)}


def _battery_worker(args):
    config, seed = args
    return battery_record(seed, run_scenario(config, seed=seed))


def run_battery(config, seeds, workers=1, verbose=False):
    """Run independent worlds for several seeds. Results are merged after all worlds finish

    Args:
        config (dict, str or Path): Scenario
        seeds (list): Seeds
        workers (int, optional): Worker processes. 1 runs in this process. Defaults to 1.
        verbose (bool, optional): Show a progress bar. Defaults to False.

    Raises:
        TypeError: seeds isn't a list
        ValueError: workers < 1

    Returns:
        list: battery_record per seed, in seed order
    """

    if not isinstance(seeds, (list, tuple, range)):
        raise TypeError("seeds must be a list")
    if workers < 1:
        raise ValueError("workers must be at least 1")

    config = load_scenario(config)
    jobs = [(config, seed) for seed in seeds]

    if workers == 1:
        records = [_battery_worker(job) for job in tqdm(jobs, disable=not verbose)]
    else:
        with Pool(workers) as pool:
            records = list(tqdm(pool.imap(_battery_worker, jobs), total=len(jobs), disable=not verbose))

    return sorted(records, key=lambda r: r["seed"])


def export_state(result, out, wall_clock=True):
    """Write a run's final state, trace, wallets, verdicts, store and metrics to a folder

    Args:
        result (RunResult): Finished run
        out (str or Path): Output folder
        wall_clock (bool, optional): Also write the *_wall metric files. Defaults to True.

    Returns:
        Path: Output folder
    """

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    world = result.world

    networks = {}
    for nid, network in world.networks.items():
        networks[nid] = {**ledger_to_dict(network),
                         "sets": [s.to_dict() for _, s in sorted(network.sets.items())],
                         "acknowledged": dict(sorted(network.acknowledged.items())),
                         "envelope_key": raw_public_bytes(network.envelope_key.public_key()).hex()}

    write_json(out, "state.json", {"scenario": world.config,
                                   "state_hash": result.state_hash,
                                   "tick": world.tick,
                                   "networks": networks,
                                   "publications": world.publications,
                                   "fabrications": world.fabrications,
                                   "denials": world.denials})
    write_jsonl(out, "trace.jsonl", world.trace)
    write_json(out, "wallets.json", {**{nid: w.to_dict() for nid, w in world.wallets.items()},
                                     AUDITOR_ID: world.auditor.wallet.to_dict()})
    write_json(out, "verdicts.json", world.verdicts)
    write_json(out, "auditor.json", auditor_to_dict(world.auditor))

    store_out = out / "store"
    if world.store.root is None or world.store.root.resolve() != store_out.resolve():
        if store_out.exists():
            shutil.rmtree(store_out)
        copy_store = ContentStore(world.swarm_key, store_out)
        for cid in world.store.cids():
            copy_store.put(world.store.raw(cid), world.swarm_key, AUDITOR_ID)

    export_metrics(result.report, out / "metrics", wall_clock=wall_clock)

    write_error_log(out, world.error_log,
                    header="Run attempted on " + pd.Timestamp.now().strftime("%Y-%m-%d %H:%M:%S") +
                    " by " + lookup_username())

    return out


def _exported_registry(networks):
    registry = IdentityRegistry()
    for nid, network in networks.items():
        for pid, key in network["peer_keys"].items():
            registry.register_peer(nid, pid, Ed25519PublicKey.from_public_bytes(bytes.fromhex(key)))
    return registry


def verify_output(out):
    """Re-check the invariants of an exported run

    Checks hash chains, replica prefixes, set atomicity, the integrity of every
    stored archive, one fresh key per archive, stage counter reconciliation and
    the evidence behind every upheld verdict.

    Args:
        out (str or Path): Folder written by export_state

    Returns:
        list: Violation descriptions. Empty if the run verifies
    """

    out = Path(out)
    state = read_json(out, "state.json")
    wallets = {nid: KeyWallet.from_dict(w) for nid, w in read_json(out, "wallets.json").items()}
    verdicts = read_json(out, "verdicts.json")
    summary = read_json(out / "metrics", "summary.json")
    networks = state["networks"]

    violations = []

    tx_ids = {}
    for nid, network in networks.items():
        blocks = [Block.from_dict(b) for b in network["blocks"]]
        if blocks[0].block_hash != genesis_block(nid).block_hash:
            violations.append(f"{nid}: genesis block doesn't match")
        bad = verify_chain(blocks)
        if bad is not None:
            violations.append(f"{nid}: block {blocks[bad].height} fails hash chain verification")
        hashes = [b.block_hash for b in blocks]
        for pid, replica in network["replicas"].items():
            if replica != hashes[:len(replica)]:
                violations.append(f"{nid}: replica {pid} is not a prefix of the canonical chain")
        tx_ids[nid] = {t["tx"]["tx_id"] for b in network["blocks"] for t in b["transactions"]}

    for nid, network in networks.items():
        for tset in network["sets"]:
            statuses = [status for _, status in tset["history"]]
            if SetStatus.INCOMPLETE.value in statuses and \
                    SetStatus.COMPLETE.value in statuses[statuses.index(SetStatus.INCOMPLETE.value):]:
                violations.append(f"{tset['set_id']}: incomplete set became complete")
            if tset["status"] == SetStatus.COMPLETE.value:
                if tset["invoke_tx"] not in tx_ids[nid] or tset["receipt_tx"] not in tx_ids[nid]:
                    violations.append(f"{tset['set_id']}: complete set missing from source ledger")
                dest = networks.get(tset["dest_network"])
                if dest is not None and dest["epoch"] == 0 and \
                        not {tset["invoke_tx"], tset["receipt_tx"]} <= tx_ids[tset["dest_network"]]:
                    violations.append(f"{tset['set_id']}: complete set missing from destination ledger")
            if tset["status"] == SetStatus.INCOMPLETE.value and tset["receipt_tx"] in tx_ids[nid]:
                violations.append(f"{tset['set_id']}: incomplete set with receipt at source")

    holders = list(networks) + [AUDITOR_ID]
    try:
        swarm_key = read_swarm_key(out / "store", holders)
        store = ContentStore(swarm_key, out / "store")
    except (OSError, StoreError) as e:
        return violations + [f"store can't be opened: {e}"]

    fingerprints = []
    for nid, publications in state["publications"].items():
        for publication in publications:
            fingerprints.append(publication["key_fingerprint"])
            try:
                store.get(publication["cid"], swarm_key, AUDITOR_ID)
            except StoreError as e:
                violations.append(f"{publication['cid']}: {e.code}")
            key = wallet_get(wallets[nid], publication["cid"])
            if key is None or key_fingerprint(key) != publication["key_fingerprint"]:
                violations.append(f"{publication['cid']}: wallet key doesn't match the archive record")
    if len(set(fingerprints)) != len(fingerprints):
        violations.append("an archive key was used for more than one archive")

    for stage, counts in summary["stages"].items():
        if counts["attempts"] != counts["passed"] + counts["failed"]:
            violations.append(f"stage {stage} doesn't reconcile")

    registry = _exported_registry(networks)
    for entry in verdicts:
        verdict = entry["verdict"]
        if verdict["outcome"] != Outcome.CLAIM_UPHELD.value:
            continue
        if not verdict["evidence"]:
            violations.append(f"verdict {verdict['case_id']} upheld without evidence")
        for citation in verdict["evidence"]:
            key = wallet_get(wallets[AUDITOR_ID], citation["cid"])
            try:
                archive = parse_archive(decrypt_archive(store.get(citation["cid"], swarm_key, AUDITOR_ID), key))
            except Exception as e:
                violations.append(f"verdict {verdict['case_id']}: cited archive unreadable ({type(e).__name__})")
                continue
            records = [r for s in archive.snapshots if s.snapshot_id == citation["snapshot_id"]
                       for r in s.completed_sets if r.set_id == citation["set_id"]]
            if not records or verify_set_record(records[0], registry) is not None:
                violations.append(f"verdict {verdict['case_id']}: cited set {citation['set_id']} doesn't verify")

    return violations
