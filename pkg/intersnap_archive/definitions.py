from enum import Enum


# Archive and store formats. Changing any of these breaks existing archives
ARCHIVE_MAGIC = b"ISNAP1"
ENCRYPTED_FORMAT_VERSION = 1
CID_PREFIX = "cid1-"
ENVELOPE_PREFIX = b"ISENV1\n"

KEY_BYTES = 16
SALT_BYTES = 8
NONCE_BYTES = 12
TAG_BYTES = 16
PASSPHRASE_BYTES = 32
KDF_ITERATIONS = 65536
COMPRESS_LEVEL = 6

GENESIS_PREV_HASH = "0" * 64
AUDITOR_ID = "auditor"

pipeline_stages = ["archive", "compress", "encrypt", "store_upload", "interop_initiate"]


class TxKind(str, Enum):
    LOCAL = "local"
    CROSS_INVOKE = "cross_invoke"
    CROSS_RECEIPT = "cross_receipt"


class SetStatus(str, Enum):
    PENDING = "pending"
    COMPLETE = "complete"
    INCOMPLETE = "incomplete"


class Direction(str, Enum):
    REQUEST = "request"
    RESPONSE = "response"


class Decision(str, Enum):
    TRIGGER = "trigger"
    SKIP = "skip"


class ClaimKind(str, Enum):
    DEMAND_FULFILLMENT = "demand_fulfillment"
    DENY_RECEIPT = "deny_receipt"


class Outcome(str, Enum):
    CLAIM_UPHELD = "claim_upheld"
    CLAIM_REFUTED = "claim_refuted"
    INDETERMINATE = "indeterminate"


class Rationale(str, Enum):
    CASE1_VALID_RECEIPT = "case1_valid_receipt"
    CASE2_NO_RECEIPT = "case2_no_receipt"
    ENDORSEMENT_FAILURE = "endorsement_failure"
    SPAN_NOT_COVERED = "span_not_covered"


class FaultKind(str, Enum):
    PEER_CRASH = "peer_crash"
    NETWORK_CRASH_WITH_DATA_LOSS = "network_crash_with_data_loss"
    MALICIOUS_FABRICATION = "malicious_fabrication"
    RECEIPT_DENIAL = "receipt_denial"
    RELAY_OUTAGE = "relay_outage"
    PEER_LAG = "peer_lag"
    BYZANTINE_PEER = "byzantine_peer"


class InterSnapError(Exception):
    """Base class for all protocol and harness errors.

    Each subclass carries a machine-readable ``code``, used in error records
    written by the command line interface.
    """

    code = "intersnap_error"

    def __init__(self, message=""):
        super().__init__(message or self.code)


class InvalidFault(InterSnapError):
    code = "invalid_fault"


class ConfigInvalid(InterSnapError):
    code = "config_invalid"
