"""Tamper-evident audio provenance: fingerprints, a content store, and a
proof-of-work ledger that binds recordings to the devices that made them."""

from .cas import LocalStore, cid_of, is_valid_cid
from .config import NodeConfig, load_config
from .errors import AudiochainError
from .fingerprint import (
    DEFAULT_PARAMS,
    Fingerprint,
    FingerprintParams,
    compare_fingerprints,
    compute_fingerprint,
    decode_fingerprint,
    encode_fingerprint,
)
from .ledger import (
    Block,
    Ledger,
    PayloadV1,
    Verdict,
    block_hash,
    canonical_json,
    canonical_serialize,
    make_genesis,
    proof_of_work,
    validate_block,
    validate_chain,
)
from .node import Node, VerificationResult
from .tamper import Manipulation, run_robustness_experiment, standard_conditions
from .wav import AudioClip, embed_content_id, new_content_id, read_wav, write_wav

__version__ = "0.1.0"

__all__ = [
    "AudioClip",
    "AudiochainError",
    "Block",
    "DEFAULT_PARAMS",
    "Fingerprint",
    "FingerprintParams",
    "Ledger",
    "LocalStore",
    "Manipulation",
    "Node",
    "NodeConfig",
    "PayloadV1",
    "Verdict",
    "VerificationResult",
    "block_hash",
    "canonical_json",
    "canonical_serialize",
    "cid_of",
    "compare_fingerprints",
    "compute_fingerprint",
    "decode_fingerprint",
    "embed_content_id",
    "encode_fingerprint",
    "is_valid_cid",
    "load_config",
    "make_genesis",
    "new_content_id",
    "proof_of_work",
    "read_wav",
    "run_robustness_experiment",
    "standard_conditions",
    "validate_block",
    "validate_chain",
    "write_wav",
]
