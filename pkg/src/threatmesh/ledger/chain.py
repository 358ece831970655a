"""Hash-chain verification and one-file-per-block chain persistence."""

import os
import re
from typing import Optional, Sequence

from threatmesh.encoding import sha256
from threatmesh.errors import ChainIntegrityError
from threatmesh.identity.ca import Role
from threatmesh.identity.msp import Msp
from threatmesh.ledger.records import GENESIS_PREV_HASH, LedgerBlock

BLOCK_FILE = re.compile(r"^blk(\d+)$")


def verify_chain(blocks: Sequence[LedgerBlock], msp: Optional[Msp] = None) -> None:
    """
    Checks numbering from genesis, hash links, data hashes and orderer signatures.

    Args:
        blocks: The chain, genesis first.
        msp: If given, every orderer certificate must also be accepted at its block's cut tick.

    Raises: ``ChainIntegrityError`` naming the first offending block.
    """
    if not blocks:
        raise ChainIntegrityError("empty chain")
    prev_hash = GENESIS_PREV_HASH
    for expected, block in enumerate(blocks):
        if block.number != expected:
            raise ChainIntegrityError(f"block at position {expected} is numbered {block.number}")
        if block.prev_hash != prev_hash:
            raise ChainIntegrityError(f"block {block.number} does not link to block {expected - 1}")
        if sha256(block.data_bytes()) != block.data_hash:
            raise ChainIntegrityError(f"block {block.number} body does not match its data hash")
        if not block.verify_signature() or block.orderer.role != Role.ORDERER:
            raise ChainIntegrityError(f"block {block.number} carries no valid orderer signature")
        if msp is not None and not msp.verify(block.orderer, block.cut_tick).accepted:
            raise ChainIntegrityError(f"block {block.number} orderer rejected by the MSP")
        prev_hash = block.hash


def save_chain(blocks: Sequence[LedgerBlock], directory: str) -> None:
    os.makedirs(directory, exist_ok=True)
    for block in blocks:
        path = os.path.join(directory, f"blk{block.number}")
        if os.path.exists(path):
            continue
        with open(path, "wb") as f:
            f.write(block.to_bytes())


def load_chain(directory: str) -> list[LedgerBlock]:
    numbers = sorted(int(m.group(1)) for m in map(BLOCK_FILE.match, os.listdir(directory)) if m)
    blocks = []
    for number in numbers:
        with open(os.path.join(directory, f"blk{number}"), "rb") as f:
            blocks.append(LedgerBlock.from_bytes(f.read()))
    return blocks
