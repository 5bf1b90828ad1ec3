"""Merkle trees over block records, with membership proofs.

Leaves are hashed as H(0x00 || leaf) and internal nodes as
H(0x01 || left || right). An unpaired node at any level is paired with a
copy of itself.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import List, Sequence, Tuple

from .crypto_core import hash_bytes
from .errors import MerkleError

LEAF_PREFIX = b"\x00"
NODE_PREFIX = b"\x01"


class Side(str, Enum):
    LEFT = "left"
    RIGHT = "right"


def leaf_digest(leaf: bytes) -> bytes:
    return hash_bytes(LEAF_PREFIX + leaf)


def node_digest(left: bytes, right: bytes) -> bytes:
    return hash_bytes(NODE_PREFIX + left + right)


@dataclass(frozen=True)
class MerkleTree:
    levels: Tuple[Tuple[bytes, ...], ...]

    @property
    def leaf_digests(self) -> Tuple[bytes, ...]:
        return self.levels[0]

    @property
    def height(self) -> int:
        return len(self.levels) - 1

    def __len__(self) -> int:
        return len(self.levels[0])


@dataclass(frozen=True)
class MerkleProof:
    leaf_index: int
    path: Tuple[Tuple[bytes, Side], ...]

    def to_text(self) -> str:
        """Audit-report form: ``index:side=hex,side=hex,...``."""
        steps = ",".join(f"{side.value}={sib.hex()}" for sib, side in self.path)
        return f"{self.leaf_index}:{steps}"


def build_tree(leaves: Sequence[bytes]) -> MerkleTree:
    if not leaves:
        raise MerkleError("cannot build a Merkle tree with no leaves")
    level = tuple(leaf_digest(x) for x in leaves)
    levels = [level]
    while len(level) > 1:
        if len(level) % 2:
            level = level + (level[-1],)
        level = tuple(node_digest(level[i], level[i + 1]) for i in range(0, len(level), 2))
        levels.append(level)
    return MerkleTree(tuple(levels))


def root(tree: MerkleTree) -> bytes:
    return tree.levels[-1][0]


def prove(tree: MerkleTree, leaf_index: int) -> MerkleProof:
    if not 0 <= leaf_index < len(tree):
        raise MerkleError(f"leaf index {leaf_index} out of range for {len(tree)} leaves")
    path: List[Tuple[bytes, Side]] = []
    idx = leaf_index
    for level in tree.levels[:-1]:
        if idx % 2:
            path.append((level[idx - 1], Side.LEFT))
        else:
            sib = level[idx + 1] if idx + 1 < len(level) else level[idx]
            path.append((sib, Side.RIGHT))
        idx //= 2
    return MerkleProof(leaf_index, tuple(path))


def verify_proof(root_digest: bytes, leaf: bytes, proof: MerkleProof) -> bool:
    acc = leaf_digest(leaf)
    for sibling, side in proof.path:
        if side is Side.LEFT:
            acc = node_digest(sibling, acc)
        else:
            acc = node_digest(acc, sibling)
    return acc == root_digest
