"""Cluster overlay: membership, Cluster Head election, key registries, routing."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Mapping, Optional, Sequence, Set, Tuple

from .errors import OverlayError


class Role(str, Enum):
    REQUESTEE = "requestee"  # patient device
    REQUESTER = "requester"  # healthcare provider


@dataclass
class Node:
    node_id: str
    role: Role
    public_key: bytes
    cluster_id: str


@dataclass
class Cluster:
    cluster_id: str
    member_ids: Set[str] = field(default_factory=set)
    head_id: Optional[str] = None
    requester_keys: Dict[str, bytes] = field(default_factory=dict)
    requestee_keys: Dict[str, bytes] = field(default_factory=dict)


class Overlay:
    def __init__(self):
        self.clusters: Dict[str, Cluster] = {}
        self.nodes: Dict[str, Node] = {}

    # ------------------------------------------------------------ membership

    def add_cluster(self, cluster_id: str) -> Cluster:
        if cluster_id in self.clusters:
            raise OverlayError(f"cluster {cluster_id!r} already exists")
        cluster = self.clusters[cluster_id] = Cluster(cluster_id)
        return cluster

    def add_node(self, node_id: str, role: Role, public_key: bytes, cluster_id: str) -> Node:
        if node_id in self.nodes:
            raise OverlayError(f"node {node_id!r} already exists")
        cluster = self._cluster(cluster_id)
        node = self.nodes[node_id] = Node(node_id, Role(role), public_key, cluster_id)
        cluster.member_ids.add(node_id)
        return node

    def move_node(self, node_id: str, new_cluster_id: str) -> None:
        """Move a node, carrying its registry entry along.

        If the node was its old cluster's head the old cluster is left
        headless until :meth:`elect_cluster_head` runs again.
        """
        node = self._node(node_id)
        old = self._cluster(node.cluster_id)
        new = self._cluster(new_cluster_id)
        old.member_ids.discard(node_id)
        if old.head_id == node_id:
            old.head_id = None
        for reg in ("requester_keys", "requestee_keys"):
            key = getattr(old, reg).pop(node_id, None)
            if key is not None:
                getattr(new, reg)[node_id] = key
        new.member_ids.add(node_id)
        node.cluster_id = new_cluster_id

    def remove_node(self, node_id: str) -> None:
        node = self._node(node_id)
        cluster = self._cluster(node.cluster_id)
        cluster.member_ids.discard(node_id)
        cluster.requester_keys.pop(node_id, None)
        cluster.requestee_keys.pop(node_id, None)
        if cluster.head_id == node_id:
            cluster.head_id = None
        del self.nodes[node_id]

    def cluster_of(self, node_id: str) -> Cluster:
        return self._cluster(self._node(node_id).cluster_id)

    def _cluster(self, cluster_id: str) -> Cluster:
        try:
            return self.clusters[cluster_id]
        except KeyError:
            raise OverlayError(f"unknown cluster {cluster_id!r}") from None

    def _node(self, node_id: str) -> Node:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise OverlayError(f"unknown node {node_id!r}") from None

    # ------------------------------------------------------------ election

    def elect_cluster_head(self, cluster_id: str, connectivity: Mapping[str, int]) -> str:
        """Pick the member with the highest connectivity degree, lowest id on ties.

        Members absent from ``connectivity`` count as degree 0.
        """
        cluster = self._cluster(cluster_id)
        if not cluster.member_ids:
            raise OverlayError(f"cluster {cluster_id!r} has no members")
        head = min(cluster.member_ids, key=lambda n: (-connectivity.get(n, 0), n))
        cluster.head_id = head
        return head

    def heads(self) -> Dict[str, str]:
        """Cluster Head node id -> cluster id, for clusters that have a head."""
        return {c.head_id: c.cluster_id for c in self.clusters.values() if c.head_id is not None}

    # ------------------------------------------------------------ registries

    def register_requester(self, cluster_id: str, node_id: str, public_key: bytes) -> None:
        self._register(cluster_id, node_id, public_key, Role.REQUESTER)

    def register_requestee(self, cluster_id: str, node_id: str, public_key: bytes) -> None:
        self._register(cluster_id, node_id, public_key, Role.REQUESTEE)

    def _register(self, cluster_id: str, node_id: str, public_key: bytes, role: Role) -> None:
        cluster = self._cluster(cluster_id)
        node = self._node(node_id)
        if node.role is not role:
            raise OverlayError(f"{node_id} is a {node.role.value}, not a {role.value}")
        if node_id not in cluster.member_ids:
            raise OverlayError(f"{node_id} is not a member of cluster {cluster_id}")
        if public_key != node.public_key:
            raise OverlayError(f"public key does not belong to {node_id}")
        registry = cluster.requester_keys if role is Role.REQUESTER else cluster.requestee_keys
        if node_id in registry:
            raise OverlayError(f"{node_id} already registered as {role.value}")
        registry[node_id] = public_key

    def is_requestee(self, node_id: str) -> bool:
        node = self.nodes.get(node_id)
        return node is not None and node_id in self.clusters[node.cluster_id].requestee_keys

    def is_requester(self, node_id: str) -> bool:
        node = self.nodes.get(node_id)
        return node is not None and node_id in self.clusters[node.cluster_id].requester_keys

    def is_registered_key(self, public_key: bytes) -> bool:
        return any(public_key in c.requestee_keys.values() or public_key in c.requester_keys.values()
                   for c in self.clusters.values())

    def public_key(self, node_id: str) -> bytes:
        return self._node(node_id).public_key

    # ------------------------------------------------------------ routing

    def route_announcement(self, announcement, origin_ch: str,
                           ring: Sequence[str]) -> Tuple[str, int]:
        """Walk the Cluster Head ring from ``origin_ch`` until one keeps the digest.

        A head keeps the announcement iff the patient is a member of its
        cluster. Returns ``(keeper, hops)``; after a full pass with no keeper
        the origin keeps it, so hops never exceed ``len(ring)``.
        """
        if not ring:
            raise OverlayError("no Cluster Heads in the overlay")
        patient_id = announcement.patient_id
        heads = self.heads()
        if origin_ch not in ring or origin_ch not in heads:
            raise OverlayError(f"{origin_ch!r} is not a current Cluster Head")
        start = list(ring).index(origin_ch)
        n = len(ring)
        for hops in range(n):
            ch = ring[(start + hops) % n]
            cluster_id = heads.get(ch)
            if cluster_id is not None and patient_id in self.clusters[cluster_id].member_ids:
                return ch, hops
        return origin_ch, n
