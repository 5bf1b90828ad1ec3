import pytest

from medchain.access import AccessManager
from medchain.cloud_store import CloudStore
from medchain.crypto_core import generate_keypair, seeded_entropy
from medchain.ledger import PoAChain, PoAConfig
from medchain.overlay import Overlay, Role


class System:
    """A small wired-up system: one cluster per provider, patients spread round-robin."""

    def __init__(self, patients, providers, seed=1, capacity=16):
        self.rng = seeded_entropy(seed)
        self.keys = {n: generate_keypair(rng=self.rng) for n in patients + providers}
        self.overlay = Overlay()
        heads = []
        for i, prov in enumerate(providers):
            cid = f"c{i}"
            self.overlay.add_cluster(cid)
            self.overlay.add_node(prov, Role.REQUESTER, self.keys[prov].public_key, cid)
            self.overlay.register_requester(cid, prov, self.keys[prov].public_key)
        for j, pat in enumerate(patients):
            cid = f"c{j % len(providers)}"
            self.overlay.add_node(pat, Role.REQUESTEE, self.keys[pat].public_key, cid)
            self.overlay.register_requestee(cid, pat, self.keys[pat].public_key)
        for i, prov in enumerate(providers):
            heads.append(self.overlay.elect_cluster_head(f"c{i}", {prov: 10}))
        self.config = PoAConfig(tuple(heads))
        self.chain = PoAChain(self.config,
                              {h: self.keys[h].public_key for h in heads},
                              {h: self.keys[h].private_key for h in heads})
        self.announcements = []
        self.cloud = CloudStore(self.overlay.is_registered_key, capacity,
                                on_seal=self.announcements.append)
        self.access = AccessManager(self.overlay, self.chain, self.cloud, self.keys, rng=self.rng)

    def mine_sealed(self, tick=0):
        while self.announcements:
            ann = self.announcements.pop(0)
            keeper, _ = self.overlay.route_announcement(ann, self.config.authority_ids[0],
                                                        self.config.authority_ids)
            self.chain.propose_and_mine(keeper, ann.merkle_root, "data_block", ann.block_id, tick)


@pytest.fixture
def make_system():
    return System


@pytest.fixture
def system():
    return System(["P1", "P2", "P3"], ["H1", "H2", "H3"])
