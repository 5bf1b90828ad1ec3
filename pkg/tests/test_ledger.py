import random
from dataclasses import replace

import pytest

from medchain.crypto_core import ZERO_DIGEST, generate_keypair, hash_bytes, seeded_entropy, sign
from medchain.errors import MiningRejected, OverlayError
from medchain.ledger import (
    PayloadKind,
    PoAChain,
    PoAConfig,
    parse_authorities,
    parse_dump,
    quorum,
    render_authorities,
    render_dump,
    validate_chain,
)


def make_chain(n, faults=None, seed=3):
    rng = seeded_entropy(seed)
    ids = tuple(f"CH{i}" for i in range(n))
    kps = {a: generate_keypair(rng=rng) for a in ids}
    return PoAChain(PoAConfig(ids), {a: k.public_key for a, k in kps.items()},
                    {a: k.private_key for a, k in kps.items()}, dict(faults or {}))


def mine(chain, count, tick=0, kind=PayloadKind.DATA_BLOCK):
    for i in range(count):
        chain.propose_and_mine(chain.config.authority_ids[0], hash_bytes(str(i).encode()),
                               kind, f"blk-{i:06d}" if kind is PayloadKind.DATA_BLOCK else None,
                               tick + i)


@pytest.mark.parametrize("n,q", [(1, 1), (2, 2), (3, 2), (4, 3), (5, 3), (6, 4), (7, 4),
                                 (8, 5), (9, 5), (10, 6), (11, 6), (12, 7)])
def test_quorum_formula(n, q):
    assert quorum(n) == q


def test_quorum_rejects_zero():
    with pytest.raises(OverlayError):
        quorum(0)


def test_config_rejects_duplicates_and_empty():
    with pytest.raises(OverlayError):
        PoAConfig(())
    with pytest.raises(OverlayError):
        PoAConfig(("a", "a"))


def test_n5_three_acks_appends():
    chain = make_chain(5, {"CH3": 0, "CH4": 0})
    block = chain.propose_and_mine("CH0", bytes(32), PayloadKind.TXN)
    assert chain.height == 1 and block.authority_id == "CH0"


def test_n4_two_acks_rejected():
    chain = make_chain(4, {"CH2": 0, "CH3": 0})
    with pytest.raises(MiningRejected) as exc:
        chain.propose_and_mine("CH0", bytes(32), PayloadKind.TXN)
    assert exc.value.reason == "no_quorum"
    assert chain.height == 0


def test_n1_self_appends():
    chain = make_chain(1)
    mine(chain, 3)
    assert chain.height == 3
    assert all(b.authority_id == "CH0" for b in chain.blocks)


def test_not_your_turn():
    chain = make_chain(3)
    with pytest.raises(MiningRejected) as exc:
        chain.sign_block("CH1", bytes(32), PayloadKind.TXN, None, 0)
    assert exc.value.reason == "not_your_turn"


def test_unknown_keeper_and_short_root():
    chain = make_chain(3)
    with pytest.raises(OverlayError):
        chain.propose_and_mine("stranger", bytes(32), PayloadKind.TXN)
    with pytest.raises(OverlayError):
        chain.propose_and_mine("CH0", bytes(31), PayloadKind.TXN)


def test_scheduled_refuser_passes_turn():
    chain = make_chain(3, {"CH0": 0})
    block = chain.propose_and_mine("CH1", bytes(32), PayloadKind.TXN)
    assert block.authority_id == "CH1" and block.height == 0
    assert chain.rejections == 1


def test_fault_starts_at_tick():
    chain = make_chain(3, {"CH1": 5, "CH2": 5})
    mine(chain, 2, tick=0)
    with pytest.raises(MiningRejected):
        chain.propose_and_mine("CH0", bytes(32), PayloadKind.TXN, tick=5)
    assert chain.height == 2


def test_genesis_and_links():
    chain = make_chain(3)
    mine(chain, 4)
    assert chain.blocks[0].prev_hash == ZERO_DIGEST
    for prev, cur in zip(chain.blocks, chain.blocks[1:]):
        assert cur.prev_hash == prev.digest()
    assert [b.height for b in chain.blocks] == [0, 1, 2, 3]


def test_validate_empty_and_honest():
    chain = make_chain(3)
    assert validate_chain([], chain.authority_keys).valid
    mine(chain, 10)
    assert chain.validate().valid


def test_validate_reasons():
    chain = make_chain(3)
    mine(chain, 4)
    b = chain.blocks
    keys = chain.authority_keys
    assert validate_chain([b[1]], keys).reason == "bad_height"
    assert validate_chain([b[0], b[2]], keys).reason == "bad_height"
    assert validate_chain([replace(b[0], prev_hash=b"\x01" * 32)], keys).reason == "bad_genesis"
    assert validate_chain(b[:1], {}).reason == "unknown_authority"
    assert validate_chain([replace(b[0], authority_signature=bytes(64))], keys).reason == "bad_signature"


def test_timestamp_regression_detected_and_refused():
    chain = make_chain(1)
    mine(chain, 1, tick=5)
    with pytest.raises(MiningRejected):
        chain.propose_and_mine("CH0", bytes(32), PayloadKind.TXN, tick=4)
    late = replace(chain.blocks[0], height=1, prev_hash=chain.blocks[0].digest(), timestamp=4)
    late = replace(late, authority_signature=sign(chain.signing_keys["CH0"],
                                                  late.signing_bytes()).bytes)
    res = validate_chain([chain.blocks[0], late], chain.authority_keys)
    assert (res.valid, res.height, res.reason) == (False, 1, "timestamp_regression")


def test_payload_root_mutation_invalid_at_k_or_k_plus_one():
    chain = make_chain(3)
    mine(chain, 10)
    for k in range(10):
        blocks = list(chain.blocks)
        blocks[k] = replace(blocks[k], payload_root=hash_bytes(b"evil"))
        res = validate_chain(blocks, chain.authority_keys)
        assert not res.valid and res.height in (k, k + 1)


def mutate_field(block, name, rng):
    value = getattr(block, name)
    if name in ("height", "timestamp"):
        return value + rng.randint(1, 5)
    if name == "payload_kind":
        return PayloadKind.TXN if value is PayloadKind.DATA_BLOCK else PayloadKind.DATA_BLOCK
    if name in ("cloud_block_ref", "authority_id"):
        return (value or "") + "x"
    raw = bytearray(value)
    raw[rng.randrange(len(raw))] ^= rng.randint(1, 255)
    return bytes(raw)


FIELDS = ["height", "prev_hash", "payload_root", "payload_kind", "cloud_block_ref",
          "authority_id", "authority_signature", "timestamp"]


def test_mutation_sweep_every_field_every_block():
    chain = make_chain(4)
    mine(chain, 12)
    rng = random.Random(1)
    for k in range(chain.height):
        for name in FIELDS:
            blocks = list(chain.blocks)
            blocks[k] = replace(blocks[k], **{name: mutate_field(blocks[k], name, rng)})
            assert not validate_chain(blocks, chain.authority_keys).valid, (k, name)


def test_resigned_by_outsider_rejected():
    chain = make_chain(3)
    mine(chain, 3)
    outsider = generate_keypair(b"\x07" * 32)
    forged = replace(chain.blocks[1],
                     authority_signature=sign(outsider.private_key,
                                              chain.blocks[1].signing_bytes()).bytes)
    blocks = [chain.blocks[0], forged, chain.blocks[2]]
    assert validate_chain(blocks, chain.authority_keys).reason == "bad_signature"


@pytest.mark.parametrize("size", [10, 1000, 10_000])
def test_storage_per_block_bounded(size):
    chain = make_chain(5)
    for i in range(10):
        payload = random.Random(i).randbytes(size)
        chain.propose_and_mine("CH0", hash_bytes(payload), PayloadKind.DATA_BLOCK,
                               f"blk-{i:06d}", i)
    assert chain.storage_bytes() <= 256 * chain.height


@pytest.mark.parametrize("n", [1, 2, 3, 5, 8])
def test_rotation_fairness(n):
    chain = make_chain(n)
    mine(chain, 5 * n)
    assert chain.signed_by() == {a: 5 for a in chain.config.authority_ids}
    for b in chain.blocks:
        assert b.authority_id == chain.config.authority_ids[b.height % n]


def test_dump_roundtrip_and_strictness():
    chain = make_chain(3)
    mine(chain, 3)
    mine(chain, 1, tick=9, kind=PayloadKind.TXN)
    text = render_dump(chain.blocks)
    assert parse_dump(text) == chain.blocks
    assert parse_dump("") == []
    with pytest.raises(ValueError, match="truncated"):
        parse_dump(text[:-1])
    for bad in (text.replace("|", "|", 1).replace("0|", "00|", 1),
                text.upper(),
                text + "\n",
                text.replace("data_block", "datablock", 1)):
        with pytest.raises(ValueError):
            parse_dump(bad)
    line = chain.blocks[0].dump_line().split("|")
    assert len(line) == 8 and line[0] == "0" and line[1] == "00" * 32


def test_authorities_file_roundtrip():
    chain = make_chain(3)
    config, keys = parse_authorities(render_authorities(chain.config, chain.authority_keys))
    assert config == chain.config and keys == chain.authority_keys
    with pytest.raises(ValueError):
        parse_authorities("{}")
    with pytest.raises(ValueError):
        parse_authorities("not json")
