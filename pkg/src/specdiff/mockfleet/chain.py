"""Deterministic synthetic chain shared by every mock node."""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field

from ..facts import SLOTS_PER_EPOCH

GENESIS_TIME = 1_700_000_000
SECONDS_PER_SLOT = 12
CHAIN_ID = 0x1A4
GAS_LIMIT = 30_000_000
TRANSFER_GAS = 21_000
BASE58 = "123456789ABCDEFGHJKLMNPQRSTUVWXYZabcdefghijkmnopqrstuvwxyz"
ZERO_BLOOM = "0x" + "00" * 256


def digest(seed: int, *parts: object) -> bytes:
    text = ":".join(str(p) for p in (seed, *parts))
    return hashlib.sha256(text.encode()).digest()


def hex32(seed: int, *parts: object) -> str:
    return "0x" + digest(seed, *parts).hex()


@dataclass(frozen=True)
class Tx:
    hash: str
    block_number: int
    index: int
    sender: str
    to: str
    value: int
    nonce: int
    gas_price: int
    gas: int = TRANSFER_GAS


@dataclass(frozen=True)
class Block:
    number: int
    hash: str
    parent_hash: str
    transactions: tuple[Tx, ...]
    timestamp: int
    miner: str
    state_root: str
    transactions_root: str
    receipts_root: str
    base_fee: int

    @property
    def gas_used(self) -> int:
        return sum(t.gas for t in self.transactions)


@dataclass(frozen=True)
class BeaconHeader:
    slot: int
    proposer_index: int
    root: str
    parent_root: str
    state_root: str
    body_root: str
    signature: str


@dataclass(frozen=True)
class Validator:
    index: int
    pubkey: str
    balance: int
    activation_epoch: int = 0


@dataclass(frozen=True)
class Peer:
    peer_id: str
    enr: str
    address: str
    state: str
    direction: str


@dataclass
class SyntheticChain:
    """Blocks, accounts and beacon state derived from one seed.

    Slot ``s`` carries block ``s``; block 0 is genesis, so the default
    chain holds 65 blocks with the tip at height 64.
    """

    rng_seed: int
    blocks: list[Block]
    accounts: dict[str, int]
    current_slot: int
    finalized_epochs: int
    balance_history: list[dict[str, int]] = field(repr=False)
    nonce_history: list[dict[str, int]] = field(repr=False)
    headers: list[BeaconHeader] = field(repr=False)
    validators: list[Validator] = field(repr=False)
    peers: list[Peer] = field(repr=False)
    identity_peer_id: str = ""

    def __post_init__(self) -> None:
        self.block_by_hash = {b.hash: b for b in self.blocks}
        self.tx_by_hash = {t.hash: t for b in self.blocks for t in b.transactions}
        self.header_by_root = {h.root: h for h in self.headers}
        self.slot_by_state_root = {h.state_root: h.slot for h in self.headers}
        self.check()

    def check(self) -> None:
        if [b.number for b in self.blocks] != list(range(len(self.blocks))):
            raise ValueError("block numbers must be contiguous from 0")
        if len(self.block_by_hash) != len(self.blocks):
            raise ValueError("block hashes must be unique")
        for prev, cur in zip(self.blocks, self.blocks[1:]):
            if cur.parent_hash != prev.hash:
                raise ValueError(f"block {cur.number} does not link to its parent")
        if any(v < 0 for v in self.accounts.values()):
            raise ValueError("negative balance")

    @property
    def tip(self) -> Block:
        return self.blocks[-1]

    @property
    def finalized_slot(self) -> int:
        return self.finalized_epochs * SLOTS_PER_EPOCH

    @property
    def justified_slot(self) -> int:
        return min(self.current_slot, (self.finalized_epochs + 1) * SLOTS_PER_EPOCH)

    @property
    def current_epoch(self) -> int:
        return self.current_slot // SLOTS_PER_EPOCH

    def block_for_tag(self, tag: str) -> Block:
        number = {
            "earliest": 0,
            "latest": self.tip.number,
            "pending": self.tip.number,
            "safe": self.justified_slot,
            "finalized": self.finalized_slot,
        }[tag]
        return self.blocks[number]


def _address(seed: int, i: int) -> str:
    return "0x" + digest(seed, "account", i)[:20].hex()


def _peer_id(seed: int, *parts: object) -> str:
    raw = int.from_bytes(digest(seed, "peer", *parts), "big")
    chars = []
    for _ in range(44):
        raw, r = divmod(raw, 58)
        chars.append(BASE58[r])
    return "16Uiu2HAm" + "".join(chars)


def build_chain(seed: int, *, blocks: int = 64, accounts: int = 128, transactions: int = 256,
                finalized_epochs: int = 5, validators: int = 64, peers: int = 4) -> SyntheticChain:
    """The chain for ``seed``; ``blocks`` counts blocks after genesis."""
    rng = random.Random(seed)
    addrs = [_address(seed, i) for i in range(accounts)]
    balances = {a: rng.randint(10 ** 18, 10 ** 21) for a in addrs}
    nonces = {a: 0 for a in addrs}
    balance_history = [dict(balances)]
    nonce_history = [dict(nonces)]
    genesis = Block(0, hex32(seed, "block", 0), "0x" + "00" * 32, (), GENESIS_TIME, "0x" + "00" * 20,
                    hex32(seed, "el-state", 0), hex32(seed, "txroot", 0), hex32(seed, "rcroot", 0), 10 ** 9)
    chain_blocks = [genesis]
    per_block = [transactions // blocks + (1 if i < transactions % blocks else 0) for i in range(blocks)] if blocks else []
    for n in range(1, blocks + 1):
        base_fee = 10 ** 9 + rng.randint(0, 10 ** 8)
        txs = []
        for idx in range(per_block[n - 1]):
            sender = rng.choice(addrs)
            to = rng.choice([a for a in addrs[:16] if a != sender])
            price = base_fee + rng.randint(1, 10 ** 9)
            fee = price * TRANSFER_GAS
            value = rng.randint(0, max(0, balances[sender] - fee) // 10)
            balances[sender] -= value + fee
            balances[to] += value
            txs.append(Tx(hex32(seed, "tx", n, idx), n, idx, sender, to, value, nonces[sender], price))
            nonces[sender] += 1
        chain_blocks.append(Block(
            number=n, hash=hex32(seed, "block", n), parent_hash=chain_blocks[-1].hash, transactions=tuple(txs),
            timestamp=GENESIS_TIME + n * SECONDS_PER_SLOT, miner=rng.choice(addrs),
            state_root=hex32(seed, "el-state", n), transactions_root=hex32(seed, "txroot", n),
            receipts_root=hex32(seed, "rcroot", n), base_fee=base_fee,
        ))
        balance_history.append(dict(balances))
        nonce_history.append(dict(nonces))

    headers = []
    for s in range(blocks + 1):
        headers.append(BeaconHeader(
            slot=s, proposer_index=int.from_bytes(digest(seed, "proposer", s)[:4], "big") % max(1, validators),
            root=hex32(seed, "beacon", s), parent_root=hex32(seed, "beacon", s - 1) if s else "0x" + "00" * 32,
            state_root=hex32(seed, "cl-state", s), body_root=hex32(seed, "body", s),
            signature="0x" + (digest(seed, "sig", s) * 3).hex(),
        ))
    vals = [Validator(i, "0x" + (digest(seed, "pubkey", i) + digest(seed, "pubkey2", i)[:16]).hex(),
                      32_000_000_000 + rng.randint(0, 10 ** 7)) for i in range(validators)]
    peer_list = []
    for i in range(peers):
        pid = _peer_id(seed, i)
        peer_list.append(Peer(
            peer_id=pid, enr="enr:-" + digest(seed, "enr", i).hex(),
            address=f"/ip4/10.0.0.{i + 2}/tcp/9000/p2p/{pid}",
            state="connected" if i % 3 else "disconnected", direction="inbound" if i % 2 else "outbound",
        ))
    return SyntheticChain(
        rng_seed=seed, blocks=chain_blocks, accounts=balances, current_slot=blocks,
        finalized_epochs=finalized_epochs, balance_history=balance_history, nonce_history=nonce_history,
        headers=headers, validators=vals, peers=peer_list, identity_peer_id=_peer_id(seed, "self"),
    )
