"""Deterministic discrete-event simulator of a layered service stack.

Components sit in slots; a slot has a fixed layer index and keeps its links
when the component in it is rotated out. Messages move one link per hop and
middle components only ever look at the bare name in front of ``#``.

Two channels share the relay path: main calls (the actual service) and NSVTP
capsules between the northern endpoint (application) and the southern one
(CPU core). Southwise DVFS tweaks change the core's clock; the energy ledger
integrates the core's power over time.
"""

from __future__ import annotations

import enum
import hashlib
import heapq
import itertools
import json
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Callable, Iterable

from . import capsule as cap
from . import tx as txm
from .dvfs import CyclePattern, DvfsModelParams, core_power
from .errors import (
    AlreadyDead,
    DeadComponent,
    NoPath,
    NsvtpError,
    PathwayNotEstablished,
    PoolExhausted,
    SchemeError,
    TopologyError,
    TweakRejected,
)
from .scheme import Blueprint, FiniteSet, Tweak, evaluate_formula, parse_blueprint, validate_tweak

DVFS_SCHEME = "dvfs"
DVFS_FORMULA = "set_freq"
STATUS_FORMULA = "power_now"


class Grade(enum.Enum):
    LOW = "low"
    HIGH = "high"


class EventKind(str, enum.Enum):
    MAIN_CALL = "main_call"
    MAIN_RESULT = "main_result"
    RELAY_HOP = "relay_hop"
    MESSAGE_PARKED = "message_parked"
    MESSAGE_RESUMED = "message_resumed"
    FAILURE = "failure"
    ROTATION = "rotation"
    NSVTP_MESSAGE = "nsvtp_message"
    NSVTP_RECEIVED = "nsvtp_received"
    NSVTP_DROPPED = "nsvtp_dropped"
    FREQUENCY_CHANGE_START = "frequency_change_start"
    FREQUENCY_CHANGE_DONE = "frequency_change_done"
    TWEAK_REJECTED = "tweak_rejected"
    PATHWAY_ESTABLISHED = "pathway_established"
    PATHWAY_CLOSED = "pathway_closed"
    TX_DEPOSIT = "tx.deposit"
    TX_CLAIM = "tx.claim"
    TX_RELEASE = "tx.release"
    TX_REJECT = "tx.reject"
    TX_NOTIFY_SOUTH = "tx.notify_south"


# Messages sent *to* the exchange; none may follow a release on one pathway.
TX_ADDRESSED = frozenset({EventKind.TX_DEPOSIT.value, EventKind.TX_CLAIM.value})


class TxMode(str, enum.Enum):
    VIA_TX = "tx"
    DIRECT = "direct"


# -- components and topology -------------------------------------------------


@dataclass
class Component:
    id: str
    role: str
    grade: Grade = Grade.LOW
    blueprint: Blueprint | None = None
    layer: int = -1
    state: dict = field(default_factory=dict)
    alive: bool = True
    decode_count: int = 0
    relay_log: list = field(default_factory=list)

    def __post_init__(self):
        cap.check_resource_id(self.id)
        self.grade = Grade(self.grade)

    def relay(self, data: bytes) -> bytes:
        """Middle-layer behaviour: note the bare name, pass bytes on untouched."""
        name, _ = cap.split_extended_id(data)
        self.relay_log.append(name)
        return data

    def decode(self, data: bytes, ctx=cap.EMPTY_CONTEXT, key=None) -> cap.ExtendedResourceId:
        self.decode_count += 1
        return cap.decode_extended_id(data, ctx, key)


def main_function(role: str, payload: bytes) -> str:
    """The service a role provides; identical for every component of a role."""
    return hashlib.sha256(role.encode() + b"\0" + payload).hexdigest()[:16]


class Pool:
    """Spare components by role; take() prefers the same grade, then upgrades."""

    def __init__(self, spares: Iterable[Component] = ()):
        self.spares: list[Component] = list(spares)

    def __len__(self):
        return len(self.spares)

    def take(self, role: str, grade: Grade) -> Component:
        order = [grade] if grade is Grade.HIGH else [Grade.LOW, Grade.HIGH]
        for wanted in order:
            for i, c in enumerate(self.spares):
                if c.role == role and c.grade is wanted and c.alive:
                    return self.spares.pop(i)
        raise PoolExhausted(f"no spare for role {role!r} at grade {grade.value} or above")


@dataclass(frozen=True)
class Hop:
    src: str
    dst: str
    src_layer: int
    dst_layer: int


@dataclass
class DeliveryTrace:
    hops: list
    data: bytes


class StackTopology:
    """Slots on one or more columns; links only between adjacent layers.

    ``columns`` lists each column bottom-up; slot ``"c{i}/L{j}"`` holds the
    component at layer ``j`` of column ``i``. Extra ``links`` may join slots
    of different columns, again only one layer apart.
    """

    def __init__(self, columns, links=(), pool: Pool | None = None):
        self.slots: dict[str, Component] = {}
        self.layers: dict[str, int] = {}
        self.adj: dict[str, set[str]] = {}
        for ci, column in enumerate(columns):
            prev = None
            for layer, comp in enumerate(column):
                key = f"c{ci}/L{layer}"
                self._place(key, layer, comp)
                self.adj[key] = set()
                if prev is not None:
                    self._link(prev, key)
                prev = key
        for a, b in links:
            self._link(a, b)
        ids = [c.id for c in self.slots.values()]
        if len(set(ids)) != len(ids):
            raise TopologyError("component IDs must be unique")
        self.pool = pool if pool is not None else Pool()

    def _place(self, key, layer, comp):
        comp.layer = layer
        self.slots[key] = comp
        self.layers[key] = layer

    def _link(self, a, b):
        if a not in self.layers or b not in self.layers:
            raise TopologyError(f"link {a}-{b} names an unknown slot")
        if abs(self.layers[a] - self.layers[b]) != 1:
            raise TopologyError(f"link {a}-{b} skips layers ({self.layers[a]} vs {self.layers[b]})")
        self.adj[a].add(b)
        self.adj[b].add(a)

    @property
    def links(self) -> set[frozenset]:
        return {frozenset((a, b)) for a, nbrs in self.adj.items() for b in nbrs}

    def slot_of(self, component_id: str) -> str:
        for key, c in self.slots.items():
            if c.id == component_id:
                return key
        raise TopologyError(f"no component {component_id!r} in the stack")

    def component(self, ref: str) -> Component:
        return self.slots[ref] if ref in self.slots else self.slots[self.slot_of(ref)]

    def layer_of(self, component_id: str) -> int:
        """Ground-truth layer index; this is the exchange's layer oracle."""
        return self.layers[self.slot_of(component_id)]

    def route(self, src: str, dst: str) -> list[str]:
        """Shortest slot path by breadth-first search (neighbours visited in sorted order)."""
        a = src if src in self.slots else self.slot_of(src)
        b = dst if dst in self.slots else self.slot_of(dst)
        prev = {a: None}
        queue = deque([a])
        while queue:
            cur = queue.popleft()
            if cur == b:
                break
            for nxt in sorted(self.adj[cur]):
                if nxt not in prev:
                    prev[nxt] = cur
                    queue.append(nxt)
        if b not in prev:
            raise NoPath(f"no link path from {a} to {b}")
        path = [b]
        while path[-1] != a:
            path.append(prev[path[-1]])
        return path[::-1]

    def install(self, slot: str, comp: Component):
        self._place(slot, self.layers[slot], comp)


def deliver_main_call(topology: StackTopology, src: str, dst: str, payload) -> DeliveryTrace:
    """Synchronously walk ``payload`` from ``src`` to ``dst`` through middle relays."""
    data = payload if isinstance(payload, bytes) else cap.encode_extended_id(payload)
    path = topology.route(src, dst)
    for key in path:
        if not topology.slots[key].alive:
            raise DeadComponent(f"{topology.slots[key].id} on the path is dead")
    hops = []
    for i in range(1, len(path)):
        a, b = topology.slots[path[i - 1]], topology.slots[path[i]]
        hops.append(Hop(a.id, b.id, a.layer, b.layer))
        if i < len(path) - 1:
            data = b.relay(data)
    return DeliveryTrace(hops, data)


# -- blueprints for the DVFS use case ------------------------------------------


def frequency_steps(p: DvfsModelParams, count: int = 5) -> list[float]:
    if p.f_min == p.f_max:
        return [p.f_max]
    inner = [p.f_min + i * (p.f_max - p.f_min) / (count - 1) for i in range(1, count - 1)]
    return sorted({p.f_min, p.f_max, *inner})


def core_blueprint_text(p: DvfsModelParams, delta: float, grade: Grade | str) -> str:
    """Blueprint of a CPU core; only the high grade exposes the DVFS scheme."""
    grade = Grade(grade)
    r = repr
    consts = "\n".join(
        [
            f"    const P0 = {r(float(p.P0))} [W];",
            f"    const P3 = {r(float(p.P3))} [W];",
            f"    const f_max = {r(float(p.f_max))} [GHz];",
            f"    const n_dvfs = {r(float(p.n_dvfs))};",
            f"    const l_max = {r(float(p.l_max))} [MIPS];",
            "    const load [MIPS];",
        ]
    )
    if grade is Grade.HIGH:
        freq = f"[{r(float(p.f_min))}, {r(float(p.f_max))}]"
    else:
        freq = "{" + r(float(p.f_max)) + "}"
    body = (
        f'blueprint "cpu-core/{grade.value}" revision 1 {{\n'
        "  scheme status {\n"
        f"{consts}\n"
        f"    param frequency : {freq} [GHz];\n"
        "    outcome power;\n"
        "    formula power_now : (P0 + P3 * (frequency / f_max) ^ n_dvfs) * (load / l_max) -> power;\n"
        "  }\n"
    )
    if grade is Grade.HIGH:
        steps = ", ".join(r(float(f)) for f in frequency_steps(p))
        body += (
            "  scheme dvfs {\n"
            f"{consts}\n"
            f"    param freq_step : {{{steps}}} [GHz];\n"
            f"    param latency : {{{r(float(delta))}}} [s];\n"
            "    outcome power;\n"
            "    formula set_freq : (P0 + P3 * (freq_step / f_max) ^ n_dvfs) * (load / l_max) -> power;\n"
            "  }\n"
        )
    return body + "}\n"


def core_blueprint(p: DvfsModelParams, delta: float, grade: Grade | str) -> Blueprint:
    return parse_blueprint(core_blueprint_text(p, delta, grade))


def transition_latency(bp: Blueprint) -> float:
    latency = bp.scheme(DVFS_SCHEME).param("latency").feasible
    if not isinstance(latency, FiniteSet) or len(latency.values) != 1:
        raise TopologyError("DVFS latency must be a singleton feasible set")
    return latency.values[0]


# -- energy ------------------------------------------------------------------


class EnergyLedger:
    """Piecewise-constant power of one slot, integrated on demand."""

    def __init__(self):
        self.points: list[tuple[float, float]] = []

    def set(self, t: float, watts: float):
        if self.points and self.points[-1][0] == t:
            self.points[-1] = (t, watts)
        else:
            self.points.append((t, watts))

    def energy(self, until: float) -> float:
        total = 0.0
        for (t0, w), nxt in zip(self.points, self.points[1:] + [(until, None)]):
            t1 = min(nxt[0], until)
            if t1 > t0:
                total += w * (t1 - t0)
        return total


# -- pathways and messages ---------------------------------------------------


@dataclass
class Pathway:
    id: str
    south: str
    north: str
    mode: TxMode
    north_key: bytes = b""
    south_key: bytes = b""
    blueprint: Blueprint | None = None
    established_at: float | None = None
    south_ready: bool = False
    north_ready: bool = False
    # per-direction elision state, one copy per side
    north_send: cap.ElisionContext = cap.EMPTY_CONTEXT
    north_recv: cap.ElisionContext = cap.EMPTY_CONTEXT
    south_send: cap.ElisionContext = cap.EMPTY_CONTEXT
    south_recv: cap.ElisionContext = cap.EMPTY_CONTEXT
    closed: bool = False

    @property
    def ready(self) -> bool:
        return self.south_ready and self.north_ready and not self.closed


@dataclass
class Message:
    id: int
    channel: str  # "main" or "nsvtp"
    path: list
    data: bytes
    on_arrive: Callable
    dst_id: str
    base_t: float = 0.0
    base_hop: int = 0
    hop: int = 0
    info: dict = field(default_factory=dict)


@dataclass
class Workload:
    cycle: CyclePattern
    cycles: int

    @property
    def horizon(self) -> float:
        return self.cycles * self.cycle.period


class Simulator:
    """One run over a fixed topology.

    ``nsvtp`` switches the whole side channel; with it off only main calls
    flow and the core stays at full frequency.
    """

    def __init__(
        self,
        topology: StackTopology,
        params: DvfsModelParams,
        *,
        north: str,
        south: str,
        nsvtp: bool = True,
        tx_mode: TxMode | str = TxMode.VIA_TX,
        hop_delay: float = 0.0,
        rotation_delay: float = 0.0,
        seed: int = 0,
        tx: txm.TrustedExchange | None = None,
        claim_layer_override: int | None = None,
    ):
        self.topo = topology
        self.params = params
        self.north_slot = topology.slot_of(north) if north not in topology.slots else north
        self.south_slot = topology.slot_of(south) if south not in topology.slots else south
        self.nsvtp = nsvtp
        self.tx_mode = TxMode(tx_mode)
        self.hop_delay = float(hop_delay)
        self.rotation_delay = float(rotation_delay)
        self.seed = seed
        self.tx = tx if tx is not None else txm.TrustedExchange()
        self.claim_layer_override = claim_layer_override
        self.now = 0.0
        self._queue: list = []
        self._seq = itertools.count()
        self._msg_ids = itertools.count()
        self._pw_ids = itertools.count()
        self.trace: list[dict] = []
        self.results: list[tuple[int, str, str]] = []
        self.pathways: dict[str, Pathway] = {}
        self.parked: dict[str, list[Message]] = {}
        self.ledger = EnergyLedger()
        self.errors: list[NsvtpError] = []
        self.workload: Workload | None = None
        self._power_on(self.south, 0.0)

    # -- plumbing ----------------------------------------------------------

    @property
    def north(self) -> Component:
        return self.topo.slots[self.north_slot]

    @property
    def south(self) -> Component:
        return self.topo.slots[self.south_slot]

    def schedule(self, t: float, fn: Callable, *args):
        heapq.heappush(self._queue, (t, next(self._seq), fn, args))

    def emit(self, kind: EventKind, **fields):
        record = {"t": self.now, "seq": len(self.trace), "kind": EventKind(kind).value}
        record.update(sorted(fields.items()))
        self.trace.append(record)

    def run(self, until: float | None = None):
        while self._queue:
            t, _, fn, args = self._queue[0]
            if until is not None and t > until:
                break
            heapq.heappop(self._queue)
            self.now = t
            fn(*args)
        return self

    def trace_lines(self) -> str:
        return "".join(json.dumps(r) + "\n" for r in self.trace)

    def _key(self, pathway: Pathway, label: str) -> bytes:
        return hashlib.sha256(f"{self.seed}/{pathway.id}/{label}".encode()).digest()[:16]

    # -- power -------------------------------------------------------------

    def _power(self, comp: Component, f: float) -> float:
        return core_power(self.params, f, self.params.l_max)

    def _power_on(self, comp: Component, t: float):
        comp.state.setdefault("frequency", self.params.f_max)
        comp.state["transitioning"] = False
        comp.state.setdefault("deferred", [])
        self.ledger.set(t, self._power(comp, comp.state["frequency"]))

    # -- message transport -------------------------------------------------

    def _send(self, channel, src_slot, dst_slot, data, on_arrive, info):
        path = self.topo.route(src_slot, dst_slot)
        msg = Message(
            next(self._msg_ids), channel, path, data, on_arrive,
            self.topo.slots[dst_slot].id, base_t=self.now, info=info,
        )
        if len(path) == 1:
            self.schedule(self.now, self._arrive, msg)
        else:
            self.schedule(self.now + self.hop_delay, self._hop, msg)
        return msg

    def _hop(self, msg: Message):
        src_key, dst_key = msg.path[msg.hop], msg.path[msg.hop + 1]
        dst = self.topo.slots[dst_key]
        if not dst.alive:
            self.parked.setdefault(dst_key, []).append(msg)
            self.emit(EventKind.MESSAGE_PARKED, msg=msg.id, channel=msg.channel, slot=dst_key, component=dst.id)
            return
        src = self.topo.slots[src_key]
        msg.hop += 1
        self.emit(
            EventKind.RELAY_HOP, msg=msg.id, channel=msg.channel,
            src=src.id, dst=dst.id, src_layer=src.layer, dst_layer=dst.layer,
        )
        if msg.hop == len(msg.path) - 1:
            self._arrive(msg)
            return
        msg.data = dst.relay(msg.data)
        self.schedule(msg.base_t + (msg.hop + 1 - msg.base_hop) * self.hop_delay, self._hop, msg)

    def _arrive(self, msg: Message):
        msg.on_arrive(msg)

    def _resume(self, slot: str):
        for msg in self.parked.pop(slot, []):
            self.emit(EventKind.MESSAGE_RESUMED, msg=msg.id, channel=msg.channel, slot=slot)
            msg.base_t, msg.base_hop = self.now, msg.hop
            self.schedule(self.now + self.hop_delay, self._hop, msg)

    # -- main service ------------------------------------------------------

    def issue_main_call(self, call_id: int, payload: cap.ExtendedResourceId):
        data = cap.encode_extended_id(payload)
        self.emit(EventKind.MAIN_CALL, call=call_id, src=self.north.id, payload=data.decode())
        self._send("main", self.north_slot, self.south_slot, data, self._main_at_core, {"call": call_id})

    def _main_at_core(self, msg: Message):
        core = self.topo.slots[msg.path[-1]]
        if core.state.get("transitioning"):
            # active but not stable: nothing retires until the clock settles
            core.state["deferred"].append(msg)
            return
        result = main_function(core.role, msg.data)
        self._send(
            "main", msg.path[-1], msg.path[0], result.encode(), self._main_at_app,
            {"call": msg.info["call"], "result": result},
        )

    def _main_at_app(self, msg: Message):
        self.results.append((msg.info["call"], msg.info["result"], msg.data.decode()))
        self.emit(EventKind.MAIN_RESULT, call=msg.info["call"], result=msg.info["result"])

    def result_multiset(self) -> Counter:
        return Counter(r for _, r, _ in self.results)

    # -- failure and rotation ----------------------------------------------

    def fail_component(self, component_id: str, t: float | None = None, rotate: bool = True):
        """Mark a component dead at ``t``; messages bound for it wait for rotation."""
        t = self.now if t is None else t
        if not self.topo.component(component_id).alive and t <= self.now:
            raise AlreadyDead(f"{component_id} is already dead")
        self.schedule(t, self._fail, component_id, rotate)

    def _fail(self, component_id: str, rotate: bool):
        slot = self.topo.slot_of(component_id)
        comp = self.topo.slots[slot]
        if not comp.alive:
            raise AlreadyDead(f"{component_id} is already dead")
        comp.alive = False
        self.emit(EventKind.FAILURE, component=comp.id, slot=slot, layer=comp.layer)
        if slot == self.south_slot:
            self.ledger.set(self.now, 0.0)
        for pw in self.pathways.values():
            if not pw.closed and comp.id in (pw.south, pw.north):
                pw.closed = True
                self.emit(EventKind.PATHWAY_CLOSED, pathway=pw.id, reason="failure")
        if rotate:
            self.schedule(self.now + self.rotation_delay, self._rotate, slot)

    def rotate_component(self, dead_id: str) -> Component:
        """Install a spare in the dead component's slot, right now."""
        slot = self.topo.slot_of(dead_id)
        if self.topo.slots[slot].alive:
            raise DeadComponent(f"{dead_id} is alive; nothing to rotate")
        return self._rotate(slot)

    def _rotate(self, slot: str) -> Component:
        dead = self.topo.slots[slot]
        spare = self.topo.pool.take(dead.role, dead.grade)
        spare.alive = True
        self.topo.install(slot, spare)
        self.emit(
            EventKind.ROTATION, slot=slot, dead=dead.id, replacement=spare.id,
            grade=spare.grade.value, upgraded=spare.grade is not dead.grade,
        )
        if slot == self.south_slot:
            spare.state["frequency"] = self.params.f_max
            self._power_on(spare, self.now)
            if self.nsvtp:
                self.open_pathway()
        self._resume(slot)
        return spare

    # -- pathway establishment ---------------------------------------------

    def open_pathway(self) -> Pathway:
        south, north = self.south, self.north
        if not south.alive or not north.alive:
            raise DeadComponent("both pathway ends must be alive")
        pw = Pathway(f"pw{next(self._pw_ids)}", south.id, north.id, self.tx_mode)
        pw.north_key = self._key(pw, "k")
        relay_key = self._key(pw, "k'")
        pw.south_key = self._key(pw, "k''")
        self.pathways[pw.id] = pw
        if south.blueprint is None:
            raise TopologyError(f"{south.id} has no blueprint to expose")
        if self.tx_mode is TxMode.VIA_TX:
            self._tx_initiate(pw, relay_key)
        else:
            self._direct_initiate(pw)
        return pw

    def _nsvtp_send(self, pw, direction, capsule, config, purpose, track=True):
        src_slot, dst_slot = (
            (self.south_slot, self.north_slot)
            if direction is cap.Direction.NORTHWISE
            else (self.north_slot, self.south_slot)
        )
        src = self.topo.slots[src_slot]
        if direction is cap.Direction.NORTHWISE:
            ctx = pw.south_send if track else cap.EMPTY_CONTEXT
        else:
            ctx = pw.north_send if track else cap.EMPTY_CONTEXT
        data = cap.encode_extended_id(cap.ExtendedResourceId(src.id, capsule), ctx, config)
        if track:
            if direction is cap.Direction.NORTHWISE:
                pw.south_send = ctx.advance(capsule)
            else:
                pw.north_send = ctx.advance(capsule)
        segments = [n for n, v in (("blueprint", capsule.blueprint), ("status", capsule.status)) if v is not None]
        segments += ["tweak"] * len(capsule.tweaks)
        info = {"pathway": pw.id, "direction": direction.name.lower(), "purpose": purpose,
                "key": config.key, "track": track}
        msg = self._send("nsvtp", src_slot, dst_slot, data, self._nsvtp_arrive, info)
        self.emit(
            EventKind.NSVTP_MESSAGE, msg=msg.id, pathway=pw.id, src=src.id,
            dst=self.topo.slots[dst_slot].id, direction=direction.name.lower(),
            purpose=purpose, segments=segments, wire=data.decode(),
        )
        return msg

    def _nsvtp_arrive(self, msg: Message):
        info = msg.info
        pw = self.pathways[info["pathway"]]
        receiver = self.topo.slots[msg.path[-1]]
        if receiver.id != msg.dst_id or pw.closed:
            self.emit(EventKind.NSVTP_DROPPED, msg=msg.id, pathway=pw.id, reason="endpoint gone")
            return
        northwise = info["direction"] == "northwise"
        if info["track"]:
            ctx = pw.north_recv if northwise else pw.south_recv
        else:
            ctx = cap.EMPTY_CONTEXT
        xid = receiver.decode(msg.data, ctx, info["key"])
        if info["track"]:
            if northwise:
                pw.north_recv = ctx.advance(xid.appendix)
            else:
                pw.south_recv = ctx.advance(xid.appendix)
        self.emit(
            EventKind.NSVTP_RECEIVED, msg=msg.id, pathway=pw.id, at=receiver.id,
            purpose=info["purpose"], sender=xid.id,
        )
        handler = getattr(self, f"_on_{info['purpose']}")
        handler(pw, xid.appendix)

    # Trusted-exchange initiation

    def _tx_initiate(self, pw: Pathway, relay_key: bytes):
        south = self.south
        sealed_cs = txm.seal_blueprint(south.blueprint.to_bytes(), pw.north_key)
        bundle = txm.seal_bundle(sealed_cs, pw.north_key, relay_key)
        target = self.topo.layers[self.north_slot]
        receipt = self.tx.deposit(txm.Deposit(relay_key, bundle, target, south.id), now=self.now)
        self.emit(
            EventKind.TX_DEPOSIT, pathway=pw.id, depositor=south.id, target_layer=target,
            relay_key_digest=receipt.relay_key_digest[:16], expires_at=receipt.expires_at,
        )
        # the south side of the northwise context now holds the blueprint sent as C_s
        pw.south_send = pw.south_send.advance(cap.northwise(south.blueprint.to_bytes()))
        self._nsvtp_send(
            pw, cap.Direction.NORTHWISE, cap.northwise(status={"relay_key": relay_key.hex()}),
            cap.CodecConfig(), "relay_key", track=False,
        )

    def _on_relay_key(self, pw: Pathway, capsule: cap.Capsule):
        north = self.north
        relay_key = bytes.fromhex(capsule.status.entries["relay_key"])
        claimed = self.topo.layer_of(north.id)
        if self.claim_layer_override is not None:
            claimed = self.claim_layer_override
        self.emit(EventKind.TX_CLAIM, pathway=pw.id, claimant=north.id, claimed_layer=claimed)
        req = txm.ClaimRequest(relay_key, claimed, pw.south_key, north.id)
        try:
            got = self.tx.claim(req, self.topo.layer_of, now=self.now)
        except NsvtpError as exc:
            self.emit(EventKind.TX_REJECT, pathway=pw.id, claimant=north.id, error=type(exc).__name__, detail=str(exc))
            self.errors.append(exc)
            return
        self.emit(EventKind.TX_RELEASE, pathway=pw.id, claimant=north.id, depositor=got.depositor)
        blueprint_bytes = txm.unseal_blueprint(got.capsule, got.north_key)
        north.decode_count += 1  # unsealing C_s is a capsule decode at the north end
        pw.north_recv = pw.north_recv.advance(cap.northwise(blueprint_bytes))
        pw.blueprint = parse_blueprint(blueprint_bytes.decode("utf-8"))
        pw.north_key = got.north_key
        self._mark_ready(pw, "north")
        for notice in self.tx.drain_notices():
            self.emit(EventKind.TX_NOTIFY_SOUTH, pathway=pw.id, depositor=notice.depositor, claimant=notice.claimant)
            if notice.depositor == pw.south:
                pw.south_key = notice.south_key
                self._mark_ready(pw, "south")

    # TX-less initiation

    def _direct_initiate(self, pw: Pathway):
        south = self.south
        capsule = cap.northwise(south.blueprint.to_bytes(), {"north_key": pw.north_key.hex()})
        self._nsvtp_send(pw, cap.Direction.NORTHWISE, capsule, cap.CodecConfig(), "direct_offer")

    def _on_direct_offer(self, pw: Pathway, capsule: cap.Capsule):
        pw.blueprint = parse_blueprint(capsule.blueprint.decode("utf-8"))
        pw.north_key = bytes.fromhex(capsule.status.entries["north_key"])
        self._mark_ready(pw, "north")
        reply = cap.southwise(status={"south_key": pw.south_key.hex()})
        self._nsvtp_send(pw, cap.Direction.SOUTHWISE, reply, cap.CodecConfig(), "direct_accept")

    def _on_direct_accept(self, pw: Pathway, capsule: cap.Capsule):
        pw.south_key = bytes.fromhex(capsule.status.entries["south_key"])
        self._mark_ready(pw, "south")

    def _mark_ready(self, pw: Pathway, side: str):
        setattr(pw, f"{side}_ready", True)
        self.emit(EventKind.PATHWAY_ESTABLISHED, pathway=pw.id, side=side, mode=pw.mode.value,
                  south=pw.south, north=pw.north)
        if pw.ready and pw.established_at is None:
            pw.established_at = self.now

    def active_pathway(self) -> Pathway | None:
        for pw in reversed(list(self.pathways.values())):
            if pw.ready and pw.south == self.south.id and pw.north == self.north.id:
                return pw
        return None

    # -- post-initiation traffic -------------------------------------------

    def send_nsvtp(self, src: str, dst: str, capsule: cap.Capsule):
        """Send a capsule on the established pathway between ``src`` and ``dst``."""
        pw = self.active_pathway()
        ends = {self.south.id, self.north.id}
        if pw is None or {src, dst} != ends:
            raise PathwayNotEstablished(f"no pathway between {src} and {dst}")
        if capsule.direction is cap.Direction.SOUTHWISE:
            if src != self.north.id:
                raise PathwayNotEstablished("southwise capsules start at the northern end")
            for t in capsule.tweaks:
                try:
                    validate_tweak(t, pw.blueprint, {"load": self.params.l_max})
                except SchemeError as exc:
                    raise TweakRejected(exc) from exc
            config = cap.CodecConfig(key=pw.south_key)
            return self._nsvtp_send(pw, capsule.direction, capsule, config, "tweak")
        if src != self.south.id:
            raise PathwayNotEstablished("northwise capsules start at the southern end")
        config = cap.CodecConfig(key=pw.north_key)
        return self._nsvtp_send(pw, capsule.direction, capsule, config, "status")

    def _on_tweak(self, pw: Pathway, capsule: cap.Capsule):
        core = self.south
        for tweak in capsule.tweaks:
            try:
                validate_tweak(tweak, core.blueprint, {"load": self.params.l_max})
            except SchemeError as exc:
                self.emit(EventKind.TWEAK_REJECTED, pathway=pw.id, tweak=str(tweak), error=type(exc).__name__)
                continue
            self._start_frequency_change(core, tweak.bindings["freq_step"], tweak.bindings["latency"])

    def _on_status(self, pw: Pathway, capsule: cap.Capsule):
        self.north.state["south_status"] = dict(capsule.status.entries) if capsule.status else {}

    def _start_frequency_change(self, core: Component, target: float, latency: float):
        current = core.state["frequency"]
        self.emit(EventKind.FREQUENCY_CHANGE_START, component=core.id, from_ghz=current, to_ghz=target, latency=latency)
        # billed at the higher of the two levels while the clock is unstable
        self.ledger.set(self.now, max(self._power(core, current), self._power(core, target)))
        core.state["transitioning"] = True
        token = core.state["transition"] = core.state.get("transition", 0) + 1
        self.schedule(self.now + latency, self._finish_frequency_change, core, target, token)

    def _finish_frequency_change(self, core: Component, target: float, token: int):
        if not core.alive or self.south is not core:
            return
        if token != core.state["transition"]:
            return  # superseded by a later change
        core.state["frequency"] = target
        core.state["transitioning"] = False
        watts = self._power(core, target)
        self.ledger.set(self.now, watts)
        self.emit(EventKind.FREQUENCY_CHANGE_DONE, component=core.id, ghz=target, power_w=watts)
        deferred, core.state["deferred"] = core.state["deferred"], []
        for msg in deferred:
            self._main_at_core(msg)
        pw = self.active_pathway()
        if pw is not None:
            status = self._status_record(core, pw)
            self.send_nsvtp(core.id, self.north.id, cap.northwise(core.blueprint.to_bytes(), status))

    def _status_record(self, core: Component, pw: Pathway) -> dict:
        scheme = core.blueprint.status_scheme
        f = core.state["frequency"]
        entries = {"frequency": f}
        if scheme is not None:
            formula = scheme.formula(STATUS_FORMULA)
            entries[formula.outcome] = evaluate_formula(scheme, formula, {"frequency": f}, {"load": self.params.l_max})
        return entries

    # -- workload ----------------------------------------------------------

    def load_workload(self, workload: Workload):
        """Schedule ``cycles`` compute/exchange cycles starting at t=0."""
        self.workload = workload
        c = workload.cycle
        for k in range(workload.cycles):
            t0 = k * c.period
            payload = cap.ExtendedResourceId(f"job-{k:05d}")
            self.schedule(t0, self.issue_main_call, k, payload)
            if self.nsvtp:
                # leave early so each tweak lands exactly on schedule
                lead = self._hops() * self.hop_delay
                self.schedule(max(t0 + c.t_comp - lead, 0.0), self._app_tweak, "low")
                self.schedule(max(t0 + c.period - c.delta - lead, 0.0), self._app_tweak, "high")

    def _hops(self) -> int:
        return len(self.topo.route(self.north_slot, self.south_slot)) - 1

    def _app_tweak(self, level: str):
        pw = self.active_pathway()
        if pw is None or pw.blueprint is None or not pw.blueprint.has_scheme(DVFS_SCHEME):
            return
        scheme = pw.blueprint.scheme(DVFS_SCHEME)
        steps = scheme.param("freq_step").feasible.values
        f = min(steps) if level == "low" else max(steps)
        tweak = Tweak(DVFS_SCHEME, DVFS_FORMULA, {"freq_step": f, "latency": transition_latency(pw.blueprint)})
        self.send_nsvtp(self.north.id, self.south.id, cap.southwise([tweak]))

    def start(self):
        if self.nsvtp:
            self.open_pathway()
        return self


def middle_decodes(topology: StackTopology, north_slot: str, south_slot: str) -> int:
    return sum(
        c.decode_count for key, c in topology.slots.items() if key not in (north_slot, south_slot)
    )
