"""Cycle-approximate engine for one kernel launch across the SMs of a GPU.

Each SM runs two instruction schedulers that issue greedily from their
current warp and fall back to the oldest ready one.  Global memory round
trips share a fixed number of in-flight request slots; arithmetic and
scratchpad accesses complete in one cycle.  Under the virtualizing policy
every register access consults the register mapping table and every
scratchpad access additionally consults the scratchpad table, each consult
adding a fixed pipeline penalty to that warp, and touching a set that lives
in swap costs a full memory round trip.

Every simulated cycle lands in exactly one accounting bucket, checked in
this order: at least one instruction issued; memory stall (schedulable
warps exist but all wait on latency); idle (admissible work exists but
nothing is schedulable); barrier stall.  Counters accrue per epoch and the
epoch-over-epoch deltas of the idle and memory buckets drive the
oversubscription controller.

Blocks are distributed round-robin over the SMs; SMs with equal block
counts behave identically, so one replica is simulated per distinct count
and the launch finishes when the slowest replica does.
"""

from __future__ import annotations

import enum
import heapq
from dataclasses import dataclass, replace
from typing import Optional, Union

from .coordinator import (
    BlockRecord,
    Coordinator,
    OversubscriptionConfig,
    WarpRecord,
    WarpState,
)
from .kernel_model import (
    SCRATCH_OPCODES,
    KernelSpec,
    Opcode,
    ResourceSpecification,
)
from .phase_compiler import annotate_phases
from .resource_maps import (
    ArchConfig,
    ResourceKind,
    get_arch,
    reg_sets_for,
    scratch_sets_for,
)
from .policies import Policy, baseline_blocks_in_flight, wlm_is_runnable

DEFAULT_CYCLE_CAP = 30_000_000


class NonTerminationError(RuntimeError):
    """Simulation exceeded its cycle cap or wedged with no way forward."""


class KernelUnrunnableError(RuntimeError):
    """The kernel can make no progress under the chosen policy and hardware."""


class EventKind(enum.IntEnum):
    """End-of-cycle event precedence (lower value handled first)."""

    BLOCK_ARRIVAL = 0
    PHASE_CHANGE = 1
    BARRIER_REACHED = 2
    WARP_FINISHED = 3
    BLOCK_FINISHED = 4
    EPOCH_TICK = 5


@dataclass(frozen=True)
class EpochStats:
    index: int
    issued_instructions: int
    issued_cycles: int
    c_idle: int
    c_mem: int
    barrier_stall: int
    reg_swap_accesses: int
    scratch_swap_accesses: int
    slot_swap_accesses: int

    @property
    def swap_accesses(self) -> int:
        return (
            self.reg_swap_accesses
            + self.scratch_swap_accesses
            + self.slot_swap_accesses
        )

    @property
    def span(self) -> int:
        return self.issued_cycles + self.c_idle + self.c_mem + self.barrier_stall


def _mean_defined(values: tuple[Optional[float], ...]) -> Optional[float]:
    defined = [v for v in values if v is not None]
    if not defined:
        return None
    return sum(defined) / len(defined)


@dataclass(frozen=True)
class UtilizationReport:
    """Per-epoch fraction of statically allocated space that was live.

    Each entry is the mean over the epoch's cycles of live/allocated for
    that resource; None where the resource was never allocated during the
    epoch (no block in flight, or the kernel declares none of it).
    """

    register_per_epoch: tuple[Optional[float], ...]
    scratch_per_epoch: tuple[Optional[float], ...]

    @property
    def register_utilization(self) -> Optional[float]:
        return _mean_defined(self.register_per_epoch)

    @property
    def scratch_utilization(self) -> Optional[float]:
        return _mean_defined(self.scratch_per_epoch)


@dataclass(frozen=True)
class SimResult:
    kernel_name: str
    policy: str
    arch: str
    seed: int
    spec: ResourceSpecification
    cycles: int
    issued_instructions: int
    issued_cycles: int
    c_idle: int
    c_mem: int
    barrier_stall: int
    reg_hit_rate: float
    scratch_hit_rate: float
    slot_hit_rate: float
    mean_schedulable_warps: float
    blocks_in_flight_min: int
    blocks_in_flight_max: int
    blocks_in_flight_trace: tuple[tuple[int, int], ...]
    guard_admissions: int
    o_thresh_final: dict[str, int]
    epochs: tuple[EpochStats, ...]
    utilization: Optional[UtilizationReport] = None
    event_log: Optional[tuple[tuple[int, str, int], ...]] = None

    def to_dict(self) -> dict:
        return {
            "kernel": self.kernel_name,
            "policy": self.policy,
            "arch": self.arch,
            "seed": self.seed,
            "threads_per_block": self.spec.threads_per_block,
            "regs_per_thread": self.spec.regs_per_thread,
            "scratch_bytes_per_block": self.spec.scratch_bytes_per_block,
            "num_blocks": self.spec.num_blocks,
            "cycles": self.cycles,
            "issued_instructions": self.issued_instructions,
            "issued_cycles": self.issued_cycles,
            "c_idle": self.c_idle,
            "c_mem": self.c_mem,
            "barrier_stall": self.barrier_stall,
            "reg_hit_rate": self.reg_hit_rate,
            "scratch_hit_rate": self.scratch_hit_rate,
            "slot_hit_rate": self.slot_hit_rate,
            "mean_schedulable_warps": self.mean_schedulable_warps,
            "blocks_in_flight_min": self.blocks_in_flight_min,
            "blocks_in_flight_max": self.blocks_in_flight_max,
            "guard_admissions": self.guard_admissions,
            "o_thresh_final": dict(self.o_thresh_final),
            "epochs": [
                {
                    "index": e.index,
                    "issued_instructions": e.issued_instructions,
                    "issued_cycles": e.issued_cycles,
                    "c_idle": e.c_idle,
                    "c_mem": e.c_mem,
                    "barrier_stall": e.barrier_stall,
                    "reg_swap_accesses": e.reg_swap_accesses,
                    "scratch_swap_accesses": e.scratch_swap_accesses,
                    "slot_swap_accesses": e.slot_swap_accesses,
                }
                for e in self.epochs
            ],
            "utilization": None
            if self.utilization is None
            else {
                "register_per_epoch": list(self.utilization.register_per_epoch),
                "scratch_per_epoch": list(self.utilization.scratch_per_epoch),
                "register_utilization": self.utilization.register_utilization,
                "scratch_utilization": self.utilization.scratch_utilization,
            },
        }


class _MemSystem:
    """Global memory with a bounded number of in-flight round trips.

    A request past the cap starts when the earliest outstanding one
    completes.
    """

    def __init__(self, latency: int, max_inflight: int):
        self.latency = latency
        self.max_inflight = max_inflight
        self._slots: list[int] = []

    def request(self, now: int) -> int:
        if len(self._slots) < self.max_inflight:
            done = now + self.latency
        else:
            free = heapq.heappop(self._slots)
            done = max(now, free) + self.latency
        heapq.heappush(self._slots, done)
        return done


@dataclass
class _SMOutcome:
    cycles: int
    issued_instructions: int
    issued_cycles: int
    c_idle: int
    c_mem: int
    barrier_stall: int
    access_totals: dict[ResourceKind, tuple[int, int]]  # (total, swap)
    mean_schedulable: float
    bif_min: int
    bif_max: int
    trace: list[tuple[int, int]]
    guard_admissions: int
    o_thresh_final: dict[str, int]
    epochs: list[EpochStats]
    util: Optional[UtilizationReport]
    event_log: Optional[list[tuple[int, str, int]]]


class _SMRun:
    """One SM executing n_blocks copies of the kernel's block."""

    def __init__(
        self,
        kernel: KernelSpec,
        policy: Policy,
        arch: ArchConfig,
        n_blocks: int,
        oversub: OversubscriptionConfig,
        debug: bool,
        cycle_cap: int,
        collect_util: bool,
        log_events: bool,
    ):
        self.body = kernel.body
        self.spec = kernel.resource_spec
        self.policy = policy
        self.arch = arch
        self.debug = debug
        self.cycle_cap = cycle_cap
        self.collect_util = collect_util
        self.wpb = self.spec.warps_per_block
        self.remaining = n_blocks
        self.has_barrier = kernel.has_barrier()

        self.now = 0
        self.last_issue = 0
        self.warps: dict[int, WarpRecord] = {}
        self.blocks: dict[int, BlockRecord] = {}
        self.sched_set: set[int] = set()
        self.part: tuple[list[int], list[int]] = tuple(
            [] for _ in range(arch.schedulers_per_sm)
        )
        self.greedy: list[Optional[int]] = [None] * arch.schedulers_per_sm
        self.next_wid = 0
        self.next_bid = 0
        self.in_flight = 0
        self.live_warps = 0
        self.bif_min: Optional[int] = None
        self.bif_max = 0
        self.trace: list[tuple[int, int]] = []
        self.mem = _MemSystem(arch.memory_latency_cycles, arch.max_inflight_mem_requests)
        self.events: list[tuple[int, str, int]] = [] if log_events else None

        self.epochs: list[EpochStats] = []
        self.ep_issued = 0
        self.ep_issue_cycles = 0
        self.ep_idle = 0
        self.ep_mem = 0
        self.ep_barrier = 0
        self.ep_swap_snap = (0, 0, 0)
        self.prev_idle = 0
        self.prev_mem = 0
        self.tot_issued = 0
        self.sched_integral = 0

        self.ep_ureg_sum = 0.0
        self.ep_ureg_cycles = 0
        self.ep_uscr_sum = 0.0
        self.ep_uscr_cycles = 0
        self.util_reg_frac: list[Optional[float]] = []
        self.util_scr_frac: list[Optional[float]] = []
        self.live_reg_sum = 0  # per-thread live regs x warp width, summed
        self.live_scr_sum = 0
        self.block_scr_live: dict[int, int] = {}

        self.coord: Optional[Coordinator] = None
        if policy is Policy.ZORUA:
            if not kernel.is_compiled:
                raise ValueError("the virtualizing policy needs a compiled kernel")
            self._check_phase_demands(kernel)
            self.coord = Coordinator(arch, oversub)
            first = self.body[0].phase_payload
            self.init_reg_sets = reg_sets_for(first.live_regs, arch)
            self.init_scr_sets = scratch_sets_for(first.scratch_bytes, arch)
        elif policy is Policy.BASELINE:
            self.static_blocks = baseline_blocks_in_flight(self.spec, arch)
            if self.static_blocks == 0:
                raise KernelUnrunnableError(
                    "static allocation admits zero blocks on this hardware"
                )
        else:
            if not wlm_is_runnable(self.spec, arch, self.has_barrier):
                raise KernelUnrunnableError(
                    "warp-granular admission cannot complete this kernel"
                )
            self.free_regs = arch.registers_per_sm
            self.free_slots = arch.warp_slots_per_sm
            self.free_scratch = arch.scratch_bytes_per_sm
            self.regs_per_warp = self.spec.regs_per_thread * arch.warp_width
            self.partial_bid: Optional[int] = None
            self.partial_admitted = 0

    def _check_phase_demands(self, kernel: KernelSpec):
        if self.wpb > self.arch.max_logical_warps:
            raise KernelUnrunnableError("block has more warps than logical slots")
        for ins in kernel.body:
            if ins.opcode is not Opcode.PHASE_SPEC:
                continue
            p = ins.phase_payload
            rs = reg_sets_for(p.live_regs, self.arch)
            if rs > self.arch.max_reg_sets_per_warp or rs > self.arch.reg_sets_physical:
                raise KernelUnrunnableError(
                    f"phase needs {rs} register sets per warp, beyond hardware reach"
                )
            ss = scratch_sets_for(p.scratch_bytes, self.arch)
            if ss > self.arch.scratch_sets_physical:
                raise KernelUnrunnableError(
                    f"phase needs {ss} scratchpad sets per block, beyond hardware reach"
                )

    # -- logging / accounting helpers ------------------------------------

    def _log(self, kind: EventKind, ident: int):
        if self.events is not None:
            self.events.append((self.now, kind.name, ident))

    def _swap_snapshot(self) -> tuple[int, int, int]:
        if self.coord is None:
            return (0, 0, 0)
        t = self.coord.tables
        return (
            t[ResourceKind.REGISTER].swap_accesses,
            t[ResourceKind.SCRATCHPAD].swap_accesses,
            t[ResourceKind.WARP_SLOT].swap_accesses,
        )

    def _record_trace(self):
        if not self.trace or self.trace[-1][1] != self.in_flight:
            self.trace.append((self.now, self.in_flight))
        self.bif_max = max(self.bif_max, self.in_flight)
        if self.remaining > 0:
            self.bif_min = (
                self.in_flight
                if self.bif_min is None
                else min(self.bif_min, self.in_flight)
            )

    def _integrate(self, delta: int):
        self.sched_integral += len(self.sched_set) * delta
        if self.collect_util and self.in_flight:
            blk_regs = self.spec.threads_per_block * self.spec.regs_per_thread
            self.ep_ureg_sum += delta * self.live_reg_sum / (self.in_flight * blk_regs)
            self.ep_ureg_cycles += delta
            blk_scr = self.spec.scratch_bytes_per_block
            if blk_scr:
                self.ep_uscr_sum += delta * self.live_scr_sum / (self.in_flight * blk_scr)
                self.ep_uscr_cycles += delta

    def _update_live(self, w: WarpRecord, live_regs: int, live_scratch: int):
        if not self.collect_util:
            return
        self.live_reg_sum += (live_regs - w.cur_live_regs) * self.arch.warp_width
        w.cur_live_regs = live_regs
        if live_scratch != w.cur_live_scratch:
            w.cur_live_scratch = live_scratch
            blk = self.blocks[w.block_id]
            new_max = max(
                (
                    self.warps[wid].cur_live_scratch
                    for wid in blk.warp_ids
                    if self.warps[wid].state is not WarpState.FINISHED
                ),
                default=0,
            )
            old = self.block_scr_live.get(blk.bid, 0)
            if new_max != old:
                self.live_scr_sum += new_max - old
                self.block_scr_live[blk.bid] = new_max

    # -- block dispatch -----------------------------------------------------

    def _dispatch(self):
        changed = False
        if self.policy is Policy.BASELINE:
            while self.remaining and self.in_flight < self.static_blocks:
                self._start_block(admit_all=True)
                changed = True
        elif self.policy is Policy.WLM:
            changed = self._dispatch_wlm()
        else:
            while (
                self.remaining
                and self.coord.live_blocks() < self.arch.max_logical_blocks
                and self.coord.live_warps() + self.wpb <= self.arch.max_logical_warps
            ):
                self._start_block(admit_all=False)
                changed = True
        if changed:
            self._record_trace()

    def _new_block(self) -> BlockRecord:
        bid = self.next_bid
        self.next_bid += 1
        wids = tuple(range(self.next_wid, self.next_wid + self.wpb))
        self.next_wid += self.wpb
        block = BlockRecord(bid=bid, warp_ids=wids)
        self.blocks[bid] = block
        self.remaining -= 1
        self.in_flight += 1
        self.live_warps += self.wpb
        self._log(EventKind.BLOCK_ARRIVAL, bid)
        return block

    def _register_warp(self, w: WarpRecord):
        self.warps[w.wid] = w
        self.part[w.wid % len(self.part)].append(w.wid)

    def _start_block(self, admit_all: bool):
        block = self._new_block()
        if self.coord is not None:
            self.coord.on_block_arrival(block, self.init_reg_sets, self.init_scr_sets)
            for wid in block.warp_ids:
                self._register_warp(self.coord.warps[wid])
            self._apply_effects(self.now)
        else:
            for wid in block.warp_ids:
                w = WarpRecord(wid=wid, block_id=block.bid)
                self._register_warp(w)
                if admit_all:
                    w.state = WarpState.SCHEDULABLE
                    w.next_ready = self.now
                    self.sched_set.add(wid)
        if self.collect_util:
            # a warp occupies its entry working set from admission, not
            # from its first issue
            first = self.body[0]
            for wid in block.warp_ids:
                self._update_live(
                    self.warps[wid], first.live_regs_after, first.live_scratch_after
                )

    def _dispatch_wlm(self) -> bool:
        changed = False
        while True:
            if self.partial_bid is None:
                if not self.remaining:
                    return changed
                if self.free_scratch < self.spec.scratch_bytes_per_block:
                    return changed
                if self.free_slots < 1 or self.free_regs < self.regs_per_warp:
                    return changed
                block = self._new_block()
                self.free_scratch -= self.spec.scratch_bytes_per_block
                for wid in block.warp_ids:
                    self._register_warp(WarpRecord(wid=wid, block_id=block.bid))
                self.partial_bid = block.bid
                self.partial_admitted = 0
                changed = True
            block = self.blocks[self.partial_bid]
            while (
                self.partial_admitted < block.size
                and self.free_slots >= 1
                and self.free_regs >= self.regs_per_warp
            ):
                w = self.warps[block.warp_ids[self.partial_admitted]]
                self.free_slots -= 1
                self.free_regs -= self.regs_per_warp
                w.state = WarpState.SCHEDULABLE
                w.next_ready = max(w.next_ready, self.now)
                self.sched_set.add(w.wid)
                self.partial_admitted += 1
                changed = True
            if self.partial_admitted < block.size:
                return changed
            self.partial_bid = None

    # -- zorua effect application -------------------------------------------

    def _apply_effects(self, wake: int):
        for eff in self.coord.drain_effects():
            tag, wid = eff[0], eff[1]
            if tag == "schedulable":
                w = self.warps[wid]
                if w.pc >= len(self.body):
                    # readmitted only to retire (its last instruction was a
                    # barrier it parked at)
                    self.sched_set.add(wid)
                    self._finish_warp(wid)
                    continue
                w.next_ready = max(w.next_ready, wake)
                self.sched_set.add(wid)
            elif tag == "slot_swapin":
                w = self.warps[wid]
                w.next_ready = max(w.next_ready, wake + self.arch.memory_latency_cycles)
            elif tag == "parked":
                self.sched_set.discard(wid)

    # -- issue path -----------------------------------------------------------

    def _locality(self, w: WarpRecord, n_sets: int) -> int:
        """Skewed reuse: seven of every eight touches land in the hottest
        quarter of the owner's sets, the rest walk the remainder."""
        k = w.acc_counter
        w.acc_counter += 1
        n_hot = max(1, -(-n_sets // 4))
        n_cold = n_sets - n_hot
        if k % 8 < 7 or n_cold == 0:
            return (k % 8) % n_hot
        return n_hot + (k // 8) % n_cold

    def _issue(self, w: WarpRecord, pending: list):
        ins = self.body[w.pc]
        op = ins.opcode
        extra = 0
        if self.coord is not None and op not in (Opcode.BARRIER, Opcode.PHASE_SPEC):
            regs = self.coord.tables[ResourceKind.REGISTER]
            n = regs.owned(w.wid)
            if n:
                extra += self.arch.mapping_table_penalty_cycles
                if self.coord.access_register(w.wid, self._locality(w, n)):
                    extra += self.arch.memory_latency_cycles
            if op in SCRATCH_OPCODES:
                scratch = self.coord.tables[ResourceKind.SCRATCHPAD]
                m = scratch.owned(w.block_id)
                if m:
                    extra += self.arch.mapping_table_penalty_cycles
                    if self.coord.access_scratch(w.block_id, self._locality(w, m)):
                        extra += self.arch.memory_latency_cycles
            self.coord.tables[ResourceKind.WARP_SLOT].note_access()

        if op is Opcode.LD_GLOBAL:
            w.next_ready = self.mem.request(self.now) + extra
        elif op is Opcode.ST_GLOBAL:
            self.mem.request(self.now)  # fire and forget, holds a slot only
            w.next_ready = self.now + 1 + extra
        else:
            w.next_ready = self.now + 1 + extra

        self._update_live(w, ins.live_regs_after, ins.live_scratch_after)
        w.pc += 1
        w.issued += 1
        self.tot_issued += 1
        self.ep_issued += 1
        self.last_issue = self.now

        if op is Opcode.BARRIER:
            pending.append((EventKind.BARRIER_REACHED, w.wid, None))
        elif op is Opcode.PHASE_SPEC:
            pending.append((EventKind.PHASE_CHANGE, w.wid, ins.phase_payload))
        if w.pc == len(self.body) and op is not Opcode.BARRIER:
            pending.append((EventKind.WARP_FINISHED, w.wid, None))

    def _pick(self, sid: int) -> Optional[WarpRecord]:
        cur = self.greedy[sid]
        if cur is not None and cur in self.sched_set:
            w = self.warps[cur]
            if w.next_ready <= self.now:
                return w
        best = None
        for wid in self.part[sid]:
            if wid in self.sched_set and self.warps[wid].next_ready <= self.now:
                best = wid  # partition lists are in wid order; first hit is oldest
                break
        if best is None:
            self.greedy[sid] = None
            return None
        self.greedy[sid] = best
        return self.warps[best]

    # -- end-of-cycle events ----------------------------------------------

    def _finish_warp(self, wid: int):
        w = self.warps[wid]
        self.sched_set.discard(wid)
        self.live_warps -= 1
        self._update_live(w, 0, 0)
        self._log(EventKind.WARP_FINISHED, wid)
        if self.coord is not None:
            done = self.coord.on_warp_finished(wid)
            self._apply_effects(self.now + 1)
        else:
            w.state = WarpState.FINISHED
            blk = self.blocks[w.block_id]
            blk.finished_warps += 1
            done = blk.finished_warps == blk.size
            if self.policy is Policy.WLM:
                self.free_slots += 1
                self.free_regs += self.regs_per_warp
                if done:
                    self.free_scratch += self.spec.scratch_bytes_per_block
        if done:
            self.in_flight -= 1
            self._log(EventKind.BLOCK_FINISHED, w.block_id)
            # refill before sampling: the freed resources admit the next
            # block in the same cycle, so the dip is never observable
            self._dispatch()
            self._record_trace()
        elif self.policy is Policy.WLM:
            self._dispatch()

    def _release_barrier(self, blk: BlockRecord):
        if self.coord is not None:
            self.coord.release_barrier(blk.bid)
            self._apply_effects(self.now + 1)
        else:
            for wid in blk.warp_ids:
                w = self.warps[wid]
                if w.state is WarpState.AT_BARRIER:
                    w.state = WarpState.SCHEDULABLE
                    w.next_ready = max(w.next_ready, self.now + 1)
                    self.sched_set.add(wid)
            blk.barrier_arrivals = 0
        # a warp whose last instruction was the barrier is done now
        for wid in blk.warp_ids:
            w = self.warps[wid]
            if w.state is WarpState.SCHEDULABLE and w.pc >= len(self.body):
                self._finish_warp(wid)

    def _handle_event(self, kind: EventKind, wid: int, payload):
        if kind is EventKind.PHASE_CHANGE:
            self._log(kind, wid)
            if self.coord is None:
                return
            w = self.warps[wid]
            if w.state is not WarpState.SCHEDULABLE:
                return
            still = self.coord.on_phase_change(
                wid,
                reg_sets_for(payload.live_regs, self.arch),
                scratch_sets_for(payload.scratch_bytes, self.arch),
            )
            if not still:
                self.sched_set.discard(wid)
            self._apply_effects(self.now + 1)
        elif kind is EventKind.BARRIER_REACHED:
            self._log(kind, wid)
            w = self.warps[wid]
            self.sched_set.discard(wid)
            if self.coord is not None:
                self.coord.on_barrier(wid)
                self._apply_effects(self.now + 1)
            else:
                w.state = WarpState.AT_BARRIER
            blk = self.blocks[w.block_id]
            blk.barrier_arrivals += 1
            if blk.barrier_arrivals == blk.size:
                self._release_barrier(blk)
        elif kind is EventKind.WARP_FINISHED:
            self._finish_warp(wid)

    # -- epochs ------------------------------------------------------------

    def _close_epoch(self):
        swap_now = self._swap_snapshot()
        stats = EpochStats(
            index=len(self.epochs),
            issued_instructions=self.ep_issued,
            issued_cycles=self.ep_issue_cycles,
            c_idle=self.ep_idle,
            c_mem=self.ep_mem,
            barrier_stall=self.ep_barrier,
            reg_swap_accesses=swap_now[0] - self.ep_swap_snap[0],
            scratch_swap_accesses=swap_now[1] - self.ep_swap_snap[1],
            slot_swap_accesses=swap_now[2] - self.ep_swap_snap[2],
        )
        self.epochs.append(stats)
        self.ep_issued = 0
        self.ep_issue_cycles = 0
        self.ep_idle = 0
        self.ep_mem = 0
        self.ep_barrier = 0
        self.ep_swap_snap = swap_now
        if self.collect_util:
            self.util_reg_frac.append(
                self.ep_ureg_sum / self.ep_ureg_cycles if self.ep_ureg_cycles else None
            )
            self.util_scr_frac.append(
                self.ep_uscr_sum / self.ep_uscr_cycles if self.ep_uscr_cycles else None
            )
            self.ep_ureg_sum = 0.0
            self.ep_ureg_cycles = 0
            self.ep_uscr_sum = 0.0
            self.ep_uscr_cycles = 0
        return stats

    def _epoch_tick(self):
        stats = self._close_epoch()
        self._log(EventKind.EPOCH_TICK, stats.index)
        if self.coord is not None:
            self.coord.on_epoch(
                stats.c_idle - self.prev_idle, stats.c_mem - self.prev_mem
            )
            self._apply_effects(self.now + 1)
            if self.coord.deadlock_guard():
                self._apply_effects(self.now + 1)
            if self.debug:
                problems = self.coord.check_invariants()
                if problems:
                    raise RuntimeError("invariant violation: " + "; ".join(problems))
        self.prev_idle = stats.c_idle
        self.prev_mem = stats.c_mem

    # -- main loop -----------------------------------------------------------

    def _classify_stall(self, delta: int):
        if self.sched_set:
            self.ep_mem += delta
        elif self._pending_work():
            self.ep_idle += delta
        else:
            self.ep_barrier += delta

    def _pending_work(self) -> bool:
        if self.remaining:
            return True
        if self.coord is not None:
            return self.coord.pending_count() > 0
        if self.policy is Policy.WLM:
            return any(
                w.state is WarpState.PENDING_THREAD for w in self.warps.values()
            )
        return False

    def _do_cycle(self):
        self._integrate(1)
        pending: list = []
        issued = 0
        for sid in range(len(self.part)):
            w = self._pick(sid)
            if w is not None:
                self._issue(w, pending)
                issued += 1
        if issued:
            self.ep_issue_cycles += 1
        else:
            self._classify_stall(1)
        pending.sort(key=lambda e: (e[0], e[1]))
        for kind, wid, payload in pending:
            self._handle_event(kind, wid, payload)
        if (self.now + 1) % self.arch.epoch_cycles == 0:
            self._epoch_tick()
        self.now += 1

    def run(self) -> _SMOutcome:
        self._dispatch()
        epoch = self.arch.epoch_cycles
        while self.live_warps or self.remaining:
            if self.now >= self.cycle_cap:
                raise NonTerminationError(
                    f"no completion within {self.cycle_cap} cycles"
                )
            wake = None
            ready = False
            for wid in self.sched_set:
                nr = self.warps[wid].next_ready
                if nr <= self.now:
                    ready = True
                    break
                if wake is None or nr < wake:
                    wake = nr
            if ready:
                self._do_cycle()
                continue
            if wake is None:
                # nothing schedulable at all; force progress or give up
                if self.coord is not None and self.coord.deadlock_guard():
                    self._apply_effects(self.now)
                    continue
                retunable = (
                    self.coord is not None
                    and self.coord.cfg.fixed_o_thresh_frac is None
                )
                if not (retunable and self._pending_work()):
                    raise NonTerminationError("wedged with no runnable warps")
                # fall through: skip to the epoch boundary and let the
                # controller retune admission
            boundary = (self.now // epoch + 1) * epoch
            target = boundary if wake is None else min(wake, boundary)
            delta = target - self.now
            self._integrate(delta)
            self._classify_stall(delta)
            self.now = target
            if target == boundary:
                self._epoch_tick()
        if self.ep_issued or self.ep_issue_cycles or self.ep_idle or self.ep_mem or self.ep_barrier:
            self._close_epoch()
        if self.debug and self.coord is not None:
            problems = self.coord.check_invariants()
            if problems:
                raise RuntimeError("invariant violation: " + "; ".join(problems))

        cycles = self.last_issue + 1
        if self.coord is not None:
            totals = {
                kind: (tbl.total_accesses, tbl.swap_accesses)
                for kind, tbl in self.coord.tables.items()
            }
            o_final = {k.value: v for k, v in self.coord.o_thresh.items()}
            guard = self.coord.guard_admissions
        else:
            totals = {kind: (0, 0) for kind in ResourceKind}
            o_final = {}
            guard = 0
        return _SMOutcome(
            cycles=cycles,
            issued_instructions=self.tot_issued,
            issued_cycles=sum(e.issued_cycles for e in self.epochs),
            c_idle=sum(e.c_idle for e in self.epochs),
            c_mem=sum(e.c_mem for e in self.epochs),
            barrier_stall=sum(e.barrier_stall for e in self.epochs),
            access_totals=totals,
            mean_schedulable=self.sched_integral / cycles if cycles else 0.0,
            bif_min=self.bif_min if self.bif_min is not None else self.bif_max,
            bif_max=self.bif_max,
            trace=self.trace,
            guard_admissions=guard,
            o_thresh_final=o_final,
            epochs=self.epochs,
            util=(
                UtilizationReport(
                    register_per_epoch=tuple(self.util_reg_frac),
                    scratch_per_epoch=tuple(self.util_scr_frac),
                )
                if self.collect_util
                else None
            ),
            event_log=self.events,
        )


def _per_sm_block_counts(num_blocks: int, num_sms: int) -> dict[int, int]:
    """Round-robin distribution: map per-SM block count -> SM multiplicity."""
    base, extra = divmod(num_blocks, num_sms)
    counts: dict[int, int] = {}
    if extra:
        counts[base + 1] = extra
    if base and num_sms - extra:
        counts[base] = num_sms - extra
    return counts


def run(
    kernel: KernelSpec,
    policy: Union[Policy, str],
    arch: Union[ArchConfig, str] = "fermi",
    seed: int = 0,
    *,
    oversub: Optional[OversubscriptionConfig] = None,
    debug: bool = False,
    cycle_cap: int = DEFAULT_CYCLE_CAP,
    collect_util: bool = False,
    log_events: bool = False,
) -> SimResult:
    """Simulate one kernel launch and aggregate across SM replicas.

    The engine itself is deterministic; the seed is recorded in the result
    for provenance only.
    """
    if isinstance(policy, str):
        policy = Policy.from_name(policy)
    if isinstance(arch, str):
        arch = get_arch(arch)
    if oversub is None:
        oversub = OversubscriptionConfig()
    if policy is Policy.ZORUA and not kernel.is_compiled:
        kernel = annotate_phases(kernel)

    counts = _per_sm_block_counts(kernel.resource_spec.num_blocks, arch.num_sms)
    outcomes: dict[int, _SMOutcome] = {}
    for count in sorted(counts, reverse=True):
        sm = _SMRun(
            kernel,
            policy,
            arch,
            count,
            oversub,
            debug,
            cycle_cap,
            collect_util,
            log_events,
        )
        outcomes[count] = sm.run()

    critical_count = max(outcomes, key=lambda c: (outcomes[c].cycles, c))
    critical = outcomes[critical_count]
    w_issued = 0
    w_iss_cycles = 0
    w_idle = 0
    w_mem = 0
    w_barrier = 0
    w_guard = 0
    acc = {kind: [0, 0] for kind in ResourceKind}
    for count, out in outcomes.items():
        mult = counts[count]
        w_issued += mult * out.issued_instructions
        w_iss_cycles += mult * out.issued_cycles
        w_idle += mult * out.c_idle
        w_mem += mult * out.c_mem
        w_barrier += mult * out.barrier_stall
        w_guard += mult * out.guard_admissions
        for kind, (tot, swap) in out.access_totals.items():
            acc[kind][0] += mult * tot
            acc[kind][1] += mult * swap

    def rate(kind: ResourceKind) -> float:
        tot, swap = acc[kind]
        return 1.0 if tot == 0 else 1.0 - swap / tot

    return SimResult(
        kernel_name=kernel.name,
        policy=policy.value,
        arch=arch.name,
        seed=seed,
        spec=kernel.resource_spec,
        cycles=critical.cycles,
        issued_instructions=w_issued,
        issued_cycles=w_iss_cycles,
        c_idle=w_idle,
        c_mem=w_mem,
        barrier_stall=w_barrier,
        reg_hit_rate=rate(ResourceKind.REGISTER),
        scratch_hit_rate=rate(ResourceKind.SCRATCHPAD),
        slot_hit_rate=rate(ResourceKind.WARP_SLOT),
        mean_schedulable_warps=critical.mean_schedulable,
        blocks_in_flight_min=critical.bif_min,
        blocks_in_flight_max=critical.bif_max,
        blocks_in_flight_trace=tuple(critical.trace),
        guard_admissions=w_guard,
        o_thresh_final=critical.o_thresh_final,
        epochs=tuple(critical.epochs),
        utilization=critical.util,
        event_log=None if critical.event_log is None else tuple(critical.event_log),
    )


def measure_underutilization(
    kernel: KernelSpec,
    arch: Union[ArchConfig, str] = "fermi",
    *,
    spec: Optional[ResourceSpecification] = None,
    epoch_cycles: Optional[int] = None,
    cycle_cap: int = DEFAULT_CYCLE_CAP,
) -> UtilizationReport:
    """Per-epoch live/allocated gap under static whole-block allocation.

    spec overrides the kernel's resource declaration, epoch_cycles the
    architecture's accounting window.
    """
    if isinstance(arch, str):
        arch = get_arch(arch)
    if spec is not None:
        kernel = replace(kernel, resource_spec=spec)
    if epoch_cycles is not None:
        arch = replace(arch, epoch_cycles=epoch_cycles)
    result = run(
        kernel,
        Policy.BASELINE,
        arch,
        collect_util=True,
        cycle_cap=cycle_cap,
    )
    return result.utilization
