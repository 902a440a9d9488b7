"""Admission policies the simulator compares.

baseline reserves every block's worst-case static footprint for the block's
whole lifetime.  wlm keeps block-granular scratchpad but hands out registers
and slots per warp, admitting warps of one block at a time.  zorua runs the
full virtualization stack: phase-sized allocations through mapping tables
with bounded swap oversubscription (see coordinator.py).
"""

from __future__ import annotations

import enum

from .kernel_model import ResourceSpecification
from .resource_maps import ArchConfig


class Policy(enum.Enum):
    BASELINE = "baseline"
    WLM = "wlm"
    ZORUA = "zorua"

    @classmethod
    def from_name(cls, name: str) -> "Policy":
        try:
            return cls(name.lower())
        except ValueError:
            choices = ", ".join(p.value for p in cls)
            raise ValueError(f"unknown policy {name!r}; choose from {choices}") from None


def baseline_blocks_in_flight(spec: ResourceSpecification, arch: ArchConfig) -> int:
    """Blocks co-resident under whole-block worst-case allocation.

    Raw capacity divisions, no set rounding, capped by the hardware block
    limit.  Zero means the kernel cannot run at all on this hardware.
    """
    limit = min(
        arch.registers_per_sm // (spec.threads_per_block * spec.regs_per_thread),
        arch.warp_slots_per_sm // spec.warps_per_block,
        arch.max_blocks_per_sm_baseline,
    )
    if spec.scratch_bytes_per_block:
        limit = min(limit, arch.scratch_bytes_per_sm // spec.scratch_bytes_per_block)
    return limit


def wlm_is_runnable(spec: ResourceSpecification, arch: ArchConfig, has_barrier: bool) -> bool:
    """Whether warp-granular admission can finish the kernel.

    Without barriers a single warp fitting is enough.  With barriers one
    whole block must fit physically: admitted warps hold their resources
    while waiting, so a block that can never be fully resident deadlocks.
    """
    if spec.scratch_bytes_per_block > arch.scratch_bytes_per_sm:
        return False
    if has_barrier:
        return (
            spec.warps_per_block <= arch.warp_slots_per_sm
            and spec.threads_per_block * spec.regs_per_thread <= arch.registers_per_sm
        )
    return spec.regs_per_thread * arch.warp_width <= arch.registers_per_sm
