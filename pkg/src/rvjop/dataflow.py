"""Straight-line dataflow summaries for gadgets.

The walk is an abstract interpretation of the instruction list in order,
terminator included.  No path-sensitivity: once an interior conditional
branch has been seen, later register writes count as conditional (they
may or may not happen at run time) and drop out of the preserved set.

Stack discipline is tracked as a running constant: only constant adds to
sp keep the delta known; any other write to sp makes it Unknown (None).
Loads based on sp are recorded with their offset relative to the sp value
at gadget entry, which is what payload seeding needs.
"""

from __future__ import annotations

from dataclasses import dataclass

from .decoder import CondBranch, DecodedInstruction
from .isa import REGISTERS, S0, SP, Register


@dataclass(frozen=True)
class StackLoad:
    reg: Register
    base: Register        # sp or the frame pointer
    offset: int           # entry-relative for sp, raw for fp
    size: int


@dataclass(frozen=True)
class MemRef:
    kind: str             # "load" | "store" | "amo"
    base: Register
    offset: int
    size: int


@dataclass(frozen=True)
class DataflowSummary:
    written: frozenset[Register]
    cond_written: frozenset[Register]
    read_before_write: frozenset[Register]
    preserved: frozenset[Register]
    sp_delta: int | None              # None = unknown
    mem_reads: tuple[MemRef, ...]
    mem_writes: tuple[MemRef, ...]
    stack_loads: tuple[StackLoad, ...]

    @property
    def loads_from_stack(self) -> frozenset[Register]:
        return frozenset(sl.reg for sl in self.stack_loads)

    def clobbers(self, regs) -> frozenset[Register]:
        """Registers from `regs` this gadget writes (even conditionally)."""
        return (self.written | self.cond_written) & frozenset(regs)


_ALL_REGS = frozenset(REGISTERS)


def _is_const_sp_add(insn: DecodedInstruction) -> int | None:
    """Constant sp adjustment, if this instruction is one."""
    if insn.mnemonic == "c.addi16sp":
        return insn.imm
    if insn.mnemonic == "addi" and len(insn.operands) == 3:
        rd, rs1, imm = insn.operands
        if rd is SP and rs1 is SP:
            return imm
    if insn.mnemonic in ("c.addi", "c.addiw") and insn.operands[0] is SP:
        return insn.imm
    return None


def summarize_dataflow(instructions) -> DataflowSummary:
    """Summarize a gadget body (iterable of DecodedInstruction) in order."""
    written: set[Register] = set()
    cond_written: set[Register] = set()
    rbw: set[Register] = set()
    sp_delta: int | None = 0
    mem_reads: list[MemRef] = []
    mem_writes: list[MemRef] = []
    stack_loads: list[StackLoad] = []
    conditional = False

    for insn in instructions:
        for r in insn.regs_read:
            if r not in written and r not in cond_written:
                rbw.add(r)

        mem = insn.mem_access
        if mem is not None:
            offset = mem.offset
            if mem.base is SP and sp_delta is not None:
                offset = mem.offset + sp_delta
            ref = MemRef(mem.kind, mem.base, offset, mem.size)
            if mem.kind in ("load", "amo"):
                mem_reads.append(ref)
            if mem.kind in ("store", "amo"):
                mem_writes.append(ref)
            if mem.kind == "load" and mem.base in (SP, S0):
                for r in insn.regs_written:
                    stack_loads.append(StackLoad(r, mem.base, offset, mem.size))

        sp_add = _is_const_sp_add(insn)
        for r in insn.regs_written:
            if r is SP:
                if sp_add is None:
                    sp_delta = None
                elif sp_delta is not None:
                    sp_delta += sp_add
            if conditional and r not in written:
                cond_written.add(r)
            else:
                written.add(r)

        if isinstance(insn.control_flow, CondBranch):
            conditional = True

    preserved = _ALL_REGS - written - cond_written
    return DataflowSummary(
        written=frozenset(written),
        cond_written=frozenset(cond_written),
        read_before_write=frozenset(rbw),
        preserved=frozenset(preserved),
        sp_delta=sp_delta,
        mem_reads=tuple(mem_reads),
        mem_writes=tuple(mem_writes),
        stack_loads=tuple(stack_loads),
    )


def const_values(instructions) -> dict[Register, int | None]:
    """Best-effort constants at the end of a straight-line walk.

    Tracks li/lui-style definitions and constant adds; anything loaded from
    memory or derived from a non-constant register maps to None.  Used to
    recover syscall ids from a7 and table strides without simulating.
    """
    vals: dict[Register, int | None] = {}
    for insn in instructions:
        m = insn.mnemonic
        ops = insn.operands
        tracked: int | None = None
        if m in ("c.li",):
            tracked = insn.imm
        elif m == "addi":
            rd, rs1, imm = ops
            if rs1.index == 0:
                tracked = imm
            elif rs1 in vals and vals[rs1] is not None:
                tracked = vals[rs1] + imm
        elif m == "c.addi":
            rd = ops[0]
            if rd in vals and vals[rd] is not None:
                tracked = vals[rd] + insn.imm
        elif m in ("lui", "c.lui"):
            tracked = insn.imm
        for r in insn.regs_written:
            if tracked is not None and r is insn.operands[0]:
                vals[r] = tracked
            else:
                vals[r] = None
    return vals
