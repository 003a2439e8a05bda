"""Gadget roles, dispatcher discovery, initializer pairing, availability.

Role assignment is rule-based and deliberately permissive: a gadget can
hold several roles at once (an increment ending in a linking jump is both
arithmetic and a call).

Dispatcher shapes:

* classic: the body itself advances a table pointer by a constant, loads
  the jump target from it, and jumps through the target register.
* two-stage: the same work split across a pair, stage one advancing the
  pointer and jumping to stage two, which loads and jumps.
* autonomous: the loop body loads the target from the table pointer and
  calls it with a linking jump; the code after the call advances the
  pointer and branches back to the loop entry.  Because the call links,
  returns from the called gadget keep a shadow stack balanced, which is
  what makes this shape interesting.  Detection therefore looks past the
  terminator at the return path, something plain gadget extraction never
  does.
"""

from __future__ import annotations

from dataclasses import dataclass

from .dataflow import (DataflowSummary, _is_const_sp_add, const_values,
                       summarize_dataflow)
from .decoder import (CondBranch, DecodedInstruction, DirectJump,
                      IndirectJump, Trap, decode_one)
from .errors import InvalidEncoding, Truncated
from .image import ExecutableImage, Segment
from .isa import RA, S0, SP, A7, Register
from .scanner import (NATURAL, SHIFTED, Gadget, ScanConfig, dedupe,
                      extract_gadgets, sweep_addresses)

# role kinds
ARITH = "arith"
LOAD = "load"
STORE = "store"
CALL = "call"
SYSCALL = "syscall"
DISPATCHER_CLASSIC = "dispatcher-classic"
DISPATCHER_TWO_STAGE = "dispatcher-two-stage"
DISPATCHER_AUTONOMOUS = "dispatcher-autonomous"
INITIALIZER = "initializer"
UNCLASSIFIED = "unclassified"

ROLE_KINDS = (ARITH, LOAD, STORE, CALL, SYSCALL, DISPATCHER_CLASSIC,
              DISPATCHER_TWO_STAGE, DISPATCHER_AUTONOMOUS, INITIALIZER,
              UNCLASSIFIED)

_CSR_MNEMONICS = frozenset(
    ["csrrw", "csrrs", "csrrc", "csrrwi", "csrrsi", "csrrci"])


@dataclass(frozen=True)
class GadgetRole:
    kind: str
    detail: object = None


@dataclass(frozen=True)
class SelfLink:
    kind: str                                   # "none" | "unconditional" | "conditional"
    regs: tuple[Register, Register] | None = None
    op: str | None = None                       # branch condition for "conditional"


NO_SELF_LINK = SelfLink("none")


@dataclass(frozen=True)
class DispatcherCandidate:
    kind: str                     # one of the three dispatcher role kinds
    gadget: Gadget                # loop body (stage one for two-stage pairs)
    table_reg: Register
    stride: int
    target_reg: Register
    links_with_ra: bool
    self_link: SelfLink
    loop_entry: int
    load_offset: int = 0          # displacement in the table load
    pre_increment: bool = False   # pointer advanced before the load each round
    return_path: tuple[DecodedInstruction, ...] = ()
    stage2: Gadget | None = None

    @property
    def required_registers(self) -> frozenset[Register]:
        """Registers an initializer must set for this dispatcher to loop."""
        regs = {self.table_reg}
        if self.self_link.kind == "conditional":
            regs.update(r for r in self.self_link.regs if r.index != 0)
        if self.kind == DISPATCHER_TWO_STAGE:
            regs.add(self.gadget.link_register)
        return frozenset(regs)


@dataclass(frozen=True)
class Source:
    kind: str            # "stack" | "mem"
    base: Register
    offset: int


@dataclass(frozen=True)
class InitializerCandidate:
    gadget: Gadget
    sets: dict[Register, Source]
    link_register: Register
    side_effects: DataflowSummary


# --- role classification ----------------------------------------------------

def _is_alu_write(insn: DecodedInstruction) -> bool:
    return (insn.control_flow is None and insn.mem_access is None
            and insn.regs_written and insn.mnemonic not in _CSR_MNEMONICS
            and not insn.mnemonic.startswith("fence"))


def _syscall_id(instructions) -> tuple[bool, int | None]:
    """(contains ecall, recovered a7 constant at the first ecall)."""
    prefix: list[DecodedInstruction] = []
    for insn in instructions:
        if insn.mnemonic == "ecall":
            return True, const_values(prefix).get(A7)
        prefix.append(insn)
    return False, None


def classify(gadget: Gadget, summary: DataflowSummary | None = None,
             dispatchers: dict[int, list[DispatcherCandidate]] | None = None
             ) -> list[GadgetRole]:
    """Roles for one gadget.  Pure in (gadget bytes, summary, context).

    `dispatchers` maps gadget start addresses to candidates found by
    find_dispatchers; without it only body-local roles are assigned.
    """
    if summary is None:
        summary = summarize_dataflow(gadget.instructions)
    roles: list[GadgetRole] = []

    has_mem = bool(summary.mem_reads or summary.mem_writes)
    if not has_mem and any(_is_alu_write(i) for i in gadget.interior):
        roles.append(GadgetRole(ARITH))
    if summary.mem_reads:
        roles.append(GadgetRole(LOAD))
    if summary.mem_writes:
        roles.append(GadgetRole(STORE))
    if gadget.terminator_links:
        roles.append(GadgetRole(CALL))

    has_ecall, a7 = _syscall_id(gadget.instructions)
    if has_ecall and (a7 is not None or A7 in summary.read_before_write):
        roles.append(GadgetRole(SYSCALL, a7))

    if dispatchers:
        for cand in dispatchers.get(gadget.start, ()):
            if cand.gadget.encoding == gadget.encoding:
                roles.append(GadgetRole(cand.kind, cand))

    if (summary.stack_loads and gadget.link_register is not RA
            and not gadget.terminator_links):
        roles.append(GadgetRole(INITIALIZER))

    if not roles:
        roles.append(GadgetRole(UNCLASSIFIED))
    return roles


# --- dispatcher discovery ---------------------------------------------------

_CONTINUATION_WINDOW = 8     # instructions examined after a linking jump
_BACKLINK_WINDOW = 64        # bytes a self-link may reach backwards


def _const_update(insn: DecodedInstruction, reg: Register | None = None
                  ) -> tuple[Register, int] | None:
    """(register, stride) for `addi r, r, imm` style constant advances."""
    if insn.mnemonic == "addi":
        rd, rs1, imm = insn.operands
        if rd is rs1 and rd.index != 0:
            if reg is None or rd is reg:
                return rd, imm
    elif insn.mnemonic in ("c.addi", "c.addiw", "addiw"):
        rd = insn.operands[0]
        if insn.mnemonic == "addiw" and insn.operands[1] is not rd:
            return None
        if reg is None or rd is reg:
            return rd, insn.imm
    return None


def _table_load(insn: DecodedInstruction, target: Register
                ) -> tuple[Register, int] | None:
    """(base, offset) when insn loads `target` from a different register."""
    mem = insn.mem_access
    if mem is None or mem.kind != "load":
        return None
    if target not in insn.regs_written:
        return None
    if mem.base is target:
        return None
    return mem.base, mem.offset


def _decode_span(seg: Segment, start: int, end: int, xlen: int
                 ) -> list[DecodedInstruction] | None:
    """Contiguous decode of [start, end); None unless it lands exactly."""
    addr = start
    out = []
    while addr < end:
        try:
            insn = decode_one(seg.data[addr - seg.vaddr:addr - seg.vaddr + 4],
                              addr, xlen)
        except (InvalidEncoding, Truncated):
            return None
        out.append(insn)
        addr += insn.width
    return out if addr == end else None


def _try_autonomous(image: ExecutableImage, seg: Segment,
                    term: DecodedInstruction,
                    sweep: frozenset[int]) -> DispatcherCandidate | None:
    cf = term.control_flow
    if not isinstance(cf, IndirectJump) or cf.link is not RA:
        return None
    target_reg = cf.base

    # Walk the return path: straight-line code after the call, up to the
    # first control transfer, which must lead back to the loop entry.
    path: list[DecodedInstruction] = []
    addr = term.address + term.width
    self_link = None
    for _ in range(_CONTINUATION_WINDOW):
        try:
            insn = decode_one(seg.data[addr - seg.vaddr:addr - seg.vaddr + 4],
                              addr, image.xlen)
        except (InvalidEncoding, Truncated):
            return None
        flow = insn.control_flow
        if flow is None:
            path.append(insn)
            addr += insn.width
            continue
        if isinstance(flow, CondBranch):
            self_link = SelfLink("conditional", flow.regs, flow.op)
        elif isinstance(flow, DirectJump) and flow.link is None:
            self_link = SelfLink("unconditional")
        else:
            return None
        back_target = flow.target
        path.append(insn)
        break
    if self_link is None:
        return None
    if not (term.address - _BACKLINK_WINDOW <= back_target <= term.address):
        return None

    body = _decode_span(seg, back_target, term.address + term.width, image.xlen)
    if body is None or body[-1].address != term.address:
        return None
    # The loop body runs from the entry to the call; nothing in it may
    # leave the loop unconditionally (exit-guard branches are fine).
    for insn in body[:-1]:
        if isinstance(insn.control_flow, (IndirectJump, DirectJump, Trap)):
            return None

    load = None
    for insn in body[:-1]:
        hit = _table_load(insn, target_reg)
        if hit is not None:
            load = hit
    if load is None:
        return None
    table_reg, load_offset = load

    update = None
    pre_increment = False
    for insn in body[:-1]:
        got = _const_update(insn, table_reg)
        if got is not None:
            update = got
            pre_increment = True
    for insn in path:
        got = _const_update(insn, table_reg)
        if got is not None and update is None:
            update = got
    if update is None:
        return None

    gadget = Gadget(back_target, tuple(body),
                    NATURAL if back_target in sweep else SHIFTED)
    return DispatcherCandidate(
        kind=DISPATCHER_AUTONOMOUS, gadget=gadget, table_reg=table_reg,
        stride=update[1], target_reg=target_reg, links_with_ra=True,
        self_link=self_link, loop_entry=back_target,
        load_offset=load_offset, pre_increment=pre_increment,
        return_path=tuple(path))


def _try_classic(gadget: Gadget) -> DispatcherCandidate | None:
    cf = gadget.terminator.control_flow
    target_reg = cf.base
    # A jump through a freshly loaded ra is a function epilogue, and a
    # table register of sp walks the stack; neither is table dispatch.
    if target_reg is RA:
        return None
    load = None
    load_addr = None
    for insn in gadget.interior:
        hit = _table_load(insn, target_reg)
        if hit is not None:
            load = hit
            load_addr = insn.address
    if load is None:
        return None
    table_reg, load_offset = load
    if table_reg is target_reg or table_reg is SP:
        return None
    update = None
    update_addr = None
    for insn in gadget.interior:
        got = _const_update(insn, table_reg)
        if got is not None:
            update = got
            update_addr = insn.address
    if update is None:
        return None
    return DispatcherCandidate(
        kind=DISPATCHER_CLASSIC, gadget=gadget, table_reg=table_reg,
        stride=update[1], target_reg=target_reg,
        links_with_ra=gadget.terminator_links, self_link=NO_SELF_LINK,
        loop_entry=gadget.start, load_offset=load_offset,
        pre_increment=update_addr < load_addr)


def _try_two_stage(gadgets: list[Gadget]) -> list[DispatcherCandidate]:
    # stage two: loads the jump target from a table register it does not
    # advance; stage one: advances that register and jumps elsewhere.
    stage2: list[tuple[Gadget, Register, Register, int]] = []
    for g in gadgets:
        target = g.link_register
        if target is RA:
            continue
        load = None
        for insn in g.interior:
            hit = _table_load(insn, target)
            if hit is not None:
                load = hit
        if load is None:
            continue
        table_reg, load_offset = load
        if table_reg is SP:
            continue
        if any(_const_update(i, table_reg) for i in g.instructions):
            continue  # that would be a classic dispatcher, not a stage
        stage2.append((g, table_reg, target, load_offset))

    out = []
    for g1 in gadgets:
        jump_reg = g1.link_register
        summary1 = summarize_dataflow(g1.instructions)
        for insn in g1.interior:
            got = _const_update(insn)
            if got is None:
                continue
            table_reg, stride = got
            if table_reg is jump_reg:
                continue
            if any(_table_load(i, jump_reg) for i in g1.interior):
                continue
            for g2, t2, target, load_offset in stage2:
                if t2 is not table_reg or g2.encoding == g1.encoding:
                    continue
                summary2 = summarize_dataflow(g2.instructions)
                if jump_reg in (summary2.written | summary2.cond_written):
                    continue
                if jump_reg in (summary1.written | summary1.cond_written):
                    continue
                out.append(DispatcherCandidate(
                    kind=DISPATCHER_TWO_STAGE, gadget=g1, table_reg=table_reg,
                    stride=stride, target_reg=target,
                    links_with_ra=g2.terminator_links, self_link=NO_SELF_LINK,
                    loop_entry=g1.start, load_offset=load_offset,
                    pre_increment=True, stage2=g2))
    return out


def find_dispatchers(source, config: ScanConfig | None = None
                     ) -> list[DispatcherCandidate]:
    """Dispatcher candidates from an image or a pre-scanned gadget list.

    Image input enables autonomous-shape detection (it needs the bytes
    after each linking jump); a bare gadget list only supports the classic
    and two-stage rules.
    """
    if config is None:
        config = ScanConfig(max_len=6, allow_interior_branches=True)

    candidates: list[DispatcherCandidate] = []
    if isinstance(source, ExecutableImage):
        image = source
        for seg in image.executable_segments:
            sweep = sweep_addresses(seg, image.xlen)
            for off in range(0, len(seg.data) - 1, 2):
                try:
                    insn = decode_one(seg.data[off:off + 4],
                                      seg.vaddr + off, image.xlen)
                except (InvalidEncoding, Truncated):
                    continue
                if insn.is_terminator:
                    cand = _try_autonomous(image, seg, insn, sweep)
                    if cand is not None:
                        candidates.append(cand)
        gadgets = dedupe(extract_gadgets(image, config))
    else:
        gadgets = list(source)

    adg_terms = {c.gadget.terminator.address for c in candidates}
    for g in gadgets:
        if g.terminator.address in adg_terms:
            continue  # already explained by an autonomous loop
        cand = _try_classic(g)
        if cand is not None:
            candidates.append(cand)
    candidates.extend(_try_two_stage(
        [g for g in gadgets if g.terminator.address not in adg_terms]))

    # Collapse classic candidates that are prefixes of one another: keep
    # the shortest body per (terminator, table register) pair.
    seen: dict[tuple, DispatcherCandidate] = {}
    rest = []
    for c in candidates:
        if c.kind != DISPATCHER_CLASSIC:
            rest.append(c)
            continue
        key = (c.gadget.terminator.address, c.table_reg.index, c.target_reg.index)
        cur = seen.get(key)
        if cur is None or len(c.gadget.instructions) < len(cur.gadget.instructions):
            seen[key] = c
    out = rest + list(seen.values())
    out.sort(key=lambda c: (c.loop_entry, c.kind))
    return out


def dispatcher_index(candidates) -> dict[int, list[DispatcherCandidate]]:
    """Start-address index usable as classify() context."""
    index: dict[int, list[DispatcherCandidate]] = {}
    for c in candidates:
        index.setdefault(c.gadget.start, []).append(c)
    return index


# --- initializer pairing ----------------------------------------------------

def _loaded_sources(gadget: Gadget) -> dict[Register, Source]:
    """Registers this gadget fills from attacker-reachable memory.

    Stack-relative loads (sp or fp based) and single-indirection loads
    through a register that still holds its entry value both qualify.
    A later non-load overwrite of the register disqualifies it again.
    """
    sets: dict[Register, Source] = {}
    written: set[Register] = set()
    sp_delta = 0
    for insn in gadget.instructions:
        mem = insn.mem_access
        if mem is not None and mem.kind == "load":
            for r in insn.regs_written:
                if mem.base is SP:
                    sets[r] = Source("stack", SP, mem.offset + sp_delta)
                elif mem.base is S0:
                    sets[r] = Source("stack", S0, mem.offset)
                elif mem.base not in written:
                    sets[r] = Source("mem", mem.base, mem.offset)
        else:
            for r in insn.regs_written:
                sets.pop(r, None)
        written |= insn.regs_written
        add = _is_const_sp_add(insn)
        if add is not None:
            sp_delta += add
    return sets


def find_initializers(gadgets, dispatcher: DispatcherCandidate
                      ) -> list[InitializerCandidate]:
    required = dispatcher.required_registers
    out = []
    for g in gadgets:
        term_cf = g.terminator.control_flow
        if term_cf.base is RA or term_cf.link is RA:
            continue
        sets = _loaded_sources(g)
        if not required <= sets.keys():
            continue
        out.append(InitializerCandidate(
            gadget=g, sets=sets, link_register=g.link_register,
            side_effects=summarize_dataflow(g.instructions)))
    out.sort(key=lambda c: c.gadget.start)
    return out


# --- availability -----------------------------------------------------------

@dataclass(frozen=True)
class AvailabilityRow:
    register: Register
    count: int
    natural: int
    shifted: int


def availability_stats(gadgets) -> list[AvailabilityRow]:
    """Unique-gadget counts grouped by link register, most available first.

    Return-like terminators jump through ra, so they land in the ra bucket
    without special casing.  Ties break on register index for determinism.
    """
    unique = dedupe(list(gadgets))
    buckets: dict[Register, list[Gadget]] = {}
    for g in unique:
        buckets.setdefault(g.link_register, []).append(g)
    rows = [AvailabilityRow(reg, len(gs),
                            sum(1 for g in gs if g.alignment == NATURAL),
                            sum(1 for g in gs if g.alignment == SHIFTED))
            for reg, gs in buckets.items()]
    rows.sort(key=lambda r: (-r.count, r.register.index))
    return rows


def render_stats_table(pairs, top: int | None = None) -> str:
    """Two-row availability table.

    `pairs` is any iterable of (register-or-name, count); counts are
    display input, so externally sourced numbers render as given.
    """
    items = [(str(r), str(c)) for r, c in pairs]
    if top is not None:
        items = items[:top]
    widths = [max(len(n), len(c)) for n, c in items]
    head = "Register          | " + " | ".join(
        n.ljust(w) for (n, _), w in zip(items, widths))
    vals = "Available gadgets | " + " | ".join(
        c.ljust(w) for (_, c), w in zip(items, widths))
    return head.rstrip() + "\n" + vals.rstrip() + "\n"
