"""Chain assembly: dispatch tables, payload layout, and static validation.

A chain is an initializer, a dispatcher, and an ordered list of functional
gadget steps.  The dispatch table holds one entry per expanded step plus
the final return address; the payload buffer is the table followed by any
data seeds (path strings and the like).  Register seeds are the values the
initializer must load, placed at the stack offsets its loads read from.

Validation is static and best-effort: it proves nothing, it just catches
the cheap mistakes (clobbered reserved registers, unbalanced stack motion,
arguments overwritten before their syscall) before simulation does the
real verdict.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .classify import (DISPATCHER_AUTONOMOUS, DISPATCHER_TWO_STAGE,
                       DispatcherCandidate, InitializerCandidate, Source,
                       _loaded_sources, find_dispatchers)
from .dataflow import summarize_dataflow
from .errors import AddressTooWide, Diverges, Overlap, ToolError
from .image import ExecutableImage
from .isa import ARG_REGS, RA, Register, reg
from .scanner import Gadget, gadget_at

ERROR = "error"
WARNING = "warning"
INFO = "info"


@dataclass(frozen=True)
class Diagnostic:
    severity: str
    code: str
    message: str

    def __str__(self) -> str:
        return f"{self.severity}: {self.code}: {self.message}"


def has_errors(diagnostics) -> bool:
    return any(d.severity == ERROR for d in diagnostics)


@dataclass(frozen=True)
class ChainStep:
    gadget: Gadget
    repeat: int = 1
    note: str = ""


@dataclass(frozen=True)
class ChainSpec:
    dispatcher: DispatcherCandidate
    initializer: InitializerCandidate
    steps: tuple[ChainStep, ...]
    return_to: int
    table_base: int
    reserved: frozenset[Register] = frozenset()
    dispatch_reg: Register | None = None          # classic schemes only
    data_seeds: tuple[tuple[bytes, str], ...] = ()
    seed_overrides: dict[Register, int] = field(default_factory=dict)

    @property
    def reserved_registers(self) -> frozenset[Register]:
        regs = set(self.dispatcher.required_registers) | set(self.reserved)
        if self.dispatch_reg is not None:
            regs.add(self.dispatch_reg)
        return frozenset(regs)


@dataclass(frozen=True)
class DispatchTable:
    entries: tuple[int, ...]      # traversal order, return address last
    element_size: int
    data: bytes                   # memory order (reversed for negative stride)


@dataclass(frozen=True)
class MemorySeed:
    offset: int                   # from the buffer (table) base
    data: bytes
    note: str = ""


@dataclass(frozen=True)
class StackWrite:
    offset: int                   # from the entry sp
    value: int
    register: Register


@dataclass(frozen=True)
class PayloadLayout:
    table: DispatchTable
    register_seeds: dict[Register, int]
    memory_seeds: tuple[MemorySeed, ...]
    stack_writes: tuple[StackWrite, ...]
    unplaced_seeds: tuple[tuple[Register, Source], ...]
    total_size: int
    sp_ledger: tuple[tuple[str, int | None], ...]

    @property
    def buffer(self) -> bytes:
        """Payload bytes to place at the table base."""
        size = self.total_size
        buf = bytearray(size)
        buf[:len(self.table.data)] = self.table.data
        for seed in self.memory_seeds:
            buf[seed.offset:seed.offset + len(seed.data)] = seed.data
        return bytes(buf)


def repetitions_for(target: int, stride_per_use: int, start: int = 0) -> int:
    """Smallest count with start + count * stride reaching past target.

    "Reaching" respects the stride direction: counting up means >= target,
    counting down means <= target.  A stride of the wrong sign (or zero)
    can never get there and raises Diverges.
    """
    delta = target - start
    if delta == 0:
        return 0
    if stride_per_use == 0 or (delta > 0) != (stride_per_use > 0):
        raise Diverges(
            f"stride {stride_per_use} never reaches {target} from {start}")
    return math.ceil(abs(delta) / abs(stride_per_use))


def expand_entries(spec: ChainSpec) -> list[int]:
    entries = []
    for step in spec.steps:
        entries.extend([step.gadget.start] * step.repeat)
    entries.append(spec.return_to)
    return entries


def build_dispatch_table(spec: ChainSpec, xlen: int) -> DispatchTable:
    elem = xlen // 8
    entries = expand_entries(spec)
    limit = 1 << xlen
    for e in entries:
        if not 0 <= e < limit:
            raise AddressTooWide(f"entry 0x{e:x} does not fit {xlen} bits")
    memory_order = entries if spec.dispatcher.stride >= 0 else entries[::-1]
    data = b"".join(e.to_bytes(elem, "little") for e in memory_order)
    return DispatchTable(entries=tuple(entries), element_size=elem, data=data)


# --- validation -------------------------------------------------------------

def validate_chain(spec: ChainSpec, xlen: int) -> list[Diagnostic]:
    diags: list[Diagnostic] = []
    disp = spec.dispatcher
    elem = xlen // 8

    if abs(disp.stride) != elem:
        diags.append(Diagnostic(ERROR, "StrideMismatch",
                                f"dispatcher stride {disp.stride} walks "
                                f"{elem}-byte table entries"))

    autonomous = disp.kind == DISPATCHER_AUTONOMOUS
    if not autonomous and spec.dispatch_reg is None:
        diags.append(Diagnostic(ERROR, "MissingDispatchReg",
                                "classic schemes need the register gadgets "
                                "jump back through"))

    # 1. terminator compatibility
    for i, step in enumerate(spec.steps):
        if step.repeat < 1:
            diags.append(Diagnostic(ERROR, "BadRepeat",
                                    f"step {i}: repeat must be >= 1"))
        cf = step.gadget.terminator.control_flow
        if autonomous:
            if not cf.is_return:
                diags.append(Diagnostic(
                    ERROR, "TerminatorMismatch",
                    f"step {i}: must end with a return-like jump through ra "
                    f"(ends via {cf.base.name})"))
        elif spec.dispatch_reg is not None:
            if cf.base is not spec.dispatch_reg:
                diags.append(Diagnostic(
                    ERROR, "TerminatorMismatch",
                    f"step {i}: must jump back via "
                    f"{spec.dispatch_reg.name} (ends via {cf.base.name})"))
            elif cf.link is RA:
                diags.append(Diagnostic(
                    WARNING, "LinkingStep",
                    f"step {i}: links with ra; each round grows a shadow stack"))

    # 2. reserved registers stay untouched
    reserved = spec.reserved_registers
    for i, step in enumerate(spec.steps):
        summary = summarize_dataflow(step.gadget.instructions)
        hit = summary.clobbers(reserved)
        if hit:
            names = ",".join(sorted(r.name for r in hit))
            diags.append(Diagnostic(ERROR, "ClobbersReserved",
                                    f"step {i}: writes reserved {names}"))

    # 3. syscall argument continuity (best effort, warnings only)
    pending: dict[Register, int] = {}
    later_syscall = [False] * (len(spec.steps) + 1)
    for i in range(len(spec.steps) - 1, -1, -1):
        has_ecall = any(x.mnemonic == "ecall"
                        for x in spec.steps[i].gadget.instructions)
        later_syscall[i] = later_syscall[i + 1] or has_ecall
    for i, step in enumerate(spec.steps):
        summary = summarize_dataflow(step.gadget.instructions)
        has_ecall = any(x.mnemonic == "ecall"
                        for x in step.gadget.instructions)
        for r in summary.written | summary.cond_written:
            if r not in ARG_REGS:
                continue
            blind = r not in summary.read_before_write
            if blind and r in pending and later_syscall[i] and not has_ecall:
                diags.append(Diagnostic(
                    WARNING, "ArgClobbered",
                    f"step {i}: overwrites {r.name} set by step "
                    f"{pending[r]} before any ecall consumed it"))
            pending[r] = i
        if has_ecall:
            pending.clear()

    # 4. stack ledger
    ledger: list[tuple[str, int | None]] = []
    init_delta = spec.initializer.side_effects.sp_delta
    ledger.append(("initializer", init_delta))
    for i, step in enumerate(spec.steps):
        summary = summarize_dataflow(step.gadget.instructions)
        d = summary.sp_delta
        ledger.append((f"step {i}", None if d is None else d * step.repeat))
    disp_delta = summarize_dataflow(
        tuple(disp.gadget.instructions) + disp.return_path).sp_delta
    if disp_delta != 0:
        diags.append(Diagnostic(WARNING, "DispatcherTouchesSp",
                                "dispatcher round moves sp"))
    unknown = any(d is None for _, d in ledger)
    if unknown:
        diags.append(Diagnostic(WARNING, "UnknownSpDelta",
                                "a step moves sp by a non-constant amount"))
    else:
        net = sum(d for _, d in ledger)
        if net != 0:
            diags.append(Diagnostic(ERROR, "UnbalancedStack",
                                    f"chain ends with net sp delta {net:+d}"))

    # 5. loop-condition obligation
    if disp.self_link.kind == "conditional":
        r1, r2 = disp.self_link.regs
        diags.append(Diagnostic(
            INFO, "MustHold",
            f"dispatcher keeps looping only while "
            f"{r1.name} {disp.self_link.op} {r2.name} holds at each round"))
    return diags


# --- payload layout ---------------------------------------------------------

def _branch_values(spec: ChainSpec, seed_ptr: int) -> list[int]:
    """Table pointer values at each self-link evaluation.

    After round k the pointer sits at seed + (k+1)*stride whether the
    update runs before the load or after it; only the seed differs, and
    layout already folded that in.
    """
    disp = spec.dispatcher
    n = len(expand_entries(spec))
    return [seed_ptr + (k + 1) * disp.stride for k in range(n - 1)]


def _condition_bound(op: str, table_left: bool, values: list[int]
                     ) -> tuple[int | None, str | None]:
    """Bound-register value keeping the branch taken at every evaluation."""
    if not values:
        return 0, None
    lo, hi = min(values), max(values)
    gap = abs(values[1] - values[0]) if len(values) > 1 else 4
    gap = gap or 4
    if table_left:
        if op in ("lt", "ltu"):
            return hi + gap, None
        if op in ("ge", "geu"):
            return lo, None
        if op == "ne":
            return hi + gap, None
    else:
        if op in ("lt", "ltu"):
            return lo - gap, None
        if op in ("ge", "geu"):
            return hi, None
        if op == "ne":
            return hi + gap, None
    return None, f"cannot keep a {op} self-link taken for every round"


def layout_payload(spec: ChainSpec, xlen: int,
                   image: ExecutableImage | None = None) -> PayloadLayout:
    disp = spec.dispatcher
    table = build_dispatch_table(spec, xlen)
    n = len(table.entries)
    elem = table.element_size

    # Where must the table register point so round one reads entry one?
    first_read = spec.table_base if disp.stride >= 0 \
        else spec.table_base + (n - 1) * elem
    seed_ptr = first_read - disp.load_offset
    if disp.pre_increment:
        seed_ptr -= disp.stride

    seeds: dict[Register, int] = {}
    init = spec.initializer
    seeds[disp.table_reg] = seed_ptr

    if disp.self_link.kind == "conditional":
        r1, r2 = disp.self_link.regs
        table_left = r1 is disp.table_reg
        bound_reg = r2 if table_left else r1
        bound, problem = _condition_bound(disp.self_link.op, table_left,
                                          _branch_values(spec, seed_ptr))
        if problem is not None:
            raise ToolError(problem)
        if bound_reg.index != 0 and bound_reg is not disp.table_reg:
            seeds[bound_reg] = bound

    # The initializer's own jump register must aim at the dispatcher,
    # and on classic schemes so must the register gadgets return through.
    if init.link_register in init.sets:
        seeds[init.link_register] = disp.loop_entry
    if spec.dispatch_reg is not None and spec.dispatch_reg in init.sets:
        seeds.setdefault(spec.dispatch_reg, disp.loop_entry)
    if disp.kind == DISPATCHER_TWO_STAGE and disp.stage2 is not None:
        j = disp.gadget.link_register
        if j in init.sets:
            seeds[j] = disp.stage2.start

    for r in init.sets:
        seeds.setdefault(r, 0)
    seeds.update(spec.seed_overrides)

    mem_seeds = []
    off = len(table.data)
    for data, note in spec.data_seeds:
        mem_seeds.append(MemorySeed(off, bytes(data), note))
        off += len(data)
    total = off

    if image is not None:
        for seg in image.segments:
            if spec.table_base < seg.end and seg.vaddr < spec.table_base + total:
                raise Overlap(
                    f"payload [0x{spec.table_base:x}, 0x{spec.table_base + total:x})"
                    f" collides with segment at 0x{seg.vaddr:x}")

    stack_writes = []
    unplaced = []
    for r, src in sorted(init.sets.items(), key=lambda kv: kv[0].index):
        if src.kind == "stack" and src.base.index == 2:
            stack_writes.append(StackWrite(src.offset, seeds[r], r))
        else:
            unplaced.append((r, src))

    ledger: list[tuple[str, int | None]] = [
        ("initializer", init.side_effects.sp_delta)]
    for i, step in enumerate(spec.steps):
        d = summarize_dataflow(step.gadget.instructions).sp_delta
        ledger.append((f"step {i}", None if d is None else d * step.repeat))

    return PayloadLayout(
        table=table, register_seeds=seeds, memory_seeds=tuple(mem_seeds),
        stack_writes=tuple(stack_writes), unplaced_seeds=tuple(unplaced),
        total_size=total, sp_ledger=tuple(ledger))


# --- chain spec text format -------------------------------------------------

def make_initializer(image: ExecutableImage, address: int,
                     dispatcher: DispatcherCandidate) -> InitializerCandidate:
    """Materialize and vet the gadget at `address` as the chain initializer."""
    g = gadget_at(image, address)
    cf = g.terminator.control_flow
    if cf.base is RA or cf.link is RA:
        raise ToolError(f"initializer at 0x{address:x} jumps through ra")
    sets = _loaded_sources(g)
    missing = dispatcher.required_registers - sets.keys()
    if missing:
        names = ",".join(sorted(r.name for r in missing))
        raise ToolError(
            f"initializer at 0x{address:x} never loads {names}")
    return InitializerCandidate(gadget=g, sets=sets, link_register=cf.base,
                                side_effects=summarize_dataflow(g.instructions))


def parse_chain_text(text: str, image: ExecutableImage) -> ChainSpec:
    """Parse the line-oriented chain description.

    Directives (one per line, '#' starts a comment):

        dispatcher 0xADDR         loop-entry address of the dispatcher
        initializer 0xADDR        gadget address used to seed registers
        table-base 0xADDR         where the payload buffer will sit
        return-to 0xADDR          final table entry
        dispatch-reg REG          classic schemes: gadgets jump back via REG
        reserve REG[,REG...]      extra registers steps must preserve
        seed REG=VALUE            explicit register seed override
        step 0xADDR [REPEAT] [note...]
        data hex:BYTES [note...]  raw payload bytes after the table
        data str:TEXT [note...]   NUL-terminated string after the table
    """
    dispatcher_addr = None
    initializer_addr = None
    table_base = None
    return_to = None
    dispatch_reg = None
    reserved: set[Register] = set()
    overrides: dict[Register, int] = {}
    steps: list[tuple[int, int, str]] = []
    data_seeds: list[tuple[bytes, str]] = []

    def num(tok: str) -> int:
        return int(tok, 0)

    for lineno, rawline in enumerate(text.splitlines(), 1):
        line = rawline.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        key, args = parts[0], parts[1:]
        try:
            if key == "dispatcher":
                dispatcher_addr = num(args[0])
            elif key == "initializer":
                initializer_addr = num(args[0])
            elif key == "table-base":
                table_base = num(args[0])
            elif key == "return-to":
                return_to = num(args[0])
            elif key == "dispatch-reg":
                dispatch_reg = reg(args[0])
            elif key == "reserve":
                for name in args[0].split(","):
                    reserved.add(reg(name))
            elif key == "seed":
                name, _, val = args[0].partition("=")
                overrides[reg(name)] = num(val)
            elif key == "step":
                addr = num(args[0])
                repeat = 1
                note_from = 1
                if len(args) > 1 and args[1].isdigit():
                    repeat = int(args[1])
                    note_from = 2
                steps.append((addr, repeat, " ".join(args[note_from:])))
            elif key == "data":
                spec_tok = args[0]
                note = " ".join(args[1:])
                if spec_tok.startswith("hex:"):
                    data_seeds.append((bytes.fromhex(spec_tok[4:]), note))
                elif spec_tok.startswith("str:"):
                    data_seeds.append((spec_tok[4:].encode() + b"\x00", note))
                else:
                    raise ValueError(f"unknown data form {spec_tok!r}")
            else:
                raise ValueError(f"unknown directive {key!r}")
        except (IndexError, ValueError) as exc:
            raise ToolError(f"chain spec line {lineno}: {exc}") from None

    for what, value in [("dispatcher", dispatcher_addr),
                        ("initializer", initializer_addr),
                        ("table-base", table_base), ("return-to", return_to)]:
        if value is None:
            raise ToolError(f"chain spec is missing a {what} line")

    candidates = find_dispatchers(image)
    chosen = None
    for cand in candidates:
        if cand.loop_entry == dispatcher_addr or cand.gadget.start == dispatcher_addr:
            chosen = cand
            break
    if chosen is None:
        raise ToolError(f"no dispatcher candidate at 0x{dispatcher_addr:x}")

    initializer = make_initializer(image, initializer_addr, chosen)
    chain_steps = tuple(ChainStep(gadget_at(image, a), r, n)
                        for a, r, n in steps)
    return ChainSpec(dispatcher=chosen, initializer=initializer,
                     steps=chain_steps, return_to=return_to,
                     table_base=table_base, reserved=frozenset(reserved),
                     dispatch_reg=dispatch_reg, data_seeds=tuple(data_seeds),
                     seed_overrides=overrides)


def render_manifest(spec: ChainSpec, layout: PayloadLayout,
                    diagnostics) -> str:
    """Human-readable payload summary."""
    disp = spec.dispatcher
    lines = []
    lines.append(f"dispatcher   {disp.kind} entry=0x{disp.loop_entry:08x} "
                 f"table={disp.table_reg.name} stride={disp.stride:+d} "
                 f"target={disp.target_reg.name}")
    lines.append(f"initializer  0x{spec.initializer.gadget.start:08x} "
                 f"jumps via {spec.initializer.link_register.name}")
    lines.append(f"table-base   0x{spec.table_base:08x}  "
                 f"entries={len(layout.table.entries)}  "
                 f"element={layout.table.element_size}")
    lines.append(f"return-to    0x{spec.return_to:08x}")
    lines.append(f"payload size {layout.total_size} bytes")
    lines.append("")
    lines.append("register seeds (loaded by the initializer):")
    for r, v in sorted(layout.register_seeds.items(), key=lambda kv: kv[0].index):
        lines.append(f"  {r.name:5s} = 0x{v & 0xFFFFFFFFFFFFFFFF:x}")
    if layout.stack_writes:
        lines.append("stack slots to prepare (relative to entry sp):")
        for w in layout.stack_writes:
            lines.append(f"  sp+{w.offset:<4d} <- 0x{w.value & 0xFFFFFFFFFFFFFFFF:x}"
                         f"  ({w.register.name})")
    for r, src in layout.unplaced_seeds:
        lines.append(f"  note: {r.name} loads via {src.kind} base "
                     f"{src.base.name}+{src.offset}; place it yourself")
    if layout.memory_seeds:
        lines.append("data seeds:")
        for seed in layout.memory_seeds:
            preview = seed.data[:16].hex()
            lines.append(f"  +0x{seed.offset:x} {len(seed.data)}B {preview}"
                         f" {seed.note}".rstrip())
    lines.append("stack ledger:")
    running = 0
    for label, delta in layout.sp_ledger:
        if delta is None:
            lines.append(f"  {label:12s} sp?? (unknown)")
        else:
            running += delta
            lines.append(f"  {label:12s} sp{delta:+d} -> {running:+d}")
    if diagnostics:
        lines.append("diagnostics:")
        for d in diagnostics:
            lines.append(f"  {d}")
    return "\n".join(lines) + "\n"
