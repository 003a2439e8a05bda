"""Gadget search: filter parsing, matching, and report formats.

A query selects gadgets whose interior contains one instruction meeting
every per-instruction condition at once (mnemonic, written register,
immediate), then applies gadget-level filters (terminator link register,
preserved registers, role, interior length cap, dedupe).

Two output shapes: a human listing with one disassembled instruction per
line, and a machine-readable record line per gadget that parses back
losslessly.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .classify import classify, dispatcher_index, find_dispatchers
from .dataflow import DataflowSummary, summarize_dataflow
from .errors import UsageError
from .image import ExecutableImage
from .isa import Register, is_register_name, reg
from .scanner import (MAX_GADGET_LEN, Gadget, ScanConfig, dedupe,
                      extract_gadgets)

DEFAULT_MAX = 4


@dataclass(frozen=True)
class Query:
    op: str | None = None
    rr: Register | None = None
    imm: int | None = None
    max: int = DEFAULT_MAX
    link: Register | None = None           # jump-through register
    preserve: frozenset[Register] = frozenset()
    role: str | None = None
    unique: bool = False
    all_: bool = False

    @property
    def has_filter(self) -> bool:
        return (self.op is not None or self.rr is not None
                or self.imm is not None or self.link is not None
                or bool(self.preserve) or self.role is not None
                or self.all_)


_FLAGS = ("op", "rr", "imm", "max", "link", "preserve", "role")


def parse_query(args: list[str]) -> Query:
    """Parse `--flag=value` / `--flag value` pairs into a Query."""
    q = Query()
    i = 0
    while i < len(args):
        tok = args[i]
        if not tok.startswith("--"):
            raise UsageError(f"unexpected argument {tok!r}")
        name, eq, value = tok[2:].partition("=")
        if name == "unique":
            if eq:
                raise UsageError("--unique takes no value")
            q = replace(q, unique=True)
            i += 1
            continue
        if name == "all":
            if eq:
                raise UsageError("--all takes no value")
            q = replace(q, all_=True)
            i += 1
            continue
        if name not in _FLAGS:
            raise UsageError(f"unknown flag --{name}")
        if not eq:
            if i + 1 >= len(args):
                raise UsageError(f"--{name} needs a value")
            value = args[i + 1]
            i += 1
        i += 1
        if name == "op":
            q = replace(q, op=value)
        elif name == "rr":
            if not is_register_name(value):
                raise UsageError(f"--rr: {value!r} is not a register")
            q = replace(q, rr=reg(value))
        elif name == "imm":
            try:
                q = replace(q, imm=int(value, 0))
            except ValueError:
                raise UsageError(f"--imm: {value!r} is not a number") from None
        elif name == "max":
            try:
                n = int(value, 0)
            except ValueError:
                raise UsageError(f"--max: {value!r} is not a number") from None
            if not 1 <= n <= MAX_GADGET_LEN:
                raise UsageError(
                    f"--max must be between 1 and {MAX_GADGET_LEN}")
            q = replace(q, max=n)
        elif name == "link":
            if not is_register_name(value):
                raise UsageError(f"--link: {value!r} is not a register")
            q = replace(q, link=reg(value))
        elif name == "preserve":
            regs = set(q.preserve)
            for part in value.split(","):
                if not is_register_name(part):
                    raise UsageError(
                        f"--preserve: {part!r} is not a register")
                regs.add(reg(part))
            q = replace(q, preserve=frozenset(regs))
        elif name == "role":
            q = replace(q, role=value)
    if not q.has_filter:
        raise UsageError("give at least one filter, or --all")
    return q


def query_to_argv(q: Query) -> list[str]:
    """Canonical flag spelling; parse_query round-trips it."""
    out = []
    if q.op is not None:
        out.append(f"--op={q.op}")
    if q.rr is not None:
        out.append(f"--rr={q.rr.name}")
    if q.imm is not None:
        out.append(f"--imm={q.imm}")
    if q.max != DEFAULT_MAX:
        out.append(f"--max={q.max}")
    if q.link is not None:
        out.append(f"--link={q.link.name}")
    if q.preserve:
        names = ",".join(sorted(r.name for r in q.preserve))
        out.append(f"--preserve={names}")
    if q.role is not None:
        out.append(f"--role={q.role}")
    if q.unique:
        out.append("--unique")
    if q.all_:
        out.append("--all")
    return out


@dataclass(frozen=True)
class QueryHit:
    gadget: Gadget
    summary: DataflowSummary
    roles: tuple[str, ...]


def _instruction_match(q: Query, insn) -> bool:
    if q.op is not None and not insn.matches_op(q.op):
        return False
    if q.imm is not None and insn.imm != q.imm:
        return False
    if q.rr is not None and q.rr not in insn.regs_written:
        return False
    return True


def _wants_instruction(q: Query) -> bool:
    return q.op is not None or q.imm is not None or q.rr is not None


def run_query(source: ExecutableImage | list[Gadget], q: Query,
              config: ScanConfig | None = None) -> list[QueryHit]:
    if isinstance(source, ExecutableImage):
        cfg = config or ScanConfig(max_len=q.max)
        gadgets = extract_gadgets(source, cfg)
        context = dispatcher_index(find_dispatchers(source))
    else:
        gadgets = list(source)
        context = {}

    if q.unique:
        gadgets = dedupe(gadgets)

    hits = []
    for g in sorted(gadgets, key=lambda g: (g.start, g.length)):
        if g.length > q.max:
            continue
        if _wants_instruction(q) and not any(
                _instruction_match(q, x) for x in g.interior):
            continue
        if q.link is not None and g.link_register is not q.link:
            continue
        summary = summarize_dataflow(g.instructions)
        if q.preserve and not q.preserve <= summary.preserved:
            continue
        roles = tuple(r.kind for r in classify(g, summary, context))
        if q.role is not None and q.role not in roles:
            continue
        hits.append(QueryHit(g, summary, roles))
    return hits


# --- output formats ---------------------------------------------------------

def render_listing(hits: list[QueryHit]) -> str:
    """Disassembly listing, one gadget per stanza."""
    blocks = []
    for h in hits:
        lines = [f"0x{x.address:08x}: {x.render()}"
                 for x in h.gadget.instructions]
        blocks.append("\n".join(lines))
    count = f"{len(hits)} gadget" + ("" if len(hits) == 1 else "s")
    if not blocks:
        return count + "\n"
    return "\n\n".join(blocks) + f"\n\n{count}\n"


@dataclass(frozen=True)
class Record:
    offset: int
    alignment: str
    link: str
    roles: tuple[str, ...]
    written: tuple[str, ...]


def _join(items) -> str:
    return ",".join(items) if items else "-"


def record_for(hit: QueryHit) -> Record:
    g = hit.gadget
    written = tuple(sorted(
        r.name for r in hit.summary.written | hit.summary.cond_written))
    return Record(offset=g.start, alignment=g.alignment,
                  link=g.terminator.control_flow.base.name,
                  roles=hit.roles, written=written)


def emit_records(hits: list[QueryHit]) -> str:
    """One line per gadget: offset alignment link roles written."""
    lines = []
    for h in hits:
        r = record_for(h)
        lines.append(f"0x{r.offset:08x} {r.alignment} {r.link} "
                     f"{_join(r.roles)} {_join(r.written)}")
    return "\n".join(lines) + ("\n" if lines else "")


def parse_records(text: str) -> list[Record]:
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 5:
            raise UsageError(f"record line {lineno}: want 5 fields, "
                             f"got {len(parts)}")
        offset_s, alignment, link, roles_s, written_s = parts
        try:
            offset = int(offset_s, 16)
        except ValueError:
            raise UsageError(
                f"record line {lineno}: bad offset {offset_s!r}") from None
        def split(s: str) -> tuple[str, ...]:
            return () if s == "-" else tuple(s.split(","))
        out.append(Record(offset, alignment, link,
                          split(roles_s), split(written_s)))
    return out
