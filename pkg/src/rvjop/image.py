"""Executable image loading: ELF program headers or flat binary blobs.

Only program headers matter here; section headers are ignored entirely
(scanning operates on what gets mapped, not on link-time metadata).
Little-endian images only.  Segments are kept byte-exact: slicing the
image returns the same bytes the file supplied, padded with zeros where
a segment's memory size exceeds its file size.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from .errors import MalformedImage, NotElf, OutOfRange, WrongMachine

_EM_RISCV = 243
_PT_LOAD = 1
_PF_X = 1


@dataclass(frozen=True)
class Segment:
    vaddr: int
    data: bytes
    executable: bool
    name: str = ""

    @property
    def end(self) -> int:
        return self.vaddr + len(self.data)


@dataclass(frozen=True)
class ExecutableImage:
    segments: tuple[Segment, ...]
    xlen: int
    entry_point: int
    source: str  # "elf" | "raw"

    def __post_init__(self):
        last_end = None
        for seg in self.segments:
            if last_end is not None and seg.vaddr < last_end:
                raise MalformedImage(
                    f"overlapping segments at 0x{seg.vaddr:x}")
            last_end = seg.end

    @property
    def executable_segments(self) -> tuple[Segment, ...]:
        return tuple(s for s in self.segments if s.executable)

    def segment_containing(self, address: int) -> Segment | None:
        for seg in self.segments:
            if seg.vaddr <= address < seg.end:
                return seg
        return None

    def byte_at(self, address: int) -> int:
        seg = self.segment_containing(address)
        if seg is None:
            raise OutOfRange(f"address 0x{address:x} not in any segment")
        return seg.data[address - seg.vaddr]

    def read(self, address: int, size: int) -> bytes:
        """Bytes for [address, address+size); spans never cross segments."""
        if size < 0:
            raise OutOfRange(f"negative span {size}")
        seg = self.segment_containing(address)
        if seg is None or address + size > seg.end:
            raise OutOfRange(
                f"span [0x{address:x}, 0x{address + size:x}) not in any segment")
        off = address - seg.vaddr
        return seg.data[off:off + size]


def _segments_sorted(segs: list[Segment]) -> tuple[Segment, ...]:
    return tuple(sorted(segs, key=lambda s: s.vaddr))


def load_elf(path: str) -> ExecutableImage:
    with open(path, "rb") as fh:
        blob = fh.read()
    return parse_elf(blob)


def parse_elf(blob: bytes) -> ExecutableImage:
    if len(blob) < 16 or blob[:4] != b"\x7fELF":
        raise NotElf("missing ELF magic")
    ei_class, ei_data = blob[4], blob[5]
    if ei_class not in (1, 2):
        raise MalformedImage(f"bad EI_CLASS {ei_class}")
    if ei_data != 1:
        raise MalformedImage("big-endian ELF not supported")
    xlen = 32 if ei_class == 1 else 64

    try:
        if xlen == 32:
            (e_machine, e_entry, e_phoff, e_phentsize, e_phnum) = (
                struct.unpack_from("<H", blob, 18)[0],
                struct.unpack_from("<I", blob, 24)[0],
                struct.unpack_from("<I", blob, 28)[0],
                struct.unpack_from("<H", blob, 42)[0],
                struct.unpack_from("<H", blob, 44)[0])
        else:
            (e_machine, e_entry, e_phoff, e_phentsize, e_phnum) = (
                struct.unpack_from("<H", blob, 18)[0],
                struct.unpack_from("<Q", blob, 24)[0],
                struct.unpack_from("<Q", blob, 32)[0],
                struct.unpack_from("<H", blob, 54)[0],
                struct.unpack_from("<H", blob, 56)[0])
    except struct.error:
        raise MalformedImage("ELF header truncated") from None

    if e_machine != _EM_RISCV:
        raise WrongMachine(f"e_machine {e_machine}, expected {_EM_RISCV}")

    min_phentsize = 32 if xlen == 32 else 56
    if e_phnum and e_phentsize < min_phentsize:
        raise MalformedImage(f"e_phentsize {e_phentsize} too small")

    segs: list[Segment] = []
    for i in range(e_phnum):
        off = e_phoff + i * e_phentsize
        try:
            if xlen == 32:
                p_type, p_offset, p_vaddr, _paddr, p_filesz, p_memsz, p_flags, _al = \
                    struct.unpack_from("<8I", blob, off)
            else:
                p_type, p_flags, p_offset, p_vaddr, _paddr, p_filesz, p_memsz, _al = \
                    struct.unpack_from("<2I6Q", blob, off)
        except struct.error:
            raise MalformedImage(f"program header {i} truncated") from None
        if p_type != _PT_LOAD:
            continue
        if p_offset + p_filesz > len(blob):
            raise MalformedImage(f"segment {i} file range exceeds file size")
        if p_memsz < p_filesz:
            raise MalformedImage(f"segment {i} memsz smaller than filesz")
        data = blob[p_offset:p_offset + p_filesz] + bytes(p_memsz - p_filesz)
        segs.append(Segment(vaddr=p_vaddr, data=data,
                            executable=bool(p_flags & _PF_X), name=f"load{i}"))

    return ExecutableImage(segments=_segments_sorted(segs), xlen=xlen,
                           entry_point=e_entry, source="elf")


def load_raw(path: str, base: int, xlen: int) -> ExecutableImage:
    """Map a flat file as one executable segment at `base`."""
    if xlen not in (32, 64):
        raise MalformedImage(f"xlen must be 32 or 64, got {xlen}")
    with open(path, "rb") as fh:
        blob = fh.read()
    return from_bytes(blob, base, xlen)


def from_bytes(blob: bytes, base: int, xlen: int,
               entry: int | None = None) -> ExecutableImage:
    """Wrap a byte blob as a single-segment executable image."""
    seg = Segment(vaddr=base, data=bytes(blob), executable=True, name="raw")
    return ExecutableImage(segments=(seg,), xlen=xlen,
                           entry_point=base if entry is None else entry,
                           source="raw")
