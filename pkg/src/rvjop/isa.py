"""Register file description and small numeric helpers.

The ABI saver column follows the standard RISC-V calling convention:
x0 and the platform registers gp/tp belong to neither class, ra and the
t/a families are caller-saved, sp and the s family are callee-saved.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class Register:
    index: int
    name: str      # canonical ABI name ("zero", "ra", "a5", ...)
    saver: str     # "caller" | "callee" | "none"

    def __repr__(self) -> str:
        return self.name


def _build_registers() -> tuple[Register, ...]:
    savers = {0: "none", 1: "caller", 2: "callee", 3: "none", 4: "none"}
    names = ["zero", "ra", "sp", "gp", "tp", "t0", "t1", "t2", "s0", "s1"]
    names += [f"a{i}" for i in range(8)]        # x10..x17
    names += [f"s{i}" for i in range(2, 12)]    # x18..x27
    names += [f"t{i}" for i in range(3, 7)]     # x28..x31
    regs = []
    for i, name in enumerate(names):
        if i in savers:
            saver = savers[i]
        elif name.startswith("s"):
            saver = "callee"
        else:
            saver = "caller"
        regs.append(Register(i, name, saver))
    return tuple(regs)


REGISTERS: tuple[Register, ...] = _build_registers()

_BY_NAME: dict[str, Register] = {r.name: r for r in REGISTERS}
_BY_NAME["fp"] = REGISTERS[8]
_BY_NAME.update({f"x{i}": REGISTERS[i] for i in range(32)})


def reg(key: int | str | Register) -> Register:
    """Look up a register by index, ABI name, or xN name."""
    if isinstance(key, Register):
        return key
    if isinstance(key, int):
        if not 0 <= key < 32:
            raise ValueError(f"register index out of range: {key}")
        return REGISTERS[key]
    try:
        return _BY_NAME[key]
    except KeyError:
        raise ValueError(f"unknown register name: {key!r}") from None


def is_register_name(name: str) -> bool:
    return name in _BY_NAME


ZERO = REGISTERS[0]
RA = REGISTERS[1]
SP = REGISTERS[2]
GP = REGISTERS[3]
TP = REGISTERS[4]
T0 = REGISTERS[5]
T1 = REGISTERS[6]
T2 = REGISTERS[7]
S0 = REGISTERS[8]
S1 = REGISTERS[9]
A0 = REGISTERS[10]
A1 = REGISTERS[11]
A2 = REGISTERS[12]
A3 = REGISTERS[13]
A4 = REGISTERS[14]
A5 = REGISTERS[15]
A6 = REGISTERS[16]
A7 = REGISTERS[17]

ARG_REGS = tuple(REGISTERS[10:18])


# --- bit fiddling -----------------------------------------------------------

def bits(word: int, hi: int, lo: int) -> int:
    """Extract word[hi:lo] inclusive."""
    return (word >> lo) & ((1 << (hi - lo + 1)) - 1)


def sext(value: int, width: int) -> int:
    """Sign-extend a width-bit value to a Python int."""
    sign = 1 << (width - 1)
    return (value & (sign - 1)) - (value & sign)


def mask(xlen: int) -> int:
    return (1 << xlen) - 1


def to_unsigned(value: int, xlen: int) -> int:
    return value & mask(xlen)


def to_signed(value: int, xlen: int) -> int:
    return sext(value & mask(xlen), xlen)
