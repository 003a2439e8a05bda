"""Single-instruction assembler, the encoding mirror of the decoder.

Covers every canonical mnemonic the decoder produces plus the pseudo
spellings li, mv, ret, jr, j, and nop (expanded to their 4-byte base
forms).  Operands follow the decoder's conventions: registers may be
given as Register objects, ABI names, or indices; immediates are ints.

Raises UnsupportedInstruction for unknown mnemonics and OperandOutOfRange
for operands that do not fit their encoding fields.
"""

from __future__ import annotations

from .errors import OperandOutOfRange, UnsupportedInstruction
from .isa import Register, reg


def _reg(op) -> Register:
    try:
        return reg(op)
    except (ValueError, TypeError):
        raise OperandOutOfRange(f"not a register: {op!r}") from None


def _prime(op) -> int:
    r = _reg(op)
    if not 8 <= r.index <= 15:
        raise OperandOutOfRange(f"{r.name} not encodable in a 3-bit field (x8..x15)")
    return r.index - 8


def _imm(op, lo: int, hi: int, multiple: int = 1, nonzero: bool = False) -> int:
    if isinstance(op, bool) or not isinstance(op, int):
        raise OperandOutOfRange(f"not an immediate: {op!r}")
    if not lo <= op <= hi:
        raise OperandOutOfRange(f"immediate {op} outside [{lo}, {hi}]")
    if op % multiple:
        raise OperandOutOfRange(f"immediate {op} not a multiple of {multiple}")
    if nonzero and op == 0:
        raise OperandOutOfRange("immediate must be nonzero")
    return op


def _nonzero_reg(op) -> Register:
    r = _reg(op)
    if r.index == 0:
        raise OperandOutOfRange(f"x0 not allowed here")
    return r


def _count(ops, n: int):
    if len(ops) != n:
        raise OperandOutOfRange(f"expected {n} operands, got {len(ops)}")


# --- 32-bit format packers --------------------------------------------------

def _pack_r(opcode, f3, f7, rd, rs1, rs2):
    return (f7 << 25) | (rs2.index << 20) | (rs1.index << 15) | \
           (f3 << 12) | (rd.index << 7) | opcode


def _pack_i(opcode, f3, rd, rs1, imm):
    return ((imm & 0xFFF) << 20) | (rs1.index << 15) | (f3 << 12) | \
           (rd.index << 7) | opcode


def _pack_s(opcode, f3, rs1, rs2, imm):
    imm &= 0xFFF
    return ((imm >> 5) << 25) | (rs2.index << 20) | (rs1.index << 15) | \
           (f3 << 12) | ((imm & 0x1F) << 7) | opcode


def _pack_b(opcode, f3, rs1, rs2, imm):
    imm &= 0x1FFF
    return ((imm >> 12) << 31) | (((imm >> 5) & 0x3F) << 25) | \
           (rs2.index << 20) | (rs1.index << 15) | (f3 << 12) | \
           (((imm >> 1) & 0xF) << 8) | (((imm >> 11) & 1) << 7) | opcode


def _pack_j(opcode, rd, imm):
    imm &= 0x1FFFFF
    return ((imm >> 20) << 31) | (((imm >> 1) & 0x3FF) << 21) | \
           (((imm >> 11) & 1) << 20) | (((imm >> 12) & 0xFF) << 12) | \
           (rd.index << 7) | opcode


# --- encoder table ----------------------------------------------------------
# Each entry maps a mnemonic to a closure returning (word, width).

_ENC: dict = {}


def _enc(name):
    def wrap(fn):
        _ENC[name] = fn
        return fn
    return wrap


def _add_r_type(name, opcode, f3, f7, rv64_only=False):
    def enc(ops, xlen):
        if rv64_only and xlen != 64:
            raise UnsupportedInstruction(f"{name} requires RV64")
        _count(ops, 3)
        return _pack_r(opcode, f3, f7, _reg(ops[0]), _reg(ops[1]), _reg(ops[2])), 4
    _ENC[name] = enc


def _add_i_type(name, opcode, f3, rv64_only=False):
    def enc(ops, xlen):
        if rv64_only and xlen != 64:
            raise UnsupportedInstruction(f"{name} requires RV64")
        _count(ops, 3)
        return _pack_i(opcode, f3, _reg(ops[0]), _reg(ops[1]),
                       _imm(ops[2], -2048, 2047)), 4
    _ENC[name] = enc


for _n, _f in [("add", (0, 0)), ("sub", (0, 0b0100000)), ("sll", (1, 0)),
               ("slt", (2, 0)), ("sltu", (3, 0)), ("xor", (4, 0)),
               ("srl", (5, 0)), ("sra", (5, 0b0100000)), ("or", (6, 0)),
               ("and", (7, 0))]:
    _add_r_type(_n, 0b0110011, _f[0], _f[1])

for _i3, _n in enumerate(["mul", "mulh", "mulhsu", "mulhu",
                          "div", "divu", "rem", "remu"]):
    _add_r_type(_n, 0b0110011, _i3, 0b0000001)

for _n, _f in [("addw", (0, 0)), ("subw", (0, 0b0100000)), ("sllw", (1, 0)),
               ("srlw", (5, 0)), ("sraw", (5, 0b0100000))]:
    _add_r_type(_n, 0b0111011, _f[0], _f[1], rv64_only=True)

for _n, _i3 in [("mulw", 0), ("divw", 4), ("divuw", 5),
                ("remw", 6), ("remuw", 7)]:
    _add_r_type(_n, 0b0111011, _i3, 0b0000001, rv64_only=True)

for _n, _i3 in [("addi", 0), ("slti", 2), ("sltiu", 3), ("xori", 4),
                ("ori", 6), ("andi", 7)]:
    _add_i_type(_n, 0b0010011, _i3)

_add_i_type("addiw", 0b0011011, 0, rv64_only=True)
_add_i_type("jalr", 0b1100111, 0)


def _add_shift(name, opcode, f3, top, narrow, rv64_only=False):
    def enc(ops, xlen):
        if rv64_only and xlen != 64:
            raise UnsupportedInstruction(f"{name} requires RV64")
        _count(ops, 3)
        hi = 31 if (narrow or xlen == 32) else 63
        sh = _imm(ops[2], 0, hi)
        f7 = top if (narrow or xlen == 32) else top >> 1
        shift = 25 if (narrow or xlen == 32) else 26
        word = (f7 << shift) | (sh << 20) | (_reg(ops[1]).index << 15) | \
               (f3 << 12) | (_reg(ops[0]).index << 7) | opcode
        return word, 4
    _ENC[name] = enc


_add_shift("slli", 0b0010011, 1, 0, narrow=False)
_add_shift("srli", 0b0010011, 5, 0, narrow=False)
_add_shift("srai", 0b0010011, 5, 0b0100000, narrow=False)
_add_shift("slliw", 0b0011011, 1, 0, narrow=True, rv64_only=True)
_add_shift("srliw", 0b0011011, 5, 0, narrow=True, rv64_only=True)
_add_shift("sraiw", 0b0011011, 5, 0b0100000, narrow=True, rv64_only=True)


def _add_load(name, f3, rv64_only=False):
    def enc(ops, xlen):
        if rv64_only and xlen != 64:
            raise UnsupportedInstruction(f"{name} requires RV64")
        _count(ops, 3)
        return _pack_i(0b0000011, f3, _reg(ops[0]), _reg(ops[1]),
                       _imm(ops[2], -2048, 2047)), 4
    _ENC[name] = enc


def _add_store(name, f3, rv64_only=False):
    def enc(ops, xlen):
        if rv64_only and xlen != 64:
            raise UnsupportedInstruction(f"{name} requires RV64")
        _count(ops, 3)
        return _pack_s(0b0100011, f3, _reg(ops[1]), _reg(ops[0]),
                       _imm(ops[2], -2048, 2047)), 4
    _ENC[name] = enc


for _n, _i3 in [("lb", 0), ("lh", 1), ("lw", 2), ("lbu", 4), ("lhu", 5)]:
    _add_load(_n, _i3)
_add_load("lwu", 6, rv64_only=True)
_add_load("ld", 3, rv64_only=True)

for _n, _i3 in [("sb", 0), ("sh", 1), ("sw", 2)]:
    _add_store(_n, _i3)
_add_store("sd", 3, rv64_only=True)


@_enc("lui")
def _enc_lui(ops, xlen):
    _count(ops, 2)
    return ((_imm(ops[1], 0, 0xFFFFF) << 12) | (_reg(ops[0]).index << 7)
            | 0b0110111), 4


@_enc("auipc")
def _enc_auipc(ops, xlen):
    _count(ops, 2)
    return ((_imm(ops[1], 0, 0xFFFFF) << 12) | (_reg(ops[0]).index << 7)
            | 0b0010111), 4


@_enc("jal")
def _enc_jal(ops, xlen):
    _count(ops, 2)
    return _pack_j(0b1101111, _reg(ops[0]),
                   _imm(ops[1], -(1 << 20), (1 << 20) - 2, multiple=2)), 4


def _add_branch(name, f3):
    def enc(ops, xlen):
        _count(ops, 3)
        return _pack_b(0b1100011, f3, _reg(ops[0]), _reg(ops[1]),
                       _imm(ops[2], -4096, 4094, multiple=2)), 4
    _ENC[name] = enc


for _n, _i3 in [("beq", 0), ("bne", 1), ("blt", 4), ("bge", 5),
                ("bltu", 6), ("bgeu", 7)]:
    _add_branch(_n, _i3)


@_enc("fence")
def _enc_fence(ops, xlen):
    _count(ops, 2)
    return ((_imm(ops[0], 0, 15) << 24) | (_imm(ops[1], 0, 15) << 20)
            | 0b0001111), 4


@_enc("fence.i")
def _enc_fence_i(ops, xlen):
    _count(ops, 0)
    return (0b001 << 12) | 0b0001111, 4


@_enc("ecall")
def _enc_ecall(ops, xlen):
    _count(ops, 0)
    return 0x00000073, 4


@_enc("ebreak")
def _enc_ebreak(ops, xlen):
    _count(ops, 0)
    return 0x00100073, 4


def _add_csr(name, f3, immediate):
    def enc(ops, xlen):
        _count(ops, 3)
        csr = _imm(ops[1], 0, 4095)
        if immediate:
            src = _imm(ops[2], 0, 31)
            return ((csr << 20) | (src << 15) | (f3 << 12) |
                    (_reg(ops[0]).index << 7) | 0b1110011), 4
        return ((csr << 20) | (_reg(ops[2]).index << 15) | (f3 << 12) |
                (_reg(ops[0]).index << 7) | 0b1110011), 4
    _ENC[name] = enc


for _n, _i3 in [("csrrw", 1), ("csrrs", 2), ("csrrc", 3)]:
    _add_csr(_n, _i3, immediate=False)
for _n, _i3 in [("csrrwi", 5), ("csrrsi", 6), ("csrrci", 7)]:
    _add_csr(_n, _i3, immediate=True)


def _add_amo(base, funct5, has_rs2):
    for width, f3 in (("w", 0b010), ("d", 0b011)):
        for order, aqrl in (("", 0), (".aq", 0b10), (".rl", 0b01), (".aqrl", 0b11)):
            name = f"{base}.{width}{order}"

            def enc(ops, xlen, f3=f3, aqrl=aqrl, funct5=funct5,
                    has_rs2=has_rs2, width=width, name=name):
                if width == "d" and xlen != 64:
                    raise UnsupportedInstruction(f"{name} requires RV64")
                if has_rs2:
                    _count(ops, 3)
                    rd, rs2, rs1 = _reg(ops[0]), _reg(ops[1]), _reg(ops[2])
                else:
                    _count(ops, 2)
                    rd, rs1 = _reg(ops[0]), _reg(ops[1])
                    rs2 = reg(0)
                f7 = (funct5 << 2) | aqrl
                return _pack_r(0b0101111, f3, f7, rd, rs1, rs2), 4
            _ENC[name] = enc


_add_amo("lr", 0b00010, has_rs2=False)
_add_amo("sc", 0b00011, has_rs2=True)
for _base, _f5 in [("amoswap", 0b00001), ("amoadd", 0b00000),
                   ("amoxor", 0b00100), ("amoand", 0b01100),
                   ("amoor", 0b01000), ("amomin", 0b10000),
                   ("amomax", 0b10100), ("amominu", 0b11000),
                   ("amomaxu", 0b11100)]:
    _add_amo(_base, _f5, has_rs2=True)


# --- compressed forms -------------------------------------------------------

def _ci_imm6(imm):
    return (((imm >> 5) & 1) << 12) | ((imm & 0x1F) << 2)


@_enc("c.nop")
def _enc_cnop(ops, xlen):
    _count(ops, 0)
    return 0x0001, 2


@_enc("c.addi")
def _enc_caddi(ops, xlen):
    _count(ops, 2)
    rd = _nonzero_reg(ops[0])
    imm = _imm(ops[1], -32, 31, nonzero=True)
    return 0b01 | (0b000 << 13) | (rd.index << 7) | _ci_imm6(imm), 2


@_enc("c.addiw")
def _enc_caddiw(ops, xlen):
    if xlen != 64:
        raise UnsupportedInstruction("c.addiw requires RV64")
    _count(ops, 2)
    rd = _nonzero_reg(ops[0])
    imm = _imm(ops[1], -32, 31)
    return 0b01 | (0b001 << 13) | (rd.index << 7) | _ci_imm6(imm), 2


@_enc("c.li")
def _enc_cli(ops, xlen):
    _count(ops, 2)
    rd = _nonzero_reg(ops[0])
    imm = _imm(ops[1], -32, 31)
    return 0b01 | (0b010 << 13) | (rd.index << 7) | _ci_imm6(imm), 2


@_enc("c.addi16sp")
def _enc_caddi16sp(ops, xlen):
    _count(ops, 1)
    imm = _imm(ops[0], -512, 496, multiple=16, nonzero=True)
    word = 0b01 | (0b011 << 13) | (2 << 7)
    word |= (((imm >> 9) & 1) << 12) | (((imm >> 4) & 1) << 6) | \
            (((imm >> 6) & 1) << 5) | (((imm >> 7) & 3) << 3) | \
            (((imm >> 5) & 1) << 2)
    return word, 2


@_enc("c.lui")
def _enc_clui(ops, xlen):
    _count(ops, 2)
    rd = _reg(ops[0])
    if rd.index in (0, 2):
        raise OperandOutOfRange("c.lui cannot target x0 or sp")
    f = _imm(ops[1], -32, 31, nonzero=True)
    return 0b01 | (0b011 << 13) | (rd.index << 7) | _ci_imm6(f), 2


@_enc("c.addi4spn")
def _enc_caddi4spn(ops, xlen):
    _count(ops, 2)
    rd = _prime(ops[0])
    imm = _imm(ops[1], 4, 1020, multiple=4)
    word = 0b00 | (rd << 2)
    word |= (((imm >> 4) & 3) << 11) | (((imm >> 6) & 0xF) << 7) | \
            (((imm >> 2) & 1) << 6) | (((imm >> 3) & 1) << 5)
    return word, 2


def _add_clmem(name, f3, quad, size, sp_rel, store, rv64_only=False):
    def enc(ops, xlen):
        if rv64_only and xlen != 64:
            raise UnsupportedInstruction(f"{name} requires RV64")
        if sp_rel:
            _count(ops, 2)
            r = _reg(ops[0])
            if not store and r.index == 0:
                raise OperandOutOfRange(f"{name} cannot target x0")
            hi = 504 if size == 8 else 252
            imm = _imm(ops[1], 0, hi, multiple=size)
            word = quad | (f3 << 13)
            if store:
                word |= r.index << 2
                if size == 4:
                    word |= (((imm >> 2) & 0xF) << 9) | (((imm >> 6) & 3) << 7)
                else:
                    word |= (((imm >> 3) & 7) << 10) | (((imm >> 6) & 7) << 7)
            else:
                word |= r.index << 7
                word |= ((imm >> 5) & 1) << 12
                if size == 4:
                    word |= (((imm >> 2) & 7) << 4) | (((imm >> 6) & 3) << 2)
                else:
                    word |= (((imm >> 3) & 3) << 5) | (((imm >> 6) & 7) << 2)
            return word, 2
        _count(ops, 3)
        rr = _prime(ops[0])
        rb = _prime(ops[1])
        hi = 248 if size == 8 else 124
        imm = _imm(ops[2], 0, hi, multiple=size)
        word = quad | (f3 << 13) | (rb << 7) | (rr << 2)
        word |= ((imm >> 3) & 7) << 10
        if size == 4:
            word |= (((imm >> 2) & 1) << 6) | (((imm >> 6) & 1) << 5)
        else:
            word |= ((imm >> 6) & 3) << 5
        return word, 2
    _ENC[name] = enc


_add_clmem("c.lw", 0b010, 0b00, 4, sp_rel=False, store=False)
_add_clmem("c.sw", 0b110, 0b00, 4, sp_rel=False, store=True)
_add_clmem("c.ld", 0b011, 0b00, 8, sp_rel=False, store=False, rv64_only=True)
_add_clmem("c.sd", 0b111, 0b00, 8, sp_rel=False, store=True, rv64_only=True)
_add_clmem("c.lwsp", 0b010, 0b10, 4, sp_rel=True, store=False)
_add_clmem("c.swsp", 0b110, 0b10, 4, sp_rel=True, store=True)
_add_clmem("c.ldsp", 0b011, 0b10, 8, sp_rel=True, store=False, rv64_only=True)
_add_clmem("c.sdsp", 0b111, 0b10, 8, sp_rel=True, store=True, rv64_only=True)


def _cj_pack(imm):
    return (((imm >> 11) & 1) << 12) | (((imm >> 4) & 1) << 11) | \
           (((imm >> 8) & 3) << 9) | (((imm >> 10) & 1) << 8) | \
           (((imm >> 6) & 1) << 7) | (((imm >> 7) & 1) << 6) | \
           (((imm >> 1) & 7) << 3) | (((imm >> 5) & 1) << 2)


@_enc("c.j")
def _enc_cj(ops, xlen):
    _count(ops, 1)
    return 0b01 | (0b101 << 13) | _cj_pack(_imm(ops[0], -2048, 2046, multiple=2)), 2


@_enc("c.jal")
def _enc_cjal(ops, xlen):
    if xlen != 32:
        raise UnsupportedInstruction("c.jal is RV32-only")
    _count(ops, 1)
    return 0b01 | (0b001 << 13) | _cj_pack(_imm(ops[0], -2048, 2046, multiple=2)), 2


def _add_cbranch(name, f3):
    def enc(ops, xlen):
        _count(ops, 2)
        rs = _prime(ops[0])
        imm = _imm(ops[1], -256, 254, multiple=2)
        word = 0b01 | (f3 << 13) | (rs << 7)
        word |= (((imm >> 8) & 1) << 12) | (((imm >> 3) & 3) << 10) | \
                (((imm >> 6) & 3) << 5) | (((imm >> 1) & 3) << 3) | \
                (((imm >> 5) & 1) << 2)
        return word, 2
    _ENC[name] = enc


_add_cbranch("c.beqz", 0b110)
_add_cbranch("c.bnez", 0b111)


def _add_cshift(name, funct2):
    def enc(ops, xlen):
        _count(ops, 2)
        rd = _prime(ops[0])
        sh = _imm(ops[1], 1, 63 if xlen == 64 else 31)
        word = 0b01 | (0b100 << 13) | (funct2 << 10) | (rd << 7)
        word |= (((sh >> 5) & 1) << 12) | ((sh & 0x1F) << 2)
        return word, 2
    _ENC[name] = enc


_add_cshift("c.srli", 0b00)
_add_cshift("c.srai", 0b01)


@_enc("c.andi")
def _enc_candi(ops, xlen):
    _count(ops, 2)
    rd = _prime(ops[0])
    imm = _imm(ops[1], -32, 31)
    word = 0b01 | (0b100 << 13) | (0b10 << 10) | (rd << 7)
    word |= (((imm >> 5) & 1) << 12) | ((imm & 0x1F) << 2)
    return word, 2


def _add_carith(name, hi_bit, funct2, rv64_only=False):
    def enc(ops, xlen):
        if rv64_only and xlen != 64:
            raise UnsupportedInstruction(f"{name} requires RV64")
        _count(ops, 2)
        rd, rs2 = _prime(ops[0]), _prime(ops[1])
        return (0b01 | (0b100 << 13) | (hi_bit << 12) | (0b11 << 10) |
                (rd << 7) | (funct2 << 5) | (rs2 << 2)), 2
    _ENC[name] = enc


_add_carith("c.sub", 0, 0b00)
_add_carith("c.xor", 0, 0b01)
_add_carith("c.or", 0, 0b10)
_add_carith("c.and", 0, 0b11)
_add_carith("c.subw", 1, 0b00, rv64_only=True)
_add_carith("c.addw", 1, 0b01, rv64_only=True)


@_enc("c.slli")
def _enc_cslli(ops, xlen):
    _count(ops, 2)
    rd = _nonzero_reg(ops[0])
    sh = _imm(ops[1], 1, 63 if xlen == 64 else 31)
    return (0b10 | (0b000 << 13) | (((sh >> 5) & 1) << 12) |
            (rd.index << 7) | ((sh & 0x1F) << 2)), 2


@_enc("c.jr")
def _enc_cjr(ops, xlen):
    _count(ops, 1)
    return 0b10 | (0b100 << 13) | (_nonzero_reg(ops[0]).index << 7), 2


@_enc("c.jalr")
def _enc_cjalr(ops, xlen):
    _count(ops, 1)
    return 0b10 | (0b100 << 13) | (1 << 12) | (_nonzero_reg(ops[0]).index << 7), 2


@_enc("c.mv")
def _enc_cmv(ops, xlen):
    _count(ops, 2)
    rd = _nonzero_reg(ops[0])
    rs2 = _nonzero_reg(ops[1])
    return 0b10 | (0b100 << 13) | (rd.index << 7) | (rs2.index << 2), 2


@_enc("c.add")
def _enc_cadd(ops, xlen):
    _count(ops, 2)
    rd = _nonzero_reg(ops[0])
    rs2 = _nonzero_reg(ops[1])
    return (0b10 | (0b100 << 13) | (1 << 12) | (rd.index << 7) |
            (rs2.index << 2)), 2


@_enc("c.ebreak")
def _enc_cebreak(ops, xlen):
    _count(ops, 0)
    return 0x9002, 2


# --- pseudo spellings -------------------------------------------------------

@_enc("li")
def _enc_li(ops, xlen):
    _count(ops, 2)
    imm = _imm(ops[1], -2048, 2047)
    return _ENC["addi"]((ops[0], 0, imm), xlen)


@_enc("mv")
def _enc_mv(ops, xlen):
    _count(ops, 2)
    return _ENC["addi"]((ops[0], ops[1], 0), xlen)


@_enc("ret")
def _enc_ret(ops, xlen):
    _count(ops, 0)
    return _ENC["jalr"]((0, 1, 0), xlen)


@_enc("jr")
def _enc_jr(ops, xlen):
    _count(ops, 1)
    return _ENC["jalr"]((0, ops[0], 0), xlen)


@_enc("nop")
def _enc_nop(ops, xlen):
    _count(ops, 0)
    return _ENC["addi"]((0, 0, 0), xlen)


@_enc("j")
def _enc_j(ops, xlen):
    _count(ops, 1)
    return _ENC["jal"]((0, ops[0]), xlen)


def assemble(mnemonic: str, operands=(), xlen: int = 32) -> bytes:
    """Encode one instruction, returning its 2- or 4-byte little-endian form."""
    try:
        enc = _ENC[mnemonic]
    except KeyError:
        raise UnsupportedInstruction(f"unknown mnemonic: {mnemonic!r}") from None
    word, width = enc(tuple(operands), xlen)
    return word.to_bytes(width, "little")


def supported_mnemonics() -> tuple[str, ...]:
    return tuple(sorted(_ENC))
