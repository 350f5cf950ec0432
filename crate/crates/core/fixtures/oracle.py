# Copyright (c) The redstuff authors
# SPDX-License-Identifier: Apache-2.0

"""Generates the golden fixtures in this directory.

Shares no code with the Rust crate: field products are computed by
shift-and-reduce, and codewords by solving a Vandermonde system for the
interpolating polynomial and evaluating it, instead of Lagrange weights.

    python3 oracle.py
"""

import hashlib
import json
import os

POLY = 0x1002D


def gf_mul(a, b):
    r = 0
    while b:
        if b & 1:
            r ^= a
        b >>= 1
        a <<= 1
        if a & 0x10000:
            a ^= POLY
    return r


def gf_pow(a, e):
    r = 1
    while e:
        if e & 1:
            r = gf_mul(r, a)
        a = gf_mul(a, a)
        e >>= 1
    return r


def gf_inv(a):
    assert a != 0
    return gf_pow(a, 0xFFFF - 1)


def solve(matrix, rhs):
    """Gauss-Jordan elimination over GF(2^16)."""
    n = len(matrix)
    m = [row[:] + [v] for row, v in zip(matrix, rhs)]
    for col in range(n):
        pivot = next(r for r in range(col, n) if m[r][col])
        m[col], m[pivot] = m[pivot], m[col]
        inv = gf_inv(m[col][col])
        m[col] = [gf_mul(v, inv) for v in m[col]]
        for r in range(n):
            if r != col and m[r][col]:
                c = m[r][col]
                m[r] = [v ^ gf_mul(c, w) for v, w in zip(m[r], m[col])]
    return [row[n] for row in m]


def rs_encode(source, n):
    """Systematic code: the polynomial through (i, source[i]) for i < t,
    evaluated at 0..n-1. Symbols are big-endian u16 words."""
    t = len(source)
    size = len(source[0])
    vander = [[gf_pow(x, k) for k in range(t)] for x in range(t)]
    out = [bytearray(size) for _ in range(n)]
    for w in range(0, size, 2):
        ys = [int.from_bytes(s[w:w + 2], "big") for s in source]
        coeffs = solve(vander, ys)
        for x in range(n):
            acc = 0
            xp = 1
            for c in coeffs:
                acc ^= gf_mul(c, xp)
                xp = gf_mul(xp, x)
            out[x][w:w + 2] = acc.to_bytes(2, "big")
    return [bytes(o) for o in out]


def tagged(tag, *parts):
    h = hashlib.sha256(bytes([tag]))
    for p in parts:
        h.update(p)
    return h.digest()


def merkle_root(leaves):
    level = [tagged(0, leaf) for leaf in leaves]
    width = 1
    while width < len(level):
        width *= 2
    level += [level[-1]] * (width - len(level))
    while len(level) > 1:
        level = [tagged(1, level[i], level[i + 1]) for i in range(0, len(level), 2)]
    return level[0]


def encode_2d(blob, f, sym):
    n = 3 * f + 1
    rows, cols = f + 1, 2 * f + 1
    cap = rows * cols * sym
    assert len(blob) <= cap
    data = blob + bytes(cap - len(blob))
    cell = lambda r, c: data[(r * cols + c) * sym:(r * cols + c + 1) * sym]
    # Column code over each column: primary sliver i is row i of the
    # column-extended matrix.
    col_words = [rs_encode([cell(r, c) for r in range(rows)], n) for c in range(cols)]
    primary = [b"".join(col_words[c][i] for c in range(cols)) for i in range(n)]
    # Row code over each row: secondary sliver j is column j of the
    # row-extended matrix.
    row_words = [rs_encode([cell(r, c) for c in range(cols)], n) for r in range(rows)]
    secondary = [b"".join(row_words[r][j] for r in range(rows)) for j in range(n)]
    return primary, secondary


def split(sliver, sym):
    return [sliver[i:i + sym] for i in range(0, len(sliver), sym)]


def blob_fixture(blob, f, sym):
    n = 3 * f + 1
    primary, secondary = encode_2d(blob, f, sym)
    # Full rows/columns of the doubly extended matrix, committed per sliver.
    p_roots = [merkle_root(rs_encode(split(p, sym), n)) for p in primary]
    s_roots = [merkle_root(rs_encode(split(s, sym), n)) for s in secondary]
    blob_id = tagged(
        2,
        merkle_root(p_roots),
        merkle_root(s_roots),
        len(blob).to_bytes(8, "big"),
        sym.to_bytes(4, "big"),
        bytes([1]),
    )
    metadata = (
        len(blob).to_bytes(8, "big")
        + sym.to_bytes(4, "big")
        + bytes([1])
        + (0).to_bytes(8, "big")
        + n.to_bytes(4, "big")
        + b"".join(p_roots)
        + b"".join(s_roots)
    )
    return {
        "blob": blob.hex(),
        "f": f,
        "symbol_size": sym,
        "primary": [p.hex() for p in primary],
        "secondary": [s.hex() for s in secondary],
        "primary_roots": [r.hex() for r in p_roots],
        "secondary_roots": [r.hex() for r in s_roots],
        "metadata": metadata.hex(),
        "blob_id": blob_id.hex(),
    }


def det_bytes(seed, length):
    out = b""
    counter = 0
    while len(out) < length:
        out += hashlib.sha256(f"{seed}:{counter}".encode()).digest()
        counter += 1
    return out[:length]


def main():
    here = os.path.dirname(os.path.abspath(__file__))

    gf = []
    for a, b in [(0x0002, 0x8000), (0x1234, 0x5678), (0xFFFF, 0xFFFF), (0x00FF, 0x0101), (0xBEEF, 0x0003)]:
        gf.append({"a": a, "b": b, "product": gf_mul(a, b), "inverse_a": gf_inv(a)})

    rs = []
    for t, n, size, seed in [(1, 4, 2, 1), (2, 4, 4, 2), (3, 4, 2, 3), (3, 7, 6, 4), (5, 7, 2, 5), (4, 10, 8, 6)]:
        raw = det_bytes(f"rs{seed}", t * size)
        source = [raw[i * size:(i + 1) * size] for i in range(t)]
        rs.append({
            "t": t,
            "n": n,
            "source": [s.hex() for s in source],
            "codeword": [c.hex() for c in rs_encode(source, n)],
        })

    blobs = [
        blob_fixture(b"hello, world", 1, 2),
        blob_fixture(bytes(range(1, 13)), 1, 2),
        blob_fixture(det_bytes("b1", 100), 1, 18),
        blob_fixture(det_bytes("b2", 77), 2, 6),
        blob_fixture(b"x", 0, 2),
        blob_fixture(det_bytes("b3", 250), 3, 10),
    ]

    for name, value in [("gf16.json", gf), ("rs.json", rs), ("encodings.json", blobs)]:
        with open(os.path.join(here, name), "w") as fh:
            json.dump(value, fh, indent=1)
            fh.write("\n")


if __name__ == "__main__":
    main()
