"""Printable escape convention for byte-string tokens.

``\\n`` encodes a newline, ``\\\\`` a backslash and ``\\xHH`` an arbitrary
byte. Every other byte is stored literally, so valid UTF-8 tokens stay
readable in vocabulary files and JSON reports.
"""

from __future__ import annotations


def unescape_token(data: bytes | str) -> bytes:
    """Decode the escape convention back to raw bytes.

    Raises ValueError on a malformed escape sequence.
    """
    if isinstance(data, str):
        data = data.encode("utf-8")
    out = bytearray()
    i = 0
    n = len(data)
    while i < n:
        b = data[i]
        if b != 0x5C:  # backslash
            out.append(b)
            i += 1
            continue
        if i + 1 >= n:
            raise ValueError("dangling backslash at end of token")
        nxt = data[i + 1]
        if nxt == ord("n"):
            out.append(0x0A)
            i += 2
        elif nxt == 0x5C:
            out.append(0x5C)
            i += 2
        elif nxt == ord("x"):
            if i + 4 > n:
                raise ValueError("truncated \\xHH escape")
            pair = data[i + 2 : i + 4]
            try:
                out.append(int(pair.decode("ascii"), 16))
            except (UnicodeDecodeError, ValueError):
                raise ValueError(f"invalid \\xHH escape: {pair!r}") from None
            i += 4
        else:
            raise ValueError(f"unknown escape sequence \\{chr(nxt)}")
    return bytes(out)


def escape_token(token: bytes) -> str:
    """Encode raw bytes in the printable escape convention.

    Valid UTF-8 stays literal apart from backslash, newline and control
    characters; non-UTF-8 byte strings fall back to per-byte escaping.
    """
    try:
        text = token.decode("utf-8")
    except UnicodeDecodeError:
        out = []
        for b in token:
            if b == 0x5C:
                out.append("\\\\")
            elif b == 0x0A:
                out.append("\\n")
            elif 0x20 <= b <= 0x7E:
                out.append(chr(b))
            else:
                out.append(f"\\x{b:02x}")
        return "".join(out)
    out = []
    for ch in text:
        if ch == "\\":
            out.append("\\\\")
        elif ch == "\n":
            out.append("\\n")
        elif ord(ch) < 0x20 or ord(ch) == 0x7F:
            out.append(f"\\x{ord(ch):02x}")
        else:
            out.append(ch)
    return "".join(out)
