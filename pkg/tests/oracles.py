"""Independent oracle implementations used to pin expected values.

Nothing here may import from the code paths it checks: the HMAC oracle is
built directly on the SHA-256 primitive (RFC 2104 construction, not the
hmac module), and the statement oracle brute-forces split points with
repeated full-text completeness checks instead of incremental scanning.
"""

from __future__ import annotations

import hashlib
from typing import List, Tuple

_BLOCK = 64  # SHA-256 block size in bytes


def hmac_sha256_hex(key: bytes, data: bytes) -> str:
    """RFC 2104 HMAC over SHA-256, written out long-hand."""
    if len(key) > _BLOCK:
        key = hashlib.sha256(key).digest()
    key = key + b"\x00" * (_BLOCK - len(key))
    ipad = bytes(b ^ 0x36 for b in key)
    opad = bytes(b ^ 0x5C for b in key)
    inner = hashlib.sha256(ipad + data).digest()
    return hashlib.sha256(opad + inner).hexdigest()


def u32be(n: int) -> bytes:
    return n.to_bytes(4, "big")


def frame_message(payload_frames: List[bytes], key_hex: bytes) -> bytes:
    """Assemble the wire bytes for given payload frames, by hand."""
    signature = hmac_sha256_hex(bytes.fromhex(key_hex.decode()),
                                b"".join(payload_frames)).encode("ascii")
    frames = [signature] + payload_frames
    out = [u32be(len(frames))]
    for frame in frames:
        out.append(u32be(len(frame)))
        out.append(frame)
    return b"".join(out)


def brute_force_statements(source: str, is_complete, tokenize) -> List[Tuple[int, int, bool]]:
    """Minimal-complete-prefix statement splitting by trying every split point.

    Split points are line ends and top-level semicolons. For each statement
    start, the shortest prefix judged Complete wins. Returns byte-offset
    triples (start, end, complete), trimmed of surrounding trivia the same
    way spans are defined (first and last non-comment token).

    is_complete/tokenize are passed in: they are the shared primitives whose
    *composition* into a scanner this oracle double-checks.
    """
    tokens = [t for t in tokenize(source)]
    meaningful = [t for t in tokens
                  if t.kind.value not in ("comment", "newline")]
    if not meaningful:
        return []

    # candidate split points in byte offsets: after each newline token at
    # top-level bracket depth, after each top-level semicolon, and EOF
    depth = 0
    candidates = []
    for tok in tokens:
        if tok.kind.value == "open":
            depth += 1
        elif tok.kind.value == "close":
            depth = max(0, depth - 1)
        elif tok.kind.value == "newline" and depth == 0:
            candidates.append(tok.start)
        elif tok.kind.value == "semicolon" and depth == 0:
            candidates.append(tok.end)
    end_byte = tokens[-1].end
    candidates.append(end_byte + 1)  # sentinel beyond everything

    source_bytes = source.encode("utf-8")

    def text_between(a: int, b: int) -> str:
        return source_bytes[a:b].decode("utf-8")

    def trim(a: int, b: int) -> Tuple[int, int]:
        inside = [t for t in meaningful if a <= t.start and t.end <= b]
        return inside[0].start, inside[-1].end

    results = []
    cursor = 0
    while True:
        remaining = [t for t in meaningful if t.start >= cursor]
        if not remaining:
            break
        start = remaining[0].start
        found = None
        for cand in candidates:
            if cand <= start:
                continue
            if is_complete(text_between(start, min(cand, len(source_bytes)))).value == "complete":
                found = cand
                break
        if found is None or found > len(source_bytes):
            lo, hi = trim(start, len(source_bytes))
            verdict = is_complete(text_between(start, len(source_bytes))).value == "complete"
            results.append((lo, hi, verdict))
            break
        lo, hi = trim(start, found)
        results.append((lo, hi, True))
        cursor = found
    return results
