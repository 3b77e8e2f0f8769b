"""Byte-exact message framing and HMAC-SHA256 signing.

Layout of one encoded message:

    u32 big-endian frame count (always 5)
    5 x (u32 big-endian length + bytes), in order:
        signature, header, parent_header, metadata, content

Frames 2-5 are canonical UTF-8 JSON: no whitespace, keys in insertion
order, an empty parent_header encodes as ``{}``. Frame 1 is the lowercase
hex HMAC-SHA256 over the concatenated bytes of frames 2-5, keyed by the
raw bytes of the hex-decoded key.
"""

from __future__ import annotations

import hashlib
import hmac
import json
import struct

from .errors import MalformedFrame, MalformedJson, SignatureMismatch
from .messages import Channel, KernelMessage, MessageHeader

FRAME_COUNT = 5
MAX_FRAME_BYTES = 64 * 1024 * 1024  # hard cap per frame

_U32 = struct.Struct(">I")


def canonical_json(obj: dict) -> bytes:
    """Serialize a JSON object with no whitespace, keys in insertion order."""
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"),
                      allow_nan=False).encode("utf-8")


def sign_frames(key_hex: str, payload_frames) -> bytes:
    """Lowercase-hex HMAC-SHA256 over the concatenation of the payload frames."""
    mac = hmac.new(bytes.fromhex(key_hex), digestmod=hashlib.sha256)
    for frame in payload_frames:
        mac.update(frame)
    return mac.hexdigest().encode("ascii")


def message_frames(msg: KernelMessage) -> list:
    """The four JSON payload frames of a message, canonical bytes."""
    parent = msg.parent_header.to_dict() if msg.parent_header else {}
    return [
        canonical_json(msg.header.to_dict()),
        canonical_json(parent),
        canonical_json(msg.metadata),
        canonical_json(msg.content),
    ]


def join_frames(frames) -> bytes:
    if len(frames) != FRAME_COUNT:
        raise MalformedFrame(f"expected {FRAME_COUNT} frames, got {len(frames)}")
    parts = [_U32.pack(FRAME_COUNT)]
    for frame in frames:
        if len(frame) >= MAX_FRAME_BYTES:
            raise MalformedFrame(f"frame of {len(frame)} bytes exceeds 64 MiB cap")
        parts.append(_U32.pack(len(frame)))
        parts.append(frame)
    return b"".join(parts)


def encode_message(msg: KernelMessage, key: str) -> bytes:
    payload = message_frames(msg)
    signature = sign_frames(key, payload)
    return join_frames([signature] + payload)


def split_frames(data: bytes) -> list:
    """Split one complete encoded message into its 5 frames.

    Never reads past declared lengths; truncated or oversized input raises
    MalformedFrame.
    """
    if len(data) < 4:
        raise MalformedFrame("input shorter than the frame-count field")
    (count,) = _U32.unpack_from(data, 0)
    if count != FRAME_COUNT:
        raise MalformedFrame(f"frame count {count}, expected {FRAME_COUNT}")
    frames = []
    pos = 4
    for i in range(FRAME_COUNT):
        if pos + 4 > len(data):
            raise MalformedFrame(f"truncated length field for frame {i + 1}")
        (length,) = _U32.unpack_from(data, pos)
        if length >= MAX_FRAME_BYTES:
            raise MalformedFrame(f"frame {i + 1} declares {length} bytes, over the 64 MiB cap")
        pos += 4
        if pos + length > len(data):
            raise MalformedFrame(f"truncated frame {i + 1}")
        frames.append(data[pos:pos + length])
        pos += length
    if pos != len(data):
        raise MalformedFrame(f"{len(data) - pos} trailing bytes after frame {FRAME_COUNT}")
    return frames


def _parse_object(raw: bytes, what: str) -> dict:
    try:
        obj = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedJson(f"{what} frame is not valid JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise MalformedJson(f"{what} frame is not a JSON object")
    return obj


def frames_to_message(frames, key: str, channel: Channel = Channel.SHELL) -> KernelMessage:
    """Verify the signature frame, then parse the JSON frames."""
    signature, payload = frames[0], frames[1:]
    expected = sign_frames(key, payload)
    if not hmac.compare_digest(signature, expected):
        raise SignatureMismatch("HMAC verification failed")
    header = _parse_object(payload[0], "header")
    parent = _parse_object(payload[1], "parent_header")
    metadata = _parse_object(payload[2], "metadata")
    content = _parse_object(payload[3], "content")
    try:
        hdr = MessageHeader.from_dict(header)
        parent_hdr = MessageHeader.from_dict(parent) if parent else None
    except KeyError as exc:
        raise MalformedJson(f"header missing required field {exc}") from None
    return KernelMessage(header=hdr, parent_header=parent_hdr,
                         metadata=metadata, content=content, channel=channel)


def decode_message(data: bytes, key: str, channel: Channel = Channel.SHELL) -> KernelMessage:
    """Inverse of encode_message; verifies the signature before parsing."""
    return frames_to_message(split_frames(data), key, channel)
