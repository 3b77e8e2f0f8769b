"""Seeded random generators shared by unit and acceptance tests."""

from __future__ import annotations

import random
import string

from rbox.messages import (Channel, KernelMessage, MessageHeader, fresh_key,
                           message_registry)

_MSG_TYPES = sorted(message_registry())


def random_json_value(rng: random.Random, depth: int = 0):
    choices = ["str", "int", "float", "bool", "null"]
    if depth < 2:
        choices += ["list", "dict"]
    kind = rng.choice(choices)
    if kind == "str":
        n = rng.randrange(0, 12)
        alphabet = string.ascii_letters + string.digits + " _-λéé中"
        return "".join(rng.choice(alphabet) for _ in range(n))
    if kind == "int":
        return rng.randrange(-10**9, 10**9)
    if kind == "float":
        return rng.uniform(-1e6, 1e6)
    if kind == "bool":
        return rng.random() < 0.5
    if kind == "null":
        return None
    if kind == "list":
        return [random_json_value(rng, depth + 1) for _ in range(rng.randrange(0, 4))]
    return random_json_object(rng, depth + 1)


def random_json_object(rng: random.Random, depth: int = 0) -> dict:
    return {
        f"k{rng.randrange(100)}_{i}": random_json_value(rng, depth + 1)
        for i in range(rng.randrange(0, 5))
    }


def random_header(rng: random.Random) -> MessageHeader:
    return MessageHeader(
        msg_id=f"{rng.getrandbits(64):016x}-{rng.getrandbits(32):08x}",
        session=f"sess-{rng.getrandbits(32):08x}",
        username=rng.choice(["alice", "bob", "rbox", "tester"]),
        date=f"2026-0{rng.randrange(1, 10)}-1{rng.randrange(0, 10)}"
             f"T0{rng.randrange(0, 10)}:1{rng.randrange(0, 6)}"
             f":2{rng.randrange(0, 10)}.{rng.randrange(1000):03d}Z",
        msg_type=rng.choice(_MSG_TYPES),
    )


def random_message(rng: random.Random) -> KernelMessage:
    return KernelMessage(
        header=random_header(rng),
        parent_header=random_header(rng) if rng.random() < 0.6 else None,
        metadata=random_json_object(rng),
        content=random_json_object(rng),
        channel=rng.choice(list(Channel)),
    )


def random_key(rng: random.Random) -> str:
    return "".join(rng.choice("0123456789abcdef") for _ in range(32))


__all__ = ["random_message", "random_header", "random_json_object",
           "random_key", "fresh_key"]
