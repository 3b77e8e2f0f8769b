"""rbox: kernel-backed interactive execution engine for R-style workflows."""

from .errors import (ConnectFailed, EmptySource, IncompleteExpression, InvalidUtf8,
                     KernelDead, MalformedFrame, MalformedJson, MalformedKernelspec,
                     ProtocolError, QueueClosed, RboxError, RelaunchFailed,
                     SignatureMismatch, SpawnFailed, StartupTimeout)
from .messages import (Channel, ConnectionInfo, KernelMessage, MessageHeader,
                       make_header, message_registry)
from .wire import decode_message, encode_message

__version__ = "0.1.0"

__all__ = [
    "Channel", "ConnectionInfo", "KernelMessage", "MessageHeader",
    "make_header", "message_registry", "encode_message", "decode_message",
    "RboxError", "ProtocolError", "SignatureMismatch", "MalformedFrame",
    "MalformedJson", "ConnectFailed", "MalformedKernelspec", "SpawnFailed",
    "StartupTimeout", "KernelDead", "RelaunchFailed", "QueueClosed",
    "IncompleteExpression", "InvalidUtf8", "EmptySource",
    "__version__",
]
