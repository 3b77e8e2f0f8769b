"""Exception types shared across the rbox package."""


class RboxError(Exception):
    """Base class for all rbox errors."""


# -- wire / transport ------------------------------------------------------

class ProtocolError(RboxError):
    """Base class for wire-level failures."""


class SignatureMismatch(ProtocolError):
    """HMAC verification failed; the message must be discarded."""


class MalformedFrame(ProtocolError):
    """Bad frame count or length; the connection must be closed."""


class MalformedJson(ProtocolError):
    """A frame is not a valid JSON object."""


class ConnectFailed(ProtocolError):
    def __init__(self, channel: str, detail: str = ""):
        self.channel = channel
        super().__init__(f"connect failed on {channel} channel: {detail}" if detail
                         else f"connect failed on {channel} channel")


# -- kernel lifecycle ------------------------------------------------------

class KernelError(RboxError):
    pass


class MalformedKernelspec(KernelError):
    def __init__(self, path, detail: str = ""):
        self.path = path
        super().__init__(f"malformed kernelspec at {path}: {detail}")


class SpawnFailed(KernelError):
    pass


class StartupTimeout(KernelError):
    pass


class KernelDead(KernelError):
    pass


class RelaunchFailed(KernelError):
    pass


# -- session ---------------------------------------------------------------

class QueueClosed(RboxError):
    """The session is shutting down and accepts no new work."""


class IncompleteExpression(RboxError):
    """A watch expression must be a single complete statement."""


# -- source scanning -------------------------------------------------------

class InvalidUtf8(RboxError):
    pass


class EmptySource(RboxError):
    pass
