"""Two-party helpers: run both halves of a protocol over an in-memory link."""

from __future__ import annotations

import threading

from pcgot.transport import MsgType, open_loopback


class Recorder:
    """Wraps a session and logs every frame as ``(direction, type, payload)``."""

    def __init__(self, chan, log: list) -> None:
        self.chan = chan
        self.log = log

    def send(self, msg_type: MsgType, payload: bytes) -> None:
        self.log.append(("send", MsgType(msg_type), bytes(payload)))
        self.chan.send(msg_type, payload)

    @property
    def bytes_sent(self) -> int:
        return self.chan.bytes_sent

    def recv(self, expected: MsgType | None = None) -> bytes:
        data = self.chan.recv(expected)
        self.log.append(("recv", expected, data))
        return data


def run_pair(left, right, session_id: int = 0, record: bool = False):
    """Run ``left(chan)`` and ``right(chan)`` concurrently; returns both results.

    With ``record`` the result also carries the frames each side sent.
    """
    a, b = open_loopback()
    logs = ([], [])
    out = [None, None]
    err = [None, None]

    def go(i, fn, ep):
        chan = ep.session(session_id)
        if record:
            chan = Recorder(chan, logs[i])
        try:
            out[i] = fn(chan)
        except BaseException as exc:  # surfaced in the main thread
            err[i] = exc
            ep.close()

    threads = [threading.Thread(target=go, args=(0, left, a)),
               threading.Thread(target=go, args=(1, right, b))]
    for th in threads:
        th.start()
    for th in threads:
        th.join(60)
    a.close()
    b.close()
    for e in err:
        if e is not None:
            raise e
    if record:
        return out, logs
    return out


def sent_frames(log: list) -> list[tuple[MsgType, bytes]]:
    return [(t, p) for d, t, p in log if d == "send"]
