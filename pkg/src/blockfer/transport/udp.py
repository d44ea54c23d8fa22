"""Nonblocking UDP endpoint and a single-process loopback transfer driver."""

from __future__ import annotations

import random
import select
import socket
import time
from typing import Optional

from ..engine import Engine, ReceiverPhase, SenderPhase, TransferParameters
from ..wire import DecodeError, MTU, decode_packet, encode_packet
from .sim import MtuError, TransferOutcome, _note_terminal

RECEIVE_BUFFER = 4 * 1024 * 1024  # absorbs whole window bursts


class TransportError(Exception):
    """A socket operation failed; engine state is unaffected."""


class UdpEndpoint:
    """One bound, nonblocking UDP socket with MTU-guarded sends."""

    def __init__(self, bind=("127.0.0.1", 0), receive_buffer: int = RECEIVE_BUFFER):
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        try:
            self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, receive_buffer)
            self._sock.bind(bind)
        except OSError as exc:
            self._sock.close()
            raise TransportError(f"cannot bind {bind}: {exc}") from exc
        self._sock.setblocking(False)
        self.address = self._sock.getsockname()

    def fileno(self) -> int:
        return self._sock.fileno()

    def send(self, to, datagram: bytes) -> None:
        if len(datagram) > MTU:
            raise MtuError(f"datagram of {len(datagram)} bytes exceeds the {MTU}-byte MTU")
        try:
            self._sock.sendto(datagram, to)
        except OSError as exc:
            raise TransportError(f"send to {to} failed: {exc}") from exc

    def drain(self) -> list:
        """Every queued (source address, datagram), without blocking."""
        received = []
        while True:
            try:
                datagram, addr = self._sock.recvfrom(65535)
            except (BlockingIOError, InterruptedError):
                return received
            except OSError as exc:
                raise TransportError(f"receive failed: {exc}") from exc
            received.append((addr, datagram))

    def poll(self, timeout: float) -> list:
        """Wait up to timeout seconds, then return everything queued."""
        readable, _, _ = select.select([self], [], [], timeout)
        return self.drain() if readable else []

    def close(self) -> None:
        self._sock.close()

    def __enter__(self) -> "UdpEndpoint":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def _now_ms() -> float:
    return time.monotonic() * 1000.0


def run_loopback_transfer(data: bytes, params: Optional[TransferParameters] = None,
                          info: str = "loopback", seed: int = 0,
                          wall_timeout_s: float = 120.0) -> TransferOutcome:
    """Run one transfer between two engines on two local UDP sockets.

    Real sockets, real clock; wall_timeout_s bounds a wedged run. Undecodable
    datagrams are dropped, matching how a public port must treat noise.
    """
    params = params if params is not None else TransferParameters()
    sender = Engine(params=params, rng=random.Random(seed ^ 0x0DDC0FFE))
    receiver = Engine(params=params, rng=random.Random(seed ^ 0xDEFACED1))
    terminal: dict = {}

    with UdpEndpoint() as a, UdpEndpoint() as b:
        def flush(endpoint: UdpEndpoint, out) -> None:
            for peer, packet in out.packets:
                endpoint.send(peer, encode_packet(packet))
            _note_terminal(terminal, out.events)

        tid, out = sender.start_transfer(b.address, info, data, now=_now_ms())
        flush(a, out)
        give_up_at = time.monotonic() + wall_timeout_s
        while time.monotonic() < give_up_at:
            sender_state = sender.transfer(tid)
            receiver_state = receiver.transfer(tid)
            if sender_state.phase in (SenderPhase.DONE, SenderPhase.FAILED) and (
                    receiver_state is None
                    or receiver_state.phase in (ReceiverPhase.DONE, ReceiverPhase.FAILED)):
                break
            deadlines = [d for e in (sender, receiver)
                         if (d := e.next_deadline()) is not None]
            now = _now_ms()
            wait = (min(deadlines) - now) / 1000.0 if deadlines else 0.05
            select.select([a, b], [], [], min(max(wait, 0.0), 0.25))
            for endpoint, engine in ((a, sender), (b, receiver)):
                now = _now_ms()
                for addr, datagram in endpoint.drain():
                    try:
                        packet = decode_packet(datagram)
                    except DecodeError:
                        continue
                    flush(endpoint, engine.packet_in(addr, packet, now=now))
            now = _now_ms()
            for endpoint, engine in ((a, sender), (b, receiver)):
                flush(endpoint, engine.tick(now))

        sender_state = sender.transfer(tid)
        receiver_state = receiver.transfer(tid)

    finished = sender_state.finished_at if sender_state.finished_at is not None else _now_ms()
    return TransferOutcome(
        completed=terminal.get("sent", False),
        duration_ms=finished - sender_state.started_at,
        transfer_id=tid,
        data=terminal.get("data"),
        sender=sender_state,
        receiver=receiver_state,
        error=terminal.get("error"),
    )
