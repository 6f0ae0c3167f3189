"""Length-prefixed JSON episode protocol: server, session, and client.

Frame layout (docs/protocol.md): a 4-byte big-endian unsigned payload length
followed by that many bytes of UTF-8 JSON. One session drives one world
through strict request/response alternation; sessions are independent and
nothing survives a disconnect.
"""

from __future__ import annotations

import json
import socket
import socketserver
import struct
import threading

import numpy as np

from .fileio import load_scenario, proposals_from_dict, validate_scenario
from .proposals import generate_proposals
from .td3 import action_to_target_speed
from .training import EpisodeSpec, prepare_world
from .worldsim import check_termination, step

PROTOCOL_VERSION = 1
_HEADER = struct.Struct(">I")
MAX_FRAME = 64 * 1024 * 1024


class ProtocolError(Exception):
    pass


def write_frame(sock: socket.socket, payload: dict) -> None:
    raw = json.dumps(payload, separators=(",", ":")).encode()
    sock.sendall(_HEADER.pack(len(raw)) + raw)


def _recv_exact(sock: socket.socket, n: int) -> bytes | None:
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None
        buf += chunk
    return buf


def read_frame(sock: socket.socket) -> dict | None:
    head = _recv_exact(sock, _HEADER.size)
    if head is None:
        return None
    (length,) = _HEADER.unpack(head)
    if length > MAX_FRAME:
        raise ProtocolError(f"frame of {length} bytes exceeds limit")
    raw = _recv_exact(sock, length)
    if raw is None:
        return None
    try:
        return json.loads(raw.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"malformed frame: {exc}") from exc


class EpisodeSession:
    """State machine behind one connection; also drivable in-process.

    The in-process and over-the-wire paths share this exact code, and the
    parity test checks the transport adds nothing.
    """

    def __init__(self):
        self.world = None
        self.controllers = {}
        self.targets = {}
        self.controlled = ()
        self.pending: dict[str, float] = {}
        self.result = None

    def handle(self, msg) -> dict:
        if not isinstance(msg, dict) or "type" not in msg:
            return {"type": "error", "message": "message must be an object with a 'type'"}
        kind = msg["type"]
        handler = getattr(self, f"_handle_{kind}", None)
        if handler is None:
            return {"type": "error", "message": f"unknown message type '{kind}'"}
        try:
            return handler(msg)
        except Exception as exc:  # session survives bad requests
            return {"type": "error", "message": str(exc)}

    def _require_world(self):
        if self.world is None:
            raise ProtocolError("no active episode; send 'reset' first")

    def _handle_reset(self, msg) -> dict:
        if "scenario" in msg:
            scenario = validate_scenario(msg["scenario"])
        elif "scenario_path" in msg:
            scenario = load_scenario(msg["scenario_path"])
        else:
            raise ProtocolError("reset needs 'scenario' or 'scenario_path'")
        controlled = tuple(str(a) for a in msg.get("controlled", []))
        horizon = float(msg.get("horizon", 8.0))
        track_ids = {str(tr["id"]) for tr in scenario["tracks"]}
        for aid in controlled:
            if aid not in track_ids:
                raise ProtocolError(f"unknown controlled agent '{aid}'")

        if msg.get("proposals"):
            _, sets = proposals_from_dict(msg["proposals"])
            proposals = {ps.agent: ps for ps in sets}
        else:
            from .lanemap import lane_graph_from_dict

            graph = lane_graph_from_dict(scenario["map"])
            proposals = {}
            seed = int(msg.get("seed", 0))
            for tr in scenario["tracks"]:
                tid = str(tr["id"])
                if tid in controlled:
                    states = np.asarray(tr["states"], dtype=float)
                    history = states[states[:, 0] <= 2.0 + 1e-6]
                    proposals[tid] = generate_proposals(
                        graph, history, k=1, horizon=horizon, seed=seed, agent=tid
                    )
        missing = [a for a in controlled if a not in proposals]
        if missing:
            raise ProtocolError(f"no proposals for controlled agent(s) {missing}")

        spec = EpisodeSpec(
            scenario=scenario,
            proposals={a: proposals[a] for a in controlled},
            policy_agents=controlled,
            horizon=horizon,
        )
        self.world, self.controllers, self.targets = prepare_world(spec)
        self.controlled = controlled
        self.pending = {}
        self.result = None
        return {
            "type": "ready",
            "agents": list(self.world.agents),
            "controlled": list(controlled),
            "tick": self.world.tick,
            "time": self.world.time,
        }

    def _handle_observe(self, msg) -> dict:
        from .observation import build_observation

        self._require_world()
        aid = str(msg.get("agent"))
        if aid not in self.controlled:
            raise ProtocolError(f"agent '{aid}' is not controlled in this session")
        ctrl = self.controllers[aid]
        obs = build_observation(self.world, aid, ctrl.target(self.world.time), ctrl.guide)
        return {"type": "observation", "agent": aid, "values": obs.vector().tolist()}

    def _handle_act(self, msg) -> dict:
        self._require_world()
        aid = str(msg.get("agent"))
        if aid not in self.controlled:
            raise ProtocolError(f"agent '{aid}' is not controlled in this session")
        action = float(msg["action"])
        self.pending[aid] = action
        return {"type": "ack", "agent": aid}

    def _handle_step(self, msg) -> dict:
        from .observation import compute_reward

        self._require_world()
        if self.result is not None:
            raise ProtocolError("episode finished; send 'reset'")
        waiting = [a for a in self.controlled if a not in self.pending]
        if waiting:
            raise ProtocolError(f"missing 'act' for agent(s) {waiting}")
        t = self.world.time
        controls = {}
        for aid in self.controlled:
            controls[aid] = self.controllers[aid].controls(
                self.world.agents[aid].pose, t, self.world.dt,
                target_speed=action_to_target_speed(self.pending[aid]),
            )
        events = step(self.world, controls)
        self.pending = {}
        self.result = check_termination(self.world, self.targets)
        t2 = self.world.time
        rewards = {}
        for aid in self.controlled:
            pose = self.world.agents[aid].pose
            collided = any(aid in (a, b) for _, a, b in events)
            rewards[aid] = compute_reward(
                collided, pose.v, self.controllers[aid].d_ep(pose, t2)
            ).total
        return {
            "type": "events",
            "tick": self.world.tick,
            "events": [[tk, a, b] for tk, a, b in events],
            "rewards": rewards,
            "done": self.result.outcome if self.result is not None else None,
        }

    def _handle_result(self, msg) -> dict:
        self._require_world()
        if self.result is None:
            return {"type": "result", "outcome": None, "ticks_elapsed": self.world.tick}
        return {
            "type": "result",
            "outcome": self.result.outcome,
            "ticks_elapsed": self.result.ticks_elapsed,
        }


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        session = EpisodeSession()
        while True:
            try:
                msg = read_frame(self.request)
            except ProtocolError as exc:
                write_frame(self.request, {"type": "error", "message": str(exc)})
                continue
            except OSError:
                return
            if msg is None:
                return
            write_frame(self.request, session.handle(msg))


class EpisodeServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


def serve(host: str = "127.0.0.1", port: int = 7007, ready_event=None):
    """Serve episode sessions until the process is interrupted."""
    with EpisodeServer((host, port), _Handler) as server:
        if ready_event is not None:
            ready_event.set()
        server.serve_forever()


def start_background_server(host: str = "127.0.0.1", port: int = 0):
    """Spin a server thread for tests/tools; returns (server, port)."""
    server = EpisodeServer((host, port), _Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server, server.server_address[1]


class EpisodeClient:
    """Minimal scripted client for the wire protocol."""

    def __init__(self, host: str, port: int, timeout: float = 30.0):
        self.sock = socket.create_connection((host, port), timeout=timeout)

    def request(self, msg: dict) -> dict:
        write_frame(self.sock, msg)
        resp = read_frame(self.sock)
        if resp is None:
            raise ProtocolError("server closed the connection")
        return resp

    def send_raw(self, data: bytes) -> dict:
        self.sock.sendall(data)
        resp = read_frame(self.sock)
        if resp is None:
            raise ProtocolError("server closed the connection")
        return resp

    def close(self) -> None:
        self.sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
