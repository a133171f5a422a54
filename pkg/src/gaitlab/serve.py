"""Live simulation service behind a websocket, feeding the browser client.

One thread runs the simulator at 100 Hz control rate (optionally real-time
paced); websocket clients receive JSON state frames at 20 Hz and can command
a target velocity or a reset. Commands pass through a queue and apply at the
next control tick; the last writer wins. The simulation keeps running with
no clients connected.
"""

from __future__ import annotations

import asyncio
import json
import queue
import threading
import time
from collections import deque
from dataclasses import dataclass

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from . import analysis
from .baseline_controller import CONTROL_DT, GaitController, _ALL_PD
from .dynamics import SIM_DT, PdGains, QuadrupedSim, SimulationDiverged
from .env import TERMINATE_HEIGHT, TERMINATE_PITCH, TERMINATE_ROLL
from .randomize import FIXED, EnvParams
from .robot import N_JOINTS, a1_like
from .terrain import flat_field

SCHEMA_VERSION = 1
FRAME_RATE = 20.0
V_MIN, V_MAX = 0.375, 1.5


class SchedulerController:
    """Scripted stand-in: picks a gait from the commanded speed."""

    def __init__(self, model):
        self.model = model
        self._cache: dict[str, GaitController] = {}

    def _gait_for(self, v: float) -> str:
        if v < 0.65:
            return "walk"
        if v < 1.25:
            return "trot"
        return "bounce"

    def command(self, state, terrain, t, v_target, params):
        gait = self._gait_for(v_target)
        key = f"{gait}:{v_target:.3f}"
        if key not in self._cache:
            self._cache.clear()
            self._cache[key] = GaitController(self.model, gait, v_target)
        ctrl = self._cache[key]
        stance, q_target, tau_ff, _ = ctrl.control_tick(
            state, terrain, t, params.friction, params)
        return _ALL_PD, q_target, ctrl.swing_gains.kp, ctrl.swing_gains.kd, tau_ff


class PolicyController:
    """Velocity-conditioned policy with its adaptation module in the loop."""

    def __init__(self, bundle, model):
        from .adaptation import HistoryBuffer
        from .ppo import scale_obs

        self.bundle = bundle
        self.model = model
        self.buffer = HistoryBuffer()
        self.prev_action = np.zeros(N_JOINTS)
        self._scale_obs = scale_obs
        self.gains = PdGains()

    def reset(self):
        self.buffer.reset()
        self.prev_action[:] = 0.0

    def command(self, state, terrain, t, v_target, params):
        from .distill import encode_velocity
        from .env import ACTION_BOUND

        roll, pitch, _ = state.roll_pitch_yaw()
        obs = np.concatenate([state.q, state.q_dot, [roll, pitch],
                              state.foot_contact.astype(np.float64)])
        obs_s = self._scale_obs(obs, self.model.nominal_stand_q)
        code = encode_velocity(min(max(v_target, V_MIN), V_MAX))
        action = self.bundle.act(obs_s, self.prev_action, self.buffer.window(), code)
        self.buffer.push(obs_s, action)
        self.prev_action = action
        delta = np.clip(action, -ACTION_BOUND, ACTION_BOUND)
        q_target = self.model.nominal_stand_q + delta
        return _ALL_PD, q_target, params.kp, params.kd, np.zeros(N_JOINTS)


class SimulationService:
    """Owns the simulation loop thread and the latest-state snapshot."""

    def __init__(self, controller, model=None, realtime: bool = True,
                 v_target: float = 0.9, seed: int = 0):
        self.model = model or a1_like()
        self.controller = controller
        self.realtime = realtime
        self.sim = QuadrupedSim(self.model)
        self.terrain = flat_field(extent=(400.0, 8.0), cell_size=1.0,
                                  origin=(-4.0, -4.0))
        self.params = EnvParams.sample(FIXED, np.random.default_rng(seed))
        self.v_target = float(v_target)
        self.commands: queue.Queue = queue.Queue()
        self._snapshot_lock = threading.Lock()
        self._snapshot: dict = {}
        self._contacts = deque(maxlen=int(10.0 / CONTROL_DT))
        self._running = False
        self._thread: threading.Thread | None = None
        self._gait_label = "standing"
        self._power = 0.0
        self._reset_sim()

    def _reset_sim(self):
        self.state = self.sim.standing_state(self.terrain, self.params)
        self.state = self.sim.settle(self.state, self.terrain, self.params,
                                     PdGains(self.params.kp, self.params.kd),
                                     duration=0.3)
        self.state.energy_accum = 0.0
        self.t = 0.0
        self.x0 = float(self.state.base_position[0])
        self._contacts.clear()
        if hasattr(self.controller, "reset"):
            self.controller.reset()

    def send_command(self, cmd: dict) -> None:
        self.commands.put(cmd)

    def snapshot(self) -> dict:
        with self._snapshot_lock:
            return dict(self._snapshot)

    def start(self) -> None:
        self._running = True
        self._thread = threading.Thread(target=self._loop, daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self._running = False
        if self._thread:
            self._thread.join(timeout=2.0)

    def tick(self) -> None:
        """Advance one 100 Hz control step (also used directly by tests)."""
        while True:
            try:
                cmd = self.commands.get_nowait()
            except queue.Empty:
                break
            if cmd.get("type") == "set_velocity":
                self.v_target = float(np.clip(cmd["value"], V_MIN, V_MAX))
            elif cmd.get("type") == "reset":
                self._reset_sim()

        pd_mask, q_target, kp, kd, tau_ff = self.controller.command(
            self.state, self.terrain, self.t, self.v_target, self.params)
        try:
            self.state, p_raw, _ = self.sim.run_substeps(
                self.state, pd_mask, q_target, kp, kd, np.ones(N_JOINTS),
                tau_ff, self.terrain, self.params, SIM_DT,
                int(round(CONTROL_DT / SIM_DT)))
        except SimulationDiverged:
            self._reset_sim()
            return
        self.t += CONTROL_DT
        self._power = p_raw
        self._contacts.append(self.state.foot_contact.copy())

        roll, pitch, _ = self.state.roll_pitch_yaw()
        height = float(self.state.base_position[2]) - self.terrain.height_at(
            float(self.state.base_position[0]), float(self.state.base_position[1]))
        if height < TERMINATE_HEIGHT - 0.06 or abs(roll) > TERMINATE_ROLL \
                or abs(pitch) > TERMINATE_PITCH * 2:
            self._reset_sim()
            return

        if len(self._contacts) >= 100 and int(self.t / CONTROL_DT) % 50 == 0:
            trace = analysis.ContactTrace(
                1.0 / CONTROL_DT, np.array(self._contacts, dtype=bool))
            self._gait_label = analysis.gait_metrics(trace).gait_label

        dist = float(self.state.base_position[0]) - self.x0
        epm = self.state.energy_accum / dist if dist > 0.5 else float("nan")
        from .rotation import quat_to_matrix
        vx = float((quat_to_matrix(self.state.base_orientation)
                    @ self.state.base_lin_vel)[0])
        frame = {
            "schema_version": SCHEMA_VERSION,
            "type": "state",
            "t": round(self.t, 3),
            "v_target": self.v_target,
            "realized_v": round(vx, 4),
            "contacts": [int(c) for c in self.state.foot_contact],
            "gait_label": self._gait_label,
            "power_w": round(self._power, 2),
            "energy_per_meter": None if not np.isfinite(epm) else round(epm, 2),
            "base_height": round(height, 4),
            "roll": round(roll, 4),
            "pitch": round(pitch, 4),
        }
        with self._snapshot_lock:
            self._snapshot = frame

    def _loop(self) -> None:
        next_tick = time.monotonic()
        while self._running:
            self.tick()
            if self.realtime:
                next_tick += CONTROL_DT
                delay = next_tick - time.monotonic()
                if delay > 0:
                    time.sleep(delay)
                else:
                    next_tick = time.monotonic()


def build_app(service: SimulationService):
    app = FastAPI(title="gaitlab live simulation")
    app.state.service = service

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket):
        await ws.accept()

        async def sender():
            while True:
                frame = service.snapshot()
                if frame:
                    await ws.send_text(json.dumps(frame, sort_keys=True))
                await asyncio.sleep(1.0 / FRAME_RATE)

        send_task = asyncio.create_task(sender())
        try:
            while True:
                raw = await ws.receive_text()
                try:
                    msg = json.loads(raw)
                    if not isinstance(msg, dict):
                        raise ValueError("message must be an object")
                    mtype = msg.get("type")
                    if mtype == "set_velocity":
                        value = float(msg["value"])
                        if not V_MIN <= value <= V_MAX:
                            raise ValueError(
                                f"velocity {value} outside [{V_MIN}, {V_MAX}]")
                        service.send_command({"type": "set_velocity",
                                              "value": value})
                    elif mtype == "reset":
                        service.send_command({"type": "reset"})
                    else:
                        raise ValueError(f"unknown message type {mtype!r}")
                except (ValueError, KeyError, TypeError, json.JSONDecodeError) as e:
                    await ws.send_text(json.dumps({
                        "schema_version": SCHEMA_VERSION,
                        "type": "error",
                        "message": str(e),
                    }, sort_keys=True))
        except WebSocketDisconnect:
            pass
        finally:
            send_task.cancel()

    return app


def make_service(checkpoint: str | None = None, scheduler: bool = False,
                 realtime: bool = True, seed: int = 0) -> SimulationService:
    model = a1_like()
    if scheduler or checkpoint is None:
        controller = SchedulerController(model)
    else:
        from .cli import load_conditioned
        bundle, _ = load_conditioned(checkpoint)
        controller = PolicyController(bundle, model)
    return SimulationService(controller, model=model, realtime=realtime,
                             seed=seed)


def run_server(checkpoint: str | None, scheduler: bool, port: int,
               host: str = "127.0.0.1", realtime: bool = True) -> int:
    import uvicorn

    service = make_service(checkpoint, scheduler, realtime)
    app = build_app(service)
    service.start()
    try:
        uvicorn.run(app, host=host, port=port, log_level="warning")
    except (OSError, SystemExit) as e:
        print(f"error: could not start server on {host}:{port}: {e}")
        return 1
    finally:
        service.stop()
    return 0
