"""Gateway between the frame source and the document store.

Every push period the newest available frame is converted to a JSON
telemetry record, PATCHed to `bags/<device>/latest` and POSTed to
`bags/<device>/history`. While the store is unreachable, records queue in
a bounded drop-oldest buffer and drain in order on recovery. The gateway
also polls `bags/<device>/commands` for the find-my-bag alarm flag and
acknowledges it.
"""

from __future__ import annotations

import json
import logging
import threading
from collections import deque
from dataclasses import dataclass

import requests

from .clock import RealClock
from .frames import SensorFrame

logger = logging.getLogger(__name__)


class StoreUnavailable(Exception):
    pass


class HttpStoreClient:
    """Thin JSON-over-HTTP client for the document store."""

    def __init__(self, base_url: str, timeout: float = 5.0):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.session = requests.Session()

    def _request(self, method: str, path: str, doc=None, params=None):
        url = f"{self.base_url}/{path.strip('/')}.json"
        try:
            resp = self.session.request(method, url, json=doc, params=params,
                                        timeout=self.timeout)
        except requests.RequestException as e:
            raise StoreUnavailable(str(e)) from None
        if resp.status_code == 404:
            return None
        if resp.status_code >= 500:
            raise StoreUnavailable(f"{method} {url}: HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise ValueError(f"{method} {url}: {resp.text}")
        return resp.json()

    def patch(self, path: str, doc: dict):
        return self._request("PATCH", path, doc)

    def post(self, path: str, doc: dict):
        return self._request("POST", path, doc)

    def get(self, path: str, params=None):
        return self._request("GET", path, params=params)

    def get_history(self, path: str, since=None, limit=None):
        from .store import HistoryEntry

        params = {}
        if since is not None:
            params["since"] = since
        if limit is not None:
            params["limit"] = str(limit)
        entries = self._request("GET", path, params=params or {"limit": "1000000"})
        if entries is None:
            return []
        return [HistoryEntry(e["id"], e["doc"], e["ts"]) for e in entries]


def to_record(frame: SensorFrame, recv_ts: int) -> dict:
    """Lossless JSON document form of a frame; keys are the wire schema."""
    return {
        "deviceId": frame.device_id,
        "seq": frame.seq,
        "ts": frame.ts,
        "recvTs": int(recv_ts),
        "gps": {"lat": frame.lat, "lon": frame.lon, "alt": frame.alt,
                "speed": frame.speed, "heading": frame.heading},
        "imu": {"ax": frame.ax, "ay": frame.ay, "az": frame.az,
                "yaw": frame.yaw, "pitch": frame.pitch, "roll": frame.roll},
        "load": {"left": frame.load_left, "right": frame.load_right},
        "gas": {"mq2": frame.mq2, "mq135": frame.mq135},
        "env": {"temp": frame.temp, "hum": frame.humidity},
        "water": frame.water,
        "sos": frame.sos,
    }


@dataclass
class GatewayConfig:
    device_id: str = "BAG1"
    period_ms: int = 2000
    buffer_capacity: int = 1024

    def __post_init__(self):
        if self.period_ms <= 0:
            raise ValueError("period_ms must be > 0")
        if self.buffer_capacity < 1:
            raise ValueError("buffer_capacity must be >= 1")


class Gateway:
    """Drives one device's telemetry into the store on a fixed period."""

    def __init__(self, source, store, config: GatewayConfig = None, clock=None,
                 event_log_path=None):
        self.source = source
        self.store = store
        self.config = config or GatewayConfig()
        self.clock = clock or RealClock()
        self.event_log_path = event_log_path
        self.buffer = deque()
        self.dropped = 0
        self.pushed_latest = 0
        self.pushed_history = 0
        self.alarm_events = []
        self._stop = threading.Event()

    # -- alarm command loop ----------------------------------------------

    def _log_event(self, event: dict) -> None:
        self.alarm_events.append(event)
        logger.info("gateway event: %s", event)
        if self.event_log_path is not None:
            with open(self.event_log_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(event) + "\n")

    def _poll_commands(self, now: int) -> None:
        path = f"bags/{self.config.device_id}/commands"
        try:
            doc = self.store.get(path)
        except StoreUnavailable:
            return
        if doc and doc.get("alarm") == 1:
            self._log_event({
                "ts": now,
                "device": self.config.device_id,
                "kind": "ALARM_TRIGGERED",
                "severity": "INFO",
                "activity": None,
                "message": "find-my-bag alarm sounded",
            })
            try:
                self.store.patch(path, {"alarm": 0, "ackTs": now})
            except StoreUnavailable:
                logger.warning("alarm ack failed; will retry next tick")

    # -- push loop --------------------------------------------------------

    def _enqueue(self, record: dict) -> None:
        if len(self.buffer) >= self.config.buffer_capacity:
            self.buffer.popleft()
            self.dropped += 1
        self.buffer.append(record)

    def _push(self, record: dict) -> None:
        device = self.config.device_id
        self.store.post(f"bags/{device}/history", record)
        self.pushed_history += 1
        self.store.patch(f"bags/{device}/latest", record)
        self.pushed_latest += 1

    def tick(self) -> None:
        """One push period's worth of work."""
        now = self.clock.now_ms()
        frames = self.source.poll(now)
        record = to_record(frames[-1], now) if frames else None
        # drain backlog first so history stays in order
        while self.buffer:
            try:
                self._push(self.buffer[0])
            except StoreUnavailable:
                if record is not None:
                    self._enqueue(record)
                self._poll_commands(now)
                return
            self.buffer.popleft()
        if record is not None:
            try:
                self._push(record)
            except StoreUnavailable:
                self._enqueue(record)
        self._poll_commands(now)

    def run(self, max_ticks: int = None, stop_when_exhausted: bool = False) -> None:
        """Tick until stopped; never raises on store trouble."""
        ticks = 0
        while not self._stop.is_set():
            self.tick()
            ticks += 1
            if max_ticks is not None and ticks >= max_ticks:
                break
            if stop_when_exhausted and getattr(self.source, "exhausted", False) \
                    and not self.buffer:
                break
            self.clock.sleep_ms(self.config.period_ms)
        self.flush()

    def flush(self) -> None:
        """Best-effort drain of the buffer (used on shutdown)."""
        while self.buffer:
            try:
                self._push(self.buffer[0])
            except StoreUnavailable:
                return
            self.buffer.popleft()

    def stop(self) -> None:
        self._stop.set()
