"""HTTP routing gateway.

Accepts live queries, assembles features (optionally querying encoder
upstreams for embeddings, degrading to statistics-only when none are
available), runs the calibrated classifier, and either returns the bare
decision (dry_run) or forwards the query to the chosen inference upstream
(proxy). Every decision is appended to a JSONL log keyed by a content digest,
never the raw text.
"""
from __future__ import annotations

import base64
import hashlib
import io
import json
import logging
import queue
import threading
import time
import zlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.responses import PlainTextResponse
from pydantic import BaseModel, Field

from .features import FeatureBundle, image_stats, text_stats
from .nn.state import RouterState, load_state
from .rsd import ImageInfo

log = logging.getLogger(__name__)

P_BUCKETS = 10


class ConfigError(ValueError):
    pass


@dataclass
class GatewayConfig:
    listen_host: str = "127.0.0.1"
    listen_port: int = 8080
    edge_url: str | None = None
    edge_timeout_s: float = 30.0
    cloud_url: str | None = None
    cloud_timeout_s: float = 60.0
    embed_text_url: str | None = None
    embed_text_timeout_s: float = 5.0
    embed_image_url: str | None = None
    embed_image_timeout_s: float = 5.0
    model_path: str = ""
    mode: str = "dry_run"            # dry_run | proxy
    fallback: str = "edge"           # edge | cloud | error
    log_path: str | None = None
    fsync: bool = False

    def __post_init__(self):
        if self.mode not in ("dry_run", "proxy"):
            raise ConfigError(f"mode must be dry_run or proxy, got {self.mode!r}")
        if self.fallback not in ("edge", "cloud", "error"):
            raise ConfigError(f"bad fallback {self.fallback!r}")
        for t in (self.edge_timeout_s, self.cloud_timeout_s,
                  self.embed_text_timeout_s, self.embed_image_timeout_s):
            if t <= 0:
                raise ConfigError("timeouts must be positive")
        if self.mode == "proxy" and (not self.edge_url or not self.cloud_url):
            raise ConfigError("proxy mode needs edge_url and cloud_url")
        if not self.model_path:
            raise ConfigError("model_path is required")


_BOOLS = {"true": True, "false": False, "1": True, "0": False}
_FLOAT_KEYS = {"edge_timeout_s", "cloud_timeout_s", "embed_text_timeout_s",
               "embed_image_timeout_s"}


def load_config(path, env: Optional[dict] = None) -> GatewayConfig:
    """Flat key = value file; ECVL_MODEL overrides model_path."""
    import os
    env = os.environ if env is None else env
    raw: dict = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip().strip('"')
            if key == "listen_port":
                raw[key] = int(value)
            elif key in _FLOAT_KEYS:
                raw[key] = float(value)
            elif key == "fsync":
                raw[key] = _BOOLS.get(value.lower())
                if raw[key] is None:
                    raise ConfigError(f"{path}:{lineno}: bad boolean {value!r}")
            else:
                raw[key] = value
    if env.get("ECVL_MODEL"):
        raw["model_path"] = env["ECVL_MODEL"]
    try:
        return GatewayConfig(**raw)
    except TypeError as e:
        raise ConfigError(f"{path}: unknown config key ({e})") from None


class RouteRequest(BaseModel):
    query_text: str
    input_text: str = ""
    image_b64: str | None = None
    image_meta: dict | None = None       # {"width", "height", "channels"}
    tau_override: float | None = Field(default=None, ge=0.0, le=1.0)


class DecisionLog:
    """Single-writer decision log fed by a bounded queue.

    put() blocks when the queue is full: backpressure is preferred over
    dropping lines. Lines are whole or (on a crash) at most one truncated
    tail, which the replay reader skips with a warning.
    """

    def __init__(self, path, fsync=False, maxsize=10000):
        self.path = path
        self.fsync = fsync
        self.queue: queue.Queue = queue.Queue(maxsize=maxsize)
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()

    def _run(self):
        import os
        with open(self.path, "a", encoding="utf-8") as f:
            while True:
                item = self.queue.get()
                if item is None:
                    break
                f.write(item + "\n")
                f.flush()
                if self.fsync:
                    os.fsync(f.fileno())

    def append(self, entry: dict):
        self.queue.put(json.dumps(entry, sort_keys=True))

    def close(self):
        self.queue.put(None)
        self._thread.join(timeout=10)


def read_decision_log(path):
    """Replay reader: returns (entries, skipped_truncated_tail)."""
    entries = []
    truncated = False
    with open(path, encoding="utf-8") as f:
        lines = f.read().split("\n")
    for i, line in enumerate(lines):
        if not line:
            continue
        try:
            entries.append(json.loads(line))
        except json.JSONDecodeError:
            if i == len(lines) - 1:
                truncated = True
                log.warning("skipping truncated final log line in %s", path)
            else:
                raise
    return entries, truncated


class Gateway:
    def __init__(self, config: GatewayConfig):
        self.config = config
        self.started = time.monotonic()
        self.state: RouterState | None = None
        self.model_checksum = ""
        self.load_error: str | None = None
        try:
            with open(config.model_path, "rb") as f:
                self.model_checksum = f"{zlib.crc32(f.read()):08x}"
            self.state = load_state(config.model_path)
        except Exception as e:
            self.load_error = str(e)
            log.error("model load failed: %s", e)

        self.lock = threading.Lock()
        self.requests_total = 0
        self.edge_routed = 0
        self.cloud_routed = 0
        self.fallbacks = 0
        self.degraded_requests = 0
        self.errors_total = 0
        self.in_flight = 0
        self.p_buckets = [0] * P_BUCKETS
        self.overheads: list[float] = []
        self.log_writer = DecisionLog(config.log_path, config.fsync) if config.log_path else None
        self._client = None

    def client(self):
        import httpx
        if self._client is None:
            self._client = httpx.Client()
        return self._client

    # -- feature path -----------------------------------------------------

    def _fetch_vector(self, url, payload, timeout):
        try:
            r = self.client().post(url, json=payload, timeout=timeout)
            r.raise_for_status()
            vec = np.asarray(r.json()["vector"], dtype=np.float32)
            if not np.all(np.isfinite(vec)):
                return None
            return vec
        except Exception as e:
            log.warning("embed upstream %s failed: %s", url, e)
            return None

    def _assemble(self, req: RouteRequest):
        cfg = self.config
        state = self.state
        image_info = None
        if req.image_meta is not None:
            image_info = ImageInfo(width=int(req.image_meta["width"]),
                                   height=int(req.image_meta["height"]),
                                   channels=int(req.image_meta["channels"]))
        elif req.image_b64 is not None:
            try:
                from PIL import Image
                raw = base64.b64decode(req.image_b64)
                with Image.open(io.BytesIO(raw)) as im:
                    image_info = ImageInfo(im.width, im.height, len(im.getbands()))
            except Exception as e:
                raise HTTPException(status_code=400, detail=f"undecodable image: {e}")

        m_text, m_image, m_stats = state.mask
        e_text = e_image = None
        if m_text and cfg.embed_text_url:
            e_text = self._fetch_vector(cfg.embed_text_url, {"text": req.query_text},
                                        cfg.embed_text_timeout_s)
        if m_image and cfg.embed_image_url and req.image_b64 is not None:
            e_image = self._fetch_vector(cfg.embed_image_url,
                                         {"image_b64": req.image_b64},
                                         cfg.embed_image_timeout_s)
        mask = (int(m_text and e_text is not None),
                int(m_image and e_image is not None), m_stats)
        degraded = int(e_text is None and e_image is None)

        text = req.query_text if not req.input_text else req.query_text + " " + req.input_text
        ts = text_stats(text)
        ims = image_stats(meta=image_info)
        raw = np.array([ts.word_count, ts.special_char_count, ts.numeric_token_count,
                        ts.char_count, ims.width, ims.height, ims.channels],
                       dtype=np.float64)
        stats = state.normalizer.transform(raw) if state.normalizer else raw
        return FeatureBundle("live", e_text, e_image, stats, mask), degraded

    # -- upstream dispatch ------------------------------------------------

    def _call_upstream(self, side: str, req: RouteRequest):
        cfg = self.config
        url = cfg.edge_url if side == "edge" else cfg.cloud_url
        timeout = cfg.edge_timeout_s if side == "edge" else cfg.cloud_timeout_s
        payload = {"query": req.query_text}
        if req.image_b64 is not None:
            payload["image_b64"] = req.image_b64
        t0 = time.perf_counter()
        r = self.client().post(url, json=payload, timeout=timeout)
        r.raise_for_status()
        return r.json(), time.perf_counter() - t0

    # -- request handling -------------------------------------------------

    def handle_route(self, req: RouteRequest) -> dict:
        if self.state is None:
            with self.lock:
                self.errors_total += 1
            raise HTTPException(status_code=500, detail="router model not loaded")
        t0 = time.perf_counter()
        with self.lock:
            self.in_flight += 1
        try:
            bundle, degraded = self._assemble(req)
            p = float(self.state.model.predict_proba([bundle])[0])
            tau = req.tau_override if req.tau_override is not None else self.state.tau
            decision = "edge" if p >= tau else "cloud"
            overhead = time.perf_counter() - t0

            answer = None
            upstream_latency = None
            fallback = None
            if self.config.mode == "proxy":
                try:
                    body, upstream_latency = self._call_upstream(decision, req)
                    answer = body.get("text")
                except Exception as e:
                    if self.config.fallback == "error" or self.config.fallback == decision:
                        raise HTTPException(status_code=502,
                                            detail=f"{decision} upstream failed: {e}")
                    fallback = f"{decision}-upstream-failed"
                    decision = self.config.fallback
                    body, upstream_latency = self._call_upstream(decision, req)
                    answer = body.get("text")

            digest = hashlib.sha256(
                (req.query_text + "\x00" + req.input_text).encode("utf-8")
            ).hexdigest()[:16]
            entry = {
                "ts": time.time(),
                "query_digest": digest,
                "decision": decision,
                "p": p,
                "tau": tau,
                "router_overhead_s": overhead,
                "upstream_latency_s": upstream_latency,
                "degraded": degraded,
                "fallback": fallback,
            }
            if self.log_writer:
                self.log_writer.append(entry)

            with self.lock:
                self.requests_total += 1
                if decision == "edge":
                    self.edge_routed += 1
                else:
                    self.cloud_routed += 1
                if fallback:
                    self.fallbacks += 1
                if degraded:
                    self.degraded_requests += 1
                self.p_buckets[min(int(p * P_BUCKETS), P_BUCKETS - 1)] += 1
                self.overheads.append(overhead)

            resp = {
                "decision": decision,
                "p": p,
                "tau": tau,
                "router_overhead_s": overhead,
                "degraded": degraded,
            }
            if fallback:
                resp["fallback"] = fallback
            if self.config.mode == "proxy":
                resp["upstream_latency_s"] = upstream_latency
                resp["answer"] = answer
            return resp
        except HTTPException:
            with self.lock:
                self.errors_total += 1
            raise
        finally:
            with self.lock:
                self.in_flight -= 1

    def healthz(self) -> dict:
        return {
            "status": "ok" if self.state is not None else "not-ready",
            "model_checksum": self.model_checksum,
            "tau": self.state.tau if self.state else None,
            "uptime_s": time.monotonic() - self.started,
            **({"error": self.load_error} if self.load_error else {}),
        }

    def metrics_snapshot(self) -> str:
        with self.lock:
            lines = [
                f"requests_total {self.requests_total}",
                f"edge_routed {self.edge_routed}",
                f"cloud_routed {self.cloud_routed}",
                f"fallbacks {self.fallbacks}",
                f"degraded_requests {self.degraded_requests}",
                f"errors_total {self.errors_total}",
                f"in_flight {self.in_flight}",
            ]
            for i, c in enumerate(self.p_buckets):
                lines.append(f"p_bucket_{i} {c}")
            if self.overheads:
                arr = np.sort(np.asarray(self.overheads))
                for q in (50, 90, 99):
                    lines.append(f"router_overhead_p{q} "
                                 f"{float(np.percentile(arr, q)):.6f}")
        return "\n".join(lines) + "\n"

    def close(self):
        if self.log_writer:
            self.log_writer.close()
        if self._client is not None:
            self._client.close()


def create_app(config: GatewayConfig) -> FastAPI:
    from contextlib import asynccontextmanager

    gw = Gateway(config)

    @asynccontextmanager
    async def lifespan(app):
        yield
        gw.close()

    app = FastAPI(title="ecvlroute gateway", lifespan=lifespan)
    app.state.gateway = gw

    @app.post("/v1/route")
    def route(req: RouteRequest):
        return gw.handle_route(req)

    @app.get("/healthz")
    def healthz():
        return gw.healthz()

    @app.get("/metrics", response_class=PlainTextResponse)
    def metrics():
        return gw.metrics_snapshot()

    return app
