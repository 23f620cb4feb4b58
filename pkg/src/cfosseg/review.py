"""HTTP service backing the human mask-review loop.

State lives in <work_dir>/review: queue.json (items enqueued for review) and
decisions.log, an append-only JSONL file that is fsynced per decision and
replayed at startup, so every decision survives restarts. The first decision
on an item wins; later attempts get 409.

The service also serves the single-page review client from a static
directory and triggers next-round training (one run at a time).
"""
from __future__ import annotations

import io
import json
import os
import threading
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
from PIL import Image

OVERLAY_COLOR = (255, 64, 64)
OVERLAY_ALPHA = 0.4


class AlreadyDecidedError(RuntimeError):
    pass


@dataclass
class ReviewItem:
    id: str
    image: str
    mask: str
    status: str = "pending"
    decided_at: float | None = None


class ReviewStore:
    """Thread-safe review queue with durable decisions."""

    def __init__(self, work_dir: str):
        self.review_dir = os.path.join(work_dir, "review")
        queue_path = os.path.join(self.review_dir, "queue.json")
        if not os.path.exists(queue_path):
            raise FileNotFoundError(f"no review queue at {queue_path}")
        with open(queue_path, "r", encoding="utf-8") as f:
            raw = json.load(f)
        self.items: dict[str, ReviewItem] = {}
        self.order: list[str] = []
        for rec in raw:
            item = ReviewItem(id=rec["id"], image=rec["image"], mask=rec["mask"])
            self.items[item.id] = item
            self.order.append(item.id)
        self.log_path = os.path.join(self.review_dir, "decisions.log")
        self._lock = threading.Lock()
        self._replay()
        self._log = open(self.log_path, "a", encoding="utf-8")

    def _replay(self) -> None:
        if not os.path.exists(self.log_path):
            return
        with open(self.log_path, "r", encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                item = self.items.get(rec["id"])
                # replay is idempotent: only the first decision applies
                if item is not None and item.status == "pending":
                    item.status = rec["decision"] + "ed"
                    item.decided_at = rec.get("ts")

    def next_pending(self) -> ReviewItem | None:
        with self._lock:
            for item_id in self.order:
                if self.items[item_id].status == "pending":
                    return self.items[item_id]
        return None

    def decide(self, item_id: str, decision: str) -> ReviewItem:
        if decision not in ("accept", "reject"):
            raise ValueError(f"decision must be accept or reject, got {decision!r}")
        with self._lock:
            item = self.items.get(item_id)
            if item is None:
                raise KeyError(item_id)
            if item.status != "pending":
                raise AlreadyDecidedError(item_id)
            ts = time.time()
            self._log.write(json.dumps({"id": item_id, "decision": decision, "ts": ts}) + "\n")
            self._log.flush()
            os.fsync(self._log.fileno())
            item.status = decision + "ed"
            item.decided_at = ts
            return item

    def counts(self) -> dict[str, int]:
        with self._lock:
            out = {"pending": 0, "accepted": 0, "rejected": 0}
            for item in self.items.values():
                out[item.status] += 1
            return out

    def close(self) -> None:
        self._log.close()


def render_overlay(image_path: str, mask_path: str) -> bytes:
    """Tile as RGB with the mask blended in at the fixed highlight hue."""
    gray = np.asarray(Image.open(image_path).convert("L"), dtype=np.float32)
    mask = np.asarray(Image.open(mask_path).convert("L")) > 0
    rgb = np.repeat(gray[:, :, None], 3, axis=2)
    color = np.asarray(OVERLAY_COLOR, dtype=np.float32)
    rgb[mask] = (1 - OVERLAY_ALPHA) * rgb[mask] + OVERLAY_ALPHA * color
    buf = io.BytesIO()
    Image.fromarray(np.clip(rgb, 0, 255).astype(np.uint8), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


class ReviewService:
    """Wires the store, an optional trainer callback, and static UI assets."""

    def __init__(self, store: ReviewStore, round_provider=None, trainer=None,
                 ui_dir: str | None = None):
        self.store = store
        self.round_provider = round_provider or (lambda: 0)
        self.trainer = trainer
        self.ui_dir = ui_dir
        self._train_lock = threading.Lock()
        self._training = False
        self._train_error: str | None = None

    def status(self) -> dict:
        out = self.store.counts()
        out["round"] = self.round_provider()
        out["training"] = self._training
        if self._train_error:
            out["train_error"] = self._train_error
        return out

    def start_training(self) -> bool:
        """Kick off one training run; False if one is already in flight."""
        with self._train_lock:
            if self._training:
                return False
            if self.trainer is None:
                raise RuntimeError("service has no trainer configured")
            self._training = True
            self._train_error = None
        thread = threading.Thread(target=self._run_training, daemon=True)
        thread.start()
        return True

    def _run_training(self) -> None:
        try:
            self.trainer()
        except Exception as exc:
            self._train_error = str(exc)
        finally:
            self._training = False


class _Handler(BaseHTTPRequestHandler):
    service: ReviewService

    def log_message(self, fmt, *args):
        pass

    def _send_json(self, code: int, payload: dict) -> None:
        body = json.dumps(payload).encode("utf-8")
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _send_bytes(self, data: bytes, content_type: str) -> None:
        self.send_response(200)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def _item_or_404(self, item_id: str):
        item = self.service.store.items.get(item_id)
        if item is None:
            self._send_json(404, {"error": f"unknown item {item_id}"})
        return item

    def do_GET(self):
        svc = self.service
        parts = [p for p in self.path.split("?")[0].split("/") if p]
        if parts == ["api", "queue", "next"]:
            item = svc.store.next_pending()
            if item is None:
                self._send_json(200, {"empty": True})
            else:
                self._send_json(200, {"id": item.id, "status": item.status,
                                      "round": svc.round_provider()})
            return
        if parts == ["api", "status"]:
            self._send_json(200, svc.status())
            return
        if len(parts) == 4 and parts[:2] == ["api", "items"]:
            item = self._item_or_404(parts[2])
            if item is None:
                return
            kind = parts[3]
            if kind == "image":
                self._send_bytes(open(item.image, "rb").read(), "image/png")
            elif kind == "mask":
                self._send_bytes(open(item.mask, "rb").read(), "image/png")
            elif kind == "overlay":
                self._send_bytes(render_overlay(item.image, item.mask), "image/png")
            else:
                self._send_json(404, {"error": f"unknown resource {kind}"})
            return
        self._serve_static(parts)

    def _serve_static(self, parts: list[str]) -> None:
        if self.service.ui_dir is None:
            self._send_json(404, {"error": "no UI assets configured"})
            return
        rel = "/".join(parts) or "index.html"
        base = os.path.realpath(self.service.ui_dir)
        full = os.path.realpath(os.path.join(base, rel))
        if not full.startswith(base + os.sep) and full != base:
            self._send_json(404, {"error": "not found"})
            return
        if os.path.isdir(full):
            full = os.path.join(full, "index.html")
        if not os.path.exists(full):
            self._send_json(404, {"error": "not found"})
            return
        ctype = {
            ".html": "text/html", ".js": "text/javascript", ".css": "text/css",
            ".png": "image/png", ".map": "application/json",
        }.get(os.path.splitext(full)[1], "application/octet-stream")
        self._send_bytes(open(full, "rb").read(), ctype)

    def do_POST(self):
        svc = self.service
        parts = [p for p in self.path.split("?")[0].split("/") if p]
        if parts == ["api", "train"]:
            try:
                started = svc.start_training()
            except RuntimeError as exc:
                self._send_json(400, {"error": str(exc)})
                return
            if started:
                self._send_json(200, {"status": "training started",
                                      "round": svc.round_provider()})
            else:
                self._send_json(409, {"error": "training already running"})
            return
        if len(parts) == 4 and parts[:2] == ["api", "items"] and parts[3] == "decision":
            length = int(self.headers.get("Content-Length", 0))
            try:
                body = json.loads(self.rfile.read(length) or b"{}")
                decision = body["decision"]
            except (json.JSONDecodeError, KeyError):
                self._send_json(400, {"error": "body must be {\"decision\": \"accept\"|\"reject\"}"})
                return
            try:
                item = svc.store.decide(parts[2], decision)
            except KeyError:
                self._send_json(404, {"error": f"unknown item {parts[2]}"})
                return
            except ValueError as exc:
                self._send_json(400, {"error": str(exc)})
                return
            except AlreadyDecidedError:
                self._send_json(409, {"error": f"item {parts[2]} already decided"})
                return
            self._send_json(200, {"id": item.id, "status": item.status})
            return
        self._send_json(404, {"error": "not found"})


def make_server(service: ReviewService, port: int = 8080) -> ThreadingHTTPServer:
    handler = type("BoundHandler", (_Handler,), {"service": service})
    return ThreadingHTTPServer(("127.0.0.1", port), handler)


def serve_forever(service: ReviewService, port: int = 8080) -> None:
    server = make_server(service, port)
    print(f"review service listening on http://127.0.0.1:{server.server_address[1]}/")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
