"""Annotation HTTP service.

Serves grasp pairs to the browser UI and ingests preference labels. The
session samples pairs from an archive snapshot (static, or refreshed by a
live run's trace callback), appends labels to a line-delimited store, and
retrains the reward model every ``RETRAIN_EVERY`` labels, swapping the new
version into the shared holder.

Endpoints (JSON bodies, schema in docs/http_api.md):
  GET  /pair    -> the next unlabeled pair as a render bundle
  POST /label   -> {"pair_id": ..., "label": "a_preferred"|"b_preferred"|"similar"}
  GET  /status  -> run step, archive size, label count, reward-model version
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from collections import deque
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from .evolution import Archive
from .geometry import SdfScene
from .hand import HandModel, HandState, forward_kinematics
from .preference import (
    LABELS,
    ModelHolder,
    PreferenceError,
    PreferencePair,
    RETRAIN_EVERY,
    fit_reward_model,
    sample_annotation_pair,
    save_model,
)
from .records import grasp_from_dict, grasp_to_dict

log = logging.getLogger(__name__)

MAX_OBJECT_POINTS = 2048
UI_LABELS = {"A": "a_preferred", "B": "b_preferred", "similar": "similar"}


class ServiceError(RuntimeError):
    pass


@dataclass
class SessionStatus:
    run_step: int
    archive_size: int
    labels_collected: int
    reward_model_version: int
    mode: str

    def to_dict(self) -> dict:
        return {
            "run_step": self.run_step,
            "archive_size": self.archive_size,
            "labels_collected": self.labels_collected,
            "reward_model_version": self.reward_model_version,
            "mode": self.mode,
        }


class AnnotationSession:
    """Pair sampling, label persistence, and retrain cadence.

    Handlers call into the session; the session never touches a live archive
    directly, only snapshots handed over by the coordinator.
    """

    def __init__(self, scene: SdfScene, hand: HandModel, out_dir: str,
                 holder: ModelHolder | None = None, rng_seed: int = 0,
                 min_lifetime: int = 0, novelty_threshold: float = 0.1,
                 retrain_every: int = RETRAIN_EVERY, train_epochs: int = 150,
                 mode: str = "static"):
        self.scene = scene
        self.hand = hand
        self.out_dir = out_dir
        os.makedirs(out_dir, exist_ok=True)
        self.labels_path = os.path.join(out_dir, "labels.jsonl")
        self.pairs_path = os.path.join(out_dir, "pairs.jsonl")
        self.model_path = os.path.join(out_dir, "reward_model.npz")
        self.holder = holder or ModelHolder()
        self.rng = np.random.default_rng(rng_seed)
        self.min_lifetime = min_lifetime
        self.novelty_threshold = novelty_threshold
        self.retrain_every = retrain_every
        self.train_epochs = train_epochs
        self.mode = mode
        self._lock = threading.Lock()
        self._archive: Archive | None = None
        self._run_step = 0
        self._pairs: dict[str, PreferencePair] = {}
        self._pair_order: list[str] = []
        self._unlabeled: deque[str] = deque()
        self._labels: dict[str, str] = {}
        self._pair_counter = 0
        self._load_existing()

    def _load_existing(self):
        if os.path.exists(self.pairs_path):
            with open(self.pairs_path) as fh:
                for line in fh:
                    if not line.strip():
                        continue
                    rec = json.loads(line)
                    pair = PreferencePair(
                        rec["pair_id"],
                        grasp_from_dict(rec["grasp_a"]),
                        grasp_from_dict(rec["grasp_b"]),
                        rec["scene_id"],
                    )
                    self._pairs[pair.pair_id] = pair
                    self._pair_order.append(pair.pair_id)
            self._pair_counter = len(self._pair_order)
        if os.path.exists(self.labels_path):
            with open(self.labels_path) as fh:
                for line in fh:
                    if not line.strip():
                        continue
                    rec = json.loads(line)
                    self._labels[rec["pair_id"]] = rec["label"]
        for pid in self._pair_order:
            if pid not in self._labels:
                self._unlabeled.append(pid)
            else:
                self._pairs[pid] = self._pairs[pid].with_label(self._labels[pid]) \
                    if self._pairs[pid].label == "unlabeled" else self._pairs[pid]

    # -- coordinator side --------------------------------------------------

    def update_archive(self, archive: Archive, run_step: int):
        with self._lock:
            self._archive = archive.snapshot()
            self._run_step = run_step

    # -- pair serving --------------------------------------------------------

    def _render_grasp(self, grasp) -> dict:
        fk = forward_kinematics(self.hand, HandState(grasp.wrist, grasp.q))
        return {
            "keypoints": [list(p) for p in fk.keypoints],
            "fingertip_samples": [list(p) for p in fk.fingertip_points],
            "wrist_position": list(grasp.wrist.position),
        }

    def _object_points(self) -> list:
        pts = self.scene.surface_points
        if len(pts) > MAX_OBJECT_POINTS:
            stride = int(np.ceil(len(pts) / MAX_OBJECT_POINTS))
            pts = pts[::stride]
        return [list(p) for p in pts]

    def pair_payload(self, pair: PreferencePair) -> dict:
        return {
            "pair_id": pair.pair_id,
            "scene_id": pair.scene_id,
            "object_points": self._object_points(),
            "grasps": {
                "a": self._render_grasp(pair.grasp_a),
                "b": self._render_grasp(pair.grasp_b),
            },
        }

    def next_pair(self) -> dict:
        with self._lock:
            while self._unlabeled and self._unlabeled[0] in self._labels:
                self._unlabeled.popleft()
            if self._unlabeled:
                return self.pair_payload(self._pairs[self._unlabeled[0]])
            if self._archive is None:
                raise PreferenceError("not-enough-successes")
            pair_id = f"pair-{self._pair_counter:06d}"
            pair = sample_annotation_pair(
                self._archive, self.rng, self.scene.name, pair_id,
                self.min_lifetime, self.novelty_threshold)
            self._pair_counter += 1
            self._pairs[pair_id] = pair
            self._pair_order.append(pair_id)
            self._unlabeled.append(pair_id)
            with open(self.pairs_path, "a") as fh:
                fh.write(json.dumps({
                    "pair_id": pair_id,
                    "scene_id": pair.scene_id,
                    "grasp_a": grasp_to_dict(pair.grasp_a),
                    "grasp_b": grasp_to_dict(pair.grasp_b),
                }) + "\n")
            return self.pair_payload(pair)

    # -- labels ----------------------------------------------------------------

    def submit_label(self, pair_id: str, label: str) -> dict:
        if label in UI_LABELS:
            label = UI_LABELS[label]
        if label not in LABELS or label == "unlabeled":
            raise ServiceError(f"unknown label {label!r}")
        with self._lock:
            if pair_id not in self._pairs:
                raise KeyError(pair_id)
            if pair_id in self._labels:
                raise PreferenceError("already-labeled")
            self._labels[pair_id] = label
            self._pairs[pair_id] = self._pairs[pair_id].with_label(label)
            with open(self.labels_path, "a") as fh:
                fh.write(json.dumps({
                    "pair_id": pair_id,
                    "label": label,
                    "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
                }) + "\n")
            count = len(self._labels)
            due = count % self.retrain_every == 0
            labeled = [self._pairs[pid] for pid in self._pair_order
                       if pid in self._labels]
        if due:
            self._retrain(labeled, count)
        return {"ok": True, "labels_collected": count,
                "reward_model_version": self.holder.version}

    def _retrain(self, labeled_pairs, label_count: int):
        ranked = [p for p in labeled_pairs if p.label in ("a_preferred", "b_preferred")]
        if not ranked:
            log.info("skipping retrain at %d labels: no ranking signal", label_count)
            return
        result = fit_reward_model(labeled_pairs, self.scene, self.hand,
                                  epochs=self.train_epochs,
                                  seed=self.holder.version + 1)
        version = self.holder.swap(result.model)
        save_model(result.model, self.model_path)
        log.info("reward model v%d retrained on %d labels (loss %.4f)",
                 version, label_count, result.final_loss)

    def status(self) -> SessionStatus:
        with self._lock:
            return SessionStatus(
                run_step=self._run_step,
                archive_size=0 if self._archive is None else len(self._archive),
                labels_collected=len(self._labels),
                reward_model_version=self.holder.version,
                mode=self.mode,
            )


# ---------------------------------------------------------------------------
# HTTP layer
# ---------------------------------------------------------------------------

_CONTENT_TYPES = {
    ".html": "text/html", ".js": "text/javascript", ".css": "text/css",
    ".map": "application/json", ".ico": "image/x-icon",
}


def _make_handler(session: AnnotationSession, static_dir: str | None):
    class Handler(BaseHTTPRequestHandler):
        def log_message(self, fmt, *args):
            log.debug("http: " + fmt, *args)

        def _send_json(self, payload: dict, status: int = 200):
            body = json.dumps(payload).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            self.wfile.write(body)

        def do_GET(self):
            path = self.path.split("?")[0]
            if path == "/pair":
                try:
                    self._send_json(session.next_pair())
                except PreferenceError as exc:
                    self._send_json({"error": str(exc)}, 409)
            elif path == "/status":
                self._send_json(session.status().to_dict())
            elif static_dir is not None:
                self._send_static(path)
            else:
                self._send_json({"error": "not-found"}, 404)

        def _send_static(self, path: str):
            rel = "index.html" if path in ("/", "") else path.lstrip("/")
            full = os.path.realpath(os.path.join(static_dir, rel))
            if not full.startswith(os.path.realpath(static_dir)) or not os.path.isfile(full):
                self._send_json({"error": "not-found"}, 404)
                return
            with open(full, "rb") as fh:
                body = fh.read()
            self.send_response(200)
            ctype = _CONTENT_TYPES.get(os.path.splitext(full)[1], "application/octet-stream")
            self.send_header("Content-Type", ctype)
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def do_POST(self):
            path = self.path.split("?")[0]
            if path != "/label":
                self._send_json({"error": "not-found"}, 404)
                return
            try:
                length = int(self.headers.get("Content-Length", "0"))
                payload = json.loads(self.rfile.read(length) or b"{}")
                result = session.submit_label(payload["pair_id"], payload["label"])
                self._send_json(result)
            except KeyError as exc:
                self._send_json({"error": "unknown-pair", "pair_id": str(exc)}, 404)
            except PreferenceError as exc:
                self._send_json({"error": str(exc)}, 409)
            except (ValueError, ServiceError) as exc:
                self._send_json({"error": str(exc)}, 400)

    return Handler


class AnnotationServer:
    """Threaded HTTP server wrapper; ``port=0`` binds an ephemeral port."""

    def __init__(self, session: AnnotationSession, port: int = 8732,
                 static_dir: str | None = None, host: str = "127.0.0.1"):
        self.session = session
        self.httpd = ThreadingHTTPServer((host, port), _make_handler(session, static_dir))
        self._thread: threading.Thread | None = None

    @property
    def port(self) -> int:
        return self.httpd.server_address[1]

    def start_background(self):
        self._thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self._thread.start()

    def serve_forever(self):
        self.httpd.serve_forever()

    def shutdown(self):
        self.httpd.shutdown()
        if self._thread is not None:
            self._thread.join(timeout=5)
        self.httpd.server_close()
