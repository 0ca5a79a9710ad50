"""HTTP scoring service.

``POST /v1/score`` takes a trace and a model id and returns the same score
as ``motiongate score``.  The service only ever adds reject-side evidence:
an ``accept`` means "no motion objection", never an override of another
check's rejection.  Models load once at startup and are shared read-only
across request threads.
"""

from __future__ import annotations

import json
import logging
import time
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .classifiers import UnknownClaimError
from .preprocess import FilterLengthError, WindowOutOfRangeError
from .scoring import ClaimRequiredError, ScoringModel, load_model_dir, score_trace
from .trace import TraceError, parse_trace, trace_from_arrays

log = logging.getLogger(__name__)

MAX_BODY_BYTES = 32 * 1024 * 1024


class RequestError(Exception):
    def __init__(self, status: HTTPStatus, message: str):
        super().__init__(message)
        self.status = status


def parse_request(body: bytes):
    """``(model_id, trace, claimed_id)`` from a JSON request body.

    The trace is either ``{"csv": str, "meta": {...}}`` or
    ``{"samples": [[...]], "timestamps_ms": [...], "meta": {...}}``.
    """
    try:
        req = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise RequestError(HTTPStatus.BAD_REQUEST, f"body is not JSON: {exc}") from None
    if not isinstance(req, dict):
        raise RequestError(HTTPStatus.BAD_REQUEST, "request must be a JSON object")
    model_id = req.get("model_id")
    if not isinstance(model_id, str):
        raise RequestError(HTTPStatus.BAD_REQUEST, "model_id must be a string")
    claimed = req.get("claimed_id")
    if claimed is not None and (isinstance(claimed, bool) or not isinstance(claimed, int)):
        raise RequestError(HTTPStatus.BAD_REQUEST, "claimed_id must be an integer")
    payload = req.get("trace")
    if not isinstance(payload, dict) or not isinstance(payload.get("meta"), dict):
        raise RequestError(HTTPStatus.BAD_REQUEST, "trace must be an object with a meta mapping")
    try:
        if "csv" in payload:
            trace = parse_trace(str(payload["csv"]).encode("utf-8"), json.dumps(payload["meta"]).encode("utf-8"))
        elif "samples" in payload and "timestamps_ms" in payload:
            trace = trace_from_arrays(payload["samples"], payload["timestamps_ms"], payload["meta"])
        else:
            raise RequestError(HTTPStatus.BAD_REQUEST, "trace needs csv or samples + timestamps_ms")
    except TraceError as exc:
        raise RequestError(HTTPStatus.BAD_REQUEST, f"{type(exc).__name__}: {exc}") from None
    return model_id, trace, claimed


class ScoreService:
    """Request handling independent of the HTTP layer."""

    def __init__(self, models: dict[str, ScoringModel]):
        self.models = dict(models)

    def list_models(self) -> list[dict]:
        return [self.models[k].describe() for k in sorted(self.models)]

    def score(self, body: bytes) -> dict:
        t0 = time.perf_counter()
        model_id, trace, claimed = parse_request(body)
        sm = self.models.get(model_id)
        if sm is None:
            raise RequestError(HTTPStatus.NOT_FOUND, f"unknown model {model_id!r}")
        try:
            result = score_trace(sm, trace, claimed)
        except (WindowOutOfRangeError, FilterLengthError) as exc:
            raise RequestError(HTTPStatus.UNPROCESSABLE_ENTITY, str(exc)) from None
        except (ClaimRequiredError, UnknownClaimError) as exc:
            raise RequestError(HTTPStatus.BAD_REQUEST, str(exc)) from None
        except TraceError as exc:
            raise RequestError(HTTPStatus.BAD_REQUEST, f"{type(exc).__name__}: {exc}") from None
        result["model_id"] = model_id
        result["latency_ms"] = 1000.0 * (time.perf_counter() - t0)
        return result


def make_handler(service: ScoreService):
    class Handler(BaseHTTPRequestHandler):
        server_version = "motiongate"
        protocol_version = "HTTP/1.1"

        def _send(self, status, doc):
            body = (json.dumps(doc) + "\n").encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _error(self, status, message):
            self._send(status, {"error": message, "status": int(status)})

        def do_GET(self):
            if self.path.rstrip("/") == "/v1/models":
                self._send(HTTPStatus.OK, {"models": service.list_models()})
            else:
                self._error(HTTPStatus.NOT_FOUND, f"no route {self.path}")

        def do_POST(self):
            if self.path.rstrip("/") != "/v1/score":
                self._error(HTTPStatus.NOT_FOUND, f"no route {self.path}")
                return
            try:
                length = int(self.headers.get("Content-Length", "0"))
            except ValueError:
                length = -1
            if length < 0 or length > MAX_BODY_BYTES:
                self._error(HTTPStatus.BAD_REQUEST, "missing or oversized Content-Length")
                return
            body = self.rfile.read(length)
            try:
                self._send(HTTPStatus.OK, service.score(body))
            except RequestError as exc:
                self._error(exc.status, str(exc))
            except Exception as exc:  # noqa: BLE001 - last-resort 500
                log.exception("scoring failed")
                self._error(HTTPStatus.INTERNAL_SERVER_ERROR, f"{type(exc).__name__}: {exc}")

        def log_message(self, fmt, *args):
            log.info("%s %s", self.address_string(), fmt % args)

    return Handler


def make_server(model_dir, host="127.0.0.1", port=8350) -> ThreadingHTTPServer:
    service = ScoreService(load_model_dir(model_dir))
    log.info("loaded %d model(s) from %s", len(service.models), model_dir)
    server = ThreadingHTTPServer((host, port), make_handler(service))
    server.daemon_threads = True
    server.service = service
    return server


def serve(model_dir, host="127.0.0.1", port=8350) -> None:
    server = make_server(model_dir, host, port)
    print(json.dumps({"listening": f"http://{server.server_address[0]}:{server.server_address[1]}",
                      "models": sorted(server.service.models)}), flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
