"""HTTP session service: JSON request/response plus an NDJSON event stream.

Endpoints (all JSON bodies UTF-8):

    POST /sessions                  {robot, tasks, [weights], [settings]} -> snapshot
    GET  /sessions                  {"sessions": [ids]}
    GET  /sessions/<id>             full SessionState snapshot
    POST /sessions/<id>/start       phase idle -> running
    POST /sessions/<id>/pause       phase running -> paused
    POST /sessions/<id>/resume      phase paused -> running
    POST /sessions/<id>/stop        any live phase -> done (termination userStop)
    POST /sessions/<id>/edit        {taskIndex, changes} queued to the next
                                    outer-iteration boundary; rejected once done
    GET  /sessions/<id>/events      newline-delimited JSON progress events,
                                    closing after the final "done" event

Each session runs one optimizer on its own thread; any number of sessions
may run concurrently.  Unknown ids give 404, invalid transitions and edits
409, malformed requests 400.
"""
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from . import files
from .runner import SessionError, SessionStore


class ServiceHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = "morphmotion"

    # silence per-request stderr logging; tests and CLI stay quiet
    def log_message(self, fmt, *args):
        pass

    @property
    def store(self):
        return self.server.store

    def _send_json(self, status, payload):
        body = (json.dumps(payload) + "\n").encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _error(self, status, message):
        self._send_json(status, {"error": message})

    def _read_body(self):
        length = int(self.headers.get("Content-Length") or 0)
        raw = self.rfile.read(length) if length else b""
        if not raw:
            return {}
        try:
            doc = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise SessionError(f"malformed JSON body: {exc}")
        if not isinstance(doc, dict):
            raise SessionError("request body must be a JSON object")
        return doc

    def _route(self):
        parts = [p for p in self.path.split("?")[0].split("/") if p]
        if not parts or parts[0] != "sessions":
            return None
        return parts[1:]

    def do_GET(self):
        tail = self._route()
        if tail is None:
            return self._error(404, f"unknown path {self.path!r}")
        try:
            if not tail:
                return self._send_json(200, {"sessions": self.store.list_ids()})
            session = self.store.get(tail[0])
            if len(tail) == 1:
                return self._send_json(200, session.snapshot())
            if tail[1] == "events":
                return self._stream_events(session)
            return self._error(404, f"unknown path {self.path!r}")
        except SessionError as exc:
            return self._error(404, str(exc))

    def do_POST(self):
        tail = self._route()
        if tail is None:
            return self._error(404, f"unknown path {self.path!r}")
        try:
            body = self._read_body()
            if not tail:
                return self._create(body)
            session = self.store.get(tail[0])
            if len(tail) != 2:
                return self._error(404, f"unknown path {self.path!r}")
            action = tail[1]
            if action == "start":
                session.start()
            elif action == "pause":
                session.pause()
            elif action == "resume":
                session.resume()
            elif action == "stop":
                session.stop()
            elif action == "edit":
                session.submit_edit(body)
            else:
                return self._error(404, f"unknown action {action!r}")
            return self._send_json(
                200, {"sessionId": session.id, "phase": session.phase, "action": action}
            )
        except SessionError as exc:
            status = 404 if "unknown session id" in str(exc) else 409
            if "malformed" in str(exc) or "body" in str(exc):
                status = 400
            return self._error(status, str(exc))
        except files.DocumentError as exc:
            return self._error(400, str(exc))

    def _create(self, body):
        robot = body.get("robot")
        tasks = body.get("tasks")
        if tasks is None and "task" in body:
            tasks = [body["task"]]
        if robot is None or not tasks:
            return self._error(400, "body needs 'robot' and 'tasks' documents")
        try:
            session = self.store.create(
                robot,
                tasks,
                weights=body.get("weights"),
                settings_doc=body.get("settings"),
            )
        except SessionError as exc:
            # anything wrong with a creation payload is the requester's fault
            return self._error(400, str(exc))
        self._send_json(201, session.snapshot())

    def _stream_events(self, session):
        queue_ = session.subscribe()
        self.send_response(200)
        self.send_header("Content-Type", "application/x-ndjson")
        self.send_header("Cache-Control", "no-store")
        # stream length is unknown; close the connection to mark the end
        self.send_header("Connection", "close")
        self.end_headers()
        try:
            while True:
                item = queue_.get()
                if item is None:
                    break
                self.wfile.write((json.dumps(item) + "\n").encode("utf-8"))
                self.wfile.flush()
                if item.get("type") == "done":
                    break
        except (BrokenPipeError, ConnectionResetError):
            pass
        finally:
            session.unsubscribe(queue_)
            self.close_connection = True


class SessionService:
    """Owns the HTTP server and its session registry."""

    def __init__(self, host="127.0.0.1", port=0):
        self.store = SessionStore()
        self.server = ThreadingHTTPServer((host, port), ServiceHandler)
        self.server.store = self.store
        self.server.daemon_threads = True
        self._thread = None

    @property
    def port(self):
        return self.server.server_address[1]

    def start(self):
        """Serve on a background thread; returns once the socket is live."""
        self._thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def serve_forever(self):
        self.server.serve_forever()

    def close(self):
        self.server.shutdown()
        self.server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)


def serve(port, host="127.0.0.1"):
    """Blocking entry point for the CLI."""
    service = SessionService(host=host, port=port)
    print(f"session service listening on http://{host}:{service.port}")
    try:
        service.serve_forever()
    except KeyboardInterrupt:
        service.close()
