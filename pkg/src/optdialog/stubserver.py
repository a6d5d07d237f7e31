"""In-process HTTP stub mimicking a chat-completions endpoint.

Used by tests to assert on the exact wire format the client sends and to
exercise the transport retry path without a real model server.
"""

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer


class StubChatServer:
    """Records every request body and can fail the first N of them.

    transient_failures=N answers the first N requests with HTTP 503.
    always_fail answers everything with 503. Bodies are recorded for
    failed requests too, so retry behaviour is observable.
    """

    def __init__(self, response_text="ok", finish_reason="stop",
                 transient_failures=0, always_fail=False):
        self.response_text = response_text
        self.finish_reason = finish_reason
        self.transient_failures = transient_failures
        self.always_fail = always_fail
        self.requests: list[dict] = []
        self.headers: list[dict] = []
        self._lock = threading.Lock()
        self._server = ThreadingHTTPServer(("127.0.0.1", 0), self._make_handler())
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        host, port = self._server.server_address
        return f"http://{host}:{port}"

    def start(self):
        self._thread.start()
        return self

    def stop(self):
        self._server.shutdown()
        self._server.server_close()

    def __enter__(self):
        return self.start()

    def __exit__(self, exc_type, exc, tb):
        self.stop()

    def _make_handler(self):
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                raw = self.rfile.read(length)
                try:
                    body = json.loads(raw)
                except json.JSONDecodeError:
                    body = {"_raw": raw.decode("utf-8", errors="replace")}
                with stub._lock:
                    stub.requests.append(body)
                    stub.headers.append(dict(self.headers))
                    n_seen = len(stub.requests)
                if stub.always_fail or n_seen <= stub.transient_failures:
                    self._reply(503, {"error": "temporarily unavailable"})
                    return
                self._reply(200, {
                    "choices": [
                        {
                            "message": {"role": "assistant",
                                        "content": stub.response_text},
                            "finish_reason": stub.finish_reason,
                        }
                    ]
                })

            def _reply(self, status, doc):
                payload = json.dumps(doc).encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

            def log_message(self, fmt, *args):
                pass

        return Handler
