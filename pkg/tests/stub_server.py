"""Local HTTP stub speaking the chat-completions wire format.

Every passage text starts with ``grade <int>``; the stub answers as a perfect
judge of those grades and reports its own token usage, which the tests compare
against the client's ledger.
"""

import json
import math
import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

PASSAGE_RE = re.compile(r'^Passage ([A-Z]): "grade (-?\d+)', re.MULTILINE)
DOC_RE = re.compile(r"^Passage: grade (-?\d+)", re.MULTILINE)


class StubState:
    def __init__(self, logprobs=False, completions=True, fail_first=0, fail_status=500, bad_status=None):
        self.logprobs = logprobs
        self.completions = completions
        self.fail_first = fail_first
        self.fail_status = fail_status
        self.bad_status = bad_status
        self.lock = threading.Lock()
        self.requests = []
        self.prompt_tokens = 0
        self.completion_tokens = 0
        self.served = 0
        self.headers = []


def _answer(prompt):
    grades = [(m.group(1), int(m.group(2))) for m in PASSAGE_RE.finditer(prompt)]
    if "Rank the" in prompt:
        ordered = sorted(grades, key=lambda g: -g[1])
        return " > ".join(letter for letter, _ in ordered), None
    if grades:
        best = max(grades, key=lambda g: g[1])[0]
        return best, {letter: (0.0 if letter == best else -3.0 - i) for i, (letter, _) in enumerate(grades)}
    m = DOC_RE.search(prompt)
    grade = int(m.group(1)) if m else 0
    p_yes = 1.0 / (1.0 + math.exp(-grade))
    text = "Yes" if p_yes >= 0.5 else "No"
    return text, {"Yes": math.log(p_yes), "No": math.log(1.0 - p_yes)}


class Handler(BaseHTTPRequestHandler):
    state: StubState

    def log_message(self, *args):
        pass

    def _send(self, status, payload):
        body = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_POST(self):
        st = self.state
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length) or b"{}")
        with st.lock:
            st.requests.append((self.path, body))
            st.headers.append(dict(self.headers))
            if st.fail_first > 0:
                st.fail_first -= 1
                return self._send(st.fail_status, {"error": "try again"})
        if st.bad_status:
            return self._send(st.bad_status, {"error": "bad request"})
        if self.path == "/v1/chat/completions":
            return self._chat(body)
        if self.path == "/v1/completions" and st.completions:
            return self._completions(body)
        return self._send(404, {"error": "not found"})

    def _usage(self, prompt_tokens, completion_tokens):
        st = self.state
        with st.lock:
            st.prompt_tokens += prompt_tokens
            st.completion_tokens += completion_tokens
            st.served += 1
        return {"prompt_tokens": prompt_tokens, "completion_tokens": completion_tokens,
                "total_tokens": prompt_tokens + completion_tokens}

    def _chat(self, body):
        prompt = body["messages"][-1]["content"]
        text, dist = _answer(prompt)
        # a deliberately different count from whitespace splitting
        usage = self._usage(len(prompt) // 4 + 3, len(text) // 2 + 1)
        choice = {"index": 0, "message": {"role": "assistant", "content": text}, "finish_reason": "stop"}
        if body.get("logprobs") and self.state.logprobs and dist:
            top = [{"token": t, "logprob": lp} for t, lp in dist.items()]
            choice["logprobs"] = {"content": [{"token": text.split()[0], "logprob": 0.0, "top_logprobs": top}]}
        self._send(200, {"id": "stub", "object": "chat.completion", "choices": [choice], "usage": usage})

    def _completions(self, body):
        text = body["prompt"]
        tokens = re.findall(r"\S+\s*", text)
        offsets, pos = [], 0
        for tok in tokens:
            offsets.append(pos)
            pos += len(tok)
        m = DOC_RE.search(text)
        grade = int(m.group(1)) if m else 0
        logprobs = [None] + [-1.0 / (1 + max(grade, 0))] * (len(tokens) - 1)
        usage = self._usage(len(tokens), 0)
        choice = {"index": 0, "text": text,
                  "logprobs": {"tokens": [t.strip() for t in tokens], "token_logprobs": logprobs, "text_offset": offsets}}
        self._send(200, {"id": "stub", "object": "text_completion", "choices": [choice], "usage": usage})


class StubServer:
    def __init__(self, **state):
        self.state = StubState(**state)
        handler = type("BoundHandler", (Handler,), {"state": self.state})
        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), handler)
        self.thread = threading.Thread(target=self.httpd.serve_forever, args=(0.05,), daemon=True)

    @property
    def url(self):
        host, port = self.httpd.server_address
        return f"http://{host}:{port}"

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.httpd.shutdown()
        self.httpd.server_close()
