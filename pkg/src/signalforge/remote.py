"""Remote chat-completion writer/judge backends.

Wire format: POST {model, messages[{role, content}], temperature} to the
configured endpoint; the completion is read from choices[0].message.content.
The writer expects the candidate inside the first fenced block; the judge
expects a `SCORE: x.xx` line with the remaining text taken as the review.
Transport failures retry with exponential backoff (base 500 ms, doubling,
jittered); content-level problems raise MalformedCompletionError, which the
loop degrades to score 0 instead of aborting.

The API key is read from an environment variable (default
SIGNALFORGE_API_KEY), never from config files, and is not logged.
"""

from __future__ import annotations

import json
import os
import random
import re
import time
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import requests

from .agents import ContextBuffer, render_context
from .errors import (
    BackendFailureError, BackendTimeoutError, HttpStatusError,
    MalformedCompletionError,
)
from .kb import KbRecord

WRITER_SYSTEM_PROMPT = (
    "You are a quantitative researcher. Respond with exactly one trading signal "
    "written in the signal DSL, inside a fenced code block."
)
JUDGE_SYSTEM_PROMPT = (
    "You are a strict signal reviewer. Reply with a line 'SCORE: x.xx' in [0, 1] "
    "followed by a short review of the candidate."
)

_FENCE_RE = re.compile(r"```[a-zA-Z0-9_-]*\n(.*?)```", re.DOTALL)
_SCORE_LINE_RE = re.compile(r"^\s*SCORE:\s*([0-9]*\.?[0-9]+)\s*$", re.MULTILINE)


@dataclass(frozen=True)
class RemoteCfg:
    endpoint_url: str
    model_name: str = "gpt-4-0125-preview"
    temperature: float = 0.0
    timeout_ms: int = 30000
    max_retries: int = 3
    api_key_env: str = "SIGNALFORGE_API_KEY"
    backoff_base_ms: float = 500.0
    backoff_jitter: float = 0.1
    transcript_path: Optional[str] = None


class ChatClient:
    """Minimal chat-completion client with retries and a JSON-lines transcript.

    `transport(payload, url, headers, timeout_s) -> (status, body)` is
    injectable so tests can script failure sequences without sockets.
    """

    def __init__(self, cfg: RemoteCfg, transport: Optional[Callable] = None,
                 sleep: Callable[[float], None] = time.sleep, jitter_seed: int = 0):
        self.cfg = cfg
        self._transport = transport or _requests_transport
        self._sleep = sleep
        self._rng = random.Random(jitter_seed)

    def complete(self, messages: List[dict]) -> str:
        payload = {
            "model": self.cfg.model_name,
            "messages": messages,
            "temperature": self.cfg.temperature,
        }
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.cfg.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        timeout_s = self.cfg.timeout_ms / 1000.0

        last_exc: Optional[Exception] = None
        attempts = self.cfg.max_retries + 1
        for attempt in range(attempts):
            try:
                status, body = self._transport(payload, self.cfg.endpoint_url,
                                               headers, timeout_s)
            except requests.Timeout:
                last_exc = BackendTimeoutError(f"timeout after {timeout_s}s")
                self._log(payload, attempt, error=str(last_exc))
                self._backoff(attempt)
                continue
            except requests.RequestException as exc:
                last_exc = BackendFailureError(f"transport error: {exc}")
                self._log(payload, attempt, error=str(last_exc))
                self._backoff(attempt)
                continue
            if status == 200:
                self._log(payload, attempt, response=body)
                return _extract_content(body)
            if status >= 500 or status == 429:
                last_exc = HttpStatusError(status, body)
                self._log(payload, attempt, error=str(last_exc))
                self._backoff(attempt)
                continue
            self._log(payload, attempt, error=f"http {status}")
            raise HttpStatusError(status, body)
        if last_exc is not None:
            raise last_exc  # typed: BackendTimeoutError / HttpStatusError / ...
        raise BackendFailureError(f"gave up after {attempts} attempts")

    def _backoff(self, attempt: int) -> None:
        base = self.cfg.backoff_base_ms / 1000.0 * (2.0 ** attempt)
        jit = 1.0 + self.cfg.backoff_jitter * self._rng.random()
        self._sleep(base * jit)

    def _log(self, payload: dict, attempt: int, response: str = "",
             error: str = "") -> None:
        if not self.cfg.transcript_path:
            return
        entry = {"attempt": attempt, "request": payload}
        if response:
            entry["response"] = response
        if error:
            entry["error"] = error
        with open(self.cfg.transcript_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry) + "\n")


def _requests_transport(payload: dict, url: str, headers: dict,
                        timeout_s: float) -> Tuple[int, str]:
    resp = requests.post(url, json=payload, headers=headers, timeout=timeout_s)
    return resp.status_code, resp.text


def _extract_content(body: str) -> str:
    try:
        content = json.loads(body)["choices"][0]["message"]["content"]
    except (json.JSONDecodeError, KeyError, IndexError, TypeError):
        raise MalformedCompletionError("response is not a chat completion") from None
    if not isinstance(content, str):
        raise MalformedCompletionError("completion content is not text")
    return content


class RemoteWriter:
    def __init__(self, client: ChatClient):
        self.client = client

    def propose(self, ctx: ContextBuffer, knowledge: Sequence[KbRecord]) -> str:
        prompt, _ = render_context(ctx, [], "writer")
        content = self.client.complete([
            {"role": "system", "content": WRITER_SYSTEM_PROMPT},
            {"role": "user", "content": prompt},
        ])
        m = _FENCE_RE.search(content)
        if not m:
            raise MalformedCompletionError("completion has no fenced signal block")
        return m.group(1).strip()


class RemoteJudge:
    def __init__(self, client: ChatClient):
        self.client = client

    def review(self, candidate: str, ctx: ContextBuffer,
               knowledge: Sequence[KbRecord]) -> Tuple[float, str]:
        prompt, _ = render_context(ctx, [], "judge")
        content = self.client.complete([
            {"role": "system", "content": JUDGE_SYSTEM_PROMPT},
            {"role": "user", "content": prompt + f"\ncandidate to score:\n{candidate}"},
        ])
        m = _SCORE_LINE_RE.search(content)
        if not m:
            raise MalformedCompletionError("completion has no SCORE line")
        score = min(1.0, max(0.0, float(m.group(1))))
        review = _SCORE_LINE_RE.sub("", content).strip()
        return score, review


def remote_backend(cfg: RemoteCfg, transport: Optional[Callable] = None,
                   sleep: Callable[[float], None] = time.sleep) -> Tuple[RemoteWriter, RemoteJudge]:
    """Build a writer and judge sharing one client/connection pool."""
    client = ChatClient(cfg, transport=transport, sleep=sleep)
    return RemoteWriter(client), RemoteJudge(client)
