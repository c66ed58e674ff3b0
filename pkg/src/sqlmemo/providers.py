"""Completion providers: a deterministic scripted replayer and a chat client.

The scripted provider keys completions by prompt kind plus per-kind ordinal
(with optional per-digest overrides) and never touches the network, which is
what makes every pipeline test reproducible. The remote provider speaks the
common chat-completions wire shape with retry on transient failures.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass
from pathlib import Path

import requests


class ProviderError(Exception):
    """Completion could not be produced (exhausted script, dead endpoint...)."""


@dataclass(frozen=True)
class CompletionParams:
    temperature: float = 0.0
    max_output_tokens: int = 1024

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")
        if self.max_output_tokens <= 0:
            raise ValueError(f"max_output_tokens must be positive, got {self.max_output_tokens}")


def prompt_digest(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


SCRIPT_KINDS = ("generate_sql", "thought_process", "reflect_sql", "mistake_tip")

# Each template carries one phrase the others never emit; when a demonstration
# happens to quote one, the phrase closest to the end of the prompt wins,
# since instructions always come last.
_KIND_PHRASES = (
    ("generate_sql", "Generate the SQLite for the above question"),
    ("thought_process", "provide your thought process behind the generation"),
    ("reflect_sql", "Reflect on the error encountered in the SQL query"),
    ("mistake_tip", "Tip on how to avoid making the same mistake"),
)


def classify_prompt(prompt: str) -> str:
    best_kind = None
    best_pos = -1
    for kind, phrase in _KIND_PHRASES:
        pos = prompt.rfind(phrase)
        if pos > best_pos:
            best_pos = pos
            best_kind = kind
    if best_kind is None:
        raise ProviderError("prompt matches no known template")
    return best_kind


class ScriptedProvider:
    """Replays canned completions; deterministic and network-free.

    Script shape (JSON object):
      {"generate_sql": [...], "thought_process": [...],
       "reflect_sql": [...], "mistake_tip": [...]}
    Each prompt is classified by template, then answered with the next unread
    entry of that kind's list, so a script is a per-kind queue keyed by call
    order. That keying is what lets a resumed run fast-forward from counts
    alone.
    """

    def __init__(self, script: dict):
        self.script = {kind: list(script.get(kind, [])) for kind in SCRIPT_KINDS}
        self.counts = {kind: 0 for kind in SCRIPT_KINDS}
        self.calls: list[dict] = []
        self.tokens_used = 0

    @classmethod
    def from_file(cls, path) -> "ScriptedProvider":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))

    def fast_forward(self, counts: dict) -> None:
        """Skip completions already consumed by a previous (resumed) run."""
        for kind, n in counts.items():
            if kind not in self.counts:
                raise ProviderError(f"unknown script kind {kind!r}")
            self.counts[kind] = n

    def complete(self, prompt: str, params: CompletionParams) -> str:
        kind = classify_prompt(prompt)
        ordinal = self.counts[kind]
        queue = self.script[kind]
        if ordinal >= len(queue):
            raise ProviderError(f"script exhausted at key {kind}[{ordinal}]")
        text = queue[ordinal]
        self.counts[kind] = ordinal + 1
        self.calls.append({"kind": kind, "ordinal": ordinal, "digest": prompt_digest(prompt)})
        self.tokens_used += len(text.split())
        return text


class ChatCompletionsProvider:
    """Minimal chat-completions client: one user message in, text out.

    Retries transport errors, 429, and 5xx with exponential backoff; anything
    else surfaces immediately. Credentials come from the environment so they
    never land in config files or run logs.
    """

    def __init__(self, endpoint: str, model: str, api_key_env: str = "SQLMEMO_API_KEY",
                 retries: int = 3, backoff_base_s: float = 1.0, timeout_s: float = 120.0):
        if retries < 1:
            raise ValueError(f"retries must be >= 1, got {retries}")
        self.endpoint = endpoint
        self.model = model
        self.api_key_env = api_key_env
        self.retries = retries
        self.backoff_base_s = backoff_base_s
        self.timeout_s = timeout_s
        self.calls: list[dict] = []
        self.tokens_used = 0

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def complete(self, prompt: str, params: CompletionParams) -> str:
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": params.temperature,
            "max_tokens": params.max_output_tokens,
        }
        last_error = "no attempt made"
        for attempt in range(self.retries):
            if attempt:
                time.sleep(self.backoff_base_s * 2 ** (attempt - 1))
            try:
                resp = requests.post(self.endpoint, json=payload, headers=self._headers(),
                                     timeout=self.timeout_s)
            except requests.RequestException as exc:
                last_error = f"transport error: {exc}"
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last_error = f"status {resp.status_code}"
                continue
            if resp.status_code != 200:
                raise ProviderError(f"endpoint returned status {resp.status_code}: {resp.text[:200]}")
            try:
                body = resp.json()
                text = body["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise ProviderError(f"malformed completion response: {exc}") from exc
            usage = body.get("usage") or {}
            self.tokens_used += int(usage.get("total_tokens") or 0)
            try:
                kind = classify_prompt(prompt)
            except ProviderError:
                kind = None  # ledger is diagnostic here; free-form prompts are fine
            self.calls.append({"kind": kind, "ordinal": None,
                               "digest": prompt_digest(prompt)})
            return text
        raise ProviderError(f"gave up after {self.retries} attempts; last: {last_error}")


def complete(provider, prompt: str, params: CompletionParams) -> str:
    """One provider call per invocation; empty completions are an error."""
    text = provider.complete(prompt, params)
    if not text or not text.strip():
        raise ProviderError("provider returned an empty completion")
    return text
