"""Question embeddings: a deterministic offline encoder plus a remote-encoder contract.

The default encoder is a hashed bag-of-words: it needs no model files and no
network, and the same text always maps to the same unit vector, which keeps
retrieval and every downstream test reproducible. A remote sentence encoder
can be plugged in through the same config for production-faithful runs.
"""

from __future__ import annotations

import hashlib
import os
import re
from dataclasses import dataclass

import numpy as np
import requests

DEFAULT_DIMENSION = 384

_TOKEN_SPLIT = re.compile(r"[^a-z0-9]+")


class EncoderError(Exception):
    """Remote encoder transport failure or malformed response."""


@dataclass(frozen=True)
class EncoderConfig:
    """How question texts are turned into vectors.

    mode "hash" is the offline default; mode "remote" calls an embeddings
    endpoint (endpoint + model required, credentials via ``api_key_env``).
    """

    mode: str = "hash"
    dimension: int = DEFAULT_DIMENSION
    endpoint: str = ""
    model: str = ""
    api_key_env: str = "SQLMEMO_API_KEY"
    timeout_s: float = 30.0

    def __post_init__(self) -> None:
        if self.mode not in ("hash", "remote"):
            raise ValueError(f"unknown encoder mode: {self.mode!r}")
        if self.dimension <= 0:
            raise ValueError(f"dimension must be positive, got {self.dimension}")
        if self.mode == "remote" and not (self.endpoint and self.model):
            raise ValueError("remote mode requires endpoint and model")
        if self.mode == "hash" and (self.endpoint or self.model):
            raise ValueError("hash mode takes no endpoint or model")

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "dimension": self.dimension,
            "endpoint": self.endpoint,
            "model": self.model,
            "api_key_env": self.api_key_env,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(
            mode=d["mode"],
            dimension=d["dimension"],
            endpoint=d.get("endpoint", ""),
            model=d.get("model", ""),
            api_key_env=d.get("api_key_env", "SQLMEMO_API_KEY"),
        )


def _token_hashes(token: str) -> tuple[int, int]:
    # One 16-byte digest split into two independent 64-bit halves.
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=16).digest()
    return (
        int.from_bytes(digest[:8], "big"),
        int.from_bytes(digest[8:], "big"),
    )


def _hash_embed(text: str, dimension: int) -> np.ndarray:
    vec = np.zeros(dimension, dtype=np.float64)
    for token in _TOKEN_SPLIT.split(text.lower()):
        if not token:
            continue
        h1, h2 = _token_hashes(token)
        sign = 1.0 if h2 % 2 == 0 else -1.0
        vec[h1 % dimension] += sign
    norm = float(np.linalg.norm(vec))
    if norm > 0.0:
        vec /= norm
    return vec


def _remote_embed(text: str, cfg: EncoderConfig) -> np.ndarray:
    headers = {"Content-Type": "application/json"}
    api_key = os.environ.get(cfg.api_key_env, "")
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"
    try:
        resp = requests.post(
            cfg.endpoint,
            json={"model": cfg.model, "input": text},
            headers=headers,
            timeout=cfg.timeout_s,
        )
    except requests.RequestException as exc:
        raise EncoderError(f"embedding request failed: {exc}") from exc
    if resp.status_code != 200:
        raise EncoderError(f"embedding endpoint returned status {resp.status_code}")
    try:
        values = resp.json()["data"][0]["embedding"]
    except (KeyError, IndexError, ValueError) as exc:
        raise EncoderError(f"malformed embedding response: {exc}") from exc
    vec = np.asarray(values, dtype=np.float64)
    if vec.shape != (cfg.dimension,):
        raise EncoderError(
            f"embedding dimension mismatch: endpoint returned {vec.shape[0] if vec.ndim == 1 else vec.shape}, "
            f"config expects {cfg.dimension}"
        )
    norm = float(np.linalg.norm(vec))
    if norm > 0.0:
        vec = vec / norm
    return vec


def embed(text: str, cfg: EncoderConfig) -> np.ndarray:
    """Embed ``text`` into a unit vector of length ``cfg.dimension``.

    Empty or token-free text yields the all-zero vector rather than an error,
    so degenerate inputs rank last in retrieval instead of aborting a run.
    """
    if cfg.mode == "hash":
        return _hash_embed(text, cfg.dimension)
    return _remote_embed(text, cfg)


def cosine_similarity(a, b) -> float:
    """Dot product of two unit (or zero) vectors; zero against anything is 0."""
    va = np.asarray(a, dtype=np.float64)
    vb = np.asarray(b, dtype=np.float64)
    if va.shape != vb.shape:
        raise ValueError(f"dimension mismatch: {va.shape[0]} vs {vb.shape[0]}")
    return float(np.dot(va, vb))
