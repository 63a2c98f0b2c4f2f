"""Chat-completion client with bounded concurrency and exponential backoff."""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor

from .errors import ParseFailure, TransportError

log = logging.getLogger(__name__)

API_KEY_ENV = "REWARD_RAG_API_KEY"


class ChatClient:
    """Speaks ``POST {model, messages, temperature}`` and returns the first choice's content."""

    thread_safe = True

    def __init__(self, url: str, model: str, api_key_env: str = API_KEY_ENV, timeout: float = 60.0,
                 temperature: float = 0.0, transport=None):
        import httpx

        self.url = url
        self.model = model
        self.temperature = temperature
        token = os.environ.get(api_key_env, "")
        headers = {"Authorization": f"Bearer {token}"} if token else {}
        self._http = httpx.Client(headers=headers, timeout=timeout, transport=transport)

    def complete(self, system: str, user: str) -> str:
        import httpx

        body = {
            "model": self.model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
            "temperature": self.temperature,
        }
        try:
            resp = self._http.post(self.url, json=body)
        except httpx.HTTPError as exc:
            raise TransportError(f"{type(exc).__name__}: {exc}") from exc
        if resp.status_code >= 400:
            raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            content = resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed completion payload: {exc}") from exc
        return content if isinstance(content, str) else ""

    def close(self):
        self._http.close()


def with_retries(fn, retries: int, base_delay: float = 1.0, factor: float = 2.0, sleep=time.sleep,
                 retry_on=(TransportError, ParseFailure)):
    """Call ``fn()`` up to ``1 + retries`` times, sleeping base, base*factor, ... between tries."""
    delay = base_delay
    for attempt in range(retries + 1):
        try:
            return fn()
        except retry_on as exc:
            if attempt == retries:
                raise
            log.warning("attempt %d failed (%s); retrying in %.1fs", attempt + 1, exc, delay)
            if delay > 0:
                sleep(delay)
            delay *= factor


def map_bounded(fn, items, concurrency: int):
    """Order-preserving map with at most ``concurrency`` calls in flight."""
    items = list(items)
    if concurrency <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=concurrency) as pool:
        return list(pool.map(fn, items))
