"""HTTP clients for remote judge and scorer services.

Judge:  POST {url}/judge  {"pairs": [{"pred": ..., "ref": ...}]} -> {"scores": [...]}
Scorer: POST {url}/score  {"audio_wav_base64": ..., "text": ..., "hop_s": ...} -> {"scores": [...]}

Transient failures (connection errors, 429 and 5xx) are retried with
exponential backoff. Anything still failing raises BackendError; a failure
is never turned into a zero score.
"""

from __future__ import annotations

import base64
import io
import threading
import time
from typing import Optional

import httpx
import numpy as np

from .audio import AudioClip
from .eval import BackendError

RETRY_STATUSES = (429, 500, 502, 503, 504)


class _HttpBackend:
    path = ""

    def __init__(
        self,
        url: str,
        timeout_s: float = 30.0,
        retries: int = 3,
        backoff_s: float = 0.5,
        max_concurrency: Optional[int] = 4,
        transport: Optional[httpx.BaseTransport] = None,
    ):
        self.url = url.rstrip("/") + self.path
        self.timeout_s = timeout_s
        self.retries = retries
        self.backoff_s = backoff_s
        self.max_concurrency = max_concurrency
        self._client = httpx.Client(timeout=timeout_s, transport=transport)
        self._gate = threading.BoundedSemaphore(max_concurrency) if max_concurrency else None

    def close(self):
        self._client.close()

    def _post(self, payload: dict) -> dict:
        last: Optional[Exception] = None
        for attempt in range(self.retries + 1):
            try:
                if self._gate:
                    with self._gate:
                        response = self._client.post(self.url, json=payload)
                else:
                    response = self._client.post(self.url, json=payload)
                if response.status_code in RETRY_STATUSES:
                    last = BackendError(f"{self.url} returned HTTP {response.status_code}")
                else:
                    response.raise_for_status()
                    return response.json()
            except httpx.HTTPStatusError as exc:
                raise BackendError(f"{self.url} returned HTTP {exc.response.status_code}") from exc
            except (httpx.TransportError, ValueError) as exc:
                last = exc
            if attempt < self.retries:
                time.sleep(self.backoff_s * 2**attempt)
        raise BackendError(f"{self.url} failed after {self.retries + 1} attempts: {last}") from last

    @staticmethod
    def _scores(body: dict, expected: Optional[int] = None) -> list[float]:
        scores = body.get("scores") if isinstance(body, dict) else None
        if not isinstance(scores, list):
            raise BackendError("response has no 'scores' list")
        if expected is not None and len(scores) != expected:
            raise BackendError(f"expected {expected} scores, got {len(scores)}")
        try:
            return [float(s) for s in scores]
        except (TypeError, ValueError) as exc:
            raise BackendError(f"non-numeric score in response: {exc}") from exc


class HttpJudge(_HttpBackend):
    path = "/judge"

    def judge_batch(self, pairs: list[tuple[str, str]]) -> list[float]:
        if not pairs:
            return []
        body = self._post({"pairs": [{"pred": p, "ref": r} for p, r in pairs]})
        return self._scores(body, len(pairs))

    def judge(self, pred_description: str, ref_description: str) -> float:
        return self.judge_batch([(pred_description, ref_description)])[0]


def wav_base64(clip: AudioClip) -> str:
    from scipy.io import wavfile

    buf = io.BytesIO()
    wavfile.write(buf, clip.sample_rate, np.clip(clip.samples, -1, 1).astype("<f4"))
    return base64.b64encode(buf.getvalue()).decode("ascii")


class HttpScorer(_HttpBackend):
    path = "/score"

    def __init__(self, url: str, **kwargs):
        super().__init__(url, **kwargs)
        self._cached: Optional[tuple[AudioClip, str]] = None

    def score_curve(self, audio: Optional[AudioClip], text: str, hop_s: float) -> np.ndarray:
        if audio is None:
            raise BackendError("remote scorer needs the clip audio")
        cached = self._cached
        if cached is None or cached[0] is not audio:
            cached = (audio, wav_base64(audio))
            self._cached = cached
        body = self._post({"audio_wav_base64": cached[1], "text": text, "hop_s": hop_s})
        return np.asarray(self._scores(body), dtype=np.float64)
