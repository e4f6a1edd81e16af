"""Optional chat-completion judge returning a 1-5 suspicion score.

Nothing else in the package depends on this module being reachable: the
feature extractor treats a missing score as an absent block. Mock mode reads
responses from a JSON file keyed by the SHA-256 of the sentence and never
touches the network.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources as _res
from typing import Callable, Dict, List, Optional, Sequence, Tuple

log = logging.getLogger(__name__)

SYSTEM_PROMPT = _res.files("susgrade").joinpath("data/llm_prompt.txt").read_text(encoding="utf8")

_SCORE_WORD = re.compile(r"score", re.IGNORECASE)
_DIGIT = re.compile(r"(?<!\d)([1-5])(?!\d)")


class LlmError(RuntimeError):
    def __init__(self, message: str, raw: Optional[str] = None):
        super().__init__(message)
        self.raw = raw


@dataclass(frozen=True)
class LlmConfig:
    endpoint: str = "https://api.openai.com/v1/chat/completions"
    model: str = "gpt-3.5-turbo"
    token_env: str = "SUSGRADE_LLM_TOKEN"
    timeout: float = 30.0
    max_retries: int = 3
    mock: bool = False
    canned_path: Optional[str] = None
    temperature: float = 0.0


@dataclass(frozen=True)
class LlmJudgement:
    score: int
    rationale: str
    raw: str


def text_digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf8")).hexdigest()


def build_messages(text: str) -> List[Dict[str, str]]:
    return [{"role": "system", "content": SYSTEM_PROMPT}, {"role": "user", "content": text}]


def parse_score(raw: str) -> Tuple[int, str]:
    """First standalone digit 1-5 after the word "score", else the first
    anywhere. Returns ``(score, rationale)``."""
    m = _SCORE_WORD.search(raw)
    d = _DIGIT.search(raw, m.end()) if m else None
    if d is None:
        d = _DIGIT.search(raw)
    if d is None:
        raise LlmError("no score 1-5 found in response", raw)
    rationale = raw[d.end():].lstrip(" .:;,-)\t\n")
    return int(d.group(1)), rationale.strip()


_canned_cache: Dict[str, Dict[str, str]] = {}


def _canned(path: str) -> Dict[str, str]:
    if path not in _canned_cache:
        with open(path, encoding="utf8") as fh:
            _canned_cache[path] = json.load(fh)
    return _canned_cache[path]


def write_canned(path, responses: Dict[str, str]) -> None:
    """Write a canned-response file from a ``text -> response`` map."""
    with open(path, "w", encoding="utf8") as fh:
        json.dump({text_digest(t): r for t, r in responses.items()}, fh, indent=1, sort_keys=True)


def _post(cfg: LlmConfig, text: str) -> str:
    token = os.environ.get(cfg.token_env)
    if not token:
        raise LlmError(f"environment variable {cfg.token_env} is not set")
    body = json.dumps({"model": cfg.model, "messages": build_messages(text), "temperature": cfg.temperature}).encode()
    req = urllib.request.Request(cfg.endpoint, data=body, method="POST", headers={
        "Content-Type": "application/json", "Authorization": f"Bearer {token}"})
    with urllib.request.urlopen(req, timeout=cfg.timeout) as resp:
        payload = json.load(resp)
    try:
        return payload["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError):
        raise LlmError("unexpected response shape", json.dumps(payload)) from None


def fetch_raw(text: str, cfg: LlmConfig) -> str:
    if cfg.mock:
        if not cfg.canned_path:
            raise LlmError("mock mode needs a canned-response file")
        raw = _canned(cfg.canned_path).get(text_digest(text))
        if raw is None:
            raise LlmError("no canned response for this text")
        return raw
    last: Optional[Exception] = None
    for attempt in range(cfg.max_retries + 1):
        try:
            return _post(cfg, text)
        except urllib.error.HTTPError as exc:
            if exc.code < 500 and exc.code != 429:
                raise LlmError(f"HTTP {exc.code}") from exc
            last = exc
        except (urllib.error.URLError, TimeoutError, OSError) as exc:
            last = exc
        if attempt < cfg.max_retries:
            time.sleep(min(8.0, 0.5 * 2 ** attempt))
    raise LlmError(f"request failed after {cfg.max_retries + 1} attempts: {last}")


def score_text(text: str, cfg: LlmConfig) -> LlmJudgement:
    raw = fetch_raw(text, cfg)
    score, rationale = parse_score(raw)
    return LlmJudgement(score, rationale, raw)


@dataclass
class BatchResult:
    judgements: List[Tuple[int, LlmJudgement]]
    failures: List[Tuple[int, str]]


class _RateLimiter:
    def __init__(self, per_minute: Optional[float]):
        self.interval = 60.0 / per_minute if per_minute else 0.0
        self.lock = threading.Lock()
        self.next_at = 0.0

    def wait(self):
        if not self.interval:
            return
        with self.lock:
            now = time.monotonic()
            at = max(now, self.next_at)
            self.next_at = at + self.interval
        if at > now:
            time.sleep(at - now)


def batch_score(texts: Sequence[str], cfg: LlmConfig, rate_limit: Optional[float] = 60.0,
                workers: int = 1) -> BatchResult:
    """Score every text; failures are collected, not raised. Results are
    listed in input order with their input index."""
    limiter = _RateLimiter(None if cfg.mock else rate_limit)

    def one(item):
        i, t = item
        limiter.wait()
        try:
            return i, score_text(t, cfg), None
        except LlmError as exc:
            return i, None, str(exc)

    items = list(enumerate(texts))
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            res = list(ex.map(one, items))
    else:
        res = [one(it) for it in items]
    return BatchResult([(i, j) for i, j, _ in res if j is not None], [(i, e) for i, j, e in res if j is None])


def feature_scorer(cfg: LlmConfig) -> Callable[[str], Optional[float]]:
    """Adapter for the feature extractor: ``None`` when no score is available."""
    def score(text: str) -> Optional[float]:
        try:
            return float(score_text(text, cfg).score)
        except LlmError as exc:
            log.info("llm score unavailable: %s", exc)
            return None
    return score
