"""Clients for remote models behind OpenAI-compatible HTTP endpoints.

All clients retry transient failures (transport errors, 429, 5xx) with
jittered exponential backoff and cap in-flight requests with a semaphore
shared by every thread using the same client instance. Tests inject an
``httpx.MockTransport`` (see :func:`replay_transport`) to stay offline.
"""
from __future__ import annotations

import json
import logging
import math
import os
import random
import re
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Optional, Sequence, Union

import httpx

from ..augment import PerturbationPlan
from ..mcts import AddObject, Analyze, Answer, AtomicStep, ProposalContext
from ..trace import Blueprint, BlueprintObject, BoundingBox, render_blueprint

logger = logging.getLogger(__name__)

ENV_PREFIX = "BLUEPRINT_RL_"


class RemoteClientError(RuntimeError):
    """A remote call failed after exhausting retries, or failed permanently."""


@dataclass(frozen=True)
class ChatClientConfig:
    endpoint: str = "http://127.0.0.1:8001/v1"
    model: str = "teacher"
    temperature: float = 0.0
    max_retries: int = 3
    backoff_base: float = 0.5
    concurrency: int = 4
    want_probs: bool = False
    timeout: float = 60.0
    api_key: Optional[str] = None

    def __post_init__(self) -> None:
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.concurrency < 1:
            raise ValueError("concurrency must be >= 1")

    @classmethod
    def from_env(cls, **overrides: Any) -> "ChatClientConfig":
        env = os.environ
        values: dict[str, Any] = {}
        if f"{ENV_PREFIX}ENDPOINT" in env:
            values["endpoint"] = env[f"{ENV_PREFIX}ENDPOINT"]
        if f"{ENV_PREFIX}MODEL" in env:
            values["model"] = env[f"{ENV_PREFIX}MODEL"]
        if f"{ENV_PREFIX}API_KEY" in env:
            values["api_key"] = env[f"{ENV_PREFIX}API_KEY"]
        if f"{ENV_PREFIX}CONCURRENCY" in env:
            values["concurrency"] = int(env[f"{ENV_PREFIX}CONCURRENCY"])
        if f"{ENV_PREFIX}TIMEOUT" in env:
            values["timeout"] = float(env[f"{ENV_PREFIX}TIMEOUT"])
        if f"{ENV_PREFIX}MAX_RETRIES" in env:
            values["max_retries"] = int(env[f"{ENV_PREFIX}MAX_RETRIES"])
        if f"{ENV_PREFIX}BACKOFF_BASE" in env:
            values["backoff_base"] = float(env[f"{ENV_PREFIX}BACKOFF_BASE"])
        values.update(overrides)
        return cls(**values)


@dataclass(frozen=True)
class ChatResult:
    text: str
    token_probs: Optional[list[float]] = None
    attempts: int = 1


class _Transient(Exception):
    pass


class _RetryingClient:
    def __init__(
        self,
        cfg: ChatClientConfig,
        transport: Optional[httpx.BaseTransport] = None,
        sleep: Callable[[float], None] = time.sleep,
        seed: Optional[int] = None,
    ):
        self.cfg = cfg
        headers = {"Authorization": f"Bearer {cfg.api_key}"} if cfg.api_key else {}
        self._http = httpx.Client(transport=transport, timeout=cfg.timeout, headers=headers)
        self._slots = threading.BoundedSemaphore(cfg.concurrency)
        self._sleep = sleep
        self._rng = random.Random(seed)
        self._count_lock = threading.Lock()
        # calls that succeeded / failed for good, across all threads
        self.n_ok = 0
        self.n_failed = 0

    @property
    def unreachable(self) -> bool:
        """True when every call so far has failed."""
        return self.n_failed > 0 and self.n_ok == 0

    def _tally(self, ok: bool) -> None:
        with self._count_lock:
            if ok:
                self.n_ok += 1
            else:
                self.n_failed += 1

    def close(self) -> None:
        self._http.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _backoff(self, attempt: int) -> float:
        base = self.cfg.backoff_base
        return base * (2**attempt) + self._rng.uniform(0, base)

    def _post(self, url: str, body: dict) -> tuple[dict, int]:
        try:
            result = self._post_with_retries(url, body)
        except RemoteClientError:
            self._tally(False)
            raise
        self._tally(True)
        return result

    def _post_with_retries(self, url: str, body: dict) -> tuple[dict, int]:
        attempts = self.cfg.max_retries + 1
        last: Optional[BaseException] = None
        for attempt in range(attempts):
            try:
                with self._slots:
                    resp = self._http.post(url, json=body)
                if resp.status_code == 429 or resp.status_code >= 500:
                    raise _Transient(f"HTTP {resp.status_code}")
                if resp.status_code >= 400:
                    raise RemoteClientError(f"HTTP {resp.status_code} from {url}: {resp.text[:200]}")
                return resp.json(), attempt + 1
            except (httpx.TransportError, _Transient) as exc:
                last = exc
                logger.warning("attempt %d/%d to %s failed: %s", attempt + 1, attempts, url, exc)
                if attempt + 1 < attempts:
                    self._sleep(self._backoff(attempt))
            except ValueError as exc:  # undecodable JSON body
                raise RemoteClientError(f"invalid JSON from {url}: {exc}") from exc
        raise RemoteClientError(f"{url} failed after {attempts} attempts: {last}")


class ChatClient(_RetryingClient):
    """Chat-completions client that can also return per-token probabilities."""

    def complete(self, messages: Sequence[dict], want_probs: Optional[bool] = None) -> ChatResult:
        want = self.cfg.want_probs if want_probs is None else want_probs
        body: dict[str, Any] = {
            "model": self.cfg.model,
            "messages": list(messages),
            "temperature": self.cfg.temperature,
        }
        if want:
            body["logprobs"] = True
        data, attempts = self._post(self.cfg.endpoint.rstrip("/") + "/chat/completions", body)
        try:
            choice = data["choices"][0]
            text = choice["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise RemoteClientError(f"malformed chat response: {exc!r}") from exc
        probs = None
        if want:
            try:
                probs = [math.exp(tok["logprob"]) for tok in choice["logprobs"]["content"]]
            except (KeyError, TypeError) as exc:
                raise RemoteClientError("token probabilities requested but absent from response") from exc
        return ChatResult(text, probs, attempts)


class ImageEditClient(_RetryingClient):
    """Posts ``{"image", "instruction"}`` to an editor endpoint; returns the edited image reference."""

    def edit(self, image_ref: str, instruction: str) -> str:
        data, _ = self._post(self.cfg.endpoint, {"model": self.cfg.model, "image": image_ref, "instruction": instruction})
        try:
            return str(data["image"])
        except (KeyError, TypeError) as exc:
            raise RemoteClientError("editor response lacks 'image'") from exc

    def apply(self, image_ref: str, plan: PerturbationPlan) -> str:
        for edit in sorted(plan.edits, key=lambda e: e.order):
            image_ref = self.edit(image_ref, edit.instruction)
        return image_ref


def chat_response(text: str, token_probs: Optional[Sequence[float]] = None) -> dict:
    """An OpenAI-shaped chat completion body, for fixtures."""
    choice: dict[str, Any] = {"index": 0, "message": {"role": "assistant", "content": text}, "finish_reason": "stop"}
    if token_probs is not None:
        choice["logprobs"] = {"content": [{"token": f"t{i}", "logprob": math.log(p)} for i, p in enumerate(token_probs)]}
    return {"id": "replay", "object": "chat.completion", "choices": [choice]}


def replay_transport(responses: Sequence[Union[dict, int, Exception]]) -> httpx.MockTransport:
    """Transport answering requests from a fixed script.

    Each entry is a JSON body (200), an HTTP status code, or an exception to
    raise. The last entry repeats once the script is exhausted.
    """
    script = list(responses)
    lock = threading.Lock()
    state = {"i": 0}

    def handler(request: httpx.Request) -> httpx.Response:
        with lock:
            item = script[min(state["i"], len(script) - 1)]
            state["i"] += 1
        if isinstance(item, Exception):
            raise item
        if isinstance(item, int):
            return httpx.Response(item, json={"error": f"status {item}"})
        return httpx.Response(200, json=item)

    return httpx.MockTransport(handler)


def load_replay(path: Union[str, Path]) -> httpx.MockTransport:
    """Replay transport from a JSONL file of response bodies."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return replay_transport([json.loads(l) for l in lines if l.strip()])


# -- model-backed collaborators ---------------------------------------------

PROPOSER_SYSTEM_PROMPT = (
    "You build a spatial-reasoning trace one step at a time. "
    "Reply with a JSON array of candidate next steps, best first. Each candidate is one of: "
    '{"kind": "add_object", "thought": str, "name": str, "bbox": [x1, y1, x2, y2], "attribute": str}, '
    '{"kind": "analyze", "text": str}, {"kind": "answer", "text": str}. '
    "Add the objects the question depends on, then analyze them, then answer with the exact text of one choice."
)


def _user_content(text: str, image_ref: str) -> Union[str, list]:
    if image_ref.startswith(("http://", "https://", "data:")):
        return [{"type": "image_url", "image_url": {"url": image_ref}}, {"type": "text", "text": text}]
    return text if not image_ref else f"[image: {image_ref}]\n{text}"


def _strip_fence(text: str) -> str:
    m = re.search(r"```(?:json)?\s*(.*?)```", text, re.DOTALL)
    return m.group(1) if m else text


def parse_step(item: dict) -> AtomicStep:
    kind = item.get("kind")
    if kind == "add_object":
        box = BoundingBox.from_seq(item["bbox"])
        return AddObject(BlueprintObject(item["name"], box, item.get("thought", ""), item.get("attribute", "")))
    if kind == "analyze":
        return Analyze(str(item["text"]))
    if kind == "answer":
        return Answer(str(item["text"]))
    raise ValueError(f"unknown step kind {kind!r}")


class ChatStepProposer:
    """Step proposer backed by a chat model. Safe to share across search trees."""

    def __init__(self, client: ChatClient, system_prompt: str = PROPOSER_SYSTEM_PROMPT):
        self.client = client
        self.system_prompt = system_prompt

    def __call__(self, ctx: ProposalContext) -> list[AtomicStep]:
        analysis = next((s.text for s in ctx.steps if isinstance(s, Analyze)), None)
        lines = [f"Question: {ctx.task.question}"]
        if ctx.task.choices:
            lines.append("Choices: " + " | ".join(ctx.task.choices))
        lines.append("Blueprint so far:\n" + render_blueprint(Blueprint(tuple(ctx.objects))))
        if analysis is not None:
            lines.append(f"Analysis so far: {analysis}")
        if ctx.forced:
            lines.append(f"The next step must be of kind '{ctx.forced}'.")
        lines.append(f"Propose up to {ctx.n_candidates} candidates.")
        messages = [
            {"role": "system", "content": self.system_prompt},
            {"role": "user", "content": _user_content("\n".join(lines), ctx.task.image_ref)},
        ]
        reply = self.client.complete(messages, want_probs=False).text
        data = json.loads(_strip_fence(reply))
        if isinstance(data, dict):
            data = [data]
        return [parse_step(item) for item in data]


JUDGE_PROMPT = (
    "Look at the image and the question. Does the given answer correctly answer the question "
    "for this image? Reply with a single word: yes or no."
)


class ChatJudge:
    """Plausibility judge for augmented items; returns the model's yes/no reply."""

    def __init__(self, client: ChatClient, prompt: str = JUDGE_PROMPT):
        self.client = client
        self.prompt = prompt

    def __call__(self, plan: PerturbationPlan) -> str:
        text = f"{self.prompt}\nQuestion: {plan.question}\nAnswer: {plan.altered_answer}"
        if plan.edits:
            text += "\nThe image was edited: " + "; ".join(e.instruction for e in plan.edits)
        messages = [{"role": "user", "content": _user_content(text, plan.image_ref)}]
        return self.client.complete(messages, want_probs=False).text


ENTITY_PROMPT = (
    "List the objects in the image that the question below refers to or that must be inspected to answer it. "
    "Write one object name per line and nothing else. If no object is involved, reply with 'none'."
)


def extract_entities(client: ChatClient, question: str, image_ref: str = "") -> list[str]:
    messages = [{"role": "user", "content": _user_content(f"{ENTITY_PROMPT}\nQuestion: {question}", image_ref)}]
    reply = client.complete(messages, want_probs=False).text
    names = [re.sub(r"^[\s\-*\d.)]+", "", line).strip() for line in reply.splitlines()]
    names = [n for n in names if n and n.lower() != "none"]
    return list(dict.fromkeys(names))

