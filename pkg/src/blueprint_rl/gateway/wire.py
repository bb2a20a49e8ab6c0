"""Scoring request/response wire format shared by the HTTP service and the CLI.

Responses are serialized canonically (sorted keys, floats at 9 significant
digits) so identical requests produce identical bytes.
"""
from __future__ import annotations

import hashlib
import json
import math
from typing import Annotated, Any, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .. import __version__
from ..grpo import ADVANTAGE_MODES, DEFAULT_STD_FLOOR, NORMALIZED_THRESHOLDED, compute_advantages
from ..rewards import ConsistencyInputs, RewardConfig, extract_reference_count, total_reward
from ..trace import parse_trace

Probability = Annotated[float, Field(ge=0.0, le=1.0)]


class RequestError(ValueError):
    """Malformed request; ``errors`` carries ``{"loc": "a.0.b", "msg": ...}`` entries."""

    def __init__(self, errors: list[dict]):
        self.errors = errors
        super().__init__("; ".join(f"{e['loc']}: {e['msg']}" for e in errors))


def canonical_dumps(obj: Any) -> str:
    """Deterministic JSON: sorted keys, compact separators, floats as ``%.9g``."""
    if obj is None:
        return "null"
    if obj is True:
        return "true"
    if obj is False:
        return "false"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        if not math.isfinite(obj):
            raise ValueError(f"cannot serialize non-finite float {obj}")
        if obj == 0:
            return "0"
        return format(obj, ".9g")
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, dict):
        items = sorted((str(k), v) for k, v in obj.items())
        return "{" + ",".join(f"{json.dumps(k, ensure_ascii=False)}:{canonical_dumps(v)}" for k, v in items) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(canonical_dumps(v) for v in obj) + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def canonical_bytes(obj: Any) -> bytes:
    return canonical_dumps(obj).encode("utf-8")


def request_hash(obj: Any) -> str:
    return hashlib.sha256(canonical_bytes(obj)).hexdigest()


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class PromptMeta(_Model):
    question: str = ""
    gold: str
    choices: Optional[list[str]] = None
    k: Optional[int] = Field(default=None, ge=1)
    entity_lexicon: list[str] = Field(default_factory=list)


class RolloutIn(_Model):
    text: str
    probs_with_context: Optional[list[Probability]] = None
    probs_no_context: Optional[list[Probability]] = None


class GroupIn(_Model):
    prompt_meta: PromptMeta
    rollouts: list[RolloutIn] = Field(min_length=1)


class ScoreConfig(_Model):
    lam: int = Field(default=2, ge=1, alias="lambda")
    iou_threshold: float = Field(default=0.3, ge=0.0, le=1.0)
    advantage_mode: Literal["centered", "normalized_thresholded"] = NORMALIZED_THRESHOLDED
    std_floor: float = Field(default=DEFAULT_STD_FLOOR, ge=0.0)


class ScoreRequest(_Model):
    groups: list[GroupIn] = Field(min_length=1)
    config: ScoreConfig = Field(default_factory=ScoreConfig)


class RewardGroupIn(_Model):
    rewards: list[float] = Field(min_length=1)


class AdvantageConfig(_Model):
    advantage_mode: Literal["centered", "normalized_thresholded"] = NORMALIZED_THRESHOLDED
    std_floor: float = Field(default=DEFAULT_STD_FLOOR, ge=0.0)


class AdvantageRequest(_Model):
    groups: list[RewardGroupIn] = Field(min_length=1)
    config: AdvantageConfig = Field(default_factory=AdvantageConfig)


def _loc(parts) -> str:
    return ".".join(str(p) for p in parts)


def _validate(model: type[BaseModel], payload: Union[bytes, str, dict]) -> BaseModel:
    if isinstance(payload, (bytes, str)):
        try:
            payload = json.loads(payload)
        except (ValueError, RecursionError) as exc:
            raise RequestError([{"loc": "", "msg": f"body is not valid JSON: {exc}"}]) from None
    try:
        return model.model_validate(payload)
    except ValidationError as exc:
        errors = [{"loc": _loc(e["loc"]), "msg": e["msg"]} for e in exc.errors(include_url=False)]
        raise RequestError(errors) from None


def _check_group_sizes(groups, mode: str) -> list[dict]:
    errors = []
    if mode == NORMALIZED_THRESHOLDED:
        for g, group in enumerate(groups):
            n = len(group.rollouts) if hasattr(group, "rollouts") else len(group.rewards)
            if n < 2:
                field = "rollouts" if hasattr(group, "rollouts") else "rewards"
                errors.append({"loc": f"groups.{g}.{field}", "msg": f"{mode} advantages need at least 2 entries, got {n}"})
    return errors


def parse_score_request(payload: Union[bytes, str, dict]) -> ScoreRequest:
    req = _validate(ScoreRequest, payload)
    errors = []
    for g, group in enumerate(req.groups):
        for r, ro in enumerate(group.rollouts):
            loc = f"groups.{g}.rollouts.{r}"
            a, b = ro.probs_with_context, ro.probs_no_context
            if (a is None) != (b is None):
                errors.append({"loc": loc, "msg": "probs_with_context and probs_no_context must be supplied together"})
            elif a is not None and b is not None:
                if not a or not b:
                    errors.append({"loc": loc, "msg": "probability arrays must be non-empty"})
                elif len(a) != len(b):
                    errors.append(
                        {"loc": loc, "msg": f"rollout {r}: probs_with_context has {len(a)} entries but probs_no_context has {len(b)}"}
                    )
    errors += _check_group_sizes(req.groups, req.config.advantage_mode)
    if errors:
        raise RequestError(errors)
    return req


def parse_advantage_request(payload: Union[bytes, str, dict]) -> AdvantageRequest:
    req = _validate(AdvantageRequest, payload)
    errors = []
    for g, group in enumerate(req.groups):
        if not all(math.isfinite(r) for r in group.rewards):
            errors.append({"loc": f"groups.{g}.rewards", "msg": "rewards must be finite"})
    errors += _check_group_sizes(req.groups, req.config.advantage_mode)
    if errors:
        raise RequestError(errors)
    return req


def _dump(req: BaseModel) -> dict:
    return req.model_dump(by_alias=True, exclude_none=True)


def score_request(payload: Union[bytes, str, dict, ScoreRequest]) -> dict:
    """Score every rollout and compute per-group advantages."""
    req = payload if isinstance(payload, ScoreRequest) else parse_score_request(payload)
    cfg = RewardConfig(lam=req.config.lam, iou_threshold=req.config.iou_threshold)
    groups_out = []
    for group in req.groups:
        meta = group.prompt_meta
        k = extract_reference_count(meta.question, meta.gold, meta.k, meta.entity_lexicon)
        rollouts_out = []
        totals = []
        for ro in group.rollouts:
            report = parse_trace(ro.text)
            consistency = None
            if ro.probs_with_context is not None and ro.probs_no_context is not None:
                consistency = ConsistencyInputs(ro.probs_with_context, ro.probs_no_context)
            reward = total_reward(
                ro.text,
                meta.gold,
                question=meta.question,
                choices=meta.choices,
                k=k,
                consistency=consistency,
                cfg=cfg,
                report=report,
            )
            totals.append(reward.total)
            rollouts_out.append(
                {
                    "reward": reward.as_dict(),
                    "parse": {
                        "tags_ok": report.tags_ok,
                        "blueprint_json_ok": report.blueprint_json_ok,
                        "n_objects": len(report.blueprint) if report.blueprint is not None else 0,
                        "n_diagnostics": len(report.diagnostics),
                    },
                }
            )
        adv = compute_advantages(totals, req.config.advantage_mode, req.config.std_floor)
        groups_out.append(
            {
                "reference_count": {"k": k.k, "source": k.source},
                "rollouts": rollouts_out,
                "advantages": {"mode": adv.mode, "values": list(adv.values)},
            }
        )
    return {
        "version": __version__,
        "request_hash": request_hash(_dump(req)),
        "groups": groups_out,
    }


def advantages_request(payload: Union[bytes, str, dict, AdvantageRequest]) -> dict:
    req = payload if isinstance(payload, AdvantageRequest) else parse_advantage_request(payload)
    groups_out = []
    for group in req.groups:
        adv = compute_advantages(group.rewards, req.config.advantage_mode, req.config.std_floor)
        groups_out.append({"mode": adv.mode, "values": list(adv.values)})
    return {"version": __version__, "request_hash": request_hash(_dump(req)), "groups": groups_out}


__all__ = [
    "ADVANTAGE_MODES",
    "AdvantageRequest",
    "RequestError",
    "ScoreRequest",
    "advantages_request",
    "canonical_bytes",
    "canonical_dumps",
    "parse_advantage_request",
    "parse_score_request",
    "request_hash",
    "score_request",
]
