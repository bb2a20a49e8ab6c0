"""Command line entry point: ``blueprint-rl <subcommand>``.

Exit codes: 0 success, 1 usage error, 2 data validation error, 3 remote-client failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

from ..augment import (
    DEFAULT_RULES,
    filter_augmented,
    load_rules,
    plan_image_perturbation,
    plan_question_perturbation,
)
from ..grpo import ADVANTAGE_MODES, NORMALIZED_THRESHOLDED, compute_advantages
from ..mcts import SearchConfig, Task, synthesize
from ..oracle import (
    VOCABULARY,
    Corruption,
    OracleError,
    OracleJudge,
    SceneSpec,
    generate_tasks,
    make_question,
    parse_question,
    scripted_policy,
    scripted_proposer,
)
from .clients import ChatClient, ChatClientConfig, ChatJudge, ChatStepProposer, RemoteClientError
from .evaluate import EvalItem, evaluate
from .wire import RequestError, canonical_dumps, score_request

logger = logging.getLogger("blueprint_rl")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_REMOTE = 0, 1, 2, 3

ROLLOUT_CORRUPTIONS = (
    Corruption(),
    Corruption(Corruption.OMIT_OBJECT),
    Corruption.extra(2),
    Corruption(Corruption.BREAK_FORMAT),
    Corruption(Corruption.INCONSISTENT_ANSWER),
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def read_jsonl(path: Path) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{n}: invalid JSON: {exc}") from None


def write_jsonl(path: Path, records: Iterable[dict]) -> int:
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(canonical_dumps(rec) + "\n")
            n += 1
    return n


def _write_output(out: Optional[Path], text: str) -> None:
    if out is None:
        sys.stdout.write(text + "\n")
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text + "\n", encoding="utf-8")


def _scenes_path(tasks: Path, scenes: Optional[Path]) -> Path:
    return scenes if scenes is not None else tasks.with_name("scenes.jsonl")


def _load_scenes(path: Path) -> dict[str, SceneSpec]:
    return {rec["id"]: SceneSpec.from_record(rec) for rec in read_jsonl(path)}


def _oracle_question(scene: SceneSpec, task: dict):
    kind, args = parse_question(task["question"])
    return make_question(scene, kind, *args)


def _check_remote(client: Optional[ChatClient]) -> None:
    # per-item failures are tolerated; an endpoint that never answered is not
    if client is not None and client.unreachable:
        raise RemoteClientError(f"{client.cfg.endpoint} failed on all {client.n_failed} calls")


def cmd_gen_scenes(args) -> int:
    pairs = generate_tasks(args.n, args.objects, args.seed)
    out = Path(args.out)
    scenes, tasks, rollouts = [], [], []
    for i, (scene, q) in enumerate(pairs):
        task_id = f"task-{args.seed + i}"
        scenes.append(scene.to_record())
        tasks.append(q.to_record(task_id, scene.id))
        if args.write_rollouts:
            for c in ROLLOUT_CORRUPTIONS:
                rollouts.append({"task_id": task_id, "corruption": c.kind, "text": scripted_policy(scene, q, c)})
    write_jsonl(out / "scenes.jsonl", scenes)
    write_jsonl(out / "tasks.jsonl", tasks)
    if args.write_rollouts:
        write_jsonl(out / "rollouts.jsonl", rollouts)
    logger.info("wrote %d scenes and tasks to %s", len(scenes), out)
    return EXIT_OK


def cmd_synthesize(args) -> int:
    tasks_path = Path(args.tasks)
    cfg = SearchConfig(
        rollout_budget=args.budget,
        max_objects=args.max_objects,
        branching=args.branching,
        seed=args.seed,
    )
    scenes = _load_scenes(_scenes_path(tasks_path, args.scenes)) if args.proposer == "oracle" else {}
    client = ChatClient(ChatClientConfig.from_env()) if args.proposer == "http" else None
    records = []
    for rec in read_jsonl(tasks_path):
        task = Task(rec["id"], rec["question"], rec["answer"], tuple(rec.get("choices") or ()) or None, rec.get("scene_id", ""))
        if args.proposer == "oracle":
            scene = scenes[rec["scene_id"]]
            proposer = scripted_proposer(scene, _oracle_question(scene, rec), args.script)
        else:
            proposer = ChatStepProposer(client)
        for item in synthesize(task, proposer, cfg):
            records.append(
                {
                    "task_id": task.id,
                    "trace": item.text,
                    "correct": item.correct,
                    "backtracking": item.backtracking,
                    "rollout_index": item.rollout_index,
                }
            )
    write_jsonl(Path(args.out), records)
    logger.info("wrote %d traces to %s", len(records), args.out)
    _check_remote(client)
    return EXIT_OK


def build_score_payload(tasks: Sequence[dict], rollouts: Sequence[dict], config: dict) -> dict:
    by_task: dict[str, list[dict]] = {}
    for ro in rollouts:
        entry = {"text": ro["text"]}
        for key in ("probs_with_context", "probs_no_context"):
            if key in ro:
                entry[key] = ro[key]
        by_task.setdefault(ro["task_id"], []).append(entry)
    groups = []
    for t in tasks:
        if t["id"] not in by_task:
            continue
        meta = {"question": t["question"], "gold": t["answer"], "entity_lexicon": list(VOCABULARY)}
        if t.get("choices"):
            meta["choices"] = t["choices"]
        if t.get("k") is not None:
            meta["k"] = t["k"]
        groups.append({"prompt_meta": meta, "rollouts": by_task[t["id"]]})
    return {"groups": groups, "config": config}


def cmd_score(args) -> int:
    tasks = list(read_jsonl(Path(args.tasks)))
    rollouts = list(read_jsonl(Path(args.rollouts)))
    config = {"lambda": args.lam, "iou_threshold": args.iou_threshold, "advantage_mode": args.mode}
    result = score_request(build_score_payload(tasks, rollouts, config))
    _write_output(Path(args.out) if args.out else None, canonical_dumps(result))
    return EXIT_OK


def cmd_advantages(args) -> int:
    source = sys.stdin if args.rewards == "-" else open(args.rewards, encoding="utf-8")
    with source:
        for line in source:
            if not line.strip():
                continue
            rewards = json.loads(line)
            if isinstance(rewards, dict):
                rewards = rewards["rewards"]
            adv = compute_advantages(rewards, args.mode)
            sys.stdout.write(canonical_dumps({"mode": adv.mode, "values": list(adv.values)}) + "\n")
    return EXIT_OK


def mentioned_entities(question: str, lexicon: Sequence[str] = VOCABULARY) -> list[str]:
    return [e for e in lexicon if re.search(rf"\b{re.escape(e)}(?:s|es)?\b", question, re.IGNORECASE)]


def cmd_augment(args) -> int:
    tasks_path = Path(args.tasks)
    rules = load_rules(args.rules) if args.rules else DEFAULT_RULES
    scene_file = _scenes_path(tasks_path, args.scenes)
    scenes = _load_scenes(scene_file) if args.judge == "oracle" else {}
    judge_client = ChatClient(ChatClientConfig.from_env()) if args.judge == "http" else None
    kept, dropped = [], 0
    for rec in read_jsonl(tasks_path):
        image_ref = rec.get("scene_id", "")
        plan = plan_question_perturbation(rec["question"], rec["answer"], rules, orig_id=rec["id"], image_ref=image_ref)
        if plan is None:
            entities = rec.get("entities") or mentioned_entities(rec["question"])
            if not entities:
                dropped += 1
                continue
            plan = plan_image_perturbation(rec["question"], rec["answer"], entities, orig_id=rec["id"], image_ref=image_ref)
        if args.judge == "oracle":
            judge = OracleJudge(scenes[rec["scene_id"]])
        elif args.judge == "http":
            judge = ChatJudge(judge_client)
        else:
            judge = None
        if judge is not None:
            decision = filter_augmented(plan, judge)
            if not decision.keep:
                logger.info("dropped %s: %s", rec["id"], decision.reason)
                dropped += 1
                continue
        kept.append(plan.to_record())
    write_jsonl(Path(args.out), kept)
    logger.info("kept %d augmented items, dropped %d", len(kept), dropped)
    _check_remote(judge_client)
    return EXIT_OK


def cmd_eval(args) -> int:
    items = [EvalItem.from_record(r) for r in read_jsonl(Path(args.items))]
    report = evaluate(items)
    _write_output(Path(args.out) if args.out else None, json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_serve(args) -> int:
    from .service import serve

    serve(args.bind, args.max_body_bytes)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="blueprint-rl", description=__doc__.splitlines()[0])
    common = _Parser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-scenes", parents=[common], help="write synthetic scenes and oracle tasks")
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--objects", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--write-rollouts", action="store_true", help="also write scripted rollouts, one per corruption")
    p.set_defaults(func=cmd_gen_scenes)

    p = sub.add_parser("synthesize", parents=[common], help="MCTS trace synthesis")
    p.add_argument("--tasks", required=True)
    p.add_argument("--scenes", type=Path, help="scene JSONL (default: scenes.jsonl next to --tasks)")
    p.add_argument("--proposer", choices=("oracle", "http"), default="oracle")
    p.add_argument("--script", choices=("exact", "two_branch"), default="exact")
    p.add_argument("--budget", type=int, default=24)
    p.add_argument("--branching", type=int, default=4)
    p.add_argument("--max-objects", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("score", parents=[common], help="offline batch scoring, same schema as /v1/score")
    p.add_argument("--tasks", required=True)
    p.add_argument("--rollouts", required=True)
    p.add_argument("--mode", choices=ADVANTAGE_MODES, default=NORMALIZED_THRESHOLDED)
    p.add_argument("--lambda", dest="lam", type=int, default=2)
    p.add_argument("--iou-threshold", type=float, default=0.3)
    p.add_argument("--out")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("advantages", parents=[common], help="advantages for JSONL reward groups")
    p.add_argument("--rewards", required=True, help="JSONL of reward lists, or - for stdin")
    p.add_argument("--mode", choices=ADVANTAGE_MODES, default=NORMALIZED_THRESHOLDED)
    p.set_defaults(func=cmd_advantages)

    p = sub.add_parser("augment", parents=[common], help="plan anti-shortcut augmentations")
    p.add_argument("--tasks", required=True)
    p.add_argument("--rules", help="JSON/YAML rule table (default: built-in)")
    p.add_argument("--scenes", type=Path)
    p.add_argument("--judge", choices=("oracle", "http", "none"), default="oracle")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("eval", parents=[common], help="multiple-choice evaluation report")
    p.add_argument("--items", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", parents=[common], help="run the reward service")
    p.add_argument("--bind", default="127.0.0.1:8000")
    p.add_argument("--max-body-bytes", type=int, default=8 * 1024 * 1024)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(f"{exc}\n")
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except RemoteClientError as exc:
        sys.stderr.write(f"remote client failure: {exc}\n")
        return EXIT_REMOTE
    except FileNotFoundError as exc:
        sys.stderr.write(f"{exc}\n")
        return EXIT_USAGE
    except RequestError as exc:
        sys.stderr.write(f"invalid request: {exc}\n")
        return EXIT_DATA
    except (ValueError, KeyError, TypeError, OracleError) as exc:
        sys.stderr.write(f"data validation error: {exc!r}\n")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
