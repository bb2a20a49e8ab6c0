"""
Scoring a rollout
=================

A rollout is plain text: a fenced JSON blueprint and an analysis inside
<think>, then the answer. We render one from a synthetic scene, break it in
a few ways, and watch the four reward terms move.
"""
from blueprint_rl.oracle import Corruption, generate_tasks, scripted_policy
from blueprint_rl.rewards import ConsistencyInputs, total_reward
from blueprint_rl.trace import parse_trace

scene, question = generate_tasks(1, seed=4)[0]
print(question.text, "->", question.answer, f"(K={question.k.k})")

text = scripted_policy(scene, question)
print(text)

report = parse_trace(text)
print("tags ok:", report.tags_ok, "| json ok:", report.blueprint_json_ok, "| objects:", len(report.trace.blueprint))

# %%
# Each corruption hits a different term. BreakFormat zeroes fmt, which also
# switches off the cardinality bonus because the two are multiplied.
for corruption in (
    Corruption(),
    Corruption(Corruption.OMIT_OBJECT),
    Corruption.extra(3),
    Corruption(Corruption.BREAK_FORMAT),
    Corruption(Corruption.INCONSISTENT_ANSWER),
):
    r = total_reward(scripted_policy(scene, question, corruption), question.answer, choices=question.choices, k=question.k)
    print(f"{corruption.kind:20s} acc={r.acc:.0f} fmt={r.fmt:.0f} card={r.card:.2f} total={r.total:.2f}")

# %%
# The consistency term needs two teacher-forcing passes over the answer
# tokens, which only the trainer can run; here we pass made-up probabilities.
grounded = ConsistencyInputs(probs_with_context=[0.92, 0.88], probs_no_context=[0.55, 0.61])
r = total_reward(text, question.answer, k=question.k, consistency=grounded)
print("with consistency:", r.as_dict())
