"""
Synthesizing supervision traces with MCTS
=========================================

The tree grows one atomic step at a time (add an object, analyze, answer).
A scripted proposer stands in for the teacher model. With the two_branch
script the first analysis is wrong, so the search finds a failing leaf
first and a correct sibling later, which yields a backtracking trace.
"""
from blueprint_rl.mcts import SearchConfig, TraceSearch, harvest
from blueprint_rl.oracle import generate_tasks, scripted_proposer

scene, question = generate_tasks(1, seed=11)[0]
task = question.to_task("demo-0", scene.id)
search = TraceSearch(task, scripted_proposer(scene, question, "two_branch"), SearchConfig(rollout_budget=8)).run()

for leaf in search.leaves():
    print(f"iteration {leaf.completed_at}: answer={leaf.step.text!r} value={leaf.leaf_value}")
print("root visits:", search.root.visits)

# %%
for item in harvest(search):
    print("=" * 60, "backtracking" if item.backtracking else "direct")
    print(item.text)
