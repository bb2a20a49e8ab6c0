"""
Anti-shortcut augmentation
==========================

Two ways to make the original answer wrong: rewrite the question so its
spatial predicate flips, or plan an image edit that removes the objects the
question is about. The scene oracle then plays the plausibility judge.
"""
from blueprint_rl.augment import filter_augmented, plan_image_perturbation, plan_question_perturbation
from blueprint_rl.oracle import LEFT_OF, OracleJudge, generate_scene, make_question

for q, a in [
    ("If I move to the table, will the lamp be to my left?", "yes"),
    ("For someone at the door, will the bed be to their left or right?", "right"),
    ("Is the cup closer to the camera than the plate?", "no"),
    ("What color is the mug?", "red"),
]:
    plan = plan_question_perturbation(q, a)
    print(q, "->", (plan.question, plan.altered_answer, plan.rule_id) if plan else "no rule applies")

# %%
scene = generate_scene(5, 5)
a, b = scene.unique_labels()[:2]
q = make_question(scene, LEFT_OF, a, b)
plan = plan_question_perturbation(q.text, q.answer, image_ref=scene.id)
print(q.text, q.answer, "->", plan.question, plan.altered_answer)
print("oracle judge:", filter_augmented(plan, OracleJudge(scene)))

# %%
for q, a, ents in [("How many chairs are there?", "4", ["chair"]), ("Is the sofa left of the table?", "yes", ["sofa", "table"])]:
    plan = plan_image_perturbation(q, a, ents)
    print(plan.to_record())
