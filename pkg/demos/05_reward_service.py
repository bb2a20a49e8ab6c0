"""
The reward service
==================

Trainers post groups of rollouts and get rewards plus advantages back. The
service is a thin layer over the library, so the same request scored in
process gives the same bytes. Run it for real with ``blueprint-rl serve``.
"""
import json

from fastapi.testclient import TestClient

from blueprint_rl.gateway.service import create_app
from blueprint_rl.gateway.wire import canonical_bytes, score_request
from blueprint_rl.oracle import Corruption, generate_tasks, scripted_policy

scene, q = generate_tasks(1, seed=2)[0]
payload = {
    "groups": [
        {
            "prompt_meta": {"question": q.text, "gold": q.answer, "choices": list(q.choices)},
            "rollouts": [
                {"text": scripted_policy(scene, q), "probs_with_context": [0.9], "probs_no_context": [0.6]},
                {"text": scripted_policy(scene, q, Corruption(Corruption.OMIT_OBJECT))},
                {"text": scripted_policy(scene, q, Corruption(Corruption.BREAK_FORMAT))},
                {"text": "I think the answer is yes."},
            ],
        }
    ],
    "config": {"advantage_mode": "normalized_thresholded"},
}

client = TestClient(create_app())
print(client.get("/healthz").text)
response = client.post("/v1/score", json=payload)
print(json.dumps(response.json(), indent=2)[:1500])
print("identical to in-process scoring:", response.content == canonical_bytes(score_request(payload)))

# %%
# Malformed requests come back as 400 with a path to the offending field.
payload["groups"][0]["rollouts"][1]["probs_with_context"] = [0.2, 0.3]
payload["groups"][0]["rollouts"][1]["probs_no_context"] = [0.2]
print(client.post("/v1/score", json=payload).json())
