# Copyright 2026 The probeagg Authors. All Rights Reserved.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
# ==============================================================================
"""Writes the synthetic golden fixture: manifest, templates, replay, labels.

10 objects x 8 views x 4 questions x 5 scored candidates. Surface forms vary
in case, punctuation and trailing qualifiers so canonicalization collapses
them. Re-running overwrites the inputs; the expected outputs under expected/
must then be regenerated with the CLI.
"""

import hashlib
import json
import os
import random

HERE = os.path.dirname(os.path.abspath(__file__))

TEMPLATES = [
    ("q1", "What is in the image?"),
    ("q2", "What is the main object in this image?"),
    ("q3", "What type of object is shown?"),
    ("q4", "Describe the object in one or two words."),
]

# (true label in LVIS-style spelling, plausible confusions)
OBJECTS = [
    ("chair", ["stool", "bench", "table"]),
    ("office_chair", ["chair", "stool"]),
    ("teapot", ["kettle", "vase", "jug"]),
    ("sword", ["knife", "dagger", "spear"]),
    ("mushroom", ["tree", "umbrella", "lamp"]),
    ("car", ["truck", "van", "bus"]),
    ("lamp", ["vase", "candle", "bottle"]),
    ("shield", ["plate", "sign", "door"]),
    ("barrel", ["bucket", "drum", "vase"]),
    ("guitar", ["violin", "cello", "banjo"]),
]

QUALIFIERS = ["", "", "", ".", "!", ", wooden", ", 3d model", " ", "."]


def surface(rng, word):
    text = word.replace("_", " ")
    if rng.random() < 0.3:
        text = text.capitalize()
    if rng.random() < 0.1:
        text = text.upper()
    return text + rng.choice(QUALIFIERS)


def record(kind, **fields):
    return json.dumps({"kind": kind, "schema_version": 1, **fields}, ensure_ascii=False, separators=(",", ":"))


def main():
    rng = random.Random(20260101)
    manifest, replay, labels = [], [], []
    for i, (label, confusions) in enumerate(OBJECTS):
        oid = "obj%02d" % i
        views = ["%s/view%d.png" % (oid, v) for v in range(8)]
        manifest.append(record("manifest", object_id=oid, view_refs=views))
        labels.append(record("label", object_id=oid, property="type", label=label, source="synthetic"))
        # Every third object is hard: a decoy outscores the true label.
        hard = i % 3 == 0
        truth_bias, decoy_bias = (0.2, 0.6) if hard else (0.6, 0.1)
        for view in views:
            for _, prompt in TEMPLATES:
                pool = [label] + confusions + ["object", "thing", "toy"]
                picks = []
                while len(picks) < 5:
                    u = rng.random()
                    if u < decoy_bias and confusions[0] not in picks:
                        picks.append(confusions[0])
                    elif u < decoy_bias + truth_bias and label not in picks:
                        picks.append(label)
                    else:
                        picks.append(rng.choice(pool))
                scores = sorted((round(-rng.uniform(0.05, 12.0), 4) for _ in picks), reverse=True)
                cands = [{"text": surface(rng, w), "score": s} for w, s in zip(picks, scores)]
                key = hashlib.sha256(prompt.encode() + b"\0" + view.encode()).hexdigest()
                replay.append((key, record("replay_fixture", key=key, prompt=prompt, image_ref=view, candidates=cands)))
    replay.sort()
    templates = [record("template", id=qid, text=text, required_slots=[]) for qid, text in TEMPLATES]
    for name, lines in [("manifest.jsonl", manifest), ("templates.jsonl", templates),
                        ("replay.jsonl", [r for _, r in replay]), ("labels.jsonl", labels)]:
        with open(os.path.join(HERE, name), "w", encoding="utf-8") as f:
            f.write("".join(line + "\n" for line in lines))


if __name__ == "__main__":
    main()
