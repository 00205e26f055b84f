"""Independent expected-metrics calculator for the pipeline replay fixture.

Uses only the standard library and the fixture's intents (label and
explanation per sample), never the harness code. Scoring rules mirror the
fixture model: 26-letter count embeddings, the word-overlap judge, missing
scores counted as 0, and a brute-force sign-flip test on binary correctness.
"""

import itertools
import json
import math
import re
import sys
from pathlib import Path

HERE = Path(__file__).parent
DATASETS = ["flute", "besstie-au", "besstie-in"]
STRATEGIES = ["zero", "few", "origin", "kg", "pmp"]
MODEL = "mock-chat"


def letters(text):
    v = [0] * 26
    for ch in text.lower():
        if "a" <= ch <= "z":
            v[ord(ch) - 97] += 1
    return v


def cosine(u, v):
    dot = sum(a * b for a, b in zip(u, v))
    return dot / (math.sqrt(sum(a * a for a in u)) * math.sqrt(sum(b * b for b in v)))


def judge(gold, generated):
    if "UNJUDGEABLE" in generated:
        return None
    words = lambda t: set(re.findall(r"[a-z]+", t.lower()))
    return min(5, len(words(gold) & words(generated)) // 2)


def brute_p(a, b):
    d = [x - y for x, y in zip(a, b) if x != y]
    observed = abs(sum(d))
    hits = sum(1 for signs in itertools.product((1, -1), repeat=len(d))
               if abs(sum(s * x for s, x in zip(signs, d))) >= observed)
    return hits / 2 ** len(d)


def compute():
    intents = json.loads((HERE / "intents.json").read_text("utf-8"))
    rows = []
    for ds in DATASETS:
        gold = {}
        for line in (HERE / f"{ds}.jsonl").read_text("utf-8").splitlines():
            rec = json.loads(line)
            gold[rec["id"]] = rec["explanation"]
        ids = sorted(gold)
        zero = intents[ds]["zero"]
        zero_correct = [1 if zero[i]["label"] == "sarcastic" else 0 for i in ids]
        for strategy in STRATEGIES:
            if strategy not in intents[ds]:
                rows.append({"dataset": ds, "strategy": strategy, "status": "-"})
                continue
            cell = intents[ds][strategy]
            sims, judges, failures = [], [], 0
            for i in ids:
                if cell[i]["label"] != "sarcastic":
                    sims.append(0.0)
                    judges.append(0)
                    continue
                expl = cell[i]["explanation"]
                sims.append(cosine(letters(gold[i]), letters(expl)))
                score = judge(gold[i], expl)
                if score is None:
                    failures += 1
                else:
                    judges.append(score)
            correct = [1 if cell[i]["label"] == "sarcastic" else 0 for i in ids]
            rows.append({
                "dataset": ds,
                "strategy": strategy,
                "status": "ok",
                "n": len(ids),
                "accuracy": sum(correct) / len(ids),
                "similarity": math.fsum(sims) / len(sims),
                "judge": sum(judges) / len(judges),
                "ns_count": sum(cell[i]["label"] == "not_sarcastic" for i in ids),
                "nc_count": sum(cell[i]["label"] == "need_context" for i in ids),
                "p_vs_zero": None if strategy == "zero" else brute_p(correct, zero_correct),
                "judge_failures": failures,
            })
    return {"model_id": MODEL, "rows": rows}


def main():
    text = json.dumps(compute(), indent=1, sort_keys=True) + "\n"
    if "--write" in sys.argv:
        (HERE / "expected.json").write_text(text, "utf-8")
    else:
        sys.stdout.write(text)


if __name__ == "__main__":
    main()
