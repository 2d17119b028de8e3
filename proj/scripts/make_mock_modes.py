#!/usr/bin/env python3
"""Regenerates data/mock_modes/mode{1..7}.json from data/fixture_22.jsonl.

Each mode answers every fixture question with the ground truth except for a
designated error slice (item index % 7 picks the erring mode), so the vote
demo recovers 100% accuracy while every single mode stays below it.
"""

import json
import pathlib

ROOT = pathlib.Path(__file__).resolve().parent.parent
FIXTURE = ROOT / "data" / "fixture_22.jsonl"
OUT_DIR = ROOT / "data" / "mock_modes"

# One plausible-but-wrong answer per item, used by whichever mode errs on it.
WRONG = {
    "q01": "he answers his phone",
    "q02": "she reads a book on a bench",
    "q03": "in one quick straight pour",
    "q04": "a closed crimp grip",
    "q05": "yes, he ties them completely",
    "q06": "yes, the fence is fully painted",
    "q07": "the dog barks first",
    "q08": "before tasting it",
    "q09": "yes, a man dives in at the end",
    "q10": "yes, the stand is knocked over",
    "q11": "on the fountain in the courtyard",
    "q12": "near the end of the clip",
    "q13": "three times",
    "q14": "six people",
    "q15": "it drives in reverse the whole time",
    "q16": "it shatters on its own",
    "q17": "because a goal is scored on the screen",
    "q18": "he ignores it and walks away",
    "q19": "she looks disappointed",
    "q20": "joy",
    "q21": "early morning",
    "q22": "grand opening",
}

# Mode 5 emits {summary, answer}; every other mode emits
# {reason, answer, confidence}.
def reply_for(mode, answer, correct):
    if mode == 5:
        return {
            "summary": f"the clip can be summed up as: {answer}",
            "answer": answer,
        }
    return {
        "reason": f"the video shows that {answer}",
        "answer": answer,
        "confidence": 0.9 if correct else 0.4,
    }


def main():
    items = [json.loads(line) for line in FIXTURE.read_text().splitlines() if line.strip()]
    OUT_DIR.mkdir(parents=True, exist_ok=True)
    for mode in range(1, 8):
        rules = []
        for index, item in enumerate(items):
            wrong_here = index % 7 == mode - 1
            answer = WRONG[item["id"]] if wrong_here else item["answer"]
            rules.append({
                "pattern": item["question"],
                "reply": reply_for(mode, answer, not wrong_here),
            })
        path = OUT_DIR / f"mode{mode}.json"
        path.write_text(json.dumps(rules, indent=2) + "\n")
        print(f"wrote {path}")


if __name__ == "__main__":
    main()
