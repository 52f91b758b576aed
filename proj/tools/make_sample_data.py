#!/usr/bin/env python3
"""Regenerates the offline sample corpus and the scripted mock backends.

Everything under data/sample and data/mock is produced by this script from a
fixed seed. The records imitate the DocMath-Eval layout (paragraphs with pipe
tables, a question, a numeric ground truth) but are entirely synthetic.
"""
import json
import math
import os
import random

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
SAMPLE = os.path.join(ROOT, "data", "sample")
MOCK = os.path.join(ROOT, "data", "mock")

LABELS = [
    "Cloud Services", "Hardware Sales", "Licensing", "Consulting Fees", "Interest Income", "Rent Expense",
    "Payroll", "Inventory", "Accounts Receivable", "Deferred Revenue", "Goodwill", "Capital Expenditures",
    "Marketing Spend", "Freight Costs", "Legal Fees", "Insurance", "Depreciation", "Royalties",
    "Warranty Reserve", "Subscriptions", "Dividends Paid", "Tax Expense", "Utilities", "Travel",
    "Software Licenses", "Cash on Hand", "Long-term Debt", "Customer Deposits", "Research Grants", "Maintenance",
]
COMPANIES = [
    "Alderic", "Brightwell", "Corvane", "Dunmore", "Everline", "Fairhaven", "Glenrock", "Halvorsen", "Ironbridge",
    "Juniper", "Kestrel", "Lumen", "Marlow", "Northgate", "Oakridge", "Pellham", "Quarry", "Redwater", "Stonehill",
    "Tidewell", "Umber", "Vantor", "Westbrook", "Yarrow", "Zephyr",
]
STUBS = ["($ in millions)", "(in thousands)", "Line item", "Category", "Segment"]
FILLER = [
    "Management continues to monitor liquidity and expects existing resources to fund operations.",
    "The figures below were prepared on a basis consistent with prior periods.",
    "Certain prior period amounts were reclassified to conform to the current presentation.",
    "The company operates in a competitive market and faces pricing pressure in several regions.",
    "Changes in foreign exchange rates did not have a material effect on the results.",
    "The board approved the consolidated statements after review by the audit committee.",
    "Seasonal patterns affect results, with stronger activity in the second half of the year.",
    "The company expects capital spending to remain in line with historical levels.",
]


def fmt(v):
    if abs(v - round(v)) < 1e-9:
        return str(int(round(v)))
    return repr(v)


def render_cell(v, rng):
    s = fmt(abs(v))
    if abs(v) >= 1000 and rng.random() < 0.5 and "." not in s:
        s = f"{int(abs(v)):,}"
    if v < 0:
        s = f"({s})" if rng.random() < 0.5 else "-" + s
    elif rng.random() < 0.15:
        s = "$" + s
    return s


def make_table(rng, labels, years, scale):
    values = {}
    for lab in labels:
        base = rng.randint(scale // 10 + 1, scale)
        row = []
        for _ in years:
            base = max(1, base + rng.randint(-scale // 8, scale // 6))
            row.append(base)
        values[lab] = row
    return {"stub": rng.choice(STUBS), "years": years, "labels": labels, "values": values}


def render_table(t, rng):
    lines = ["|" + t["stub"] + "|" + "|".join(str(y) for y in t["years"]) + "|",
             "|" + "---|" * (len(t["years"]) + 1)]
    for lab in t["labels"]:
        lines.append("|" + lab + "|" + "|".join(render_cell(v, rng) for v in t["values"][lab]) + "|")
    return "\n".join(lines)


def val(t, lab, year):
    return t["values"][lab][t["years"].index(year)]


def quote(lab, rng):
    return f"'{lab}'" if rng.random() < 0.5 else lab


def ask(rng, tables, ops):
    """Returns (question, answer) for a randomly chosen operation."""
    op = rng.choice(ops)
    t = rng.choice(tables)
    years = t["years"]
    if op == "lookup":
        lab, y = rng.choice(t["labels"]), rng.choice(years)
        return f"What is {quote(lab, rng)} in {y}?", float(val(t, lab, y))
    if op == "difference":
        lab = rng.choice(t["labels"])
        y1, y2 = sorted(rng.sample(years, 2))
        if rng.random() < 0.5:
            return (f"What is the change in {quote(lab, rng)} from {y1} to {y2}?",
                    float(val(t, lab, y2) - val(t, lab, y1)))
        return (f"By how much did {quote(lab, rng)} decrease from {y1} to {y2}?",
                float(val(t, lab, y1) - val(t, lab, y2)))
    if op == "sum":
        if rng.random() < 0.5 and len(t["labels"]) >= 2:
            a, b = rng.sample(t["labels"], 2)
            y = rng.choice(years)
            return f"What is the sum of {quote(a, rng)} and {quote(b, rng)} in {y}?", float(val(t, a, y) + val(t, b, y))
        lab = rng.choice(t["labels"])
        ys = sorted(rng.sample(years, min(len(years), rng.randint(2, 3))))
        listed = ", ".join(str(y) for y in ys[:-1]) + f" and {ys[-1]}"
        return f"What is the total of {quote(lab, rng)} across {listed}?", float(sum(val(t, lab, y) for y in ys))
    if op == "ratio":
        if rng.random() < 0.5 and len(t["labels"]) >= 2:
            a, b = rng.sample(t["labels"], 2)
            y = rng.choice(years)
            return f"What is the ratio of {quote(a, rng)} to {quote(b, rng)} in {y}?", val(t, a, y) / val(t, b, y)
        lab = rng.choice(t["labels"])
        y1, y2 = rng.sample(years, 2)
        return f"What is the ratio of {quote(lab, rng)} in {y1} to its value in {y2}?", val(t, lab, y1) / val(t, lab, y2)
    if op == "combined":
        picks = []
        for tt in rng.sample(tables, min(2, len(tables))) if len(tables) >= 2 else [t, t]:
            picks.append(tt)
        labs = []
        parts = []
        total = 0.0
        for tt in picks:
            lab = rng.choice([l for l in tt["labels"] if l not in labs])
            labs.append(lab)
            y1, y2 = sorted(rng.sample(tt["years"], 2))
            parts.append(f"'{lab}' from {y1} to {y2}")
            total += val(tt, lab, y2) - val(tt, lab, y1)
        return f"What is the combined increase in {parts[0]} and {parts[1]} according to the tables?", float(total)
    raise ValueError(op)


def narrative(rng, company, n):
    return f"{company} reported the following results. " + " ".join(rng.sample(FILLER, n))


def make_record(rng, subset, idx, prefix):
    company = COMPANIES[idx % len(COMPANIES)] + " " + rng.choice(["Holdings", "Group", "Industries", "Systems"])
    long = subset.endswith("Long")
    ntables = {"SimpShort": 1, "CompShort": 2, "SimpLong": 2, "CompLong": 3}[subset]
    labels = rng.sample(LABELS, ntables * 3)
    start = rng.randint(2012, 2019)
    years = list(range(start, start + rng.randint(3, 4)))
    scale = rng.choice([40, 400, 4000, 40000])
    tables = [make_table(rng, labels[i * 3:(i + 1) * 3], years, scale) for i in range(ntables)]
    ops = ["lookup", "difference", "sum", "ratio"] + (["combined"] if ntables >= 2 else [])
    question, answer = ask(rng, tables, ops)
    paras = [narrative(rng, company, 3 if long else 1) + f" (Filing reference {prefix}-{idx:04d}.)"]
    for t in tables:
        paras.append(render_table(t, rng))
        if long:
            paras.append(" ".join(rng.sample(FILLER, 4)))
    return {"id": f"{prefix}-{idx:04d}", "paragraphs": paras, "question": question,
            "ground_truth": round(answer, 6), "subset": subset}


SUBSETS = [("SimpShort", 200, "SS"), ("CompShort", 200, "CS"), ("SimpLong", 100, "SL"), ("CompLong", 300, "CL")]

# Correct-answer counts for the formatting fixture of the report: the
# unweighted mean of these subset accuracies is 69.54%.
EVAL_CORRECT = {"SimpShort": 173, "CompShort": 166, "SimpLong": 66, "CompLong": 128}


def buckets(x):
    edges = [0, 1, 10, 100, 1000, 1e6]
    for i, e in enumerate(edges):
        if x < e:
            return i
    return 6


def smoothed(answers):
    counts = [0] * 7
    for a in answers:
        counts[buckets(a)] += 1
    n = len(answers) + 7
    return [(c + 1) / n for c in counts]


def kl(q, p):
    return sum(a * math.log(a / b) for a, b in zip(q, p))


# ---------------------------------------------------------------------------
# Scripted generator output for the optimization loop.

SYN_COMPANIES = ["Ashgrove", "Blackwell", "Cinderby", "Drayton", "Elmsworth", "Foxley", "Greyholm", "Hartfield",
                 "Ivesdale", "Jessop", "Kingsmere", "Larkspur", "Moorcroft", "Nettleby", "Orwell"]


def synthetic_samples(rng):
    samples = []
    plan = ["lookup", "difference", "sum", "ratio", "lookup", "combined", "difference", "sum", "combined", "ratio",
            "difference", "combined", "sum", "lookup", "combined"]
    scales = [4000, 40, 400, 40, 400000, 400, 4000, 40, 400, 4, 40000, 400, 4000, 40, 4000]
    for k in range(1, 16):
        name = SYN_COMPANIES[k - 1]
        ntables = 1 if k <= 4 else 2
        labels = rng.sample(LABELS, ntables * 3)
        years = list(range(2019, 2023 + (k > 8)))
        tables = [make_table(rng, labels[i * 3:(i + 1) * 3], years, scales[k - 1]) for i in range(ntables)]
        op = plan[k - 1]
        if op == "combined" and ntables < 2:
            op = "sum"
        question, answer = ask(rng, tables, [op])
        question = question.replace("What is", f"For {name} Corporation, what is", 1) \
            if question.startswith("What is") else question.replace("By how much did",
                                                                     f"For {name} Corporation, by how much did", 1)
        body = [f"{name} Corporation summarizes its recent financial position as follows:"]
        for i, t in enumerate(tables):
            if i:
                body.append("In a separate table, the company also reports:")
            body.append(render_table(t, rng))
        body.append(rng.choice(FILLER))
        passage = "\n".join(body)
        raw = (f"Generated Paragraphs:\n{passage}\n\nGenerated Question:\n{question}\n\n"
               f"Generated Answer: {fmt(round(answer, 6))}")
        samples.append({"k": k, "company": name, "question": question, "answer": round(answer, 6), "raw": raw})
    return samples


def loop_script(samples, cooperative, real_records):
    rules = []
    for s in samples:
        rules.append({"role": "generator", "contains": [f"(current difficulty level: {s['k']})"], "response": s["raw"]})
    for s in samples:
        rules.append({"role": "solver", "contains": [s["question"], f"[fix:{s['k']}]"],
                      "response": f"Reading the tables carefully, the answer is {fmt(s['answer'])}"})
        rules.append({"role": "solver", "contains": [s["question"]],
                      "response": f"The answer is {fmt(s['answer'] + 1000)}"})
    for r in real_records:
        rules.append({"role": "solver", "contains": [r["question"], f"(Filing reference {r['id']}.)"],
                      "response": f"The answer is {fmt(r['ground_truth'])}"})
    rules.append({"role": "recommender",
                  "response": "ANALYSIS:\nThe prompt let the model read the wrong row or year.\n"
                              "RECOMMENDATIONS:\n1. Tell the model to match row labels exactly\n"
                              "2. Tell the model to confirm the column year before computing"})
    pattern = r"CURRENT PROMPT:\n<<<\n([\s\S]*?)\n>>>"
    for s in samples:
        if cooperative:
            response = "{{1}}\n- [fix:%d] Match row labels exactly and confirm the column year before computing." % s["k"]
        else:
            response = "{{1}}\n- Be careful with the tables."
        rules.append({"role": "reviser", "contains": [f"{s['company']} Corporation"], "pattern": pattern,
                      "response": response})
    return {"rules": rules, "default_response": "I cannot determine the answer."}


def main():
    rng = random.Random(20240613)
    os.makedirs(SAMPLE, exist_ok=True)
    os.makedirs(MOCK, exist_ok=True)
    records = {}
    for subset, n, prefix in SUBSETS:
        records[subset] = [make_record(rng, subset, i + 1, prefix) for i in range(n)]
        with open(os.path.join(SAMPLE, subset.lower() + ".jsonl"), "w") as f:
            for r in records[subset]:
                f.write(json.dumps(r, ensure_ascii=False) + "\n")

    # Report fixture: the solver answers the first EVAL_CORRECT[subset] items of each subset correctly.
    rules = []
    for subset, _, _ in SUBSETS:
        for r in records[subset][:EVAL_CORRECT[subset]]:
            rules.append({"role": "solver", "contains": [f"(Filing reference {r['id']}.)"],
                          "response": f"Therefore, the answer is {fmt(r['ground_truth'])}"})
    with open(os.path.join(MOCK, "evaluate_fixture.json"), "w") as f:
        json.dump({"rules": rules, "default_response": "The passage does not say."}, f, indent=1)

    samples = synthetic_samples(random.Random(7))
    short_answers = [r["ground_truth"] for s in ("SimpShort", "CompShort") for r in records[s]]
    prior = smoothed(short_answers)
    for k in range(1, 16):
        value = kl(smoothed([s["answer"] for s in samples[:k]]), prior)
        assert value <= 1.0, (k, value)

    real_short = records["SimpShort"][:20] + records["CompShort"][:20]
    for name, coop in (("cooperative", True), ("adversarial", False)):
        with open(os.path.join(MOCK, name + ".json"), "w") as f:
            json.dump(loop_script(samples, coop, real_short), f, indent=1)
    with open(os.path.join(MOCK, "samples.json"), "w") as f:
        json.dump([{"k": s["k"], "question": s["question"], "answer": s["answer"]} for s in samples], f, indent=1)


if __name__ == "__main__":
    main()
