#!/usr/bin/env python3
"""Regenerates the synthetic fixture corpus and everything derived from it.

The corpus mimics spoken-corpus transcription conventions (split clitics,
anonymised names, unclear-word placeholders). Each tagged segment sits inside
filler long enough that a 20-token window around any marker holds exactly one
segment. Instances, expected predictions and expected evaluation counts are
computed here independently of the C++ code and frozen into the files below.

Usage: python3 data/make_fixtures.py   (writes into data/)
"""

import json
import random
import re
from collections import Counter
from pathlib import Path

HERE = Path(__file__).resolve().parent
WIDTH = 20
LEFT = 9
SOURCE_ID = "fixture"
RUN_ID = "e2e"
TAG_RE = re.compile(r"^<(/?)([A-Z_]+)>$")
SCHEME_TAGS = ["APOLOGISING", "REASON", "APOLOGISER", "APOLOGISEE", "INTENSIFIER"]

ACT_SEGMENTS = [
    "oh <APOLOGISING> sorry </APOLOGISING> <REASON> I 'm late </REASON> the bus was n't there",
    "<APOLOGISER> I </APOLOGISER> 'm <INTENSIFIER> so </INTENSIFIER> <APOLOGISING> sorry </APOLOGISING> <REASON> I forgot your birthday </REASON>",
    "<APOLOGISING> sorry </APOLOGISING> <APOLOGISEE> mate </APOLOGISEE> <REASON> I did n't see you there </REASON>",
    "erm <APOLOGISING> sorry </APOLOGISING> <REASON> about the noise </REASON> last night",
    "<APOLOGISER> we </APOLOGISER> 're <INTENSIFIER> really </INTENSIFIER> <APOLOGISING> sorry </APOLOGISING> <REASON> for the delay </REASON>",
    "<APOLOGISING> sorry </APOLOGISING> <APOLOGISING> sorry </APOLOGISING> <REASON> I interrupted you </REASON> go on",
    "oh <APOLOGISING> sorry </APOLOGISING> <APOLOGISEE> --ANONnameF </APOLOGISEE> <REASON> I 've got your pen </REASON>",
    "<APOLOGISER> I </APOLOGISER> 'm <APOLOGISING> sorry </APOLOGISING> <REASON> that I shouted </REASON>",
    "<APOLOGISING> sorry </APOLOGISING> <REASON> to keep you waiting </REASON> --ANONnameM",
    "<APOLOGISER> I </APOLOGISER> 'm <INTENSIFIER> terribly </INTENSIFIER> <APOLOGISING> sorry </APOLOGISING> <APOLOGISEE> love </APOLOGISEE>",
    "yeah <APOLOGISING> sorry </APOLOGISING> <REASON> my phone died </REASON>",
    "<APOLOGISING> sorry </APOLOGISING> <REASON> I was n't listening </REASON> what did you say ?",
    "<APOLOGISING> sorry </APOLOGISING> <REASON> I 'm late </REASON> and <APOLOGISING> sorry </APOLOGISING> <REASON> about the mess </REASON>",
    "<APOLOGISER> I </APOLOGISER> 'm <INTENSIFIER> very </INTENSIFIER> <APOLOGISING> sorry </APOLOGISING> <REASON> it took so long </REASON>",
    "oh <APOLOGISING> sorry </APOLOGISING> <APOLOGISEE> darling </APOLOGISEE> <REASON> did I wake you </REASON> ?",
    "<APOLOGISING> sorry </APOLOGISING> <APOLOGISEE> mum </APOLOGISEE> <REASON> I broke the cup </REASON>",
    "<APOLOGISER> I </APOLOGISER> am <APOLOGISING> sorry </APOLOGISING> <REASON> if that upset you </REASON>",
    "<APOLOGISING> sorry </APOLOGISING> <REASON> that was my fault </REASON>",
    "um <APOLOGISING> sorry </APOLOGISING> <REASON> I 've eaten all the biscuits </REASON>",
    "<APOLOGISER> I </APOLOGISER> 'm <INTENSIFIER> awfully </INTENSIFIER> <APOLOGISING> sorry </APOLOGISING> <REASON> we ca n't come </REASON>",
    "<APOLOGISING> sorry </APOLOGISING> <APOLOGISEE> guys </APOLOGISEE> <REASON> I 'm just so tired </REASON>",
    "ah <APOLOGISING> sorry </APOLOGISING> <REASON> wrong button </REASON>",
    "<APOLOGISER> I </APOLOGISER> 'm <INTENSIFIER> really really </INTENSIFIER> <APOLOGISING> sorry </APOLOGISING>",
    "<APOLOGISING> sorry </APOLOGISING> <REASON> I stepped on your foot </REASON>",
    "<APOLOGISING> sorry </APOLOGISING> <APOLOGISEE> --ANONnameM </APOLOGISEE> <REASON> I forgot to ring you back </REASON>",
    "<APOLOGISER> I </APOLOGISER> 'm <APOLOGISING> sorry </APOLOGISING> <REASON> the flat 's such a mess </REASON>",
    "oh <APOLOGISING> sorry </APOLOGISING> <REASON> did n't mean to make you jump </REASON>",
    "<APOLOGISER> I </APOLOGISER> 'm <INTENSIFIER> so so </INTENSIFIER> <APOLOGISING> sorry </APOLOGISING> <REASON> about your car </REASON>",
    "<APOLOGISING> sorry </APOLOGISING> <REASON> I 'm rambling </REASON>",
    "<APOLOGISING> sorry </APOLOGISING> <APOLOGISING> sorry </APOLOGISING> <APOLOGISING> sorry </APOLOGISING> <REASON> my mistake </REASON>",
    "<APOLOGISER> I </APOLOGISER> 'm <APOLOGISING> sorry </APOLOGISING> <APOLOGISEE> --ANONnameF </APOLOGISEE> <REASON> I lost your book </REASON>",
    "yeah <APOLOGISING> sorry </APOLOGISING> <REASON> about earlier </REASON>",
    "<APOLOGISING> sorry </APOLOGISING> <REASON> I 'm eating </REASON> hang on",
    "<APOLOGISER> we </APOLOGISER> 're <INTENSIFIER> so </INTENSIFIER> <APOLOGISING> sorry </APOLOGISING> <APOLOGISEE> --ANONnameM </APOLOGISEE>",
    "<APOLOGISING> sorry </APOLOGISING> <REASON> that 's rude of me </REASON>",
    "<APOLOGISER> I </APOLOGISER> 'm <APOLOGISING> sorry </APOLOGISING> <REASON> I did n't text </REASON>",
    "oh <APOLOGISING> sorry </APOLOGISING> <REASON> is this your seat </REASON> ?",
    "<APOLOGISING> sorry </APOLOGISING> <APOLOGISEE> sweetheart </APOLOGISEE> <REASON> I got distracted </REASON>",
    "<APOLOGISER> I </APOLOGISER> 'm <INTENSIFIER> truly </INTENSIFIER> <APOLOGISING> sorry </APOLOGISING> <REASON> for what I said </REASON>",
    "<APOLOGISING> sorry </APOLOGISING> <APOLOGISING> sorry </APOLOGISING> <APOLOGISEE> --ANONnameF </APOLOGISEE>",
    "<APOLOGISING> sorry </APOLOGISING> <REASON> I spilt the tea </REASON>",
    "<APOLOGISER> I </APOLOGISER> 'm <APOLOGISING> sorry </APOLOGISING> <REASON> it 's so cold in here </REASON>",
    "erm <APOLOGISING> sorry </APOLOGISING> <REASON> I 've lost my train of thought </REASON>",
]

NO_ACT_SEGMENTS = [
    "I 'm sorry to hear that",
    "I felt sorry for him",
    "she feels sorry for herself",
    "you 'll be sorry when it rains",
    "I 'm so sorry for your loss",
    "do n't feel sorry for them",
    "what a sorry state of affairs",
    "it 's a sorry sight",
    "I was sorry to see him go",
    "better safe than sorry",
    "we felt really sorry for the dog",
    "sorry to hear about your nan",
    "the poor thing looked sorry for itself",
]

FILLER = (
    "yeah erm er mm okay right so and the I you it 's was like --UNCLEARWORD --ANONnameM --ANONnameF "
    "know mean well but that just really ? oh no yes what we they go think do n't got there then time bit "
    "anyway actually mind wait here"
).split()

CLITICS = ("'m", "'s", "'re", "'ve", "'ll", "'d", "n't")


def parse_segment(text):
    """Tagged segment -> (tokens, spans) with spans as (tag, start, end)."""
    tokens, spans, open_tag = [], [], None
    for part in text.split():
        m = TAG_RE.match(part)
        if not m:
            tokens.append(part)
            continue
        closing, tag = m.group(1) == "/", m.group(2)
        if closing:
            assert open_tag and open_tag[0] == tag, text
            spans.append((tag, open_tag[1], len(tokens)))
            open_tag = None
        else:
            assert open_tag is None, text
            open_tag = (tag, len(tokens))
    assert open_tag is None, text
    return tokens, spans


def is_marker(token):
    return token.strip("!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~").lower() == "sorry"


def build_corpus():
    rng = random.Random(20230411)
    segments = [(s, True) for s in ACT_SEGMENTS] + [(s, False) for s in NO_ACT_SEGMENTS]
    rng.shuffle(segments)
    tokens, placed = [], []

    def filler(n):
        return [rng.choice(FILLER) for _ in range(n)]

    tokens += filler(25)
    for text, act in segments:
        seg_tokens, spans = parse_segment(text)
        placed.append({"offset": len(tokens), "tokens": seg_tokens, "spans": spans, "act": act})
        tokens += seg_tokens
        tokens += filler(rng.randint(22, 30))
    assert not any(is_marker(t) for t in FILLER)
    return tokens, placed


def windows(tokens):
    """Independent re-statement of the window rule: up to LEFT tokens of left
    context, fill right to WIDTH, clip at the end and back-fill leftwards."""
    n = len(tokens)
    out, seen = [], set()
    for node, tok in enumerate(tokens):
        if not is_marker(tok):
            continue
        start = max(0, node - LEFT)
        end = min(n, start + WIDTH)
        start = max(0, end - WIDTH)
        if (start, end) in seen:
            continue
        seen.add((start, end))
        out.append((start, end))
    return out


def gold_for(window, placed, tokens):
    start, end = window
    inside = [p for p in placed if p["offset"] < end and p["offset"] + len(p["tokens"]) > start]
    holders = [p for p in inside if any(is_marker(t) for t in p["tokens"])]
    assert len(holders) == 1, window
    seg = holders[0]
    assert seg["offset"] >= start and seg["offset"] + len(seg["tokens"]) <= end, "segment clipped"
    shift = seg["offset"] - start
    spans = [(tag, s + shift, e + shift) for tag, s, e in seg["spans"]]
    return seg["act"], spans


def render(tokens, spans):
    parts = []
    for i, tok in enumerate(tokens):
        parts += [f"<{t}>" for t, s, _ in spans if s == i]
        parts.append(tok)
        parts += [f"</{t}>" for t, _, e in spans if e == i + 1]
    return " ".join(parts)


def render_chat(tokens, spans):
    """Chat-style rendering: tags hug their words and clitics are re-attached
    where no tag boundary intervenes."""
    starts = {s for _, s, _ in spans}
    ends = {e for _, _, e in spans}
    words = []
    for i, tok in enumerate(tokens):
        opening = "".join(f"<{t}>" for t, s, _ in spans if s == i)
        closing = "".join(f"</{t}>" for t, _, e in spans if e == i + 1)
        piece = opening + tok + closing
        fuse = (
            words
            and tok in CLITICS
            and i not in starts
            and i not in ends
            and not words[-1].endswith(">")
        )
        if fuse:
            words[-1] += piece
        else:
            words.append(piece)
    return " ".join(words)


# ---------------------------------------------------------------------------
# predictions

def perturb(kind, tokens, spans, markers):
    spans = list(spans)
    tags = [t for t, _, _ in spans]
    if kind == "act_as_noact":
        return False, []
    if kind == "noact_as_act":
        m = markers[0]
        out = [("APOLOGISING", m, m + 1)]
        if m > 0 and tokens[m - 2:m] == ["I", "'m"]:
            out.insert(0, ("APOLOGISER", m - 2, m - 1))
        return True, out
    if kind == "miss_reason":
        i = tags.index("REASON")
        return True, spans[:i] + spans[i + 1:]
    if kind == "reason_boundary":
        i = next(k for k, (t, s, e) in enumerate(spans) if t == "REASON" and e - s >= 2)
        t, s, e = spans[i]
        spans[i] = (t, s, e - 1)
        return True, spans
    if kind == "spurious_apologiser":
        covered = {k for _, s, e in spans for k in range(s, e)}
        lo = min(s for _, s, _ in spans)
        hi = max(e for _, _, e in spans)
        # an untagged token away from the act, preferring a pronoun
        candidates = [k for k in range(len(tokens)) if k not in covered and not is_marker(tokens[k])
                      and (k < lo - 1 or k > hi)]
        pick = next((k for k in candidates if tokens[k] in ("I", "we", "you")), candidates[0])
        return True, sorted(spans + [("APOLOGISER", pick, pick + 1)], key=lambda x: (x[1], x[2]))
    if kind == "miss_apologisee":
        i = tags.index("APOLOGISEE")
        return True, spans[:i] + spans[i + 1:]
    if kind == "miss_intensifier":
        i = tags.index("INTENSIFIER")
        return True, spans[:i] + spans[i + 1:]
    if kind == "wrong_label":
        i = tags.index("APOLOGISEE")
        t, s, e = spans[i]
        spans[i] = ("APOLOGISER", s, e)
        return True, spans
    if kind == "marker_as_apologisee":
        ifids = [k for k, (t, _, _) in enumerate(spans) if t == "APOLOGISING"]
        t, s, e = spans[ifids[-1]]
        spans[ifids[-1]] = ("APOLOGISEE", s, e)
        return True, spans
    raise ValueError(kind)


def eligible(kind, act, spans):
    tags = [t for t, _, _ in spans]
    if kind == "noact_as_act":
        return not act
    if not act:
        return False
    return {
        "act_as_noact": True,
        "miss_reason": "REASON" in tags,
        "reason_boundary": any(t == "REASON" and e - s >= 2 for t, s, e in spans),
        "spurious_apologiser": True,
        "miss_apologisee": "APOLOGISEE" in tags,
        "miss_intensifier": "INTENSIFIER" in tags,
        "wrong_label": "APOLOGISEE" in tags,
        "marker_as_apologisee": tags.count("APOLOGISING") >= 2,
    }[kind]


PLAN = [
    ("noact_as_act", 2),
    ("act_as_noact", 2),
    ("miss_reason", 3),
    ("reason_boundary", 2),
    ("spurious_apologiser", 2),
    ("miss_apologisee", 1),
    ("miss_intensifier", 1),
    ("wrong_label", 1),
    ("marker_as_apologisee", 1),
]


def assign_perturbations(instances):
    assigned = {}
    for kind, count in PLAN:
        pool = [i for i, inst in enumerate(instances)
                if i not in assigned and eligible(kind, inst["act"], inst["spans"])]
        step = max(1, len(pool) // count)
        picks = pool[::step][:count]
        assert len(picks) == count, kind
        for i in picks:
            assigned[i] = kind
    return assigned


def response_text(index, tokens, act, spans):
    utterance = " ".join(tokens)
    if not act:
        if index % 2:
            return f'I have analysed the utterance.\n\nNo speech act of apology is present in the utterance "{utterance}".'
        return f'No speech act of apology is present in the utterance "{utterance}".'
    style = index % 4
    if style == 0:
        return "The annotated version is: " + render(tokens, spans)
    if style == 1:
        return ("Sure, I can do that. Here is the annotated version:\n\n\"" + render_chat(tokens, spans)
                + "\"\n\nI hope this helps.")
    if style == 2:
        return f"You gave me the utterance: {utterance}\nthe annotated version is: " + render(tokens, spans)
    draft = render(tokens, [(t, s, e) for t, s, e in spans if t == "APOLOGISING"])
    return ("The annotated version is: " + draft + "\n\nWait, I missed some elements. "
            "The annotated version is: " + render(tokens, spans))


# ---------------------------------------------------------------------------
# evaluation oracle (exact span match)

def score(pairs):
    per_tag = {t: Counter() for t in SCHEME_TAGS}
    no_act = Counter()
    correct = 0
    kinds = Counter()
    for g_act, g_spans, p_act, p_spans in pairs:
        gs, ps = set(g_spans), set(p_spans)
        ok = g_act == p_act and gs == ps
        correct += ok
        if not g_act and not p_act:
            no_act["tp"] += 1
        elif not g_act:
            no_act["fn"] += 1
        elif not p_act:
            no_act["fp"] += 1
        if g_act != p_act:
            kinds["ACT_DISAGREEMENT"] += 1
        if g_act:
            for t in SCHEME_TAGS:
                g = {x for x in gs if x[0] == t}
                p = {x for x in ps if x[0] == t} if p_act else set()
                per_tag[t]["tp"] += len(g & p)
                per_tag[t]["fp"] += len(p - g)
                per_tag[t]["fn"] += len(g - p)
        if g_act == p_act and g_act:
            overlaps = lambda a, b: a[1] < b[2] and b[1] < a[2]
            for p in ps - gs:
                hits = [g for g in gs - ps if overlaps(p, g)]
                same = any(g[0] == p[0] for g in hits)
                other = any(g[0] != p[0] for g in hits)
                if same:
                    kinds["BOUNDARY"] += 1
                if other:
                    kinds["WRONG_LABEL"] += 1
                if not hits:
                    kinds["SPURIOUS"] += 1
            for g in gs - ps:
                if not any(overlaps(p, g) for p in ps - gs):
                    kinds["MISSED"] += 1
    return per_tag, no_act, correct, kinds


def dump_jsonl(path, records):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(json.dumps(r, ensure_ascii=False, separators=(",", ":")) + "\n")


def annotation(iid, act, spans, provenance):
    return {"instance_id": iid, "act_present": act,
            "spans": [{"tag": t, "start": s, "end": e} for t, s, e in spans], "provenance": provenance}


def main():
    tokens, placed = build_corpus()
    corpus_path = HERE / "corpus" / f"{SOURCE_ID}.txt"
    corpus_path.parent.mkdir(parents=True, exist_ok=True)
    # several tokens per line, like a transcript
    lines = [" ".join(tokens[i:i + 12]) for i in range(0, len(tokens), 12)]
    corpus_path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    instances = []
    for start, end in windows(tokens):
        win = tokens[start:end]
        act, spans = gold_for((start, end), placed, tokens)
        instances.append({
            "id": f"{SOURCE_ID}:{start}", "tokens": win,
            "markers": [i for i, t in enumerate(win) if is_marker(t)],
            "act": act, "spans": spans, "start": start, "end": end,
        })

    dump_jsonl(HERE / "instances" / f"{SOURCE_ID}.jsonl", [
        {"id": i["id"], "tokens": i["tokens"], "marker_positions": i["markers"],
         "source_span": {"source_id": SOURCE_ID, "start": i["start"], "end": i["end"]}}
        for i in instances])
    dump_jsonl(HERE / "gold" / f"{SOURCE_ID}.jsonl",
               [annotation(i["id"], i["act"], i["spans"], "gold") for i in instances])

    plan = assign_perturbations(instances)
    responses, predictions, pairs = [], [], []
    for k, inst in enumerate(instances):
        act, spans = inst["act"], inst["spans"]
        if k in plan:
            act, spans = perturb(plan[k], inst["tokens"], spans, inst["markers"])
        responses.append({"instance_id": inst["id"], "response_text": response_text(k, inst["tokens"], act, spans)})
        predictions.append(annotation(inst["id"], act, spans, f"llm-run:{RUN_ID}"))
        pairs.append((inst["act"], inst["spans"], act, spans))
    dump_jsonl(HERE / "replay" / f"{SOURCE_ID}.jsonl", responses)
    dump_jsonl(HERE / "expected" / f"{SOURCE_ID}_predictions.jsonl", predictions)

    per_tag, no_act, correct, kinds = score(pairs)
    expected = {
        "n_instances": len(instances),
        "n_correct": correct,
        "rows": [{"category": "NO_APOLOGY", **{k: no_act[k] for k in ("tp", "fp", "fn")}}]
        + [{"category": t, **{k: per_tag[t][k] for k in ("tp", "fp", "fn")}} for t in SCHEME_TAGS],
        "error_kinds": dict(sorted(kinds.items())),
        "perturbations": dict(sorted(Counter(plan.values()).items())),
        "occurrences": sum(1 for t in tokens if is_marker(t)),
    }
    (HERE / "expected" / f"{SOURCE_ID}_eval.json").write_text(json.dumps(expected, indent=2) + "\n")

    # Small run for the review service: one refusal, two parse failures and
    # one instance missing from the replay fixture.
    review = instances[:8]
    dump_jsonl(HERE / "review" / "instances.jsonl", [
        {"id": i["id"], "tokens": i["tokens"], "marker_positions": i["markers"],
         "source_span": {"source_id": SOURCE_ID, "start": i["start"], "end": i["end"]}} for i in review])
    special = {
        1: "I'm sorry, but I am unable to help with annotating this utterance.",
        2: "The annotated version is: <APOLOGISING> " + review[2]["tokens"][review[2]["markers"][0]]
           + " </APOLOGISER> " + " ".join(review[2]["tokens"]),
        3: "The annotated version is: " + render(review[3]["tokens"][:8], [])
           + " <APOLOGISING> " + review[3]["tokens"][review[3]["markers"][0]] + " </APOLOGISING>",
    }
    review_responses = []
    for k, inst in enumerate(review):
        if k == 4:
            continue  # missing: the backend reports an error
        text = special.get(k) or response_text(0, inst["tokens"], inst["act"], inst["spans"])
        review_responses.append({"instance_id": inst["id"], "response_text": text})
    dump_jsonl(HERE / "replay" / "review.jsonl", review_responses)

    print(f"{len(tokens)} tokens, {expected['occurrences']} marker occurrences, {len(instances)} instances")


if __name__ == "__main__":
    main()
