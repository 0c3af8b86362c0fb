#!/usr/bin/env python3
"""Generate the synthetic demo corpus under data/demo/.

Writes talks.jsonl, trees.conllu, vectors.txt (50-dim) and lexicon.txt.
Output is fully determined by SEED.
"""
import json
import math
import os
import random

SEED = 20180601
DIM = 50
N_TALKS = 20
SENTENCES_PER_TALK = 72

CATEGORIES = [
    "Beautiful", "Confusing", "Courageous", "Fascinating", "Funny",
    "Informative", "Ingenious", "Inspiring", "Jaw-Dropping", "Long-winded",
    "Obnoxious", "OK", "Persuasive", "Unconvincing",
]
CUE_ADJECTIVES = [
    ["beautiful", "lovely"], ["confusing", "unclear"], ["brave", "bold"],
    ["fascinating", "curious"], ["funny", "silly"], ["useful", "factual"],
    ["clever", "ingenious"], ["inspiring", "hopeful"], ["astonishing", "stunning"],
    ["endless", "tedious"], ["rude", "arrogant"], ["fine", "decent"],
    ["convincing", "compelling"], ["doubtful", "weak"],
]
NEUTRAL_ADJECTIVES = ["new", "old", "small", "large", "simple", "strange", "early", "local"]
NOUNS = [
    "idea", "world", "city", "child", "teacher", "machine", "ocean", "story",
    "brain", "planet", "question", "answer", "school", "village", "river", "cell",
    "map", "robot", "garden", "language", "problem", "future", "market", "doctor",
    "engine", "forest", "number", "signal", "friend", "community",
]
VERBS = [
    "built", "found", "changed", "studied", "shared", "imagined", "measured",
    "explored", "tested", "designed", "saw", "heard", "made", "learned", "taught",
    "followed", "solved", "opened", "watched", "wrote",
]
INTRANSITIVE = ["grew", "failed", "worked", "mattered", "vanished", "spread", "moved", "waited"]
ADVERBS = ["quickly", "slowly", "again", "together", "everywhere", "quietly", "today", "suddenly"]
PRONOUNS = ["we", "you", "they", "i"]
DETERMINERS = ["the", "a", "this", "every", "our"]
PREPOSITIONS = ["with", "about", "for", "in", "from"]
# Present in transcripts but absent from the vector file.
OOV = ["zorblat", "quintessa", "marlowe"]
BANNED_KEYWORD = "music"


def adjective(rng, weights):
    if rng.random() < 0.45:
        return rng.choice(NEUTRAL_ADJECTIVES)
    k = rng.choices(range(len(CATEGORIES)), weights=weights)[0]
    return rng.choice(CUE_ADJECTIVES[k])


def noun(rng):
    return rng.choice(OOV) if rng.random() < 0.02 else rng.choice(NOUNS)


def sentence(rng, weights):
    """Returns rows (form, upos, head, deprel) with 1-based heads."""
    end = rng.choice([".", ".", ".", "!", "?"])
    t = rng.randrange(3)
    if t == 0:
        # PRON VERB DET ADJ NOUN PUNCT
        return [
            (rng.choice(PRONOUNS), "PRON", 2, "nsubj"),
            (rng.choice(VERBS), "VERB", 0, "root"),
            (rng.choice(DETERMINERS), "DET", 5, "det"),
            (adjective(rng, weights), "ADJ", 5, "amod"),
            (noun(rng), "NOUN", 2, "obj"),
            (end, "PUNCT", 2, "punct"),
        ]
    if t == 1:
        # DET ADJ NOUN VERB ADV PUNCT
        return [
            (rng.choice(DETERMINERS), "DET", 3, "det"),
            (adjective(rng, weights), "ADJ", 3, "amod"),
            (noun(rng), "NOUN", 4, "nsubj"),
            (rng.choice(INTRANSITIVE), "VERB", 0, "root"),
            (rng.choice(ADVERBS), "ADV", 4, "advmod"),
            (end, "PUNCT", 4, "punct"),
        ]
    # PRON VERB DET NOUN ADP DET ADJ NOUN PUNCT
    return [
        (rng.choice(PRONOUNS), "PRON", 2, "nsubj"),
        (rng.choice(VERBS), "VERB", 0, "root"),
        (rng.choice(DETERMINERS), "DET", 4, "det"),
        (noun(rng), "NOUN", 2, "obj"),
        (rng.choice(PREPOSITIONS), "ADP", 8, "case"),
        (rng.choice(DETERMINERS), "DET", 8, "det"),
        (adjective(rng, weights), "ADJ", 8, "amod"),
        (noun(rng), "NOUN", 2, "obl"),
        (end, "PUNCT", 2, "punct"),
    ]


def capitalize_first(words):
    return [words[0][:1].upper() + words[0][1:]] + words[1:]


def render(rows):
    words = capitalize_first([r[0] for r in rows])
    text = " ".join(words[:-1])
    return text + words[-1]


def make_talk(rng, idx, n_sentences, age_days, keywords):
    weights = [rng.gammavariate(0.6, 1.0) for _ in CATEGORIES]
    sentences = [sentence(rng, weights) for _ in range(n_sentences)]
    total = sum(weights)
    share = [0.3 / len(CATEGORIES) + 0.7 * w / total for w in weights]
    views = math.exp(rng.gauss(13.5, 0.9))
    ratings = {}
    for c, f in zip(CATEGORIES, share):
        noise = 1.0 + rng.uniform(-0.1, 0.1)
        ratings[c] = max(1, int(round(f * views / 250.0 * noise)))
    record = {
        "id": f"demo-{idx:02d}",
        "title": f"Demo talk {idx}",
        "transcript": " ".join(render(s) for s in sentences),
        "ratings": ratings,
        "views": int(views),
        "age_days": age_days,
        "keywords": keywords,
    }
    return record, sentences


def conllu_block(talk_id, sent_id, rows):
    lines = [f"# talk_id = {talk_id}", f"# sent_id = {sent_id}"]
    for i, (form, upos, head, rel) in enumerate(rows, start=1):
        lines.append("\t".join([str(i), form, form.lower(), upos, "_", "_", str(head), rel, "_", "_"]))
    return "\n".join(lines) + "\n"


def main():
    rng = random.Random(SEED)
    root = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "data", "demo")
    os.makedirs(root, exist_ok=True)

    talks, trees = [], []
    topics = ["science", "technology", "education", "design", "health", "cities"]
    for i in range(N_TALKS):
        age = rng.randrange(200, 4000)
        rec, sents = make_talk(rng, i, SENTENCES_PER_TALK, age, rng.sample(topics, 2))
        talks.append(rec)
        trees.extend(conllu_block(rec["id"], j, s) for j, s in enumerate(sents))
    # Two records the default filter drops: a performance talk and a short one.
    rec, sents = make_talk(rng, N_TALKS, SENTENCES_PER_TALK, 900, ["culture", BANNED_KEYWORD])
    talks.append(rec)
    trees.extend(conllu_block(rec["id"], j, s) for j, s in enumerate(sents))
    rec, sents = make_talk(rng, N_TALKS + 1, 12, 900, ["science"])
    talks.append(rec)
    trees.extend(conllu_block(rec["id"], j, s) for j, s in enumerate(sents))

    with open(os.path.join(root, "talks.jsonl"), "w") as f:
        for rec in talks:
            f.write(json.dumps(rec, sort_keys=True) + "\n")
    with open(os.path.join(root, "trees.conllu"), "w") as f:
        f.write("\n".join(trees))

    vocab = sorted(
        set(NEUTRAL_ADJECTIVES + NOUNS + VERBS + INTRANSITIVE + ADVERBS + PRONOUNS
            + DETERMINERS + PREPOSITIONS + [a for pair in CUE_ADJECTIVES for a in pair]
            + [".", "!", "?"])
    )
    directions = [[rng.gauss(0, 1) for _ in range(DIM)] for _ in CATEGORIES]
    cue = {a: k for k, pair in enumerate(CUE_ADJECTIVES) for a in pair}
    with open(os.path.join(root, "vectors.txt"), "w") as f:
        for w in vocab:
            v = [rng.gauss(0, 0.3) for _ in range(DIM)]
            if w in cue:
                v = [a + b for a, b in zip(v, directions[cue[w]])]
            f.write(w + " " + " ".join(f"{x:.5f}" for x in v) + "\n")

    lexicon = {
        "posemo": "beautiful lovely inspiring hopeful fine decent funny convincing compel*",
        "negemo": "confusing unclear rude arrogant tedious weak doubtful fail*",
        "social": "we you they friend* community teacher* child*",
        "cogmech": "think* know* imagin* question* answer* solv*",
        "percept": "saw heard watch* signal*",
        "achieve": "built made solved design* learn*",
        "space": "in from everywhere world planet ocean",
        "time": "today again suddenly slowly quickly future early old",
        "pronoun": "i we you they",
        "article": "the a",
    }
    with open(os.path.join(root, "lexicon.txt"), "w") as f:
        f.write("# Small open lexicon for the demo corpus.\n")
        for name, pats in lexicon.items():
            f.write(f"{name}: {pats}\n")


if __name__ == "__main__":
    main()
