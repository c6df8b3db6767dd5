#!/usr/bin/env python3
"""Generate small English-like EUD corpora in CoNLL-U.

Sentences combine a handful of constructions that make enhanced graphs differ
from trees: shared subjects under verb coordination, controlled subjects of
xcomp, coordinated subjects, prepositional obl/nmod with lexical subtypes,
relative clauses (which close a cycle through the antecedent) and gapping with
an empty verb node.
"""

import argparse
import random

NOUNS = ["cat", "dog", "bird", "man", "woman", "child", "teacher", "farmer", "horse",
         "student", "baker", "sailor", "doctor", "robot", "king", "queen"]
OBJECTS = ["fish", "bread", "rice", "apple", "book", "ball", "letter", "song", "milk", "stone"]
PLACES = ["table", "house", "garden", "river", "box", "car", "hill", "boat", "road", "bed"]
ADJS = ["big", "small", "red", "old", "young", "happy", "quiet", "lazy"]
INTRANS = [("sat", "sit"), ("slept", "sleep"), ("ran", "run"), ("laughed", "laugh"),
           ("waited", "wait"), ("danced", "dance")]
TRANS = [("ate", "eat"), ("saw", "see"), ("liked", "like"), ("found", "find"),
         ("took", "take"), ("wrote", "write"), ("sold", "sell")]
CONTROL = [("wanted", "want"), ("tried", "try"), ("hoped", "hope")]
INF = [("eat", "eat"), ("find", "find"), ("take", "take"), ("see", "see")]
PREPS = ["on", "in", "near", "under", "with"]
CONJ = ["and", "or"]


class Sentence:
    def __init__(self):
        self.tokens = []  # [form, lemma, upos, empty]
        self.edges = []   # (head, dep, label) over token positions (1-based), 0 = root

    def add(self, form, lemma, upos, empty=False):
        self.tokens.append([form, lemma, upos, empty])
        return len(self.tokens)

    def edge(self, head, dep, label):
        self.edges.append((head, dep, label))


def noun_phrase(s, rng, pool=NOUNS, allow_adj=True):
    det = s.add("the", "the", "DET")
    adj = None
    if allow_adj and rng.random() < 0.3:
        a = rng.choice(ADJS)
        adj = s.add(a, a, "ADJ")
    n = rng.choice(pool)
    head = s.add(n, n, "NOUN")
    s.edge(head, det, "det")
    if adj:
        s.edge(head, adj, "amod")
    return head


def maybe_nmod(s, rng, head, budget):
    if budget >= 3 and rng.random() < 0.25:
        of = s.add("of", "of", "ADP")
        n = noun_phrase(s, rng, PLACES, allow_adj=False)
        s.edge(n, of, "case")
        s.edge(head, n, "nmod:of")
        return 3
    return 0


def prep_phrase(s, rng, verb):
    p = rng.choice(PREPS)
    case = s.add(p, p, "ADP")
    n = noun_phrase(s, rng, PLACES, allow_adj=False)
    s.edge(n, case, "case")
    s.edge(verb, n, "obl:" + p)


def subject(s, rng, cycles, max_len):
    """Returns the subject head(s) and the relative-clause verb, if any."""
    r = rng.random()
    if r < 0.2 and len(s.tokens) + 7 < max_len:
        first = noun_phrase(s, rng, allow_adj=False)
        c = rng.choice(CONJ)
        cc = s.add(c, c, "CCONJ")
        second = noun_phrase(s, rng, allow_adj=False)
        s.edge(second, cc, "cc")
        s.edge(first, second, "conj:" + c)
        return [first, second], None
    head = noun_phrase(s, rng)
    relcl = None
    if cycles and r > 0.8 and len(s.tokens) + 6 < max_len:
        that = s.add("that", "that", "PRON")
        v, lem = rng.choice(INTRANS)
        relcl = s.add(v, lem, "VERB")
        s.edge(head, relcl, "acl:relcl")
        s.edge(relcl, head, "nsubj")
        s.edge(head, that, "ref")
    return [head], relcl


def clause(s, rng, cycles, max_len):
    subjects, _ = subject(s, rng, cycles, max_len)
    kind = rng.random()
    if kind < 0.2 and len(s.tokens) + 5 < max_len:
        v, lem = rng.choice(CONTROL)
        verb = s.add(v, lem, "VERB")
        to = s.add("to", "to", "PART")
        iv, ilem = rng.choice(INF)
        inf = s.add(iv, ilem, "VERB")
        s.edge(inf, to, "mark")
        s.edge(verb, inf, "xcomp")
        obj = noun_phrase(s, rng, OBJECTS, allow_adj=False)
        s.edge(inf, obj, "obj")
        s.edge(0, verb, "root")
        for subj in subjects:
            s.edge(verb, subj, "nsubj")
            s.edge(inf, subj, "nsubj:xsubj")
        return
    transitive = rng.random() < 0.6
    v, lem = rng.choice(TRANS if transitive else INTRANS)
    verb = s.add(v, lem, "VERB")
    s.edge(0, verb, "root")
    for subj in subjects:
        s.edge(verb, subj, "nsubj")
    obj = None
    if transitive:
        obj = noun_phrase(s, rng, OBJECTS)
        s.edge(verb, obj, "obj")
        maybe_nmod(s, rng, obj, max_len - len(s.tokens))
    tail = rng.random()
    room = max_len - len(s.tokens)
    if tail < 0.3 and room >= 3:
        prep_phrase(s, rng, verb)
    elif tail < 0.55 and room >= 3:
        # verb coordination sharing the subject
        c = rng.choice(CONJ)
        cc = s.add(c, c, "CCONJ")
        v2, lem2 = rng.choice(INTRANS)
        verb2 = s.add(v2, lem2, "VERB")
        s.edge(verb2, cc, "cc")
        s.edge(verb, verb2, "conj:" + c)
        for subj in subjects:
            s.edge(verb2, subj, "nsubj")
    elif tail < 0.7 and transitive and room >= 5 and len(subjects) == 1:
        # gapping: "... and the dog rice" with an elided verb copy
        cc = s.add("and", "and", "CCONJ")
        subj2 = noun_phrase(s, rng, allow_adj=False)
        gap = s.add(v, lem, "VERB", empty=True)
        obj2 = noun_phrase(s, rng, OBJECTS, allow_adj=False)
        s.edge(verb, gap, "conj:and")
        s.edge(gap, cc, "cc")
        s.edge(gap, subj2, "nsubj")
        s.edge(gap, obj2, "obj")


def to_conllu(s, sent_id):
    # empty nodes keep their position in the token sequence; they take the id of the
    # preceding word plus a minor number
    ids = []
    major = 0
    minor = 0
    for form, lemma, upos, empty in s.tokens:
        if empty:
            minor += 1
            ids.append("%d.%d" % (major, minor))
        else:
            major += 1
            minor = 0
            ids.append(str(major))
    incoming = {i: [] for i in range(1, len(s.tokens) + 1)}
    for h, d, l in s.edges:
        incoming[d].append((h, l))

    def key(pos):
        if pos == 0:
            return (0, 0)
        a, _, b = ids[pos - 1].partition(".")
        return (int(a), int(b or 0))

    lines = ["# sent_id = %s" % sent_id,
             "# text = %s" % " ".join(t[0] for t in s.tokens if not t[3])]
    for pos, (form, lemma, upos, empty) in enumerate(s.tokens, start=1):
        deps = sorted(incoming[pos], key=lambda e: (key(e[0]), e[1]))
        deps_str = "|".join("%s:%s" % ("0" if h == 0 else ids[h - 1], l) for h, l in deps)
        if empty:
            head, rel = "_", "_"
        else:
            tree = [(h, l) for h, l in deps if h == 0 or not s.tokens[h - 1][3]]
            tree = [e for e in tree if e[1] not in ("ref", "nsubj:xsubj")] or tree
            if not tree:
                tree = [(0, "dep")]
            h, l = tree[0]
            head, rel = ("0" if h == 0 else ids[h - 1]), l.split(":")[0]
        lines.append("\t".join([ids[pos - 1], form, lemma, upos, "_", "_", head, rel, deps_str, "_"]))
    return "\n".join(lines) + "\n\n"


def has_cycle(s):
    adj = {}
    for h, d, _ in s.edges:
        adj.setdefault(h, []).append(d)
    state = {}

    def dfs(u):
        state[u] = 1
        for v in adj.get(u, []):
            if state.get(v) == 1 or (v not in state and dfs(v)):
                return True
        state[u] = 2
        return False

    return dfs(0)


def generate(rng, count, cycles, max_len, prefix):
    """Returns `count` distinct sentences as CoNLL-U blocks."""
    out = []
    seen = set()
    while len(out) < count:
        s = Sentence()
        clause(s, rng, cycles, max_len)
        words = sum(1 for t in s.tokens if not t[3])
        if len(s.tokens) > max_len or words < 3:
            continue
        if not cycles and has_cycle(s):
            continue
        text = " ".join(t[0] for t in s.tokens)
        if text in seen:
            continue
        seen.add(text)
        out.append(to_conllu(s, "%s-%d" % (prefix, len(out) + 1)))
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--split", required=True,
                    help="comma-separated sentence counts, one per output file")
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--max-len", type=int, default=15)
    ap.add_argument("--cycles", action="store_true", help="allow relative-clause cycles")
    ap.add_argument("--prefix", default="toy")
    ap.add_argument("--out", required=True, help="comma-separated output paths")
    args = ap.parse_args()
    counts = [int(c) for c in args.split.split(",")]
    paths = args.out.split(",")
    if len(counts) != len(paths):
        ap.error("--split and --out need the same number of entries")
    rng = random.Random(args.seed)
    blocks = generate(rng, sum(counts), args.cycles, args.max_len, args.prefix)
    start = 0
    for count, path in zip(counts, paths):
        with open(path, "w", newline="\n") as f:
            f.write("".join(blocks[start:start + count]))
        start += count


if __name__ == "__main__":
    main()
