"""Scripted reference for corpus BLEU-4 as used by embedpipe.

Uniform weights over n = 1..4, single reference, clipped n-gram counts,
add-one smoothing of numerator and denominator for n >= 2 only, brevity
penalty exp(1 - r/c) when c < r. A corpus with c == 0 scores 0.

Writes tests/data/bleu_cases.json: 100 random mini-corpora plus the
expected scores. Run from the repository root.
"""
import json
import math
import random
from collections import Counter


def ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(hyps, refs):
    assert len(hyps) == len(refs)
    match = [0] * 4
    total = [0] * 4
    c = sum(len(h) for h in hyps)
    r = sum(len(x) for x in refs)
    for h, ref in zip(hyps, refs):
        for n in range(1, 5):
            hc, rc = ngrams(h, n), ngrams(ref, n)
            match[n - 1] += sum(min(cnt, rc[g]) for g, cnt in hc.items())
            total[n - 1] += max(len(h) - n + 1, 0)
    prec = []
    for n in range(4):
        if n == 0:
            prec.append(match[0] / total[0] if total[0] else 0.0)
        else:
            prec.append((match[n] + 1) / (total[n] + 1))
    if c == 0:
        return {"bleu": 0.0, "bp": 0.0, "precisions": prec}
    bp = 1.0 if c >= r else math.exp(1 - r / c)
    if min(prec) == 0.0:
        return {"bleu": 0.0, "bp": bp, "precisions": prec}
    score = 100.0 * bp * math.exp(sum(math.log(p) for p in prec) / 4)
    return {"bleu": score, "bp": bp, "precisions": prec}


def mutate(rng, ref, vocab):
    h = list(ref)
    for _ in range(rng.randint(0, 4)):
        op = rng.random()
        if op < 0.3 and h:
            h[rng.randrange(len(h))] = rng.choice(vocab)
        elif op < 0.55 and h:
            del h[rng.randrange(len(h))]
        elif op < 0.8:
            h.insert(rng.randint(0, len(h)), rng.choice(vocab))
        elif len(h) > 1:
            i = rng.randrange(len(h) - 1)
            h[i], h[i + 1] = h[i + 1], h[i]
    return h


def main():
    rng = random.Random(20240611)
    cases = []
    for k in range(100):
        vocab = ["w%d" % i for i in range(rng.randint(3, 12))]
        pairs = rng.randint(1, 6)
        refs, hyps = [], []
        for _ in range(pairs):
            ref = [rng.choice(vocab) for _ in range(rng.randint(1, 14))]
            hyp = mutate(rng, ref, vocab) if rng.random() < 0.8 else [rng.choice(vocab) for _ in range(rng.randint(0, 14))]
            refs.append(ref)
            hyps.append(hyp)
        out = bleu(hyps, refs)
        cases.append({"hyps": hyps, "refs": refs, **out})
    fixed = {
        "hyps": [["a", "b", "c", "d"], ["a", "x", "c"], ["e", "f", "g", "h", "i"]],
        "refs": [["a", "b", "c", "d", "e"], ["a", "b", "c"], ["e", "f", "g", "h", "i"]],
    }
    fixed.update(bleu(fixed["hyps"], fixed["refs"]))
    with open("tests/data/bleu_cases.json", "w") as f:
        json.dump({"fixed": fixed, "random": cases}, f, indent=1)
        f.write("\n")


if __name__ == "__main__":
    main()
