"""Independent reference implementations used by the test-suite."""

from fractions import Fraction


def brute_force_metrics(groups):
    """Pairwise-count ranking with exact rational averages.

    ``groups`` is a list of ``(tail_ids, scores, labels)`` lists. A
    candidate's rank is one plus the number of rivals that beat it: a higher
    score, or an equal score with a smaller tail id.
    """
    firsts = []
    top5 = top10 = 0
    for tails, scores, labels in groups:
        ranks = []
        for i in range(len(tails)):
            beaten_by = sum(1 for j in range(len(tails))
                            if scores[j] > scores[i] or (scores[j] == scores[i] and tails[j] < tails[i]))
            ranks.append(beaten_by + 1)
        positive_ranks = [r for r, y in zip(ranks, labels) if y == 1]
        if not positive_ranks:
            continue
        firsts.append(min(positive_ranks))
        top5 += sum(1 for r in positive_ranks if r <= 5)
        top10 += sum(1 for r in positive_ranks if r <= 10)
    n = len(firsts)
    out = {f"hits{k}": Fraction(sum(1 for r in firsts if r <= k), n) for k in (1, 3, 5, 10)}
    out["mr"] = Fraction(sum(firsts), n)
    out["mrr"] = sum((Fraction(1, r) for r in firsts), Fraction(0)) / n
    out["top5_back"], out["top10_back"], out["n_groups"] = top5, top10, n
    return out
