"""Independent oracles shared by the test modules.

Everything here is deliberately primitive: pure Python loops or direct
numpy translations of definitions, sharing no code path with the
implementations they check.
"""

import math

import numpy as np


def pool_attention_loopref(bag, score_matrices, score_vectors, output_projection):
    """Scalar brute-force evaluation of attention pooling."""
    n = len(bag)
    d = len(bag[0])
    heads = len(score_matrices)
    att = len(score_vectors[0])

    all_alphas = []
    concat = []
    for h in range(heads):
        scores = []
        for k in range(n):
            s = 0.0
            for i in range(att):
                acc = 0.0
                for j in range(d):
                    acc += score_matrices[h][i][j] * bag[k][j]
                s += score_vectors[h][i] * math.tanh(acc)
            scores.append(s)
        m = max(scores)
        exps = [math.exp(s - m) for s in scores]
        total = sum(exps)
        alpha = [e / total for e in exps]
        all_alphas.append(alpha)
        for j in range(d):
            concat.append(sum(alpha[k] * bag[k][j] for k in range(n)))

    slide = []
    for i in range(d):
        slide.append(sum(output_projection[i][j] * concat[j] for j in range(heads * d)))
    return slide, all_alphas


def auc_pairwise(scores, labels):
    """The Mann-Whitney statistic computed directly over all pairs."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = (pos[:, None] > neg[None, :]).sum()
    ties = (pos[:, None] == neg[None, :]).sum()
    return (float(wins) + 0.5 * float(ties)) / (len(pos) * len(neg))


def kappa_confusion(pred, truth, classes):
    """Quadratic-weighted kappa from an explicitly built confusion matrix."""
    observed = [[0.0] * classes for _ in range(classes)]
    for p, t in zip(pred, truth):
        observed[t][p] += 1.0
    total = sum(sum(row) for row in observed)
    row_marg = [sum(observed[i][j] for j in range(classes)) for i in range(classes)]
    col_marg = [sum(observed[i][j] for i in range(classes)) for j in range(classes)]
    num = 0.0
    den = 0.0
    for i in range(classes):
        for j in range(classes):
            w = (i - j) ** 2 / (classes - 1) ** 2
            num += w * observed[i][j]
            den += w * row_marg[i] * col_marg[j] / total
    return 1.0 - num / den
