"""Independent scalar reference implementations.

Everything here is written as straightforward Python loops over lists so it
shares no code path with the package: plain exp-and-sum softmax, explicit
pair enumeration for rank statistics, textbook area arithmetic for IoU.
Tests freeze expected values computed by these functions and hold the
package to them.
"""

from __future__ import annotations

import math


def dot(u, v):
    return sum(a * b for a, b in zip(u, v))


def norm(u):
    return math.sqrt(sum(a * a for a in u))


def cosine(u, v):
    return dot(u, v) / (norm(u) * norm(v))


def softmax(values, temperature=1.0):
    exps = [math.exp(temperature * v) for v in values]
    total = sum(exps)
    return [e / total for e in exps]


def class_probs(region, class_feats, temperature=1.0):
    sims = [cosine(c, region) for c in class_feats]
    return softmax(sims, temperature)


def joint_hier_probs(region, feats_per_class, temperature=1.0):
    """Ragged joint softmax: one distribution over every entry of every class."""
    sims = [[cosine(f, region) for f in feats] for feats in feats_per_class]
    exps = [[math.exp(temperature * s) for s in row] for row in sims]
    total = sum(sum(row) for row in exps)
    return [[e / total for e in row] for row in exps]


def pool(joint):
    return [max(row) for row in joint]


def calibrate_level(p, z):
    weighted = [pi * zi for pi, zi in zip(p, z)]
    denom = sum(weighted)
    return [w / denom for w in weighted]


def combine(r_sub, r_sup):
    return [(a + b) / 2.0 for a, b in zip(r_sub, r_sup)]


def argmax(values):
    best, best_i = values[0], 0
    for i, v in enumerate(values):
        if v > best:
            best, best_i = v, i
    return best_i


def full_calibrate(region, class_feats, sub_feats_per_class, sup_feats_per_class,
                   class_temp=1.0, hier_temp=1.0):
    """Scalar pipeline from raw features to the calibrated distributions."""
    p = class_probs(region, class_feats, class_temp)
    z_sub = pool(joint_hier_probs(region, sub_feats_per_class, hier_temp))
    z_sup = pool(joint_hier_probs(region, sup_feats_per_class, hier_temp))
    r_sub = calibrate_level(p, z_sub)
    r_sup = calibrate_level(p, z_sup)
    r = combine(r_sub, r_sup)
    top = argmax(p)
    return {
        "p": p,
        "z_sub": z_sub,
        "z_sup": z_sup,
        "r_sub": r_sub,
        "r_sup": r_sup,
        "r": r,
        "p_hat": max(p),
        "r_hat": max(r),
        "consistent_sub": top == argmax(z_sub),
        "consistent_sup": top == argmax(z_sup),
    }


def sigmoid(z):
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def bce_loss(pred, label, w_pos, w_neg, eps=1e-7):
    pred = min(max(pred, eps), 1.0 - eps)
    return -w_pos * label * math.log(pred) - w_neg * (1 - label) * math.log(1.0 - pred)


def iou(a, b):
    ax1, ay1, ax2, ay2 = a
    bx1, by1, bx2, by2 = b
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    area_a = (ax2 - ax1) * (ay2 - ay1)
    area_b = (bx2 - bx1) * (by2 - by1)
    return inter / (area_a + area_b - inter)


def average_ranks(values):
    n = len(values)
    order = sorted(range(n), key=lambda i: values[i])
    ranks = [0.0] * n
    i = 0
    while i < n:
        j = i
        while j + 1 < n and values[order[j + 1]] == values[order[i]]:
            j += 1
        mean_rank = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = mean_rank
        i = j + 1
    return ranks


def spearman_brute(x, y):
    """Rank-difference form for tie-free data, Pearson on ranks otherwise."""
    n = len(x)
    rx = average_ranks(x)
    ry = average_ranks(y)
    if len(set(x)) == n and len(set(y)) == n:
        sd = sum((a - b) ** 2 for a, b in zip(rx, ry))
        return 1.0 - 6.0 * sd / (n * (n * n - 1))
    mx = sum(rx) / n
    my = sum(ry) / n
    cov = sum((a - mx) * (b - my) for a, b in zip(rx, ry))
    vx = sum((a - mx) ** 2 for a in rx)
    vy = sum((b - my) ** 2 for b in ry)
    return cov / math.sqrt(vx * vy)


def kendall_brute(x, y):
    """Tau-b by explicit enumeration of every pair."""
    n = len(x)
    concordant = discordant = ties_x = ties_y = 0
    for i in range(n):
        for j in range(i + 1, n):
            dx = x[i] - x[j]
            dy = y[i] - y[j]
            if dx == 0 and dy == 0:
                ties_x += 1
                ties_y += 1
            elif dx == 0:
                ties_x += 1
            elif dy == 0:
                ties_y += 1
            elif (dx > 0) == (dy > 0):
                concordant += 1
            else:
                discordant += 1
    n0 = n * (n - 1) // 2
    n1 = ties_x
    n2 = ties_y
    return (concordant - discordant) / math.sqrt(float((n0 - n1) * (n0 - n2)))


def region_decision(region, class_feats, sub_feats_per_class, sup_feats_per_class,
                    head_w, head_b, gamma, tau, prefilter=0.5, hier_temp=1.0,
                    direct=False):
    """Scalar replica of the generation gates for one region.

    Returns a stage name for drops or ("emitted", class, confidence,
    objectness) for survivors.
    """
    out = full_calibrate(region, class_feats, sub_feats_per_class, sup_feats_per_class,
                         1.0, hier_temp)
    if out["p_hat"] < prefilter:
        return ("dropped_prefilter",)
    if direct:
        if not (out["consistent_sub"] and out["consistent_sup"]):
            return ("dropped_gamma",)
        cls, confidence = argmax(out["p"]), out["p_hat"]
    else:
        if out["r_hat"] < gamma:
            return ("dropped_gamma",)
        cls, confidence = argmax(out["r"]), out["r_hat"]
    score = sigmoid(dot(head_w, region) + head_b)
    if score < tau:
        return ("dropped_tau",)
    return ("emitted", cls, confidence, score)
