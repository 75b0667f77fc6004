#!/usr/bin/env python3
"""Independent numpy oracle; writes frozen expected values to frozen_values.hpp.

Inputs are generated from closed-form sequences so the C++ tests rebuild the
same fixtures without sharing code with this script:
    seq(n, a, b)[i] = sin(a * i + b)
"""
import itertools
import math
import os

import numpy as np


def seq(n, a, b):
    return np.array([math.sin(a * i + b) for i in range(n)], dtype=np.float64)


def conv2d(x, w, b, pad):
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh, ow = h + 2 * pad - kh + 1, wd + 2 * pad - kw + 1
    out = np.zeros((n, o, oh, ow))
    for ni in range(n):
        for oi in range(o):
            for y in range(oh):
                for xx in range(ow):
                    out[ni, oi, y, xx] = np.sum(xp[ni, :, y:y + kh, xx:xx + kw] * w[oi]) + b[oi]
    return out


def max_pool(x):
    n, c, h, w = x.shape
    return x.reshape(n, c, h // 2, 2, w // 2, 2).max(axis=(3, 5))


def softmax(z):
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def blend(p, g, w, rows, cols):
    b, c, h, wd = p.shape
    ph, pw = h // rows, wd // cols
    out = np.empty_like(p)
    for bi in range(b):
        for r in range(rows):
            for cc in range(cols):
                wv = w[bi, r * cols + cc]
                sl = (bi, slice(None), slice(r * ph, (r + 1) * ph), slice(cc * pw, (cc + 1) * pw))
                out[sl] = wv * p[sl] + (1 - wv) * g[sl]
    return out


def ci_half_width(v):
    v = np.asarray(v, dtype=np.float64)
    return 1.96 * v.std(ddof=1) / math.sqrt(len(v))


def topk_bruteforce(row, label, k):
    """Expected top-k hit under a uniformly random tie-break (enumerated)."""
    n = len(row)
    hits, total = 0, 0
    for perm in itertools.permutations(range(n)):
        rank = sorted(range(n), key=lambda c: (-row[c], perm[c]))
        hits += label in rank[:k]
        total += 1
    return hits / total


def arr(name, values):
    flat = ", ".join(repr(float(v)) for v in np.asarray(values).ravel())
    return f"inline constexpr double {name}[] = {{{flat}}};\n"


def main():
    out = ["#pragma once\n", "// Generated by make_oracles.py; do not edit.\n\n", "namespace oracle {\n\n"]

    # conv2d: x [2,2,5,4], w [3,2,3,3], b [3], padding 1
    x = seq(2 * 2 * 5 * 4, 0.37, 0.1).reshape(2, 2, 5, 4)
    w = (0.5 * seq(3 * 2 * 3 * 3, 0.91, -0.3)).reshape(3, 2, 3, 3)
    b = np.array([0.1, -0.2, 0.3])
    y = conv2d(x, w, b, 1)
    out.append(arr("kConv", y))
    out.append(arr("kConvNoPad", conv2d(x, w, b, 0)))

    # relu -> max-pool -> global average pool on a [1,3,4,6] map
    m = seq(72, 0.53, 0.2).reshape(1, 3, 4, 6)
    out.append(arr("kMaxPool", max_pool(np.maximum(m, 0))))
    out.append(arr("kGap", m.mean(axis=(2, 3))))

    # linear: x [3,4] @ W^T [5,4] + b [5]
    lx = seq(12, 0.71, 0.4).reshape(3, 4)
    lw = seq(20, 0.29, -1.1).reshape(5, 4)
    lb = seq(5, 1.3, 0.5)
    out.append(arr("kLinear", lx @ lw.T + lb))

    # softmax / log-softmax rows of [3,5] scaled to exercise large logits
    z = 7.0 * seq(15, 0.83, 0.05).reshape(3, 5)
    out.append(arr("kSoftmax", softmax(z)))
    out.append(arr("kLogSoftmax", np.log(softmax(z))))

    # squared distances [4,3] vs [2,3]
    a = seq(12, 0.44, 0.7).reshape(4, 3)
    c = seq(6, 1.7, -0.2).reshape(2, 3)
    out.append(arr("kSqDist", ((a[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)))

    # patch blend on [2,3,6,6] with a 3x3 grid; weights outside [0,1] too
    p = seq(216, 0.19, 0.3).reshape(2, 3, 6, 6)
    g = seq(216, 0.61, -0.9).reshape(2, 3, 6, 6)
    bw = 1.5 * seq(18, 0.77, 0.25).reshape(2, 9)
    out.append(arr("kBlend", blend(p, g, bw, 3, 3)))

    # prototypes and prototype-classifier probabilities: 7 support rows, 3 ways,
    # 4 queries, d = 5
    f = seq(35, 0.33, 0.15).reshape(7, 5)
    labels = [0, 1, 2, 0, 1, 2, 2]
    protos = np.stack([f[[i for i, l in enumerate(labels) if l == k]].mean(axis=0) for k in range(3)])
    q = seq(20, 0.57, 1.2).reshape(4, 5)
    d2 = ((q[:, None, :] - protos[None]) ** 2).sum(axis=2)
    out.append(arr("kProtos", protos))
    out.append(arr("kProtoProbs", softmax(-d2)))
    qlab = [2, 0, 1, 1]
    out.append(arr("kProtoLoss", [-np.mean(np.log(softmax(-d2))[range(4), qlab])]))

    # CI half-widths of fixed accuracy lists
    lists = [
        [0.2, 0.4, 0.6, 0.8, 1.0],
        [0.5] * 9 + [0.6],
        [(i % 7) / 7.0 for i in range(600)],
    ]
    out.append(arr("kCi", [ci_half_width(l) for l in lists]))

    # top-k with ties: rows of 5 scores, label, k -> expected accuracy
    tie_cases = [
        ([0.2, 0.2, 0.2, 0.2, 0.2], 3, 1),
        ([0.2, 0.2, 0.2, 0.2, 0.2], 0, 2),
        ([0.4, 0.3, 0.3, 0.0, 0.0], 1, 2),
        ([0.4, 0.3, 0.3, 0.0, 0.0], 2, 1),
        ([0.1, 0.3, 0.3, 0.3, 0.0], 3, 2),
        ([0.1, 0.1, 0.5, 0.2, 0.1], 4, 3),
        ([0.1, 0.1, 0.5, 0.2, 0.1], 2, 1),
    ]
    out.append(arr("kTieScores", [v for case in tie_cases for v in case[0]]))
    out.append(arr("kTieLabels", [case[1] for case in tie_cases]))
    out.append(arr("kTieK", [case[2] for case in tie_cases]))
    out.append(arr("kTieExpected", [topk_bruteforce(*case) for case in tie_cases]))

    # mixup at lambda = 0.5 of two quantized fixtures, requantized
    ma = np.round(np.clip(0.5 + 0.5 * seq(48, 0.9, 0.0), 0, 1) * 255) / 255
    mb = np.round(np.clip(0.5 + 0.5 * seq(48, 0.35, 2.0), 0, 1) * 255) / 255
    mix = 0.5 * ma + 0.5 * mb
    # Round half away from zero, like std::lround.
    out.append(arr("kMixupBytes", np.floor(np.clip(mix, 0, 1) * 255 + 0.5)))

    out.append("\n}  // namespace oracle\n")
    path = os.path.join(os.path.dirname(os.path.abspath(__file__)), "frozen_values.hpp")
    with open(path, "w") as fh:
        fh.write("".join(out))


if __name__ == "__main__":
    main()
