"""Regenerates the small fixtures and the dense label-propagation golden files.

Run from this directory: python3 generate.py
"""
import numpy as np

HEADER = "#cospace-features v1 n={} d={}\n"


def write_features(path, ids, x):
    with open(path, "w") as f:
        f.write(HEADER.format(len(ids), x.shape[1]))
        for i, row in zip(ids, x):
            f.write(i + "".join("\t" + repr(float(v)) for v in row) + "\n")


def write_labels(path, labels):
    with open(path, "w") as f:
        for i, c in labels:
            f.write(f"{i}\t{c}\n")


def dense_propagation(x, ids, labels, m, k, mu, delta, iters):
    n = len(ids)
    rank = {s: r for r, s in enumerate(sorted(ids))}
    d = np.sqrt(((x[:, None, :] - x[None, :, :]) ** 2).sum(-1))
    p = np.zeros((n, n))
    for i in range(n):
        order = sorted((j for j in range(n) if j != i), key=lambda j: (d[i, j], rank[ids[j]]))[:k]
        sigma = delta * np.mean([d[i, j] for j in order])
        w = np.array([np.exp(-d[i, j] ** 2 / (mu * sigma ** 2)) for j in order])
        w /= w.sum()
        w /= w.sum()
        p[i, order] = w
    y0 = np.zeros((n, m))
    lab = {s: c for s, c in labels}
    for i, s in enumerate(ids):
        if s in lab:
            y0[i, lab[s]] = 1.0
    mask = np.array([s in lab for s in ids])
    y = y0.copy()
    for _ in range(iters):
        y = p @ y
        y[mask] = y0[mask]
    return y


def write_soft(path, ids, y):
    with open(path, "w") as f:
        for s, row in zip(ids, y):
            f.write(s + "".join("\t" + repr(float(v)) for v in row) + "\n")


def n60():
    rng = np.random.default_rng(60)
    m, per, d = 3, 20, 4
    centers = rng.normal(size=(m, d)) * 1.6
    ids = [f"p{i:02d}" for i in range(m * per)]
    cls = np.repeat(np.arange(m), per)
    before = centers[cls] + rng.normal(size=(m * per, d))
    drift = rng.normal(size=(m, d)) * 0.5
    after = 1.4 * (centers[cls] + drift[cls]) + rng.normal(size=(m * per, d)) * 0.3 + (before - centers[cls])
    before, after = np.round(before, 6), np.round(after, 6)
    write_features("n60/space_0.txt", ids, before)
    perm = rng.permutation(m * per)
    write_features("n60/space_1.txt", [ids[i] for i in perm], after[perm])
    with open("n60/spaces.txt", "w") as f:
        f.write("# consecutive model states\nspace_0.txt\nspace_1.txt\n")
    labeled = [(ids[i], int(cls[i])) for c in range(m) for i in rng.choice(np.where(cls == c)[0], 4, replace=False)]
    write_labels("n60/labels.tsv", sorted(labeled))
    write_labels("n60/truth.tsv", [(ids[i], int(cls[i])) for i in range(m * per)])


def n30():
    rng = np.random.default_rng(30)
    m, per, d = 3, 10, 3
    centers = rng.normal(size=(m, d)) * 2.0
    ids = [f"q{i:02d}" for i in range(m * per)]
    cls = np.repeat(np.arange(m), per)
    before = np.round(centers[cls] + rng.normal(size=(m * per, d)), 6)
    after = np.round(before * 1.3 + rng.normal(size=(m * per, d)) * 0.4, 6)
    write_features("n30/before.txt", ids, before)
    write_features("n30/after.txt", ids, after)
    labeled = [(ids[i], int(cls[i])) for c in range(m) for i in rng.choice(np.where(cls == c)[0], 2, replace=False)]
    write_labels("n30/labels.tsv", sorted(labeled))
    for name, x in [("before", before), ("after", after)]:
        y = dense_propagation(x, ids, labeled, m, k=4, mu=1.0, delta=0.9, iters=50)
        write_soft(f"n30/golden_soft_{name}.tsv", ids, y)


if __name__ == "__main__":
    import os
    os.makedirs("n60", exist_ok=True)
    os.makedirs("n30", exist_ok=True)
    n60()
    n30()
