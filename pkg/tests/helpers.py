"""Independent straight-line oracles shared by the tests.

Everything here recomputes results from first principles (loops, pairwise
enumeration, finite differences) without reusing the library's code paths, so
agreement is evidence rather than tautology.
"""

import numpy as np

from jeirt.data import FeatureMatrix, ResponseRecord
from jeirt.engine import batch_loss_and_grads
from jeirt.model import AdapterParams, ModelTable


def straight_line_forward(W1, b1, W2, b2, x):
    """Adapter forward written out longhand."""
    hidden = np.maximum(W1 @ x + b1, 0.0)
    return W2 @ hidden + b2


def straight_line_prob(e_m, e_q):
    nq = np.sqrt(float(np.sum(e_q * e_q)))
    theta = float(np.dot(e_q, e_m)) / nq
    z = theta - nq
    return 1.0 / (1.0 + np.exp(-z))


def pairwise_auc(scores, positives):
    """Brute-force mean over all (positive, negative) pairs with ties at 1/2."""
    pos = np.asarray(scores)[np.asarray(positives)]
    neg = np.asarray(scores)[~np.asarray(positives)]
    total = 0.0
    for sp in pos:
        for sn in neg:
            if sp > sn:
                total += 1.0
            elif sp == sn:
                total += 0.5
    return total / (len(pos) * len(neg))


def contingency_metrics(clusters, subjects):
    """Agreement metrics recomputed from an explicit contingency table."""
    n = len(clusters)
    cluster_ids = sorted(set(clusters))
    subject_ids = sorted(set(subjects))
    table = {}
    for c, s in zip(clusters, subjects):
        table[(c, s)] = table.get((c, s), 0) + 1
    c_sizes = {c: sum(v for (cc, _), v in table.items() if cc == c) for c in cluster_ids}
    s_sizes = {s: sum(v for (_, ss), v in table.items() if ss == s) for s in subject_ids}

    purity = sum(
        max(table.get((c, s), 0) for s in subject_ids) for c in cluster_ids
    ) / n
    inverse_purity = sum(
        max(table.get((c, s), 0) for c in cluster_ids) for s in subject_ids
    ) / n

    def ent(sizes):
        h = 0.0
        for v in sizes.values():
            if v > 0:
                p = v / n
                h -= p * np.log(p)
        return h

    h_c, h_s = ent(c_sizes), ent(s_sizes)
    mi = 0.0
    for (c, s), v in table.items():
        mi += (v / n) * np.log(n * v / (c_sizes[c] * s_sizes[s]))

    homogeneity = 1.0 if h_s == 0 else mi / h_s
    completeness = 1.0 if h_c == 0 else mi / h_c
    nmi = 1.0 if (h_c == 0 and h_s == 0) else mi / ((h_c + h_s) / 2.0)
    return {
        "purity": purity,
        "inverse_purity": inverse_purity,
        "nmi": nmi,
        "homogeneity": homogeneity,
        "completeness": completeness,
    }


# -- finite-difference gradient machinery -------------------------------------

def random_fd_config(rng, n_models=3, n_questions=6, p=5, d=4, batch=8, margin=1e-3):
    """A random adapter/table/feature/batch setup away from ReLU kinks.

    Keeps resampling until every hidden pre-activation is at least ``margin``
    from zero and every question norm is comfortably above the guard, so the
    loss is smooth in a +-1e-4 neighborhood of every parameter.
    """
    while True:
        W1 = rng.standard_normal((2 * p, p))
        b1 = rng.standard_normal(2 * p)
        W2 = rng.standard_normal((d, 2 * p))
        b2 = rng.standard_normal(d)
        X = rng.standard_normal((n_questions, p))
        table_vecs = rng.standard_normal((n_models, d))
        A1 = X @ W1.T + b1
        adapter = AdapterParams(W1=W1, b1=b1, W2=W2, b2=b2)
        EQ = np.maximum(A1, 0.0) @ W2.T + b2
        norms = np.linalg.norm(EQ, axis=1)
        if np.min(np.abs(A1)) > margin and np.min(norms) > 0.1:
            break
    qids = [f"q{j}" for j in range(n_questions)]
    feats = FeatureMatrix(tuple(qids), X.astype(np.float32))
    # recompute the kink check on the float32-rounded features the loss sees
    A1 = feats.values.astype(np.float64) @ W1.T + b1
    if np.min(np.abs(A1)) <= margin / 2:
        return random_fd_config(rng, n_models, n_questions, p, d, batch, margin)
    table = ModelTable(tuple(f"m{i}" for i in range(n_models)), table_vecs)
    records = [
        ResponseRecord(
            model_id=f"m{int(rng.integers(n_models))}",
            question_id=qids[int(rng.integers(n_questions))],
            correct=int(rng.integers(2)),
            benchmark="fd",
        )
        for _ in range(batch)
    ]
    # records must be unique per (model, question); retry collisions
    if len({(r.model_id, r.question_id) for r in records}) < len(records):
        return random_fd_config(rng, n_models, n_questions, p, d, batch, margin)
    return adapter, table, feats, records


def _loss_at(adapter_arrays, table_vecs, adapter_proto, table_proto, feats, records):
    adapter = AdapterParams(
        W1=adapter_arrays[0], b1=adapter_arrays[1], W2=adapter_arrays[2], b2=adapter_arrays[3]
    )
    table = ModelTable(table_proto.model_ids, table_vecs)
    return batch_loss_and_grads(adapter, table, feats, records)[0]


def fd_max_relative_error(adapter, table, feats, records, step=1e-4):
    """Max relative error between analytic gradients and central differences."""
    loss, grads = batch_loss_and_grads(adapter, table, feats, records)
    arrays = [adapter.W1.copy(), adapter.b1.copy(), adapter.W2.copy(), adapter.b2.copy()]
    tvecs = table.vectors.copy()
    analytic = [grads.W1, grads.b1, grads.W2, grads.b2, grads.table]
    worst = 0.0
    for k in range(5):
        target = tvecs if k == 4 else arrays[k]
        flat = target.reshape(-1)
        gflat = analytic[k].reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + step
            up = _loss_at(arrays, tvecs, adapter, table, feats, records)
            flat[idx] = orig - step
            dn = _loss_at(arrays, tvecs, adapter, table, feats, records)
            flat[idx] = orig
            fd = (up - dn) / (2.0 * step)
            denom = max(abs(gflat[idx]), abs(fd), 1e-4)
            worst = max(worst, abs(gflat[idx] - fd) / denom)
    return worst
