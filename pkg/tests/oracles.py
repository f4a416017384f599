"""Independent brute-force reimplementations used as test oracles.

Everything here is deliberately scalar Python: no shared code with the
engine's vectorized scoring path beyond the trained learner weights.
"""

import math


def _sigmoid_confidence(weights, bias, vec):
    z = sum(float(w) * float(x) for w, x in zip(weights, vec)) + float(bias)
    return 2.0 / (1.0 + math.exp(-z)) - 1.0


def _euclidean(a, b):
    return math.sqrt(sum((float(x) - float(y)) ** 2 for x, y in zip(a, b)))


def brute_force_aggregates(bags, unlabeled_ids, snapshot, config):
    """Recompute every candidate's aggregate score from first principles.

    Per bag: scalar sigmoid confidences per view, contention by opposite
    signs (zero counts positive), per-view triangular-kernel density averaged
    over that bag's contention vectors, bag score
    p_doc*|conf_doc| + p_word*|conf_word|, summed across bags.
    """
    ids = sorted(unlabeled_ids)
    aggregates = {}
    for bag in bags:
        confs = {}
        members = []
        for pid in ids:
            vv = snapshot.vectors[pid]
            cd = _sigmoid_confidence(bag.doc_learner.weights, bag.doc_learner.bias, vv.doc)
            cw = _sigmoid_confidence(bag.word_learner.weights, bag.word_learner.bias, vv.word)
            if (cd >= 0.0) != (cw >= 0.0):
                members.append(pid)
                confs[pid] = (cd, cw)
        if not members:
            continue
        for pid in members:
            vv = snapshot.vectors[pid]
            if config.density_enabled:
                p_doc = sum(
                    max(0.0, 1.0 - _euclidean(vv.doc, snapshot.vectors[q].doc) / config.bandwidth_doc)
                    for q in members
                ) / len(members)
                p_word = sum(
                    max(0.0, 1.0 - _euclidean(vv.word, snapshot.vectors[q].word) / config.bandwidth_word)
                    for q in members
                ) / len(members)
            else:
                p_doc = p_word = 1.0
            cd, cw = confs[pid]
            score = p_doc * abs(cd) + p_word * abs(cw)
            aggregates[pid] = aggregates.get(pid, 0.0) + score
    return aggregates


def brute_force_majority(conf_pairs_per_bag):
    """Majority vote from explicit (conf_doc, conf_word) tables, one per bag."""
    pcount = sum(1 for cd, cw in conf_pairs_per_bag if cd + cw >= 0.0)
    return 1 if pcount >= len(conf_pairs_per_bag) / 2.0 else -1


def brute_force_f1_positive(predictions, gold):
    tp = sum(1 for k in gold if gold[k] == 1 and predictions[k] == 1)
    fp = sum(1 for k in gold if gold[k] == -1 and predictions[k] == 1)
    fn = sum(1 for k in gold if gold[k] == 1 and predictions[k] == -1)
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2.0 * precision * recall / (precision + recall)
