# utils/adversarial.py
"""Domain-adversarial proposal losses with hand-written gradients, and a desk-scale demo."""

import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize, sparse
from scipy.special import log_softmax, softmax

from models.cloud import NUM_PART_CLASSES, Proposal
from models.errors import ConfigError, InputError
from utils.posefit import symmetry_aware_npcs_loss

logger = logging.getLogger(__name__)

PARAM_NAMES = ('w1', 'b1', 'w2', 'b2')


class EmptyQueryWarning(UserWarning):
    """No proposal passed the score threshold; the loss is defined as 0"""


# ============================================================================
# FEATURE QUERY
# ============================================================================

@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Per-point features of one decoder resolution (layer_id 1..3)"""

    values: np.ndarray
    layer_id: int = 1

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise InputError(f'feature map must be N x K, got {values.shape}')
        if not np.all(np.isfinite(values)):
            raise InputError(f'feature map {self.layer_id} contains NaN or Inf')
        object.__setattr__(self, 'values', values)

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True, eq=False)
class ProposalQuery:
    pooled: np.ndarray
    proposals: tuple
    domains: np.ndarray
    part_classes: np.ndarray
    pooling: sparse.csr_matrix

    def __len__(self):
        return len(self.proposals)


def pooling_matrix(proposals, num_points):
    """Sparse mean-pooling operator: row i averages the points of proposal i"""
    rows, cols, data = [], [], []
    for i, proposal in enumerate(proposals):
        if len(proposal) == 0:
            raise InputError('cannot pool an empty proposal')
        rows.append(np.full(len(proposal), i))
        cols.append(proposal.point_indices)
        data.append(np.full(len(proposal), 1.0 / len(proposal)))
    if not rows:
        return sparse.csr_matrix((0, num_points))
    return sparse.csr_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(len(proposals), num_points))


def query_proposal_features(feature_map, proposals, s_thre=0.09):
    """Mean-pool the features of every proposal scoring above s_thre"""
    kept = tuple(p.validate_for(len(feature_map)) for p in proposals if p.score > s_thre)
    pooling = pooling_matrix(kept, len(feature_map))
    pooled = np.asarray(pooling @ feature_map.values)
    domains = np.array([-1 if p.domain_label is None else p.domain_label for p in kept],
                       dtype=np.int64)
    part_classes = np.array([p.semantic_label for p in kept], dtype=np.int64)
    return ProposalQuery(pooled.reshape(len(kept), feature_map.values.shape[1]), kept,
                         domains, part_classes, pooling)


# ============================================================================
# CLASSIFIER AND GRADIENT REVERSAL
# ============================================================================

def softmax_cross_entropy(logits, labels):
    """Per-row losses and d(loss_i)/d(logits_i)"""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise InputError(f'labels must lie in 0..{logits.shape[1] - 1}')
    rows = np.arange(len(labels))
    losses = -log_softmax(logits, axis=1)[rows, labels]
    dlogits = softmax(logits, axis=1)
    dlogits[rows, labels] -= 1.0
    return losses, dlogits


class TinyClassifier:
    """Two-layer tanh perceptron over pooled proposal features"""

    def __init__(self, params, grl_lambda=0.3):
        self.params = {name: np.array(params[name], dtype=np.float64) for name in PARAM_NAMES}
        if not all(np.all(np.isfinite(p)) for p in self.params.values()):
            raise InputError('classifier weights must be finite')
        self.grl_lambda = float(grl_lambda)

    @classmethod
    def create(cls, in_dim, num_outputs, hidden=16, grl_lambda=0.3, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        return cls({
            'w1': rng.normal(scale=1.0 / np.sqrt(in_dim), size=(in_dim, hidden)),
            'b1': np.zeros(hidden),
            'w2': rng.normal(scale=1.0 / np.sqrt(hidden), size=(hidden, num_outputs)),
            'b2': np.zeros(num_outputs),
        }, grl_lambda)

    @property
    def num_outputs(self):
        return self.params['b2'].shape[0]

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        hidden = np.tanh(x @ self.params['w1'] + self.params['b1'])
        logits = hidden @ self.params['w2'] + self.params['b2']
        return logits, (x, hidden)

    def logits(self, x):
        return self.forward(x)[0]

    def predict(self, x):
        return np.argmax(self.logits(x), axis=1)

    def backward(self, cache, dlogits):
        """Gradients of the parameters and of the input, given dloss/dlogits"""
        x, hidden = cache
        grads = {
            'w2': hidden.T @ dlogits,
            'b2': dlogits.sum(axis=0),
        }
        dpre = (dlogits @ self.params['w2'].T) * (1.0 - hidden ** 2)
        grads['w1'] = x.T @ dpre
        grads['b1'] = dpre.sum(axis=0)
        return grads, dpre @ self.params['w1'].T

    def step(self, grads, lr):
        for name in PARAM_NAMES:
            self.params[name] -= lr * grads[name]

    def flat_params(self):
        return np.concatenate([self.params[name].ravel() for name in PARAM_NAMES])

    def with_flat_params(self, flat):
        params, offset = {}, 0
        for name in PARAM_NAMES:
            shape = self.params[name].shape
            size = int(np.prod(shape))
            params[name] = np.asarray(flat[offset:offset + size]).reshape(shape)
            offset += size
        return TinyClassifier(params, self.grl_lambda)

    @staticmethod
    def flatten_grads(grads):
        return np.concatenate([grads[name].ravel() for name in PARAM_NAMES])


class GradientReversal:
    """Identity forward; backward scales the incoming gradient by -lambda"""

    def __init__(self, grl_lambda=0.3):
        self.grl_lambda = float(grl_lambda)

    def forward(self, x):
        return x

    def backward(self, grad):
        return -self.grl_lambda * np.asarray(grad, dtype=np.float64)


def grl_backward(upstream_grad, grl_lambda=0.3):
    upstream_grad = np.asarray(upstream_grad, dtype=np.float64)
    if not np.all(np.isfinite(upstream_grad)):
        raise InputError('upstream gradient must be finite')
    return GradientReversal(grl_lambda).backward(upstream_grad)


# ============================================================================
# FOCAL WEIGHTING
# ============================================================================

@dataclass(frozen=True, eq=False)
class FocalConfig:
    """Per (domain, part class) weights alpha and running accuracies acc"""

    alpha: dict
    gamma: float = 2.0
    acc: dict = field(default_factory=dict)
    decay: float = 0.9

    def __post_init__(self):
        alpha = {(int(d), int(p)): float(a) for (d, p), a in self.alpha.items()}
        acc = {key: 0.0 for key in alpha}
        acc.update({(int(d), int(p)): float(a) for (d, p), a in self.acc.items()})
        errors = []
        if any(not a > 0 for a in alpha.values()):
            errors.append('alpha must be positive')
        if any(not 0.0 <= a <= 1.0 for a in acc.values()):
            errors.append('acc must lie in [0, 1]')
        if not self.gamma >= 0:
            errors.append('gamma must be >= 0')
        if not 0.0 <= self.decay < 1.0:
            errors.append('decay must lie in [0, 1)')
        if errors:
            raise ConfigError('; '.join(errors))
        object.__setattr__(self, 'alpha', alpha)
        object.__setattr__(self, 'acc', acc)

    @classmethod
    def uniform(cls, domains, part_classes, alpha=1.0, gamma=2.0, decay=0.9):
        return cls({(d, p): alpha for d in domains for p in part_classes}, gamma, decay=decay)

    @classmethod
    def alpha_from_counts(cls, counts, gamma=2.0, decay=0.9):
        """alpha inversely proportional to pair frequency; the count-weighted mean of alpha is 1"""
        counts = {key: count for key, count in counts.items() if count > 0}
        if not counts:
            raise ConfigError('alpha needs at least one observed (domain, class) pair')
        total = float(sum(counts.values()))
        return cls({key: total / (len(counts) * count) for key, count in counts.items()},
                   gamma, decay=decay)

    def weight(self, domain, part_class):
        return focal_weight(self, domain, part_class)

    def update(self, domain, part_class, batch_acc):
        """Exponential moving average of the accuracy of one pair"""
        key = (int(domain), int(part_class))
        if key not in self.alpha:
            raise ConfigError(f'no focal entry for domain {key[0]}, class {key[1]}')
        acc = dict(self.acc)
        acc[key] = self.decay * acc[key] + (1.0 - self.decay) * float(batch_acc)
        return replace(self, acc=acc)

    def update_from_batch(self, domains, part_classes, correct):
        cfg = self
        domains = np.asarray(domains)
        part_classes = np.asarray(part_classes)
        correct = np.asarray(correct, dtype=np.float64)
        pairs = sorted(set(zip(domains.tolist(), part_classes.tolist())))
        for d, p in pairs:
            mask = (domains == d) & (part_classes == p)
            cfg = cfg.update(d, p, correct[mask].mean())
        return cfg


def focal_weight(cfg, domain, part_class):
    """alpha * (1 - acc) ** gamma, used as a positive multiplier"""
    key = (int(domain), int(part_class))
    if key not in cfg.alpha:
        raise ConfigError(f'no focal entry for domain {key[0]}, class {key[1]}')
    return cfg.alpha[key] * (1.0 - cfg.acc[key]) ** cfg.gamma


# ============================================================================
# ADVERSARIAL LOSSES
# ============================================================================

def _aligned(pooled, domains, part_classes=None):
    pooled = np.asarray(pooled, dtype=np.float64)
    domains = np.asarray(domains, dtype=np.int64).reshape(-1)
    if pooled.ndim == 1:
        pooled = pooled.reshape(len(domains), -1)
    if len(pooled) != len(domains):
        raise InputError(f'{len(pooled)} pooled features for {len(domains)} domain labels')
    if part_classes is not None:
        part_classes = np.asarray(part_classes, dtype=np.int64).reshape(-1)
        if len(part_classes) != len(domains):
            raise InputError(f'{len(part_classes)} part classes for {len(domains)} proposals')
    return pooled, domains, part_classes


def _warn_empty():
    warnings.warn('no proposal above the score threshold; adversarial loss is 0',
                  EmptyQueryWarning, stacklevel=3)


def focal_weights(cfg, domains, part_classes):
    return np.array([focal_weight(cfg, d, p) for d, p in zip(domains, part_classes)],
                    dtype=np.float64)


def loss_q_adv(pooled, domains, classifier):
    """Mean softmax cross-entropy of the domain classifier over queried proposals"""
    pooled, domains, _ = _aligned(pooled, domains)
    if len(domains) == 0:
        _warn_empty()
        return 0.0
    losses, _ = softmax_cross_entropy(classifier.logits(pooled), domains)
    return float(np.mean(losses))


def loss_qb_adv(pooled, domains, part_classes, cfg, classifier):
    """Focal-weighted mean cross-entropy; weights come from (domain, part class)"""
    pooled, domains, part_classes = _aligned(pooled, domains, part_classes)
    if len(domains) == 0:
        _warn_empty()
        return 0.0
    losses, _ = softmax_cross_entropy(classifier.logits(pooled), domains)
    return float(np.mean(focal_weights(cfg, domains, part_classes) * losses))


def qb_adv_gradients(pooled, domains, part_classes, cfg, classifier):
    """Returns (loss, classifier parameter gradients, dloss/dpooled).

    With ``cfg=None`` every weight is 1 and this is the plain query loss.
    The pooled-feature gradient is the one entering the reversal layer.
    """
    pooled, domains, part_classes = _aligned(pooled, domains, part_classes)
    m = len(domains)
    if m == 0:
        _warn_empty()
        zeros = {name: np.zeros_like(value) for name, value in classifier.params.items()}
        return 0.0, zeros, np.zeros_like(pooled)

    logits, cache = classifier.forward(pooled)
    losses, dlogits = softmax_cross_entropy(logits, domains)
    weights = np.ones(m) if cfg is None else focal_weights(cfg, domains, part_classes)
    loss = float(np.mean(weights * losses))
    grads, dpooled = classifier.backward(cache, dlogits * (weights / m)[:, None])
    return loss, grads, dpooled


@dataclass(frozen=True, eq=False)
class LayerQuery:
    """Queried proposals of one feature map and the discriminator that reads it"""

    pooled: np.ndarray
    domains: np.ndarray
    part_classes: np.ndarray
    classifier: TinyClassifier

    @classmethod
    def from_query(cls, query, classifier):
        return cls(query.pooled, query.domains, query.part_classes, classifier)


def _check_layers(layers, layer_weights):
    if len(layers) != len(layer_weights):
        raise InputError(f'{len(layers)} layers but {len(layer_weights)} layer weights')


def loss_qr_adv(layers, layer_weights):
    """Sum over resolutions of w_l * L_Q-adv(F^l)"""
    _check_layers(layers, layer_weights)
    return float(sum(w * loss_q_adv(layer.pooled, layer.domains, layer.classifier)
                     for layer, w in zip(layers, layer_weights)))


def loss_qrb_adv(layers, layer_weights, cfg):
    """Sum over resolutions of w_l * L_QB-adv(F^l); cfg may be one config or one per layer"""
    _check_layers(layers, layer_weights)
    cfgs = cfg if isinstance(cfg, (list, tuple)) else [cfg] * len(layers)
    return float(sum(w * loss_qb_adv(layer.pooled, layer.domains, layer.part_classes, c,
                                     layer.classifier)
                     for layer, w, c in zip(layers, layer_weights, cfgs)))


# ============================================================================
# REFERENCE SEGMENTATION LOSSES
# ============================================================================

def semantic_loss(logits, labels):
    losses, _ = softmax_cross_entropy(logits, labels)
    return float(np.mean(losses)) if len(losses) else 0.0


def offset_loss(positions, offsets, instance_labels):
    """Mean L1 distance between shifted foreground points and their instance centroids"""
    positions = np.asarray(positions, dtype=np.float64)
    offsets = np.asarray(offsets, dtype=np.float64)
    instance_labels = np.asarray(instance_labels)
    foreground = instance_labels >= 0
    if not foreground.any():
        return 0.0
    targets = np.zeros_like(positions)
    for inst in np.unique(instance_labels[foreground]):
        mask = instance_labels == inst
        targets[mask] = positions[mask].mean(axis=0)
    error = np.abs(positions + offsets - targets)[foreground].sum(axis=1)
    return float(error.mean())


def score_loss(scores, ious, low=0.25, high=0.75):
    """Binary cross-entropy against soft targets rising linearly between IoU low and high"""
    scores = np.clip(np.asarray(scores, dtype=np.float64), 1e-7, 1.0 - 1e-7)
    targets = np.clip((np.asarray(ious, dtype=np.float64) - low) / (high - low), 0.0, 1.0)
    if len(scores) == 0:
        return 0.0
    return float(np.mean(-(targets * np.log(scores) + (1.0 - targets) * np.log(1.0 - scores))))


def npcs_loss(preds, gts, part_classes, delta=0.1):
    """Mean of the symmetry-aware NPCS loss over parts"""
    losses = [symmetry_aware_npcs_loss(p, g, c, delta) for p, g, c in zip(preds, gts, part_classes)]
    return float(np.mean(losses)) if losses else 0.0


def total_segmentation_loss(sem, off, sco, npcs, adv, classification_weight=0.05):
    return sem + off + sco + npcs + classification_weight * adv


# ============================================================================
# DESK-SCALE DEMO
# ============================================================================

@dataclass(frozen=True, eq=False)
class DemoDataset:
    """Synthetic proposals: point features carry a class block and a domain block"""

    features: np.ndarray
    proposals: tuple
    domains: np.ndarray
    classes: np.ndarray
    train: np.ndarray
    test: np.ndarray


def make_demo_dataset(domains, classes, proposals_per_pair=8, points_per_proposal=8, noise=0.5,
                      rng=None):
    if domains < 2:
        raise InputError(f'adversarial demo needs at least 2 domains, got {domains}')
    if not 2 <= classes <= NUM_PART_CLASSES:
        raise InputError(f'adversarial demo needs 2..{NUM_PART_CLASSES} part classes, got {classes}')
    rng = rng if rng is not None else np.random.default_rng(0)

    dim = classes + domains
    blocks, proposals, prop_domains, prop_classes, train, test = [], [], [], [], [], []
    n_test = max(1, proposals_per_pair // 4)
    for d in range(domains):
        for c in range(classes):
            order = rng.permutation(proposals_per_pair)
            for k in range(proposals_per_pair):
                start = len(proposals) * points_per_proposal
                signal = np.zeros(dim)
                signal[c] = 1.0
                signal[classes + d] = 1.0
                blocks.append(signal + noise * rng.normal(size=(points_per_proposal, dim)))
                (test if order[k] < n_test else train).append(len(proposals))
                proposals.append(Proposal(np.arange(start, start + points_per_proposal), c + 1,
                                          rng.uniform(), d))
                prop_domains.append(d)
                prop_classes.append(c)

    return DemoDataset(np.vstack(blocks), tuple(proposals), np.array(prop_domains),
                       np.array(prop_classes), np.array(train), np.array(test))


def linear_probe_accuracy(train_x, train_y, test_x, test_y, num_labels, l2=1e-2):
    """L2-regularized multinomial logistic regression fit on frozen features"""
    mean = train_x.mean(axis=0)
    std = np.maximum(train_x.std(axis=0), 1e-8)
    xs = (train_x - mean) / std
    dim = xs.shape[1]

    def objective(theta):
        w = theta[:dim * num_labels].reshape(dim, num_labels)
        b = theta[dim * num_labels:]
        losses, dlogits = softmax_cross_entropy(xs @ w + b, train_y)
        dlogits /= len(train_y)
        loss = losses.mean() + 0.5 * l2 * np.sum(w ** 2)
        grad = np.concatenate([(xs.T @ dlogits + l2 * w).ravel(), dlogits.sum(axis=0)])
        return loss, grad

    result = optimize.minimize(objective, np.zeros(dim * num_labels + num_labels), jac=True,
                               method='L-BFGS-B')
    w = result.x[:dim * num_labels].reshape(dim, num_labels)
    b = result.x[dim * num_labels:]
    predicted = np.argmax(((test_x - mean) / std) @ w + b, axis=1)
    return float(np.mean(predicted == test_y))


class DemoModel:
    """Two-layer extractor, linear task head and one discriminator per feature map"""

    def __init__(self, in_dim, num_domains, num_classes, hidden=16, out_dim=8, grl_lambda=0.3,
                 rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params = {
            'w1': rng.normal(scale=1.0 / np.sqrt(in_dim), size=(in_dim, hidden)),
            'b1': np.zeros(hidden),
            'w2': rng.normal(scale=1.0 / np.sqrt(hidden), size=(hidden, out_dim)),
            'b2': np.zeros(out_dim),
            'wt': rng.normal(scale=1.0 / np.sqrt(out_dim), size=(out_dim, num_classes)),
            'bt': np.zeros(num_classes),
        }
        self.grl = GradientReversal(grl_lambda)
        self.discriminators = [
            TinyClassifier.create(dim, num_domains, hidden, grl_lambda, rng)
            for dim in (hidden, out_dim, hidden + out_dim)
        ]
        self.hidden = hidden

    def extract(self, x):
        h = np.tanh(x @ self.params['w1'] + self.params['b1'])
        z = np.tanh(h @ self.params['w2'] + self.params['b2'])
        return h, z

    def feature_maps(self, x):
        """hidden activations, output features and their skip concatenation"""
        h, z = self.extract(x)
        return [FeatureMap(h, 1), FeatureMap(z, 2), FeatureMap(np.hstack([h, z]), 3)]


def _task_forward(model, pooled_z, labels):
    logits = pooled_z @ model.params['wt'] + model.params['bt']
    losses, dlogits = softmax_cross_entropy(logits, labels)
    accuracy = float(np.mean(np.argmax(logits, axis=1) == labels)) if len(labels) else 0.0
    return float(losses.mean()), dlogits / max(len(labels), 1), accuracy


def true_domain_probability(classifier, pooled, domains):
    """Softmax probability each proposal assigns to its own domain"""
    if len(domains) == 0:
        return np.zeros(0)
    probs = softmax(classifier.logits(pooled), axis=1)
    return probs[np.arange(len(domains)), domains]


def _snapshot(model, data, cfgs, layer_weights, s_thre):
    """Losses and accuracies of the current model without updating it"""
    maps = model.feature_maps(data.features)
    train_props = [data.proposals[i] for i in data.train]
    test_props = [data.proposals[i] for i in data.test]

    train_pool = pooling_matrix(train_props, len(data.features))
    test_pool = pooling_matrix(test_props, len(data.features))
    task_loss, _, train_acc = _task_forward(model, train_pool @ maps[1].values,
                                            data.classes[data.train])
    _, _, test_acc = _task_forward(model, test_pool @ maps[1].values, data.classes[data.test])

    layers, domain_acc = [], []
    for fmap, disc in zip(maps, model.discriminators):
        query = query_proposal_features(fmap, train_props, s_thre)
        layers.append(LayerQuery.from_query(query, disc))
        if len(query):
            domain_acc.append(float(np.mean(disc.predict(query.pooled) == query.domains)))

    # the probe reads the extractor output, the same features the task head reads
    probe = linear_probe_accuracy(train_pool @ maps[1].values, data.domains[data.train],
                                  test_pool @ maps[1].values, data.domains[data.test],
                                  len(model.discriminators[0].params['b2']))
    return {
        'loss_qrb_adv': loss_qrb_adv(layers, layer_weights, cfgs),
        'task_loss': task_loss,
        'domain_accuracy': float(np.mean(domain_acc)) if domain_acc else 0.0,
        'task_accuracy': test_acc,
        'train_task_accuracy': train_acc,
        'probe_domain_accuracy': probe,
    }


def adv_demo_train(domains=3, classes=4, grl_lambda=0.3, gamma=2.0, epochs=200, seed=0,
                   layer_weights=(1 / 3, 1 / 3, 1 / 3), adv_weight=5.0, s_thre=0.09, lr=0.5,
                   disc_lr=None, acc_decay=0.9):
    """Full-batch training of extractor + task head + three discriminators.

    Each epoch the discriminators first descend their focal-weighted domain
    loss at ``disc_lr``. The extractor then descends the task loss plus
    ``adv_weight * sum_l w_l * L_QB-adv(F^l)`` read through the reversal
    layer of the updated discriminators, so with ``grl_lambda=0`` it only
    sees the task. The focal accuracy of a (domain, class) pair tracks the
    mean probability the discriminator gives the true domain.

    Returns a JSON-ready report: the configuration, the initial snapshot,
    per-epoch statistics and the final snapshot with the held-out
    linear-probe domain accuracy of the extractor output.
    """
    if epochs < 0:
        raise ConfigError(f'epochs must be >= 0, got {epochs}')
    if len(layer_weights) != 3:
        raise ConfigError('the demo reads three feature maps and needs three layer weights')
    disc_lr = lr if disc_lr is None else disc_lr
    data_stream, model_stream = np.random.SeedSequence(seed).spawn(2)
    data = make_demo_dataset(domains, classes, rng=np.random.default_rng(data_stream))
    model = DemoModel(data.features.shape[1], domains, classes, grl_lambda=grl_lambda,
                      rng=np.random.default_rng(model_stream))

    pairs = {(d, p): 0 for d in range(domains) for p in range(1, classes + 1)}
    for i in data.train:
        pairs[(int(data.domains[i]), int(data.classes[i]) + 1)] += 1
    cfgs = [FocalConfig.alpha_from_counts(pairs, gamma, acc_decay) for _ in range(3)]

    train_props = [data.proposals[i] for i in data.train]
    train_pool = pooling_matrix(train_props, len(data.features))
    train_labels = data.classes[data.train]
    x = data.features

    initial = _snapshot(model, data, cfgs, layer_weights, s_thre)
    logger.info(f"adv-demo start: probe domain accuracy {initial['probe_domain_accuracy']:.3f}")

    history = []
    for epoch in range(epochs):
        maps = model.feature_maps(x)
        h, z = maps[0].values, maps[1].values
        queries = [query_proposal_features(fmap, train_props, s_thre) for fmap in maps]

        for query, disc, cfg in zip(queries, model.discriminators, cfgs):
            if len(query):
                _, disc_grads, _ = qb_adv_gradients(query.pooled, query.domains,
                                                    query.part_classes, cfg, disc)
                disc.step(disc_grads, disc_lr)

        task_loss, dlogits, task_acc = _task_forward(model, train_pool @ z, train_labels)
        pooled_z = np.asarray(train_pool @ z)
        grads = {'wt': pooled_z.T @ dlogits, 'bt': dlogits.sum(axis=0)}
        dz = np.asarray(train_pool.T @ (dlogits @ model.params['wt'].T))
        dh = np.zeros_like(h)

        qrb, domain_acc = 0.0, []
        for k, (fmap, query, disc, w) in enumerate(zip(maps, queries, model.discriminators,
                                                       layer_weights)):
            loss, _, dpooled = qb_adv_gradients(query.pooled, query.domains,
                                                query.part_classes, cfgs[k], disc)
            qrb += w * loss
            if not len(query):
                continue
            correct = disc.predict(query.pooled) == query.domains
            domain_acc.append(float(correct.mean()))
            cfgs[k] = cfgs[k].update_from_batch(
                query.domains, query.part_classes,
                true_domain_probability(disc, query.pooled, query.domains))

            dfeat = np.asarray(query.pooling.T @ model.grl.backward(adv_weight * w * dpooled))
            if fmap.layer_id == 1:
                dh += dfeat
            elif fmap.layer_id == 2:
                dz += dfeat
            else:
                dh += dfeat[:, :model.hidden]
                dz += dfeat[:, model.hidden:]

        dz_pre = dz * (1.0 - z ** 2)
        grads['w2'] = h.T @ dz_pre
        grads['b2'] = dz_pre.sum(axis=0)
        dh_pre = (dh + dz_pre @ model.params['w2'].T) * (1.0 - h ** 2)
        grads['w1'] = x.T @ dh_pre
        grads['b1'] = dh_pre.sum(axis=0)
        for name, grad in grads.items():
            model.params[name] -= lr * grad

        history.append({
            'epoch': epoch + 1,
            'loss_qrb_adv': qrb,
            'task_loss': task_loss,
            'domain_accuracy': float(np.mean(domain_acc)) if domain_acc else 0.0,
            'task_accuracy': task_acc,
        })

    final = _snapshot(model, data, cfgs, layer_weights, s_thre)
    logger.info(f"adv-demo done after {epochs} epochs: probe domain accuracy "
                f"{final['probe_domain_accuracy']:.3f}, task accuracy {final['task_accuracy']:.3f}")
    return {
        'config': {
            'domains': domains, 'classes': classes, 'grl_lambda': grl_lambda, 'gamma': gamma,
            'epochs': epochs, 'seed': seed, 'layer_weights': list(layer_weights),
            'adv_weight': adv_weight, 's_thre': s_thre, 'lr': lr, 'disc_lr': disc_lr,
        },
        'initial': initial,
        'epochs': history,
        'final': final,
    }
