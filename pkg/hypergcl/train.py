# coding: utf-8
"""Training regimes, evaluation, fairness and robustness probes, multi-seed runs."""
import csv
import io
import json
import logging
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from aenum import Enum
from scipy.special import softmax
from sklearn.metrics import f1_score, roc_auc_score

from . import diffnum as dn
from .augment import AugmentationError, apply_augmentation, parse_spec
from .generator import (DEFAULT_KL_WEIGHT, DEFAULT_LATENT, DEFAULT_NEG_K, DEFAULT_TAU,
                        anneal_tau, generative_view, init_vhgae, keep_ratios)
from .hypergraph import clique_expand, split
from .model import (DEFAULT_BLOCKS, DEFAULT_DROPOUT, DEFAULT_HIDDEN, DEFAULT_PROJ, classify,
                    encode, init_encoder, project, sample_dropout_masks)
from .objectives import (DEFAULT_BETA, DEFAULT_LAMBDA, DEFAULT_TAU_CONTRAST, MAX_ANCHORS,
                         LossReport, contrast_anchors, cross_entropy, generator_objective,
                         mtl_loss, nt_xent)

log = logging.getLogger(__name__)

DEFAULT_EPOCHS = 200
DEFAULT_PRETRAIN_EPOCHS = 100
DEFAULT_LR = 1e-3
DEFAULT_TRAIN_FRAC = 0.1
DEFAULT_VAL_FRAC = 0.1
DEFAULT_ATTACK_RATIO = 0.1

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class Mode(Enum):
    SUPERVISED = 'supervised'
    MTL = 'mtl'
    PRETRAIN_LINEAR = 'pretrain_linear'
    PRETRAIN_FINETUNE = 'pretrain_finetune'


class TrainError(Exception):
    """Raised when training or evaluation cannot proceed."""
    pass


class ConfigError(TrainError):
    """Raised for an invalid training configuration."""
    pass


class FairnessError(TrainError):
    """Raised when a fairness metric is undefined for the given groups."""
    pass


@dataclass
class TrainConfig:
    mode: str = Mode.MTL.value
    view1: str = 'A2:0.2'
    view2: str = 'A2:0.2'
    epochs: int = DEFAULT_EPOCHS
    pretrain_epochs: int = DEFAULT_PRETRAIN_EPOCHS
    lr_model: float = DEFAULT_LR
    lr_generator: float = DEFAULT_LR
    weight_decay: float = 0.0
    lam: float = DEFAULT_LAMBDA
    beta: float = DEFAULT_BETA
    tau_contrast: float = DEFAULT_TAU_CONTRAST
    tau_gumbel: float = DEFAULT_TAU
    anneal_gumbel: bool = False
    dropout: float = DEFAULT_DROPOUT
    hidden: int = DEFAULT_HIDDEN
    proj: int = DEFAULT_PROJ
    latent: int = DEFAULT_LATENT
    blocks: int = DEFAULT_BLOCKS
    neg_k: int = DEFAULT_NEG_K
    kl_weight: float = DEFAULT_KL_WEIGHT
    seeds: list = field(default_factory=lambda: [0])
    train_frac: float = DEFAULT_TRAIN_FRAC
    val_frac: float = DEFAULT_VAL_FRAC
    max_anchors: int = MAX_ANCHORS
    clique: bool = False

    @property
    def mode_kind(self):
        return Mode(self.mode)

    def view_specs(self):
        try:
            return parse_spec(self.view1), parse_spec(self.view2)
        except AugmentationError as e:
            raise ConfigError(str(e))

    @property
    def generative(self):
        return any(spec.is_generative for spec in self.view_specs())

    def validate(self):
        try:
            Mode(self.mode)
        except ValueError:
            raise ConfigError('unknown mode "{}"'.format(self.mode))
        specs = self.view_specs()
        if all(spec.is_generative for spec in specs):
            raise ConfigError('at most one view may be generative (A6)')
        checks = [
            (self.epochs >= 0 and self.pretrain_epochs >= 0, 'epoch counts must be >= 0'),
            (self.lr_model > 0 and self.lr_generator > 0, 'learning rates must be > 0'),
            (self.weight_decay >= 0, 'weight decay must be >= 0'),
            (self.lam >= 0 and self.beta >= 0, 'lambda and beta must be >= 0'),
            (self.tau_contrast > 0, 'contrast temperature must be > 0'),
            (self.tau_gumbel > 0, 'gumbel temperature must be > 0'),
            (0 <= self.dropout < 1, 'dropout must lie in [0, 1)'),
            (min(self.hidden, self.proj, self.latent, self.blocks) >= 1, 'dimensions must be >= 1'),
            (self.neg_k >= 0, 'neg_k must be >= 0'),
            (self.kl_weight >= 0, 'kl weight must be >= 0'),
            (len(self.seeds) >= 1, 'at least one seed is required'),
            (0 <= self.train_frac and 0 <= self.val_frac and self.train_frac + self.val_frac < 1,
             'split fractions must be >= 0 and sum below 1'),
            (self.max_anchors >= 2, 'contrast anchor budget must be >= 2'),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, values):
        known = set(f.name for f in fields(cls))
        unknown = set(values) - known
        if unknown:
            raise ConfigError('unknown config keys: {}'.format(', '.join(sorted(unknown))))
        return cls(**values)


def derive_seed(root, tag):
    """Per-component seed: the root seed XOR the CRC-32 of the component tag."""
    return (int(root) ^ zlib.crc32(tag.encode('utf-8'))) & 0xFFFFFFFF


class Adam(object):
    def __init__(self, params, lr=DEFAULT_LR, beta1=ADAM_BETA1, beta2=ADAM_BETA2,
                 eps=ADAM_EPS, weight_decay=0.0):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        bias1 = 1.0 - self.beta1 ** self.t
        bias2 = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            self._m[i] = self.beta1 * self._m[i] + (1.0 - self.beta1) * g
            self._v[i] = self.beta2 * self._v[i] + (1.0 - self.beta2) * g * g
            m_hat = self._m[i] / bias1
            v_hat = self._v[i] / bias2
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def accuracy(logits, labels, mask):
    """Argmax accuracy in percent over the masked vertices (ties -> lowest class)."""
    index = np.flatnonzero(np.asarray(mask))
    if index.size == 0:
        raise TrainError('accuracy mask selects no vertices')
    predictions = np.argmax(logits[index], axis=1)
    return 100.0 * float(np.mean(predictions == np.asarray(labels)[index]))


def evaluate(params, H, mask):
    z_v, _ = encode(H, params)
    return accuracy(classify(z_v, params).data, H.labels, mask)


def fairness_metrics(predictions, labels, sensitive):
    """Statistical parity and equalized-odds gaps between sensitive groups, in percent."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    sensitive = np.asarray(sensitive)
    group0, group1 = sensitive == 0, sensitive == 1
    if not group0.any() or not group1.any():
        raise FairnessError('statistical parity needs both sensitive groups to be non-empty')
    delta_sp = abs(np.mean(predictions[group0] == 1) - np.mean(predictions[group1] == 1)) * 100.0
    pos0, pos1 = group0 & (labels == 1), group1 & (labels == 1)
    if not pos0.any() or not pos1.any():
        raise FairnessError('equalized odds needs positive labels in both sensitive groups')
    delta_eo = abs(np.mean(predictions[pos0] == 1) - np.mean(predictions[pos1] == 1)) * 100.0
    return float(delta_sp), float(delta_eo)


def binary_scores(probabilities, labels):
    """F1 (percent) and AUROC (percent, ``None`` when only one class is present)."""
    labels = np.asarray(labels)
    predictions = (np.asarray(probabilities) > 0.5).astype(np.int64)
    f1 = 100.0 * f1_score(labels, predictions, zero_division=0)
    auroc = None
    if np.unique(labels).size == 2:
        auroc = 100.0 * roc_auc_score(labels, probabilities)
    return float(f1), auroc


def random_perturb_attack(H, ratio, seed):
    """Remove exactly round(ratio * |incidences|) uniformly chosen incidences."""
    if not 0 <= ratio <= 1:
        raise ConfigError('attack ratio must lie in [0, 1], got {}'.format(ratio))
    count = int(math.floor(ratio * H.num_incidences + 0.5))
    rng = np.random.default_rng(seed)
    keep = np.ones(H.num_incidences, dtype=bool)
    keep[rng.choice(H.num_incidences, size=count, replace=False)] = False
    log.debug('random attack removed %d of %d incidences', count, H.num_incidences)
    return H.restrict(keep)


class SeedResult(object):
    def __init__(self, seed, test_acc=None, selected=None, logs=None, fairness=None,
                 error=None, params=None):
        self.seed = seed
        self.test_acc = test_acc
        self.selected = selected
        self.logs = logs or []
        self.fairness = fairness
        self.error = error
        self.params = params

    def __repr__(self):
        if self.error:
            return '<SeedResult seed={} failed: {}>'.format(self.seed, self.error)
        return '<SeedResult seed={} test_acc={:.2f}>'.format(self.seed, self.test_acc)

    @property
    def ok(self):
        return self.error is None

    def to_dict(self):
        return {'seed': self.seed, 'test_acc': self.test_acc, 'selected': self.selected,
                'fairness': self.fairness, 'error': self.error}


class RunResult(object):
    def __init__(self, config, per_seed):
        self.config = config
        self.per_seed = sorted(per_seed, key=lambda r: r.seed)
        scores = [r.test_acc for r in self.per_seed if r.ok]
        self.mean = float(np.mean(scores)) if scores else None
        self.std = float(np.std(scores)) if scores else None

    @property
    def failures(self):
        return [r for r in self.per_seed if not r.ok]

    def __repr__(self):
        return '<RunResult seeds={} mean={} std={}>'.format(len(self.per_seed), self.mean, self.std)

    def to_dict(self):
        config = self.config.to_dict()
        config['seeds'] = sorted(config['seeds'])
        return {'config': config, 'per_seed': [r.to_dict() for r in self.per_seed],
                'mean': self.mean, 'std': self.std}


class _Streams(object):
    """Independent random streams per component, all derived from one seed."""
    TAGS = ('init', 'generator_init', 'dropout', 'view_dropout', 'augment', 'gumbel', 'anchors')

    def __init__(self, seed):
        for tag in self.TAGS:
            setattr(self, tag, np.random.default_rng(derive_seed(seed, tag)))


class _Run(object):
    """State of one seed's training: params, optimizers, random streams, logs."""

    def __init__(self, H, masks, cfg, seed):
        if H.labels is None:
            raise TrainError('training needs vertex labels')
        self.H = H
        self.masks = masks
        self.cfg = cfg
        self.seed = seed
        self.rng = _Streams(seed)
        self.params = init_encoder(H.num_features, cfg.hidden, cfg.blocks,
                                   num_classes=max(H.num_classes, 1), d_proj=cfg.proj,
                                   seed=self.rng.init)
        spec1, spec2 = cfg.view_specs()
        self.specs = (spec1, spec2)
        self.generator = None
        self.generator_opt = None
        if spec1.is_generative or spec2.is_generative:
            self.generator = init_vhgae(H.num_features, cfg.latent, cfg.blocks,
                                        seed=self.rng.generator_init)
            self.generator_opt = Adam(self.generator.tensors(), lr=cfg.lr_generator,
                                      weight_decay=cfg.weight_decay)
        self.logs = []
        self.best = None

    def model_optimizer(self, tensors):
        return Adam(tensors, lr=self.cfg.lr_model, weight_decay=self.cfg.weight_decay)

    def tau(self, epoch, epochs):
        if self.cfg.anneal_gumbel:
            return anneal_tau(epoch - 1, epochs, self.cfg.tau_gumbel)
        return self.cfg.tau_gumbel

    def classification_loss(self):
        cfg = self.cfg
        masks = sample_dropout_masks(self.rng.dropout, self.H.num_vertices, cfg.hidden,
                                     cfg.blocks, cfg.dropout)
        z_v, _ = encode(self.H, self.params, masks)
        return cross_entropy(classify(z_v, self.params), self.H.labels, self.masks.train)

    def contrast(self, view1, view2):
        cfg = self.cfg
        n = self.H.num_vertices
        projections = []
        for view in (view1, view2):
            masks = sample_dropout_masks(self.rng.view_dropout, n, cfg.hidden, cfg.blocks, cfg.dropout)
            z_v, _ = encode(view, self.params, masks)
            projections.append(project(z_v, self.params))
        anchors = contrast_anchors(n, self.rng.anchors, cfg.max_anchors)
        if anchors is not None:
            projections = [dn.gather_rows(p, anchors) for p in projections]
        return nt_xent(projections[0], projections[1], cfg.tau_contrast)

    def fabricated(self, spec):
        return apply_augmentation(self.H, spec, self.rng.augment)

    def generator_step(self, tau, record):
        """Update only the generator on L_gen - beta * L_cl."""
        generated = generative_view(self.H, self.generator, tau, self.rng.gumbel,
                                    neg_k=self.cfg.neg_k, kl_weight=self.cfg.kl_weight)
        views = self._order(generated.view)
        l_cl = self.contrast(*views)
        objective = generator_objective(generated.elbo.loss, l_cl, self.cfg.beta)
        self.generator_opt.zero_grad()
        dn.backward(objective)
        self.generator_opt.step()
        record.update(L_gen=generated.elbo.loss.item(), recon=generated.elbo.recon.item(),
                      kl_v=generated.elbo.kl_v.item(), kl_e=generated.elbo.kl_e.item())

    def views(self, tau, record):
        """Both contrastive views for a model step; the generated one carries no gradient."""
        if self.generator is None:
            return self.fabricated(self.specs[0]), self.fabricated(self.specs[1])
        generated = generative_view(self.H, self.generator, tau, self.rng.gumbel,
                                    neg_k=self.cfg.neg_k, kl_weight=self.cfg.kl_weight)
        soft, hard = keep_ratios(generated.logits, generated.mask)
        record.update(soft_keep_ratio=soft, hard_keep_ratio=hard, tau=tau)
        frozen = self.H.replace(incidence_weights=generated.mask.data)
        return self._order(frozen)

    def _order(self, generated):
        spec1, spec2 = self.specs
        if spec1.is_generative:
            return generated, self.fabricated(spec2)
        return self.fabricated(spec1), generated

    def contrastive_epoch(self, epoch, epochs, opt, lam=None):
        """One generator step (when A6 is active) and one model step.

        With ``lam=None`` the model step is contrastive-only (pretraining).
        """
        record = new_record(epoch)
        tau = self.tau(epoch, epochs)
        if self.generator is not None:
            self.generator_step(tau, record)
        self.model_step(tau, opt, lam, record)
        return record

    def model_step(self, tau, opt, lam, record):
        """Update only the model on lam * NT-Xent plus CE (or NT-Xent alone when ``lam`` is None)."""
        view1, view2 = self.views(tau, record)
        ntxent = self.contrast(view1, view2)
        if lam is None:
            loss = ntxent
            report = LossReport(ntxent.item(), ntxent=ntxent.item())
        else:
            ce = self.classification_loss()
            loss = mtl_loss(ce, ntxent, lam)
            report = LossReport(loss.item(), ce=ce.item(), ntxent=ntxent.item())
        opt.zero_grad()
        dn.backward(loss)
        opt.step()
        record.update(report.components)

    def supervised_epoch(self, epoch, opt):
        record = new_record(epoch)
        ce = self.classification_loss()
        opt.zero_grad()
        dn.backward(ce)
        opt.step()
        record['ce'] = ce.item()
        return record

    def score(self, record, logits=None):
        """Fill val/test accuracy and keep the best-validation snapshot (earliest on ties)."""
        if logits is None:
            z_v, _ = encode(self.H, self.params)
            logits = classify(z_v, self.params).data
        labels = self.H.labels
        record['val_acc'] = accuracy(logits, labels, self.masks.val) if self.masks.val.any() else None
        record['test_acc'] = accuracy(logits, labels, self.masks.test) if self.masks.test.any() else None
        self.logs.append(record)
        if self.best is None or _better(record, self.best[0]):
            self.best = (record, self.params.copy(), logits)
        return record

    def result(self):
        if self.best is None:
            self.score(new_record(0))
        record, params, logits = self.best
        fairness = None
        if self.H.sensitive is not None and self.H.num_classes == 2:
            fairness = fairness_report(logits, self.H, self.masks.test)
        log.info('seed %s: selected epoch %s, test acc %s', self.seed, record['epoch'], record['test_acc'])
        return SeedResult(self.seed, test_acc=record['test_acc'], selected=record, logs=self.logs,
                          fairness=fairness, params=params)


def _better(record, best):
    if record['val_acc'] is None or best['val_acc'] is None:
        return record['val_acc'] is None and best['val_acc'] is None
    return record['val_acc'] > best['val_acc']


LOG_FIELDS = ('ce', 'ntxent', 'L_gen', 'recon', 'kl_v', 'kl_e', 'soft_keep_ratio',
              'hard_keep_ratio', 'tau', 'val_acc', 'test_acc')


def new_record(epoch, stage='train'):
    record = {'epoch': epoch, 'stage': stage}
    record.update((name, None) for name in LOG_FIELDS)
    return record


def fairness_report(logits, H, mask):
    index = np.flatnonzero(mask)
    probabilities = softmax(logits[index], axis=1)[:, 1]
    predictions = np.argmax(logits[index], axis=1)
    labels = H.labels[index]
    f1, auroc = binary_scores(probabilities, labels)
    report = {'f1': f1, 'auroc': auroc, 'delta_sp': None, 'delta_eo': None}
    try:
        report['delta_sp'], report['delta_eo'] = fairness_metrics(predictions, labels, H.sensitive[index])
    except FairnessError as e:
        log.warning('fairness metrics skipped: %s', e)
    return report


def train_supervised(H, masks, cfg, seed):
    """Encoder + classifier on the train-mask cross-entropy."""
    run = _Run(H, masks, cfg, seed)
    opt = run.model_optimizer(run.params.encoder_tensors() + run.params.classifier_tensors())
    for epoch in range(1, cfg.epochs + 1):
        run.score(run.supervised_epoch(epoch, opt))
    return run.result()


def train_mtl(H, masks, cfg, seed):
    """Joint cross-entropy + lambda * NT-Xent, with adversarial generator steps for A6."""
    run = _Run(H, masks, cfg, seed)
    opt = run.model_optimizer(run.params.tensors())
    for epoch in range(1, cfg.epochs + 1):
        run.score(run.contrastive_epoch(epoch, cfg.epochs, opt, lam=cfg.lam))
    return run.result()


def train_pretrain(H, masks, cfg, seed):
    """Contrastive pretraining, then linear evaluation or full finetuning."""
    run = _Run(H, masks, cfg, seed)
    pretrain_opt = run.model_optimizer(run.params.encoder_tensors() + run.params.head_tensors())
    for epoch in range(1, cfg.pretrain_epochs + 1):
        record = run.contrastive_epoch(epoch, cfg.pretrain_epochs, pretrain_opt)
        record['stage'] = 'pretrain'
        run.logs.append(record)

    if cfg.mode_kind is Mode.PRETRAIN_LINEAR:
        z_v, _ = encode(H, run.params)
        frozen = dn.constant(z_v.data)
        opt = run.model_optimizer(run.params.classifier_tensors())
        for epoch in range(1, cfg.epochs + 1):
            record = new_record(epoch)
            ce = cross_entropy(classify(frozen, run.params), H.labels, masks.train)
            opt.zero_grad()
            dn.backward(ce)
            opt.step()
            record['ce'] = ce.item()
            run.score(record, logits=classify(frozen, run.params).data)
    else:
        opt = run.model_optimizer(run.params.encoder_tensors() + run.params.classifier_tensors())
        for epoch in range(1, cfg.epochs + 1):
            run.score(run.supervised_epoch(epoch, opt))
    return run.result()


TRAINERS = {
    Mode.SUPERVISED: train_supervised,
    Mode.MTL: train_mtl,
    Mode.PRETRAIN_LINEAR: train_pretrain,
    Mode.PRETRAIN_FINETUNE: train_pretrain,
}


def run_seed(H, cfg, seed):
    masks = split(H, cfg.train_frac, cfg.val_frac, derive_seed(seed, 'split'))
    log.info('seed %s: %r, mode %s', seed, masks, cfg.mode)
    return TRAINERS[cfg.mode_kind](H, masks, cfg, seed)


def _run_seed_safe(H, cfg, seed):
    try:
        return run_seed(H, cfg, seed)
    except Exception as e:
        log.exception('seed %s failed', seed)
        return SeedResult(seed, error='{}: {}'.format(type(e).__name__, e))


def run_protocol(H, cfg, parallel=1):
    """Run every seed (fresh split and init each) and aggregate mean +- std."""
    cfg.validate()
    if cfg.clique:
        H = clique_expand(H)
    seeds = list(cfg.seeds)
    if parallel > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            results = list(pool.map(_run_seed_safe, [H] * len(seeds), [cfg] * len(seeds), seeds))
    else:
        results = [_run_seed_safe(H, cfg, seed) for seed in seeds]
    result = RunResult(cfg, results)
    log.info('%s over %d seeds: mean %s std %s (%d failed)', cfg.mode, len(seeds),
             result.mean, result.std, len(result.failures))
    return result


def _dumps(obj):
    return json.dumps(obj, sort_keys=True)


def write_epoch_log(path, logs):
    """One JSON object per epoch."""
    with io.open(path, 'w', encoding='utf-8', newline='\n') as f:
        for record in logs:
            f.write(_dumps(record) + '\n')


def write_summary(path, result, invocation=None):
    """Summary JSON; ``invocation`` (the command-line arguments) is echoed under ``cli``."""
    summary = result.to_dict()
    if invocation is not None:
        summary['cli'] = invocation
    with io.open(path, 'w', encoding='utf-8', newline='\n') as f:
        f.write(json.dumps(summary, sort_keys=True, indent=2) + '\n')


def write_table(path, rows):
    """CSV with one row per method: method, mean, std."""
    with io.open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['method', 'mean', 'std'])
        for method, result in rows:
            writer.writerow([method, result.mean, result.std])
