"""
Training loop and the step variants:

    plain      one forward/backward, no noise
    anl        two rounds: clean pass for g_t and s(h_t), noisy pass that updates theta
    canl       one noisy pass, g_t looked up per label from a per-class gradient cache
    lat        one pass, eps * sign of the previous batch's hook gradients
    gaussian   one pass, N(0, (eps/4)^2) noise at the hooks
    at         clean + FGSM batch, equal-weight loss mixture

Random streams are split from the run seed: noise, dropout and augmentation each
draw from their own generator, so a zero-epsilon run follows the plain run exactly.
"""
import copy
import logging
import time
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from src.attack.fgsm import fgsm_normalized
from src.core import ops
from src.core.tensor import Tape
from src.nn.functional import softmax_cross_entropy
from src.noise.cache import ClassGradCache, LatCache
from src.noise.generators import activation_std, anl_noise, gaussian_noise, inject, lat_noise, sample_r
from src.noise.spec import NoiseKind, NoiseSpec
from src.training.evaluation import evaluate
from src.training.optimizer import sgd_nesterov_step
from src.training.schedules import ScheduleSpec, schedule_step
from src.utils.data_utils import AugmentFlags, augment, batch_iterator
from src.utils.errors import NonFiniteError, TrainingAborted, UsageError

logger = logging.getLogger(__name__)


@dataclass
class StepResult:
    loss: float
    correct: int
    count: int
    extras: dict = field(default_factory=dict)


class Trainer:
    def __init__(self, model, optimizer, noise=None, schedule=None, seed=0, batch_size=128,
                 augment_flags=None, adversarial_epsilon=None, noise_epochs=0,
                 trace_std=False, record_timing=True):
        self.model = model
        self.opt = optimizer
        self.noise = noise or NoiseSpec()
        self.schedule = schedule or ScheduleSpec(lr0=optimizer.lr)
        self.seed = seed
        self.batch_size = batch_size
        self.augment_flags = augment_flags or AugmentFlags()
        self.adversarial_epsilon = adversarial_epsilon
        self.noise_epochs = noise_epochs
        self.trace_std = trace_std
        self.record_timing = record_timing

        noise_ss, dropout_ss, augment_ss = np.random.SeedSequence(seed).spawn(3)
        self.noise_rng = np.random.default_rng(noise_ss)
        self.dropout_rng = np.random.default_rng(dropout_ss)
        self.augment_rng = np.random.default_rng(augment_ss)

        self.class_cache = ClassGradCache(model.num_classes, dtype=model.dtype)
        self.lat_cache = LatCache()
        self.counters = {"forward": 0, "backward": 0, "steps": 0}
        self._std_sums = defaultdict(float)
        self._std_counts = defaultdict(int)

    # ------------------------------------------------------------------
    def _active_hooks(self):
        return [h.id for h in self.model.hooks if self.noise.is_active(h.id)]

    def _scale_of(self, h):
        return activation_std(h) if self.noise.use_std else 1.0

    def _forward_backward(self, x, y, hook_fn=None, rng=None, update_stats=True, trace=True):
        tape = Tape()
        res = self.model.forward(tape, x, train=True, hook_fn=hook_fn, rng=rng, update_stats=update_stats)
        loss = softmax_cross_entropy(tape, res.logits, y)
        self.counters["forward"] += 1
        grads = tape.backward(loss)
        self.counters["backward"] += 1
        if trace and self.trace_std:
            for hook_id, node in res.hooks.items():
                self._std_sums[hook_id] += activation_std(node.value)
                self._std_counts[hook_id] += 1
        return res, loss, grads

    def _apply(self, param_nodes, grads):
        param_grads = {}
        for nodes in param_nodes:
            for key, node in nodes.items():
                g = grads[node]
                param_grads[key] = param_grads[key] + g if key in param_grads else g
        try:
            sgd_nesterov_step(self.model.parameters(), param_grads, self.opt)
        except NonFiniteError as e:
            raise TrainingAborted(self.counters["steps"], str(e)) from e
        self.counters["steps"] += 1

    @staticmethod
    def _result(res, loss, y, **extras):
        correct = int(np.sum(res.logits.value.argmax(axis=1) == y))
        return StepResult(float(loss.value), correct, len(y), extras)

    # ------------------------------------------------------------------
    def train_step_plain(self, x, y):
        res, loss, grads = self._forward_backward(x, y, rng=self.dropout_rng)
        self._apply([res.params], grads)
        return self._result(res, loss, y)

    def train_step_anl(self, x, y):
        # round 1: clean pass with the dropout masks round 2 will reuse; running stats untouched
        round1_rng = copy.deepcopy(self.dropout_rng)
        res1, loss1, grads1 = self._forward_backward(x, y, rng=round1_rng, update_stats=False, trace=False)

        etas = {}
        for hook_id in self._active_hooks():
            node = res1.hooks[hook_id]
            r = sample_r(self.noise.epsilon, self.noise_rng)
            etas[hook_id] = anl_noise(grads1[node], self._scale_of(node.value), r,
                                      per_sample=self.noise.norm == "sample")

        def hook_fn(hook_id, tape, h):
            eta = etas.get(hook_id)
            return h if eta is None else inject(h, eta, tape=tape)

        # round 2: noisy pass; only its gradients update theta
        res2, loss2, grads2 = self._forward_backward(x, y, hook_fn, rng=self.dropout_rng)
        self._apply([res2.params], grads2)
        return self._result(res2, loss2, y, clean_loss=float(loss1.value),
                            ascent=bool(loss2.value >= loss1.value))

    def train_step_canl(self, x, y, cache=None):
        cache = cache if cache is not None else self.class_cache
        active = set(self._active_hooks())

        def hook_fn(hook_id, tape, h):
            if hook_id not in active:
                return h
            cache.register(hook_id, h.shape[1:])
            g = cache.lookup(hook_id, y)
            r = sample_r(self.noise.epsilon, self.noise_rng)
            eta = anl_noise(g, self._scale_of(h.value), r, per_sample=self.noise.norm == "sample")
            return inject(h, eta, tape=tape)

        res, loss, grads = self._forward_backward(x, y, hook_fn, rng=self.dropout_rng)

        # one random representative per class present; its gradients refresh every hook
        picks = {}
        for c in np.unique(y):
            members = np.flatnonzero(y == c)
            picks[int(c)] = int(members[self.noise_rng.integers(len(members))])
        for hook_id in sorted(active):
            g = grads[res.hooks[hook_id]]
            for c, i in picks.items():
                cache.update(hook_id, c, g[i])

        self._apply([res.params], grads)
        return self._result(res, loss, y)

    def train_step_lat(self, x, y, lat_cache=None):
        lat_cache = lat_cache if lat_cache is not None else self.lat_cache
        active = set(self._active_hooks())

        def hook_fn(hook_id, tape, h):
            if hook_id not in active:
                return h
            g_prev = lat_cache.fetch(hook_id, len(y))
            if g_prev is None:
                return h
            return inject(h, lat_noise(g_prev, self.noise.epsilon), tape=tape)

        res, loss, grads = self._forward_backward(x, y, hook_fn, rng=self.dropout_rng)
        for hook_id in sorted(active):
            lat_cache.save(hook_id, grads[res.hooks[hook_id]])
        self._apply([res.params], grads)
        return self._result(res, loss, y)

    def train_step_gaussian(self, x, y):
        active = set(self._active_hooks())

        def hook_fn(hook_id, tape, h):
            if hook_id not in active:
                return h
            return inject(h, gaussian_noise(h.shape, self.noise.epsilon, self.noise_rng, h.value.dtype), tape=tape)

        res, loss, grads = self._forward_backward(x, y, hook_fn, rng=self.dropout_rng)
        self._apply([res.params], grads)
        return self._result(res, loss, y)

    def train_step_at(self, x, y, delta, bounds=(-np.inf, np.inf)):
        """
        Equal-weight mixture of clean and FGSM loss. `delta` is in normalized input units
        (scalar or per-channel array), `bounds` the valid input range in the same units.
        """
        lo, hi = bounds
        x_adv = fgsm_normalized(self.model, x, y, delta, lo, hi, train=True, rng=copy.deepcopy(self.dropout_rng))
        self.counters["forward"] += 1
        self.counters["backward"] += 1

        tape = Tape()
        res_c = self.model.forward(tape, x, train=True, rng=self.dropout_rng)
        res_a = self.model.forward(tape, x_adv, train=True, rng=self.dropout_rng, update_stats=False)
        loss_c = softmax_cross_entropy(tape, res_c.logits, y)
        loss_a = softmax_cross_entropy(tape, res_a.logits, y)
        loss = ops.scale(tape, ops.add(tape, loss_c, loss_a), 0.5)
        self.counters["forward"] += 2
        grads = tape.backward(loss)
        self.counters["backward"] += 1
        self._apply([res_c.params, res_a.params], grads)
        return self._result(res_c, loss, y, clean_loss=float(loss_c.value), adversarial_loss=float(loss_a.value))

    # ------------------------------------------------------------------
    def adversarial_inputs(self, dataset):
        """FGSM step and valid input range in normalized units; adversarial_epsilon is on the [0, 1] pixel scale."""
        lo, hi = dataset.bounds()
        return self.adversarial_epsilon / dataset.std.reshape(lo.shape), (lo, hi)

    def step(self, x, y, noise_on=True, dataset=None):
        """One training step of the configured method; `dataset` supplies the input scaling for AT."""
        if self.adversarial_epsilon is not None:
            if dataset is None:
                raise UsageError("adversarial training steps need the dataset that normalized the batch")
            delta, bounds = self.adversarial_inputs(dataset)
            return self.train_step_at(x, y, delta, bounds)
        if not noise_on or not self.noise.enabled:
            return self.train_step_plain(x, y)
        kind = self.noise.kind
        if kind is NoiseKind.ANL:
            return self.train_step_anl(x, y)
        if kind is NoiseKind.CANL:
            return self.train_step_canl(x, y)
        if kind is NoiseKind.LAT:
            return self.train_step_lat(x, y)
        return self.train_step_gaussian(x, y)

    def noise_active(self, epoch):
        return self.noise.enabled and (self.noise_epochs <= 0 or epoch < self.noise_epochs)

    def lr_for(self, epoch, val_history):
        if self.noise.enabled and 0 < self.noise_epochs <= epoch:
            # second phase of the two-phase protocol: noise off, rate pinned to the floor
            return self.schedule.min_lr
        return schedule_step(self.schedule, epoch, val_history)

    def fit(self, train, test, epochs, val=None):
        """
        Trains for `epochs` and returns one metrics row per epoch:
        epoch, lr, train_loss, train_err_pct, test_err_pct, epoch_wall_seconds
        (+ val_loss when a validation set is given, + std_<hook> when tracing).
        """
        rows = []
        val_history = []

        for epoch in range(epochs):
            self.opt.lr = self.lr_for(epoch, val_history)
            noise_on = self.noise_active(epoch)
            if self.noise.enabled and epoch == self.noise_epochs and self.noise_epochs > 0:
                logger.info(f"noise disabled from epoch {epoch + 1}, lr pinned to {self.opt.lr:g}")
            self._std_sums.clear()
            self._std_counts.clear()

            loss_sum, correct, seen, ascents, anl_steps = 0.0, 0, 0, 0, 0
            start = time.perf_counter()
            for images, labels in batch_iterator(train, self.batch_size, self.seed, epoch):
                images = augment(images, self.augment_flags, self.augment_rng)
                x = train.normalize(images, self.model.dtype)
                try:
                    result = self.step(x, labels, noise_on, train)
                except NonFiniteError as e:
                    raise TrainingAborted(self.counters["steps"], str(e)) from e
                logger.debug(f"step {self.counters['steps']}: loss={result.loss:.5f} extras={result.extras}")
                loss_sum += result.loss * result.count
                correct += result.correct
                seen += result.count
                if "ascent" in result.extras:
                    anl_steps += 1
                    ascents += result.extras["ascent"]
            wall = time.perf_counter() - start

            test_err, test_loss = evaluate(self.model, test)
            row = {
                "epoch": epoch + 1,
                "lr": self.opt.lr,
                "train_loss": loss_sum / seen,
                "train_err_pct": 100.0 * (1.0 - correct / seen),
                "test_err_pct": test_err,
                "epoch_wall_seconds": round(wall, 3) if self.record_timing else 0.0,
            }
            if val is not None:
                _, val_loss = evaluate(self.model, val)
                val_history.append(val_loss)
                row["val_loss"] = val_loss
            if self.trace_std:
                for hook in self.model.hooks:
                    n = self._std_counts.get(hook.id, 0)
                    row[f"std_{hook.label}"] = self._std_sums[hook.id] / n if n else 0.0
            rows.append(row)

            ascent_note = f" ascent={100.0 * ascents / anl_steps:.1f}%" if anl_steps else ""
            logger.info(f"epoch {epoch + 1}/{epochs} lr={self.opt.lr:.4g} loss={row['train_loss']:.4f} "
                        f"train_err={row['train_err_pct']:.2f}% test_err={test_err:.2f}% "
                        f"({wall:.1f}s){ascent_note}")
        return pd.DataFrame(rows)
