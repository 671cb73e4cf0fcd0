import copy
import functools
import logging
import os

import numpy as np
import pandas as pd

from models.model_factory import build_model
from src.analysis.feature_maps import extract_feature_maps, save_feature_maps
from src.analysis.similarity import class_similarity_study
from src.analysis.std_trace import std_trace
from src.attack.fgsm import robustness_sweep
from src.config.config import CSV_FLOAT_FORMAT
from src.config.run_config import save_run_config
from src.nn.weights import load_weights, save_weights
from src.noise.spec import NoiseKind
from src.services.DataManager import DataManager
from src.training.evaluation import evaluate
from src.training.optimizer import OptimizerState
from src.training.trainer import Trainer
from src.utils.data_utils import split_validation
from src.utils.errors import NoiseLabError, UsageError

logger = logging.getLogger(__name__)

BENCH_KINDS = ("none", "anl", "canl", "lat", "gaussian")


def _as_error_dict(method):
    """Library errors come back as {"error", "status_code"} instead of propagating."""
    @functools.wraps(method)
    def wrapper(*args, **kwargs):
        try:
            return method(*args, **kwargs)
        except NoiseLabError as e:
            logger.error(str(e))
            return {"error": str(e), "status_code": e.exit_code}
        except OSError as e:
            logger.error(str(e))
            return {"error": str(e), "status_code": 1}
    return wrapper


def write_csv(frame, path):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT)
    logger.info(f"wrote {path}")
    return path


class ExperimentService:
    def __init__(self, cfg, data_folder=None):
        self.cfg = cfg
        self.repo = DataManager(data_folder) if data_folder else DataManager()
        self._splits = None

    # ------------------------------------------------------------------
    def _data(self):
        if self._splits is None:
            self._splits = self.repo.load_splits(self.cfg.data, self.cfg.run.seed)
        return self._splits

    def _model(self, cfg, dataset):
        return build_model(cfg.model, cfg.noise_spec(), dataset.sample_shape, dataset.num_classes, cfg.run.seed)

    def _trained_model(self, weights, untrained=False):
        _, test = self._data()
        model = self._model(self.cfg, test)
        if untrained:
            logger.warning("running on freshly initialised weights (--untrained); results describe a random model")
        elif not weights:
            raise UsageError("--weights is required (or pass --untrained)")
        else:
            load_weights(model, weights)
        return model, test

    def _fit(self, cfg, out_dir, record_timing=None):
        """Trains one model for `cfg`; returns (model, trainer, metrics)."""
        train, test = self._data()
        val = None
        if cfg.train.schedule == "adaptive":
            train, val = split_validation(train, cfg.train.val_fraction, cfg.run.seed)

        model = self._model(cfg, train)
        logger.info(model.summary())
        t = cfg.train
        trainer = Trainer(
            model,
            OptimizerState(lr=t.lr, momentum=t.momentum, nesterov=t.nesterov, weight_decay=t.weight_decay),
            noise=cfg.noise_spec(),
            schedule=cfg.schedule_spec(),
            seed=cfg.run.seed,
            batch_size=t.batch_size,
            augment_flags=cfg.augment_flags(),
            adversarial_epsilon=t.adversarial_epsilon if t.adversarial else None,
            noise_epochs=t.noise_epochs,
            trace_std=t.trace_std,
            record_timing=cfg.run.record_timing if record_timing is None else record_timing,
        )
        metrics = trainer.fit(train, test, t.epochs, val=val)
        if out_dir:
            write_csv(metrics, os.path.join(out_dir, "metrics.csv"))
            save_weights(model, os.path.join(out_dir, "weights.bin"))
            save_run_config(cfg, os.path.join(out_dir, "config.cfg"))
        return model, trainer, metrics

    # ------------------------------------------------------------------
    @_as_error_dict
    def train(self):
        """
        Trains the configured model and writes metrics.csv, weights.bin and the resolved
        config.cfg into run.out (plus std_trace.csv when tracing).
        """
        out = self.cfg.run.out
        model, trainer, metrics = self._fit(self.cfg, out)
        if self.cfg.train.trace_std:
            trace = std_trace(metrics)
            write_csv(trace, os.path.join(out, "std_trace.csv"))
            if self.cfg.run.plots:
                from src.utils.plot_utils import plot_lines
                plot_lines(trace, "epoch", list(trace.columns[1:]), os.path.join(out, "std_trace.png"),
                           title="activation std per hook", ylabel="mean s(h)")
        final = metrics.iloc[-1]
        logger.info(f"final test error {final['test_err_pct']:.2f}% after {len(metrics)} epochs, "
                    f"{trainer.counters['forward']} forward passes")
        return {"out": out, "test_err_pct": float(final["test_err_pct"]), "metrics": metrics}

    @_as_error_dict
    def attack(self, weights):
        model, test = self._trained_model(weights)
        clean_err, _ = evaluate(model, test)
        frame = robustness_sweep(model, test, self.cfg.attack.deltas, self.cfg.attack.batch_size)
        logger.info(f"clean accuracy {100.0 - clean_err:.2f}%")
        path = write_csv(frame, os.path.join(self.cfg.run.out, "robustness.csv"))
        return {"out": path, "frame": frame}

    @_as_error_dict
    def similarity(self, weights, untrained=False):
        model, test = self._trained_model(weights, untrained)
        a = self.cfg.analysis
        report = class_similarity_study(model, test, a.reference_class, a.pairs, a.hook, self.cfg.run.seed)
        frame = report.to_frame()
        path = write_csv(frame, os.path.join(self.cfg.run.out, "similarity.csv"))
        return {"out": path, "frame": frame, "report": report}

    @_as_error_dict
    def featuremaps(self, weights, index=None):
        model, test = self._trained_model(weights)
        index = self.cfg.analysis.image_index if index is None else index
        if not 0 <= index < len(test):
            raise UsageError(f"image index {index} outside [0, {len(test)})")
        image = test.normalize(test.images[index:index + 1], model.dtype)
        maps = extract_feature_maps(model, image, self.cfg.analysis.layer)
        paths = save_feature_maps(maps, self.cfg.run.out, self.cfg.run.name, self.cfg.analysis.layer)
        return {"out": os.path.dirname(paths[0]), "paths": paths}

    @_as_error_dict
    def sweep(self, epsilons=None, seeds=None):
        """One training run per (epsilon, seed); summary.csv holds mean/std final test error per epsilon."""
        epsilons = list(self.cfg.sweep.epsilons if epsilons is None else epsilons)
        seeds = self.cfg.sweep.seeds if seeds is None else seeds
        if not epsilons:
            raise UsageError("sweep needs at least one epsilon")
        if seeds < 1:
            raise UsageError(f"sweep needs seeds >= 1, got {seeds}")

        rows = []
        for eps in epsilons:
            errors = []
            for k in range(seeds):
                cfg = copy.deepcopy(self.cfg)
                if cfg.noise.kind == NoiseKind.NONE.value:
                    cfg.noise.kind = NoiseKind.ANL.value
                cfg.noise.epsilon = float(eps)
                cfg.run.seed = self.cfg.run.seed + k
                cfg.run.out = os.path.join(self.cfg.run.out, f"eps_{eps:g}", f"seed_{cfg.run.seed}")
                cfg.validate()
                self._splits = None
                logger.info(f"sweep: {cfg.noise.kind} eps={eps:g} seed={cfg.run.seed}")
                _, _, metrics = self._fit(cfg, cfg.run.out)
                errors.append(float(metrics["test_err_pct"].iloc[-1]))
            rows.append({
                "epsilon": float(eps),
                "runs": len(errors),
                "test_err_mean": float(np.mean(errors)),
                "test_err_std": float(np.std(errors, ddof=1)) if len(errors) > 1 else 0.0,
            })
        self._splits = None

        frame = pd.DataFrame(rows, columns=["epsilon", "runs", "test_err_mean", "test_err_std"])
        path = write_csv(frame, os.path.join(self.cfg.run.out, "summary.csv"))
        if self.cfg.run.plots:
            from src.utils.plot_utils import plot_lines
            plot_lines(frame, "epsilon", ["test_err_mean"], os.path.join(self.cfg.run.out, "sweep.png"),
                       title=f"{self.cfg.noise.kind} test error vs epsilon", ylabel="test error (%)",
                       err_columns={"test_err_mean": "test_err_std"})
        return {"out": path, "frame": frame}

    @_as_error_dict
    def bench(self, kinds=BENCH_KINDS):
        """One epoch per regularizer on identical data and init; per-epoch seconds and pass counts."""
        rows = []
        for kind in kinds:
            cfg = copy.deepcopy(self.cfg)
            cfg.noise.kind = kind
            cfg.train.epochs = 1
            cfg.train.adversarial = False
            cfg.train.noise_epochs = 0
            cfg.validate()
            _, trainer, metrics = self._fit(cfg, None, record_timing=True)
            rows.append({
                "kind": kind,
                "epoch_seconds": float(metrics["epoch_wall_seconds"].iloc[0]),
                "forward_passes": trainer.counters["forward"],
                "backward_passes": trainer.counters["backward"],
                "steps": trainer.counters["steps"],
            })
        frame = pd.DataFrame(rows)
        plain = frame.loc[frame["kind"] == "none", "epoch_seconds"]
        base = float(plain.iloc[0]) if len(plain) else float("nan")
        frame["ratio_to_plain"] = frame["epoch_seconds"] / base if base > 0 else float("nan")
        for row in frame.itertuples():
            logger.info(f"bench {row.kind:>8}: {row.epoch_seconds:.2f}s/epoch "
                        f"({row.ratio_to_plain:.2f}x plain), {row.forward_passes} forward passes")
        path = write_csv(frame, os.path.join(self.cfg.run.out, "bench.csv"))
        return {"out": path, "frame": frame}
