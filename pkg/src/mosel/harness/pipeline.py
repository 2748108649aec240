"""Dataset/feature persistence, training and evaluation used by the CLI.

File kinds (all in the :mod:`mosel.container` format):

``dataset``
    meta: ``sim_config``, ``samples`` (per sample ``model_order``, ``index``,
    ``snr_db`` and ``paths`` as ``[re(alpha), im(alpha), delay_samples,
    doa_deg]`` rows). Array ``h``: complex ``(S, n_carriers, M, N_sub)``.
``features``
    meta: ``sim_config``, ``n_common``, ``mode_sizes``, ``dataset_sha256``.
    Arrays: ``g`` ``(S, N, D)`` log singular values of the channel tensors
    (carrier blocks of 3 columns); ``g_siso`` ``(S, N, 1)`` single-antenna
    delay-domain log singular values; ``labels`` ``(S, N)`` uint8 bitmap;
    ``model_order`` ``(S,)``; ``sv.c{c}.m{d}`` ``(S, M_d)`` raw singular
    values of mode ``d`` (1-based) of carrier ``c``.
``model``
    see :func:`mosel.neuralnet.save_model`; ``extra`` holds the method, the
    input variant and the training configuration.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from mosel import chansim, featurize
from mosel.container import read_container, write_container
from mosel.estimators import (
    DEFAULT_RHO, DEFAULT_XI, LargeConfig, count_above, ecnet_order, large_prediction_errors,
    large_estimate, multiclass_label,
)
from mosel.neuralnet import (
    NNModel, TrainConfig, dead_layers, dense_net, fit_input_scaling, forward, init_weights, load_model,
    proposed_net, train,
)

logger = logging.getLogger(__name__)

METHODS = ("proposed", "ecnet", "large")
ECNET_INPUTS = ("siso", "hosvd")
DEFAULT_SPLIT = 0.7
WARMUP_EPOCHS = 5
MAX_INIT_ATTEMPTS = 5


class HarnessError(RuntimeError):
    """A user-facing failure (bad input file, missing model, ...)."""


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ----------------------------------------------------------------------------
# datasets and features


def save_dataset(path, cfg: chansim.SimConfig, samples: Sequence[chansim.ChannelSample]) -> None:
    meta = {
        "sim_config": cfg.to_dict(),
        "samples": [
            {
                "index": s.index,
                "model_order": s.model_order,
                "snr_db": s.snr_db,
                "paths": [[p.amplitude.real, p.amplitude.imag, p.delay_samples, p.doa_deg] for p in s.paths],
            }
            for s in samples
        ],
    }
    h = np.stack([np.stack(s.h) for s in samples]) if samples else np.zeros((0,), complex)
    write_container(path, "dataset", meta, {"h": h})


def load_dataset(path) -> tuple[chansim.SimConfig, list[chansim.ChannelSample]]:
    meta, arrays = read_container(path, kind="dataset")
    cfg = chansim.SimConfig.from_dict(meta["sim_config"])
    samples = []
    for rec, h in zip(meta["samples"], arrays["h"]):
        paths = [chansim.PathParams(complex(re, im), d, th) for re, im, d, th in rec["paths"]]
        samples.append(chansim.ChannelSample(
            h=list(h), paths=paths, carriers_hz=cfg.carriers_hz, snr_db=rec["snr_db"], index=rec["index"]))
    return cfg, samples


def siso_values(h: np.ndarray, k: int) -> np.ndarray:
    """Delay-domain singular values of the first antenna after smoothing and FBA."""
    t = chansim.preprocess(h[:1, :], k)
    return featurize.mode_singular_values(t)[1]


def featurize_sample(sample: chansim.ChannelSample, cfg: chansim.SimConfig, n_common: int) -> dict:
    values = []
    for h in sample.h:
        values.append(featurize.mode_singular_values(chansim.preprocess(h, cfg.k_smooth)))
    fm = featurize.assemble_from_values([s for per in values for s in per], n_common)
    g_siso = featurize.log_scale_resize(siso_values(sample.h[0], cfg.k_smooth), n_common)[:, None]
    return {"g": fm.g, "g_siso": g_siso, "values": values, "mode_sizes": fm.mode_sizes}


def build_features(cfg: chansim.SimConfig, samples: Sequence[chansim.ChannelSample],
                   n_common: int) -> tuple[dict, dict[str, np.ndarray]]:
    if n_common < cfg.l_max:
        raise HarnessError(f"n_common={n_common} cannot represent orders up to {cfg.l_max}")
    rows = [featurize_sample(s, cfg, n_common) for s in samples]
    arrays = {
        "g": np.stack([r["g"] for r in rows]),
        "g_siso": np.stack([r["g_siso"] for r in rows]),
        "labels": np.stack([featurize.make_label(s.model_order, n_common) for s in samples]).astype(np.uint8),
        "model_order": np.array([s.model_order for s in samples], dtype=np.int64),
    }
    for c in range(len(cfg.carriers_hz)):
        for d in range(3):
            arrays[f"sv.c{c}.m{d + 1}"] = np.stack([r["values"][c][d] for r in rows])
    meta = {"sim_config": cfg.to_dict(), "n_common": n_common, "mode_sizes": list(rows[0]["mode_sizes"])}
    return meta, arrays


@dataclass
class Features:
    meta: dict
    arrays: dict[str, np.ndarray]

    @property
    def sim_config(self) -> chansim.SimConfig:
        return chansim.SimConfig.from_dict(self.meta["sim_config"])

    @property
    def model_order(self) -> np.ndarray:
        return self.arrays["model_order"]

    @property
    def l_max(self) -> int:
        return self.sim_config.l_max

    def __len__(self) -> int:
        return len(self.model_order)

    def mode_values(self, i: int) -> list[np.ndarray]:
        """Raw d-mode singular values of sample ``i``, all carriers, modes in order."""
        n_carriers = len(self.sim_config.carriers_hz)
        return [self.arrays[f"sv.c{c}.m{d}"][i] for c in range(n_carriers) for d in (1, 2, 3)]

    def nn_inputs(self, method: str, ecnet_input: str = "siso") -> np.ndarray:
        if method == "proposed":
            return self.arrays["g"]
        if ecnet_input == "siso":
            return self.arrays["g_siso"]
        # unextended higher-order values, cut to the shortest mode
        n = min(self.meta["mode_sizes"])
        return self.arrays["g"][:, :n, :]

    def nn_targets(self, method: str) -> np.ndarray:
        if method == "proposed":
            return self.arrays["labels"].astype(float)
        return np.stack([multiclass_label(int(l), self.l_max) for l in self.model_order])


def save_features(path, meta: dict, arrays: dict) -> None:
    write_container(path, "features", meta, arrays)


def load_features(path) -> Features:
    meta, arrays = read_container(path, kind="features")
    return Features(meta, arrays)


def generate(cfg: chansim.SimConfig, out_dir, n_common: int = 50,
             progress: Callable[[int], None] | None = None) -> tuple[Path, Path]:
    """Simulate, persist the dataset, featurize and persist the features."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    samples = []
    for s in chansim.iter_dataset(cfg):
        samples.append(s)
        if progress is not None:
            progress(len(samples))
    ds_path = out_dir / "dataset.mosel"
    save_dataset(ds_path, cfg, samples)
    meta, arrays = build_features(cfg, samples, n_common)
    meta["dataset_sha256"] = sha256(ds_path)
    ft_path = out_dir / "features.mosel"
    save_features(ft_path, meta, arrays)
    return ds_path, ft_path


# ----------------------------------------------------------------------------
# split, training


def stratified_split(model_order: np.ndarray, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-class seeded shuffle; the first ``round(fraction * n_class)`` go to training."""
    if not 0.0 < fraction < 1.0:
        raise ValueError("split fraction must lie in (0, 1)")
    train_idx, test_idx = [], []
    for l in np.unique(model_order):
        idx = np.flatnonzero(model_order == l)
        idx = idx[np.random.default_rng([seed, int(l)]).permutation(idx.size)]
        cut = int(round(fraction * idx.size))
        train_idx.append(idx[:cut])
        test_idx.append(idx[cut:])
    return np.sort(np.concatenate(train_idx)), np.sort(np.concatenate(test_idx))


def split_for(features: Features, fraction: float = DEFAULT_SPLIT) -> tuple[np.ndarray, np.ndarray]:
    return stratified_split(features.model_order, fraction, features.sim_config.seed)


def build_model(method: str, features: Features, ecnet_input: str = "siso") -> NNModel:
    x = features.nn_inputs(method, ecnet_input)
    n, d = x.shape[1:]
    if method == "proposed":
        return proposed_net(n, d)
    if method == "ecnet":
        return dense_net(n, d, n_out=features.l_max, output_activation="softmax")
    raise HarnessError(f"method {method!r} has no network")


def train_on(features: Features, method: str, cfg: TrainConfig, ecnet_input: str = "siso",
             split: float = DEFAULT_SPLIT, init_from=None, callback=None):
    """Train ``method`` on the training split.

    ``init_from`` is a saved model path to resume from (weights and optimizer
    state); otherwise weights are freshly initialised from ``cfg.seed`` and the
    input standardisation is fitted on the training split. A fresh network
    with a dead ReLU layer after the first ``WARMUP_EPOCHS`` epochs, or at the
    end of training, is re-initialised from the seed ``[cfg.seed, attempt]``
    and trained again.
    Returns ``(model, history, state, extra)``.
    """
    if method not in ("proposed", "ecnet"):
        raise HarnessError(f"method {method!r} is not trainable")
    train_idx, _ = split_for(features, split)
    x = features.nn_inputs(method, ecnet_input)[train_idx]
    y = features.nn_targets(method)[train_idx]
    attempts = 1
    if init_from is not None:
        model, extra, state = load_model(init_from)
        if extra.get("method") != method or (method == "ecnet" and extra.get("ecnet_input") != ecnet_input):
            raise HarnessError("initial model was trained for a different method or input")
        model, history, state = train(model, x, y, cfg, state=state, callback=callback)
        dead = dead_layers(model, x)
    else:
        template = fit_input_scaling(build_model(method, features, ecnet_input), x)
        warm = replace(cfg, epochs=min(WARMUP_EPOCHS, cfg.epochs))
        rest = replace(cfg, epochs=cfg.epochs - warm.epochs)
        while True:
            seed = cfg.seed if attempts == 1 else [cfg.seed, attempts - 1]
            model, history, state = train(init_weights(template, seed), x, y, warm, callback=callback)
            dead = dead_layers(model, x)
            if not dead:
                model, more, state = train(model, x, y, rest, state=state, callback=callback)
                history += more
                dead = dead_layers(model, x)
            if not dead or attempts == MAX_INIT_ATTEMPTS:
                break
            logger.warning("dead ReLU layer(s) %s after %d epochs; re-initialising", dead, state.epoch)
            attempts += 1
    if dead:
        logger.warning("trained network has dead ReLU layer(s) %s; its output is constant", dead)
    extra = {
        "method": method,
        "ecnet_input": ecnet_input if method == "ecnet" else None,
        "train_config": asdict(cfg),
        "split_fraction": split,
        "l_max": features.l_max,
        "features_sim_config": features.meta["sim_config"],
        "init_attempts": attempts,
        "dead_layers": dead,
    }
    return model, history, state, extra


# ----------------------------------------------------------------------------
# evaluation


@dataclass
class EvalReport:
    method: str
    l_max: int
    per_class_accuracy: dict[str, float]
    overall_accuracy: float
    confusion: list[list[int]]
    overestimation_rate: float
    underestimation_rate: float
    n_test: int
    config: dict = field(default_factory=dict)

    @property
    def confusion_columns(self) -> list[str]:
        return [str(k) for k in range(self.l_max + 1)] + [f">{self.l_max}"]

    def to_json(self) -> str:
        d = asdict(self)
        d["confusion_columns"] = self.confusion_columns
        return json.dumps(d, sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        d = json.loads(text)
        d.pop("confusion_columns", None)
        return cls(**d)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class", "n", "accuracy"] + [f"pred_{c}" for c in self.confusion_columns])
        for l in range(1, self.l_max + 1):
            row = self.confusion[l - 1]
            w.writerow([l, sum(row), repr(self.per_class_accuracy[str(l)])] + row)
        return buf.getvalue()


def build_report(method: str, true: Sequence[int], pred: Sequence[int], l_max: int,
                 config: dict | None = None) -> EvalReport:
    """Per-class accuracy, confusion counts and over/under-estimation rates.

    Confusion rows are true orders ``1..l_max``; columns are predicted orders
    ``0..l_max`` plus a final column for anything above ``l_max``.
    """
    true = np.asarray(true, dtype=int)
    pred = np.asarray(pred, dtype=int)
    if true.shape != pred.shape or true.size == 0:
        raise HarnessError("need matching, non-empty truth and prediction vectors")
    confusion = np.zeros((l_max, l_max + 2), dtype=int)
    np.add.at(confusion, (true - 1, np.minimum(pred, l_max + 1)), 1)
    acc = {}
    for l in range(1, l_max + 1):
        n = confusion[l - 1].sum()
        acc[str(l)] = float(confusion[l - 1, l] / n) if n else float("nan")
    return EvalReport(
        method=method,
        l_max=l_max,
        per_class_accuracy=acc,
        overall_accuracy=float(np.mean(pred == true)),
        confusion=confusion.tolist(),
        overestimation_rate=float(np.mean(pred > true)),
        underestimation_rate=float(np.mean(pred < true)),
        n_test=int(true.size),
        config=config or {},
    )


def predict(features: Features, idx: np.ndarray, method: str, model: NNModel | None = None,
            xi: float = DEFAULT_XI, rho: float = DEFAULT_RHO, ecnet_input: str = "siso") -> np.ndarray:
    """Estimated orders for the samples ``idx``."""
    if method == "large":
        lcfg = LargeConfig(rho=rho)
        return np.array([large_estimate(features.mode_values(i), lcfg).order for i in idx], dtype=int)
    if model is None:
        raise HarnessError(f"method {method!r} needs a trained model")
    scores = forward(model, features.nn_inputs(method, ecnet_input)[idx])
    if method == "proposed":
        if not 0.0 < xi < 1.0:
            raise HarnessError("xi must lie in (0, 1)")
        return np.array([count_above(s, xi) for s in scores], dtype=int)
    return np.array([ecnet_order(s) for s in scores], dtype=int)


def evaluate(features: Features, method: str, model: NNModel | None = None, model_extra: dict | None = None,
             xi: float = DEFAULT_XI, rho: float = DEFAULT_RHO, split: float = DEFAULT_SPLIT,
             digests: dict | None = None) -> tuple[EvalReport, np.ndarray, np.ndarray]:
    """Evaluate on the test split; returns the report, test indices and predictions."""
    if method not in METHODS:
        raise HarnessError(f"unknown method {method!r}")
    extra = model_extra or {}
    if method != "large":
        if model is None:
            raise HarnessError(f"method {method!r} needs --model")
        if extra.get("method", method) != method:
            raise HarnessError(f"model was trained for {extra.get('method')!r}, not {method!r}")
    ecnet_input = extra.get("ecnet_input") or "siso"
    _, test_idx = split_for(features, split)
    pred = predict(features, test_idx, method, model, xi, rho, ecnet_input)
    config = {"sim_config": features.meta["sim_config"], "split_fraction": split}
    if method == "proposed":
        config["xi"] = xi
    elif method == "large":
        config["rho"] = rho
    else:
        config["ecnet_input"] = ecnet_input
    if model is not None:
        config["train_config"] = extra.get("train_config")
    config.update(digests or {})
    report = build_report(method, features.model_order[test_idx], pred, features.l_max, config)
    return report, test_idx, pred


def merge_reports(reports: Sequence[EvalReport], names: Sequence[str] | None = None) -> tuple[list[str], list[list]]:
    """Per-class accuracy table: one row per class, one column per report."""
    if not reports:
        raise HarnessError("need at least one report")
    l_max = reports[0].l_max
    for r in reports:
        if r.l_max != l_max:
            raise HarnessError("reports cover different class sets")
    names = list(names) if names else [r.method for r in reports]
    header = ["class"] + names
    rows = [[str(l)] + [r.per_class_accuracy[str(l)] for r in reports] for l in range(1, l_max + 1)]
    rows.append(["overall"] + [r.overall_accuracy for r in reports])
    return header, rows


def format_table(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    cells = [list(header)] + [[c if isinstance(c, str) else f"{c:.4f}" for c in r] for r in rows]
    widths = [max(len(r[j]) for r in cells) for j in range(len(header))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


# ----------------------------------------------------------------------------
# per-sample inspection


def inspect_sample(features: Features, sample_id: int, proposed: NNModel | None = None,
                   ecnet: tuple[NNModel, dict] | None = None, rho: float = DEFAULT_RHO) -> str:
    """Aligned CSV: G columns, proposed scores, ECNet probabilities and LaRGE errors per row."""
    if not 0 <= sample_id < len(features):
        raise HarnessError(f"sample id {sample_id} outside [0, {len(features) - 1}]")
    g = features.arrays["g"][sample_id]
    n, d = g.shape
    cols = {f"g{j + 1}": list(g[:, j]) for j in range(d)}
    if proposed is not None:
        cols["proposed_score"] = list(forward(proposed, g))
    if ecnet is not None:
        model, extra = ecnet
        x = features.nn_inputs("ecnet", extra.get("ecnet_input") or "siso")[sample_id]
        cols["ecnet_prob"] = list(forward(model, x))
    cols["large_eps"] = list(large_prediction_errors(features.mode_values(sample_id), LargeConfig(rho=rho)))
    length = max(len(v) for v in cols.values())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["row"] + list(cols))
    for i in range(length):
        w.writerow([i + 1] + [repr(float(v[i])) if i < len(v) else "" for v in cols.values()])
    return buf.getvalue()


def write_loss_csv(path, history: Sequence[float], first_epoch: int = 1) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        for e, v in enumerate(history, start=first_epoch):
            w.writerow([e, repr(float(v))])
