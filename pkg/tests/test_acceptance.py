"""Acceptance criteria. Each test prints one PASS/FAIL line (run with ``-s`` to see them inline)."""
import contextlib
import subprocess
import sys
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, crandn
from mosel import chansim as cs
from mosel import neuralnet as nn
from mosel.estimators import count_above, large_estimate
from mosel.featurize import mode_singular_values
from mosel.harness import pipeline as pl
from mosel.numkit import exchange_matrix, left_pi_real_matrix, singular_values
from mosel.tensorlab import hosvd, mode_product, unfold
from nn_oracle import max_relative_error, numeric_gradients

DESK_SEEDS = (0, 1, 2)
DESK_SAMPLES_PER_CLASS = 500
DESK_EPOCHS = 100


class Outcome:
    def __init__(self):
        self.ok = False
        self.detail = ""


@contextlib.contextmanager
def criterion(number, title):
    out = Outcome()
    try:
        yield out
    except Exception as exc:
        out.ok = False
        out.detail = out.detail or f"{type(exc).__name__}: {exc}"
        raise
    finally:
        line = f"[{'PASS' if out.ok else 'FAIL'}] {number}. {title}: {out.detail}"
        ACCEPTANCE_LINES.append(line)
        print("\n" + line)
    assert out.ok, line


# ----------------------------------------------------------------------------
# 1. parameter counts


def test_criterion_1_parameter_counts():
    with criterion(1, "parameter-count identity") as c:
        start = time.perf_counter()
        reference = nn.param_count(nn.proposed_net(50, 3, 8, 3))
        mismatches, checked, infeasible = [], 0, 0
        for n in (8, 50):
            for d in (1, 3, 6):
                for f in (4, 8, 16):
                    for q in (3, 5):
                        o2 = n - 2 * q + 2
                        by_layer = (f * (q * d + 1) + (q * f + 1) + f * (o2 + 1) + f * (f + 1) + n * (f + 1))
                        dense_by_layer = f * (n * d + 1) + f * (f + 1) + n * (f + 1)
                        ok = (nn.proposed_param_formula(n, d, f, q) == by_layer
                              and nn.dense_param_formula(n, d, f) == dense_by_layer
                              and nn.param_count(nn.dense_net(n, d, f)) == dense_by_layer)
                        if o2 >= 1:
                            ok &= nn.param_count(nn.proposed_net(n, d, f, q)) == by_layer
                        else:
                            infeasible += 1
                        checked += 1
                        if not ok:
                            mismatches.append((n, d, f, q))
        elapsed = time.perf_counter() - start
        c.ok = reference == 1003 and not mismatches and elapsed < 1.0
        c.detail = (f"N=50, D=3, F=8, Q=3 has {reference} params; {checked} grid points, {len(mismatches)} mismatches "
                    f"({infeasible} with an empty second conv checked by formula only); {elapsed:.3f}s")


# ----------------------------------------------------------------------------
# 2. gradients


def _fd_relative_error(model, x, y):
    _, grads = nn.backward(model, x, y)
    return max_relative_error(grads, numeric_gradients(model, x, y, h=1e-6))


def test_criterion_2_gradient_check():
    with criterion(2, "finite-difference gradients") as c:
        rng = np.random.default_rng(2)
        x = rng.standard_normal((4, 12, 3))
        bce = nn.init_weights(nn.proposed_net(12, 3), 1)
        bce.weights = [(k, 0.1 * rng.standard_normal(b.shape)) for k, b in bce.weights]
        y_bce = np.zeros((4, 12))
        for i, l in enumerate((1, 2, 4, 5)):
            y_bce[i, :l] = 1
        cce = nn.init_weights(nn.dense_net(12, 3, n_out=5, output_activation="softmax"), 1)
        cce.weights = [(k, 0.1 * rng.standard_normal(b.shape)) for k, b in cce.weights]
        y_cce = np.eye(5)[[0, 1, 3, 4]]
        e_bce = _fd_relative_error(bce, x, y_bce)
        e_cce = _fd_relative_error(cce, x, y_cce)
        c.ok = e_bce < 1e-5 and e_cce < 1e-5
        c.detail = f"max relative error BCE {e_bce:.2e}, CCE {e_cce:.2e} (limit 1e-5)"


# ----------------------------------------------------------------------------
# 3. tensor invariants


def test_criterion_3_tensor_invariants():
    with criterion(3, "tensor pipeline invariants") as c:
        start = time.perf_counter()
        rng = np.random.default_rng(3)
        t = crandn(rng, 8, 51, 50)
        res = hosvd(t)
        rec = np.linalg.norm(t - res.reconstruct()) / np.linalg.norm(t)

        y = cs.forward_backward(t)
        z = y.conj()
        for d in range(1, 4):
            z = mode_product(z, exchange_matrix(y.shape[d - 1]), d)
        fba = np.linalg.norm(z - y) / np.linalg.norm(y)

        f = y
        for d in range(1, 4):
            f = mode_product(f, left_pi_real_matrix(y.shape[d - 1]).conj().T, d)
        imag = np.linalg.norm(f.imag) / np.linalg.norm(y)
        real = cs.real_transform(y)

        fro = np.linalg.norm(y)
        norm_err = max(
            max(abs(np.linalg.norm(unfold(a, d)) - np.linalg.norm(a)) / np.linalg.norm(a) for d in range(1, 4))
            for a in (t, y, real))
        norm_err = max(norm_err, abs(np.linalg.norm(real) - fro) / fro)
        sv_err = max(abs(np.sum(s ** 2) - fro ** 2) / fro ** 2 for s in hosvd(real).mode_singular_values)
        elapsed = time.perf_counter() - start
        c.ok = rec < 1e-10 and fba < 1e-12 and imag < 1e-9 and norm_err < 1e-12 and sv_err < 1e-12 and elapsed < 5
        c.detail = (f"HOSVD rec {rec:.1e}, FBA {fba:.1e}, imag residue {imag:.1e}*|Y|, "
                    f"norm drift {max(norm_err, sv_err):.1e}; {elapsed:.2f}s")


# ----------------------------------------------------------------------------
# 4. rank oracle


def separated_paths(l, rng):
    while True:
        delays = rng.uniform(0, cs.MAX_DELAY_SAMPLES, l)
        doas = rng.uniform(*cs.DOA_RANGE_DEG, l)
        if l == 1 or (np.diff(np.sort(delays)).min() >= 0.5 and np.diff(np.sort(doas)).min() >= 10.0):
            break
    amps = (rng.standard_normal(l) + 1j * rng.standard_normal(l)) / np.sqrt(2)
    return [cs.PathParams(complex(a), float(t), float(th)) for a, t, th in zip(amps, delays, doas)]


def test_criterion_4_rank_oracle():
    with criterion(4, "noiseless rank oracle and LaRGE") as c:
        start = time.perf_counter()
        cfg = cs.SimConfig()
        worst_ratio, exact = 0.0, 0
        for i in range(100):
            l = i % 5 + 1
            paths = separated_paths(l, np.random.default_rng([4, i]))
            h = cs.generate_channel(paths, cfg, 0.0)
            s = singular_values(unfold(cs.smooth(h, cfg.k_smooth), 2))
            worst_ratio = max(worst_ratio, s[l] / s[0])
            exact += large_estimate(mode_singular_values(cs.preprocess(h, cfg.k_smooth))).order == l
        elapsed = time.perf_counter() - start
        c.ok = worst_ratio < 1e-6 and exact >= 95 and elapsed < 60
        c.detail = (f"max sigma_(L+1)/sigma_1 = {worst_ratio:.1e}; LaRGE exact on {exact}/100; {elapsed:.1f}s")


# ----------------------------------------------------------------------------
# 5-7. desk-scale runs


def _features(seed, carriers):
    cfg = cs.SimConfig(samples_per_class=DESK_SAMPLES_PER_CLASS, snr_db=20.0, carriers_hz=carriers, seed=seed)
    meta, arrays = pl.build_features(cfg, cs.generate_dataset(cfg), 50)
    return pl.Features(meta, arrays)


def _evaluate(features, method, model, xi=0.8):
    _, test_idx = pl.split_for(features)
    true = features.model_order[test_idx]
    if method == "ecnet":
        pred = pl.predict(features, test_idx, "ecnet", model)
        return pl.build_report(method, true, pred, features.l_max), None
    scores = nn.forward(model, features.nn_inputs("proposed")[test_idx])
    pred = np.array([count_above(s, xi) for s in scores])
    return pl.build_report(method, true, pred, features.l_max), scores


@pytest.fixture(scope="module")
def desk():
    start = time.perf_counter()
    runs = []
    for seed in DESK_SEEDS:
        cfg = nn.TrainConfig(epochs=DESK_EPOCHS, seed=seed)
        base = _features(seed, cs.BASEBAND)
        dual = _features(seed, cs.UPLINK_DOWNLINK)
        run = {}
        for name, feats, method in (("G50x3", base, "proposed"), ("G50x6", dual, "proposed"),
                                    ("ECNet50x1", base, "ecnet")):
            model = pl.train_on(feats, method, cfg)[0]
            report, scores = _evaluate(feats, method, model)
            run[name] = {"report": report, "scores": scores}
        runs.append(run)
    return runs, time.perf_counter() - start


@pytest.mark.slow
def test_criterion_5_desk_scale_trends(desk):
    runs, elapsed = desk
    with criterion(5, "desk-scale trends") as c:
        def mean_acc(name):
            return float(np.mean([r[name]["report"].overall_accuracy for r in runs]))

        dual, base, ecnet = mean_acc("G50x6"), mean_acc("G50x3"), mean_acc("ECNet50x1")
        l1 = float(np.mean([r["G50x3"]["report"].per_class_accuracy["1"] for r in runs]))
        a, b, cc = dual >= base, base - ecnet >= 0.10, l1 >= 0.95
        c.ok = a and b and cc and elapsed < 15 * 60
        c.detail = (f"(a) 50x6 {dual:.4f} >= 50x3 {base:.4f}: {a}; (b) 50x3 - ECNet {ecnet:.3f} = "
                    f"{100 * (base - ecnet):.1f} pp: {b}; (c) L=1 accuracy {l1:.3f}: {cc}; "
                    f"per seed 50x3 {[round(r['G50x3']['report'].overall_accuracy, 3) for r in runs]}, "
                    f"50x6 {[round(r['G50x6']['report'].overall_accuracy, 3) for r in runs]}; "
                    f"{elapsed / 60:.1f} min")


@pytest.mark.slow
def test_criterion_6_overestimation(desk):
    runs, _ = desk
    with criterion(6, "overestimation at xi=0.8") as c:
        rates = {f"{name}/seed{s}": r[name]["report"].overestimation_rate
                 for s, r in zip(DESK_SEEDS, runs) for name in ("G50x3", "G50x6")}
        worst = max(rates.values())
        c.ok = worst < 0.01
        c.detail = f"worst over {len(rates)} proposed models {worst:.4f} (limit 0.01)"


@pytest.mark.slow
def test_criterion_7_threshold_monotonicity(desk):
    runs, _ = desk
    with criterion(7, "threshold monotonicity") as c:
        start = time.perf_counter()
        violations, total = 0, 0
        for r in runs:
            for name in ("G50x3", "G50x6"):
                for s in r[name]["scores"]:
                    o9, o8, o5 = count_above(s, 0.9), count_above(s, 0.8), count_above(s, 0.5)
                    violations += not (o9 <= o8 <= o5)
                    total += 1
        elapsed = time.perf_counter() - start
        c.ok = violations == 0 and elapsed < 10
        c.detail = f"{violations} violations over {total} test samples; {elapsed:.2f}s"


# ----------------------------------------------------------------------------
# 8. determinism


def _cli_pipeline(out):
    def mosel(*args):
        subprocess.run([sys.executable, "-m", "mosel", *map(str, args)], check=True, capture_output=True)

    mosel("generate", "--seed", 8, "--samples-per-class", 30, "--out", out)
    mosel("train", "--features", out / "features.mosel", "--seed", 8, "--epochs", 5, "--out", out / "model.mosel")
    mosel("eval", "--features", out / "features.mosel", "--method", "proposed", "--model", out / "model.mosel",
          "--out", out / "eval")
    return {name: (out / name).read_bytes() for name in
            ("dataset.mosel", "features.mosel", "model.mosel", "eval/report.json", "eval/report.csv",
             "eval/predictions.csv")}


def test_criterion_8_determinism(tmp_path):
    with criterion(8, "byte-identical reruns") as c:
        first = _cli_pipeline(tmp_path / "run1")
        second = _cli_pipeline(tmp_path / "run2")
        differing = [name for name in first if first[name] != second[name]]
        c.ok = not differing
        c.detail = f"{len(first) - len(differing)}/{len(first)} output files identical" + (
            f"; differing: {differing}" if differing else "")
