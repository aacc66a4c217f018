"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Every tolerance is pinned here. Two sub-criteria are implemented faithfully
but known to fail on isotropically planted data; their tests carry the
analysis in their docstrings and are expected to show up red:

* criterion 9's spread clause: a rank-1 model on planted rank-5 data with
  i.i.d. Gaussian factors necessarily misses the signal energy outside the
  top direction (~60% of it), so no implementation can bring the
  ANMSE spread across ranks {1,3,5,10} under 0.01 on such data;
* criterion 6's improvement clause: installing per-task noise estimates
  reweights tasks, and in strictly one-pass training any reweighting
  starves the downweighted tasks of optimization budget; the measured cost
  always exceeds the statistical benefit at desk scale.
"""

import math
import time

import numpy as np

import subspace_net as sn
from subspace_net.baselines import fit_ridge, predict_baseline
from subspace_net.censored import CensoredNllTerm, censored_nll, grad_mu_censored_nll
from subspace_net.cli import main
from subspace_net.data import Dataset, gen_deep, gen_heteroscedastic, gen_single_layer, load_csv, save_csv, split
from subspace_net.layer import (
    SubspaceLayer,
    TrainConfig,
    instantaneous_cost,
    predict_batch,
    refine_u_row,
    sketch_v,
    train_layer,
)
from subspace_net.metrics import (
    anmse,
    mutual_coherence,
    subspace_difference,
    weight_correlations,
)
from subspace_net.network import (
    SubspaceNetwork,
    calibrate_sigma,
    expand,
    forward_batch,
    load_model,
    save_model,
)

DESK = dict(n=2000, d=50, t=20, r=5)


def report(criterion, ok, detail=""):
    print(f"\nACCEPTANCE {criterion}: {'PASS' if ok else 'FAIL'} {detail}")
    return ok


def scaled_config(train_y, rank, seed, eta1=1.74e-5, mu1=1.74e-4, vs=8, off=500.0):
    """Recipe policy: steps and init scaled to the target spread."""
    s = float(np.sqrt(np.mean(train_y ** 2)))
    return TrainConfig(eta=eta1 * s, mu=mu1 * s, lam=1e-3, rank=rank,
                       v_inner_steps=vs, seed=seed, step_decay=True,
                       step_offset=off,
                       init_scale=max(1.0, math.sqrt(s / 11.5))), 0.1 * s


class TestCriterion1GradientOracles:
    def test_gradient_oracle_suite(self):
        start = time.perf_counter()
        rng = np.random.default_rng(101)

        # scalar gradient vs central finite differences, 1000 instances
        for _ in range(1000):
            y = 0.0 if rng.random() < 0.5 else float(rng.uniform(1e-3, 10))
            mu = float(rng.uniform(-10, 10))
            sigma = float(rng.uniform(0.1, 5))
            grad = grad_mu_censored_nll(CensoredNllTerm(y, mu, sigma))
            h = 1e-5 * max(1.0, abs(mu))
            fd = (censored_nll(CensoredNllTerm(y, mu + h, sigma))
                  - censored_nll(CensoredNllTerm(y, mu - h, sigma))) / (2 * h)
            assert abs(grad - fd) / max(abs(grad), abs(fd), 1e-12) < 1e-5

        # sketch step vs finite differences of the instantaneous cost
        for _ in range(1000):
            layer = SubspaceLayer(U=rng.standard_normal((2, 1)),
                                  V=rng.standard_normal((1, 3)),
                                  sigma=rng.uniform(0.5, 2.0, 2),
                                  lam=float(rng.uniform(0, 1)))
            x = rng.standard_normal(3)
            y = np.where(rng.random(2) < 0.5, 0.0, rng.uniform(0.1, 3.0, 2))
            cfg = TrainConfig(eta=1e-3, mu=1e-3, lam=layer.lam, rank=1,
                              v_inner_steps=1, seed=0, step_decay=False)
            step = (layer.V - sketch_v(x, y, layer, cfg)) / cfg.eta
            fd = np.zeros_like(layer.V)
            h = 1e-6
            for i in range(1):
                for j in range(3):
                    vp = layer.V.copy(); vp[i, j] += h
                    vm = layer.V.copy(); vm[i, j] -= h
                    up = SubspaceLayer(U=layer.U, V=vp, sigma=layer.sigma, lam=layer.lam)
                    dn = SubspaceLayer(U=layer.U, V=vm, sigma=layer.sigma, lam=layer.lam)
                    fd[i, j] = (instantaneous_cost(x, y, up)
                                - instantaneous_cost(x, y, dn)) / (2 * h)
            denom = np.maximum(np.maximum(np.abs(step), np.abs(fd)), 1e-8)
            assert np.all(np.abs(step - fd) / denom < 1e-5)

        # refinement step vs finite differences of the per-task objective
        for _ in range(1000):
            layer = SubspaceLayer(U=rng.standard_normal((3, 2)),
                                  V=rng.standard_normal((2, 4)),
                                  sigma=rng.uniform(0.5, 2.0, 3),
                                  lam=float(rng.uniform(0, 1)))
            x = rng.standard_normal(4)
            t_idx = int(rng.integers(0, 3))
            y_t = 0.0 if rng.random() < 0.5 else float(rng.uniform(0.1, 3.0))
            cfg = TrainConfig(eta=1e-3, mu=1e-3, lam=layer.lam, rank=2, seed=0)
            step = (layer.U[t_idx] - refine_u_row(t_idx, x, y_t, layer, cfg)) / cfg.mu

            def g_t(row):
                mu_t = float(row @ (layer.V @ x))
                return (censored_nll(CensoredNllTerm(y_t, mu_t, float(layer.sigma[t_idx])))
                        + 0.5 * layer.lam * float(row @ row))

            fd = np.zeros(2)
            h = 1e-6
            for j in range(2):
                up = layer.U[t_idx].copy(); up[j] += h
                dn = layer.U[t_idx].copy(); dn[j] -= h
                fd[j] = (g_t(up) - g_t(dn)) / (2 * h)
            denom = np.maximum(np.maximum(np.abs(step), np.abs(fd)), 1e-8)
            assert np.all(np.abs(step - fd) / denom < 1e-5)

        wall = time.perf_counter() - start
        assert report("1 (gradient oracle suite)", wall < 10.0,
                      f"3x1000 instances, rel err < 1e-5, wall={wall:.1f}s")


class TestCriterion2SingleLayerRecovery:
    def test_paper_scale_recovery(self):
        start = time.perf_counter()
        data, truth = gen_single_layer(5000, 200, 100, 10, 3.0, seed=1000)
        cfg = TrainConfig(eta=2e-4, mu=2e-3, lam=1e-3, rank=10, v_inner_steps=32,
                          seed=0, step_decay=True, step_offset=500.0)
        layer, trace = train_layer(data, cfg, probe=truth.us[0], sigma=3.0)
        wall = time.perf_counter() - start

        n = data.n
        burn = n // 10
        ma = np.convolve(trace.subspace_diffs, np.ones(50) / 50, mode="valid")[burn:]
        net_fall = ma[0] - ma[-1]
        # "strictly decreasing" on a stochastic trace is read as: every
        # moving-average increment is negative up to a noise allowance of
        # 0.2% of the net decrease, and the trace must actually fall
        tol = 2e-3 * net_fall
        decreasing = bool(np.all(np.diff(ma) < tol)) and ma[-1] < 0.5 * ma[0]

        idu = (np.arange(1, n + 1) * trace.du_norms)[burn:]
        ratio = float(idu.max() / np.median(idu))
        bounded = ratio <= 3.0

        corr = float(np.median(weight_correlations(layer.U @ layer.V, truth.weights(0))))

        slope = float(np.polyfit(np.log(np.arange(burn + 1, n + 1)),
                                 np.log(trace.du_norms[burn:]), 1)[0])

        ok = decreasing and bounded and corr > 0.9 and wall < 120.0
        assert report(
            "2 (single-layer subspace recovery)", ok,
            f"ma {ma[0]:.4f}->{ma[-1]:.4f} decreasing={decreasing}, "
            f"i*du max/median={ratio:.2f}, corr={corr:.4f}, "
            f"du slope={slope:.2f}, wall={wall:.0f}s")


class TestCriterion3CensoringMatters:
    def test_censored_beats_uncensored_baselines(self):
        start = time.perf_counter()
        rows = []
        for seed in range(5):
            data, _ = gen_single_layer(sigma=3.0, seed=seed + 2000, **DESK)
            train, valid = split(data, 0.4, seed=seed)
            cfg, sigma0 = scaled_config(train.Y, rank=5, seed=seed)
            layer, _ = train_layer(train, cfg, sigma=sigma0)
            model = fit_ridge(train, 1.0)
            rows.append((
                anmse(valid.Y, predict_batch(layer, valid.X)),
                anmse(valid.Y, predict_baseline(model, valid.X, censor=True)),
                anmse(valid.Y, predict_baseline(model, valid.X, censor=False)),
            ))
        med = np.median(np.array(rows), axis=0)
        wall = time.perf_counter() - start
        ok = med[0] < med[1] < med[2] and wall < 120.0
        assert report(
            "3 (censoring matters)", ok,
            f"SN={med[0]:.4f} < ridge+relu={med[1]:.4f} < ridge={med[2]:.4f}, "
            f"wall={wall:.0f}s")


class TestCriterion4DepthHelpsThenPlateaus:
    def test_depth_curve(self):
        start = time.perf_counter()
        curves = []
        for seed in range(5):
            data, _ = gen_deep(sigma=1.0, depth=2, seed=seed + 3000, **DESK)
            train, valid = split(data, 0.8, seed=seed)
            cfg, sigma0 = scaled_config(train.Y, rank=5, seed=seed)
            net, _ = expand(train, 10, cfg, sigma=sigma0, pred_scale=0.1)
            curves.append([
                anmse(valid.Y, forward_batch(net, valid.X, upto=min(k, net.depth)))
                for k in range(1, 11)])
        med = np.median(np.array(curves), axis=0)
        wall = time.perf_counter() - start
        margin = med[0] - med[2]
        plateau = abs(med[9] - med[4])
        ok = margin > 0.001 and plateau < 0.002 and wall < 300.0
        assert report(
            "4 (depth helps then plateaus)", ok,
            f"l1={med[0]:.4f} l3={med[2]:.4f} margin={margin:+.4f}, "
            f"|l10-l5|={plateau:.4f}, wall={wall:.0f}s")


class TestCriterion5DeepSubspaceAlignment:
    def test_layer1_coherence_margin(self):
        margins = []
        for seed in range(5):
            data, truth = gen_deep(2000, 50, 50, 5, 1.0, depth=3, seed=seed + 4000)
            cfg, sigma0 = scaled_config(data.Y, rank=5, seed=seed)
            layer, _ = train_layer(data, cfg, sigma=sigma0)
            # every greedy layer predicts the targets, whose task structure is
            # set by the output-side planted basis
            reference = truth.us[-1]
            learned = mutual_coherence(layer.U, reference).max_coherence
            random_u = np.random.default_rng(seed + 9999).standard_normal(reference.shape)
            rand = mutual_coherence(random_u, reference).max_coherence
            margins.append(learned - rand)
        med = float(np.median(margins))
        ok = med >= 0.2
        assert report("5 (deep subspace alignment)", ok,
                      f"median coherence margin over random = {med:+.3f}")


class TestCriterion6CalibrationHelps:
    def test_rank_agreement(self):
        agrees = []
        for seed in range(5):
            data, truth = gen_heteroscedastic(sigma_set=[0.5, 3.0],
                                              seed=seed + 5000, **DESK)
            train, _ = split(data, 0.8, seed=seed)
            cfg, sigma0 = scaled_config(train.Y, rank=5, seed=seed)
            layer, _ = train_layer(train, cfg, sigma=sigma0)
            rep = calibrate_sigma(layer, Dataset(X=train.X, Y=train.Y),
                                  residual_set="uncensored")
            agree = total = 0
            for a in range(data.t):
                for b in range(a + 1, data.t):
                    if truth.sigma[a] == truth.sigma[b]:
                        continue
                    total += 1
                    if ((rep.sigma[a] - rep.sigma[b])
                            * (truth.sigma[a] - truth.sigma[b])) > 0:
                        agree += 1
            agrees.append(agree / total)
        med = float(np.median(agrees))
        ok = med >= 0.9
        assert report("6a (calibrated sigma rank agreement)", ok,
                      f"median pairwise agreement = {med:.2f}")

    def test_calibrated_beats_noncalibrated(self):
        """Known red: in one-pass training, installing per-task noise scales
        reweights the tasks, and the downweighted tasks lose optimization
        budget they cannot recover; the measured cost exceeds the statistical
        benefit on every installation policy tried (raw, ratio-capped,
        mean- and min-anchored)."""
        rows = []
        for seed in range(5):
            data, _ = gen_heteroscedastic(sigma_set=[0.5, 3.0],
                                          seed=seed + 5000, **DESK)
            train, valid = split(data, 0.8, seed=seed)
            cfg, sigma0 = scaled_config(train.Y, rank=5, seed=seed)
            result = {}
            for calibrate in (False, True):
                net, _ = expand(train, 6, cfg, calibrate=calibrate, sigma=sigma0,
                                residual_set="uncensored", pred_scale=0.1,
                                stop_on_degrade=False)
                result[calibrate] = anmse(valid.Y, forward_batch(net, valid.X))
            rows.append((result[False], result[True]))
        arr = np.array(rows)
        med_non, med_cal = float(np.median(arr[:, 0])), float(np.median(arr[:, 1]))
        ok = med_cal < med_non
        assert report("6b (calibration lowers ANMSE)", ok,
                      f"median noncal={med_non:.4f} cal={med_cal:.4f}")


class TestCriterion7Contracts:
    def test_one_pass_and_determinism(self, tmp_path):
        data, _ = gen_single_layer(300, 10, 5, 2, 1.0, seed=7000)
        cfg = TrainConfig(rank=2, seed=3, v_inner_steps=2)
        net, traces = expand(data, 3, cfg, stop_on_degrade=False)
        one_pass = all(trace.samples_seen == data.n for trace in traces)

        import json
        config = {
            "experiment": "depth_sweep",
            "output_dir": str(tmp_path / "out"),
            "seeds": [0, 1],
            "data": {"kind": "planted", "n": 200, "d": 8, "t": 4, "r": 2, "sigma": 1.0},
            "train": {"rank": 2, "v_inner_steps": 2, "scale_steps": True},
            "depth": 2,
            "fractions": [0.5],
            "save_models": False,
            "save_traces": False,
        }
        path = tmp_path / "config.json"
        path.write_text(json.dumps(config))

        def strip_wall_clock(text):
            lines = text.strip().splitlines()
            return "\n".join(",".join(line.split(",")[:-1]) for line in lines)

        assert main(["run", str(path)]) == 0
        first = strip_wall_clock((tmp_path / "out" / "results.csv").read_text())
        assert main(["run", str(path)]) == 0
        second = strip_wall_clock((tmp_path / "out" / "results.csv").read_text())
        identical = first == second

        layer_a, _ = train_layer(data, cfg)
        layer_b, _ = train_layer(data, cfg)
        bit_identical = (np.array_equal(layer_a.U, layer_b.U)
                         and np.array_equal(layer_a.V, layer_b.V))

        ok = one_pass and identical and bit_identical
        assert report("7 (one-pass and determinism contracts)", ok,
                      f"one_pass={one_pass} rerun_identical={identical} "
                      f"retrain_bitwise={bit_identical}")


class TestCriterion8MetricOracles:
    def test_metric_oracle_equivalence(self):
        rng = np.random.default_rng(108)
        worst = 0.0
        for _ in range(100):
            n, t, d = (int(rng.integers(3, 8)) for _ in range(3))
            y = rng.standard_normal((n + 2, t))
            p = rng.standard_normal((n + 2, t))
            per_task = []
            for j in range(t):
                sse = sum((y[i, j] - p[i, j]) ** 2 for i in range(n + 2))
                mean_j = sum(y[i, j] for i in range(n + 2)) / (n + 2)
                sst = sum((y[i, j] - mean_j) ** 2 for i in range(n + 2))
                per_task.append(sse / sst)
            worst = max(worst, abs(anmse(y, p) - float(np.mean(per_task))))

            a = rng.standard_normal((n + 2, t))
            b = rng.standard_normal((n + 2, max(1, t - 1)))
            vals = [abs(float(a[:, i] @ b[:, j]))
                    / (math.sqrt(float(a[:, i] @ a[:, i]))
                       * math.sqrt(float(b[:, j] @ b[:, j])))
                    for i in range(a.shape[1]) for j in range(b.shape[1])]
            summary = mutual_coherence(a, b)
            worst = max(worst, abs(summary.max_coherence - max(vals)),
                        abs(summary.mean_coherence - float(np.mean(vals))))

            u1 = rng.standard_normal((t + 2, 3))
            u2 = rng.standard_normal((t + 2, 3))
            num = math.sqrt(sum((u1[i, j] - u2[i, j]) ** 2
                                for i in range(t + 2) for j in range(3)))
            den = math.sqrt(sum(u1[i, j] ** 2 for i in range(t + 2) for j in range(3)))
            worst = max(worst, abs(subspace_difference(u1, u2) - num / den))

            w1 = rng.standard_normal((t, d + 2))
            w2 = rng.standard_normal((t, d + 2))
            got = weight_correlations(w1, w2)
            for j in range(t):
                xa, xb = w1[j], w2[j]
                ma, mb = xa.mean(), xb.mean()
                r = (float(np.sum((xa - ma) * (xb - mb)))
                     / (math.sqrt(float(np.sum((xa - ma) ** 2)))
                        * math.sqrt(float(np.sum((xb - mb) ** 2)))))
                worst = max(worst, abs(got[j] - r))
        ok = worst < 1e-10
        assert report("8 (metric oracle equivalence)", ok,
                      f"worst deviation over 100 instances = {worst:.1e}")


class TestCriterion9RankSensitivity:
    def test_rank_sweep(self):
        """Known red on the spread clause: with i.i.d. Gaussian planted
        factors the top singular direction of the planted coefficient matrix
        carries only ~40% of the signal energy, so a rank-1 model
        necessarily scores an ANMSE far above the rank-5 model and the
        spread cannot come close to 0.01 on planted data (the 0.01 figure
        matches correlated real-data behavior instead)."""
        curves = []
        ranks = [1, 3, 5, 10]
        for seed in range(5):
            data, _ = gen_single_layer(sigma=3.0, seed=seed + 2000, **DESK)
            train, valid = split(data, 0.8, seed=seed)
            vals = []
            for rank in ranks:
                cfg, sigma0 = scaled_config(train.Y, rank=rank, seed=seed)
                layer, _ = train_layer(train, cfg, sigma=sigma0)
                vals.append(anmse(valid.Y, predict_batch(layer, valid.X)))
            curves.append(vals)
        med = np.median(np.array(curves), axis=0)
        best = ranks[int(np.argmin(med))]
        spread = float(med.max() - med.min())
        ok = best in (3, 5) and spread < 0.01
        assert report(
            "9 (rank sensitivity)", ok,
            "ANMSE " + " ".join(f"R{r}={v:.4f}" for r, v in zip(ranks, med))
            + f", min at R={best}, spread={spread:.4f}")


class TestCriterion10RoundTrips:
    def test_csv_and_model_round_trips(self, tmp_path):
        data, _ = gen_single_layer(40, 6, 4, 2, 1.3, seed=9000)
        fx, fy = tmp_path / "x.csv", tmp_path / "y.csv"
        save_csv(data, fx, fy)
        back = load_csv(fx, fy)
        csv_ok = (np.array_equal(back.X, data.X) and np.array_equal(back.Y, data.Y))

        layer, _ = train_layer(data, TrainConfig(rank=2, seed=1))
        net = SubspaceNetwork(layers=[layer], skip_mode="concat")
        model_path = tmp_path / "model.ssnw"
        save_model(net, model_path)
        loaded = load_model(model_path)
        xs = np.random.default_rng(2).standard_normal((100, 6))
        model_ok = np.array_equal(forward_batch(loaded, xs), forward_batch(net, xs))

        blob = model_path.read_bytes()
        model_path.write_bytes(blob[:-9])
        loud = False
        try:
            load_model(model_path)
        except sn.errors.ModelFormatError:
            loud = True

        bad_cell = False
        fy.write_text(fy.read_text().replace(fy.read_text().splitlines()[1],
                                             "not,a,number,x", 1))
        try:
            load_csv(fx, fy)
        except sn.errors.ParseError:
            bad_cell = True

        ok = csv_ok and model_ok and loud and bad_cell
        assert report("10 (round trips and loud corruption)", ok,
                      f"csv={csv_ok} model={model_ok} "
                      f"truncation_loud={loud} csv_reject={bad_cell}")
