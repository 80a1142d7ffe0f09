import math

import numpy as np
import pytest

from adbank.adapters import Adapter, AdapterSet, adapter_forward, init_adapter_set
from adbank.errors import ContractViolationError, DataError
from adbank.featio import FeatureSample, StageGrid, TextBank
from adbank.numcore import RandomStream
from adbank.scoring import anomaly_probs
from adbank.training import (
    TrainConfig,
    ce_grad,
    ce_loss,
    dice_grad,
    dice_loss,
    focal_grad,
    focal_loss,
    sample_losses,
    sample_losses_and_grads,
    train_adapter_set,
)

TAU = 0.07


def text_bank(dim=6):
    n = np.zeros(dim)
    n[0] = 1.0
    a = np.zeros(dim)
    a[1] = 1.0
    return TextBank(n, a)


def make_sample(rng, label, grid=(2, 2), dim=6, sample_id="s"):
    h, w = grid
    stages = [StageGrid(h, w, rng.randn(h * w, dim)) for _ in range(4)]
    mask = None
    if label == "anomalous":
        mask = np.zeros(grid, dtype=np.uint8)
        mask[0, 0] = 1
    return FeatureSample(sample_id, "c", label, stages, mask)


def random_adapter_set(rng, dim=6, hidden=2, scale=0.3):
    return AdapterSet(
        [
            Adapter(l, rng.randn(hidden, dim) * scale, rng.randn(dim, hidden) * scale)
            for l in range(1, 5)
        ]
    )


class TestCeLoss:
    def test_perfect_prediction_near_zero(self):
        probs = np.array([1.0 - 1e-7, 1e-7, 1e-7, 1.0 - 1e-7])
        mask = np.array([1.0, 0.0, 0.0, 1.0])
        assert ce_loss(probs, mask) <= 1e-6

    def test_half_everywhere_is_ln2(self):
        probs = np.full(9, 0.5)
        assert abs(ce_loss(probs, np.zeros(9)) - math.log(2.0)) < 1e-12

    def test_matches_per_cell_oracle(self):
        rng = np.random.RandomState(0)
        probs = rng.rand(3, 3)
        mask = (rng.rand(3, 3) < 0.5).astype(float)
        expected = 0.0
        for i in range(3):
            for j in range(3):
                p = min(max(probs[i, j], 1e-7), 1 - 1e-7)
                expected += -(mask[i, j] * math.log(p) + (1 - mask[i, j]) * math.log(1 - p))
        expected /= 9
        assert abs(ce_loss(probs, mask) - expected) < 1e-12

    def test_dims_mismatch(self):
        with pytest.raises(ContractViolationError):
            ce_loss(np.zeros(4), np.zeros(5))


class TestFocalLoss:
    def test_gamma_zero_alpha_half_is_half_ce(self):
        rng = np.random.RandomState(1)
        probs = rng.rand(12)
        mask = (rng.rand(12) < 0.4).astype(float)
        assert abs(focal_loss(probs, mask, 0.0, 0.5) - 0.5 * ce_loss(probs, mask)) < 1e-12

    def test_perfect_prediction_is_zero(self):
        probs = np.array([1.0, 1.0, 0.0])
        mask = np.array([1.0, 1.0, 0.0])
        assert focal_loss(probs, mask, 2.0, 0.25) < 1e-12

    def test_single_cell_closed_form(self):
        # p_t = 0.9 positive cell: 0.25 * (0.1)^2 * (-ln 0.9)
        value = focal_loss(np.array([0.9]), np.array([1.0]), 2.0, 0.25)
        expected = 0.25 * 0.01 * -math.log(0.9)
        assert abs(value - expected) < 1e-10
        assert abs(expected - 2.634e-4) < 2e-7


class TestDiceLoss:
    def test_perfect_binary_match_is_eps_limited(self):
        mask = np.array([1.0, 1.0, 0.0, 0.0])
        value = dice_loss(mask, mask, 1.0)
        assert value <= 1.0 / (2 * 2 + 1.0)

    def test_all_zero_degenerate_is_zero(self):
        assert dice_loss(np.zeros(5), np.zeros(5), 1.0) == 0.0

    def test_hand_case(self):
        probs = np.full((2, 2), 0.5)
        mask = np.array([[1.0, 1.0], [0.0, 0.0]])
        assert abs(dice_loss(probs, mask, 1.0) - 0.4) < 1e-12

    def test_range(self):
        rng = np.random.RandomState(2)
        for _ in range(50):
            probs = rng.rand(10)
            mask = (rng.rand(10) < 0.5).astype(float)
            value = dice_loss(probs, mask, 1.0)
            assert 0.0 <= value < 1.0


def oracle_sample_losses(sample, adapter_set, text, cfg, tau, noise):
    """Independent straight-line recomputation with explicit loops."""

    def probs_of(feats, w1, w2):
        z = (w2 @ (w1 @ feats.T)).T
        out = []
        for g in range(z.shape[0]):
            r = math.sqrt(float(np.dot(z[g], z[g])))
            if r == 0:
                out.append(0.5)
                continue
            sn = float(np.dot(z[g], text.normal_vec)) / r
            sa = float(np.dot(z[g], text.anomaly_vec)) / r
            out.append(1.0 / (1.0 + math.exp(-(sa - sn) / tau)))
        return out

    def ce(ps, ms):
        total = 0.0
        for p, m in zip(ps, ms):
            p = min(max(p, 1e-7), 1 - 1e-7)
            total += -(m * math.log(p) + (1 - m) * math.log(1 - p))
        return total / len(ps)

    def focal(ps, ms):
        total = 0.0
        for p, m in zip(ps, ms):
            p = min(max(p, 1e-7), 1 - 1e-7)
            pt = p if m else 1 - p
            at = cfg.focal_alpha if m else 1 - cfg.focal_alpha
            total += -at * (1 - pt) ** cfg.focal_gamma * math.log(pt)
        return total / len(ps)

    def dice(ps, ms):
        inter = sum(p * m for p, m in zip(ps, ms))
        union = sum(ps) + sum(ms)
        return 1.0 - (2 * inter + cfg.dice_eps) / (union + cfg.dice_eps)

    l_no = l_an = l_syn = 0.0
    for idx, (stage, adapter) in enumerate(zip(sample.stages, adapter_set.adapters)):
        ps = probs_of(stage.data, adapter.w1, adapter.w2)
        if sample.label == "normal":
            zeros = [0.0] * len(ps)
            l_no += ce(ps, zeros) + dice(ps, zeros) + focal(ps, zeros)
            ps_syn = probs_of(stage.data + noise[idx], adapter.w1, adapter.w2)
            l_syn += ce(ps_syn, [1.0] * len(ps_syn))
        else:
            from adbank.featio import pool_mask_to_grid

            ms = pool_mask_to_grid(sample.mask, stage.height, stage.width).ravel().tolist()
            l_an += dice(ps, ms) + focal(ps, ms)
    return l_no, l_an, l_syn


class TestSampleLosses:
    def test_normal_sample_well_posed(self):
        rng = np.random.RandomState(3)
        sample = make_sample(rng, "normal")
        adapter_set = init_adapter_set([6, 6, 6, 6], RandomStream(0))
        breakdown = sample_losses(
            sample, adapter_set, text_bank(), TrainConfig(), TAU, stream=RandomStream(1)
        )
        assert np.isfinite(breakdown.l_total) and breakdown.l_total > 0
        assert abs(breakdown.l_total - (breakdown.l_no + breakdown.l_an + breakdown.l_syn)) < 1e-9

    def test_anomalous_sample_branch_gating(self):
        rng = np.random.RandomState(4)
        sample = make_sample(rng, "anomalous")
        adapter_set = random_adapter_set(rng)
        breakdown = sample_losses(sample, adapter_set, text_bank(), TrainConfig(), TAU)
        assert breakdown.l_syn == 0.0
        assert breakdown.l_no == 0.0
        assert breakdown.l_an > 0.0

    def test_branch_structure(self):
        rng = np.random.RandomState(5)
        cfg = TrainConfig()
        bank = text_bank()
        normal = make_sample(rng, "normal")
        adapter_set = random_adapter_set(rng)
        b_norm = sample_losses(normal, adapter_set, bank, cfg, TAU, stream=RandomStream(2))
        for stage_terms in b_norm.per_stage:
            assert set(stage_terms.keys()) == {"no", "syn"}
            assert set(stage_terms["no"].keys()) == {"ce", "dice", "focal"}
            assert set(stage_terms["syn"].keys()) == {"ce"}
        anom = make_sample(rng, "anomalous")
        b_anom = sample_losses(anom, adapter_set, bank, cfg, TAU)
        for stage_terms in b_anom.per_stage:
            assert set(stage_terms.keys()) == {"an"}
            assert set(stage_terms["an"].keys()) == {"dice", "focal"}

    def test_anomalous_without_mask_is_error(self):
        rng = np.random.RandomState(6)
        sample = make_sample(rng, "anomalous")
        sample = FeatureSample(sample.sample_id, "c", "anomalous", sample.stages, None)
        with pytest.raises(DataError):
            sample_losses(sample, random_adapter_set(rng), text_bank(), TrainConfig(), TAU)

    @pytest.mark.parametrize("label", ["normal", "anomalous"])
    def test_matches_straight_line_oracle(self, label):
        rng = np.random.RandomState(7)
        dim, hidden = 3, 2
        stages = [StageGrid(2, 2, rng.randint(-3, 4, (4, dim)).astype(float)) for _ in range(4)]
        mask = None
        if label == "anomalous":
            mask = np.zeros((2, 2), dtype=np.uint8)
            mask[1, 0] = 1
        sample = FeatureSample("tiny", "c", label, stages, mask)
        adapter_set = AdapterSet(
            [
                Adapter(
                    l,
                    rng.randint(-2, 3, (hidden, dim)).astype(float) * 0.5,
                    rng.randint(-2, 3, (dim, hidden)).astype(float) * 0.5,
                )
                for l in range(1, 5)
            ]
        )
        bank = text_bank(dim)
        cfg = TrainConfig()
        noise = [rng.randn(4, dim) * 0.1 for _ in range(4)]
        breakdown = sample_losses(sample, adapter_set, bank, cfg, TAU, noise=noise)
        l_no, l_an, l_syn = oracle_sample_losses(sample, adapter_set, bank, cfg, TAU, noise)
        assert abs(breakdown.l_no - l_no) < 1e-10
        assert abs(breakdown.l_an - l_an) < 1e-10
        assert abs(breakdown.l_syn - l_syn) < 1e-10

    def test_syn_branch_beta_zero_equals_all_ones_ce_on_real_features(self):
        # With zero noise the synthetic branch is exactly an all-ones-target
        # CE on the real adapted features (so their gradients agree too).
        rng = np.random.RandomState(8)
        sample = make_sample(rng, "normal")
        adapter_set = random_adapter_set(rng)
        bank = text_bank()
        cfg = TrainConfig(beta=0.0)
        zero_noise = [np.zeros_like(s.data) for s in sample.stages]
        breakdown = sample_losses(sample, adapter_set, bank, cfg, TAU, noise=zero_noise)
        expected = 0.0
        for stage, adapter in zip(sample.stages, adapter_set.adapters):
            probs = anomaly_probs(adapter_forward(adapter, stage.data), bank, TAU)
            expected += ce_loss(probs, np.ones_like(probs))
        assert abs(breakdown.l_syn - expected) < 1e-12


def finite_difference_grads(sample, adapter_set, bank, cfg, noise, step=1e-5):
    def total():
        return sample_losses(sample, adapter_set, bank, cfg, TAU, noise=noise).l_total

    fd_w1, fd_w2 = [], []
    for adapter in adapter_set.adapters:
        for weights, store in ((adapter.w1, fd_w1), (adapter.w2, fd_w2)):
            grad = np.zeros_like(weights)
            it = np.nditer(weights, flags=["multi_index"])
            while not it.finished:
                idx = it.multi_index
                original = weights[idx]
                weights[idx] = original + step
                up = total()
                weights[idx] = original - step
                down = total()
                weights[idx] = original
                grad[idx] = (up - down) / (2 * step)
                it.iternext()
            store.append(grad)
    return fd_w1, fd_w2


def relative_error(a, b):
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / denom


class TestGradients:
    @pytest.mark.parametrize("label", ["normal", "anomalous"])
    def test_analytic_matches_finite_differences(self, label):
        rng = np.random.RandomState(9)
        sample = make_sample(rng, label, grid=(2, 4), dim=6)
        adapter_set = random_adapter_set(rng, dim=6, hidden=2)
        bank = text_bank()
        cfg = TrainConfig()
        noise = (
            [rng.randn(*s.data.shape) * 0.5 for s in sample.stages]
            if label == "normal"
            else None
        )
        _, grads = sample_losses_and_grads(
            sample, adapter_set, bank, cfg, TAU, noise=noise
        )
        fd_w1, fd_w2 = finite_difference_grads(sample, adapter_set, bank, cfg, noise)
        for analytic, numeric in zip(grads.d_w1 + grads.d_w2, fd_w1 + fd_w2):
            assert relative_error(analytic, numeric) <= 1e-4

    def test_grad_ce_units(self):
        rng = np.random.RandomState(10)
        probs = rng.rand(20) * 0.8 + 0.1
        mask = (rng.rand(20) < 0.5).astype(float)
        step = 1e-7
        for fn, grad_fn in (
            (lambda p: ce_loss(p, mask), lambda p: ce_grad(p, mask)),
            (
                lambda p: focal_loss(p, mask, 2.0, 0.25),
                lambda p: focal_grad(p, mask, 2.0, 0.25),
            ),
            (
                lambda p: dice_loss(p, mask, 1.0),
                lambda p: dice_grad(p, mask, 1.0),
            ),
        ):
            analytic = grad_fn(probs)
            numeric = np.zeros_like(probs)
            for i in range(len(probs)):
                up = probs.copy()
                up[i] += step
                down = probs.copy()
                down[i] -= step
                numeric[i] = (fn(up) - fn(down)) / (2 * step)
            assert relative_error(analytic, numeric) < 1e-6


def make_separable_samples(rng, n_per_class=4, grid=(4, 4), dim=6):
    """Tiny separable dataset: normal cells near e0, anomalous rects near e1."""
    samples = []
    cells = grid[0] * grid[1]
    for class_idx in range(2):
        mean = np.zeros(dim)
        mean[0] = 1.0
        mean += rng.randn(dim) * 0.05
        anom_mean = mean.copy()
        anom_mean[1] += 0.5
        for j in range(n_per_class):
            stages = [
                StageGrid(*grid, np.tile(mean, (cells, 1)) + rng.randn(cells, dim) * 0.15)
                for _ in range(4)
            ]
            samples.append(
                FeatureSample(f"n{class_idx}_{j}", f"c{class_idx}", "normal", stages)
            )
            mask = np.zeros(grid, dtype=np.uint8)
            mask[1:3, 1:3] = 1
            cell_means = np.where(mask.reshape(cells, 1) > 0, anom_mean, mean)
            stages = [
                StageGrid(*grid, cell_means + rng.randn(cells, dim) * 0.15)
                for _ in range(4)
            ]
            samples.append(
                FeatureSample(f"a{class_idx}_{j}", f"c{class_idx}", "anomalous", stages, mask)
            )
    return samples


class TestTrainAdapterSet:
    def test_epochs_zero_returns_initialized_set(self):
        rng = np.random.RandomState(11)
        samples = make_separable_samples(rng, n_per_class=1)
        result = train_adapter_set(
            samples, text_bank(), TrainConfig(), 0, RandomStream(5)
        )
        fresh = init_adapter_set([6, 6, 6, 6], RandomStream(5).child("init"))
        for a, b in zip(result.adapter_set.adapters, fresh.adapters):
            assert np.array_equal(a.w1, b.w1)
            assert np.array_equal(a.w2, b.w2)
        assert result.epoch_log == []

    def test_same_seed_identical_weights(self):
        rng = np.random.RandomState(12)
        samples = make_separable_samples(rng, n_per_class=2)
        r1 = train_adapter_set(samples, text_bank(), TrainConfig(), 3, RandomStream(6))
        r2 = train_adapter_set(samples, text_bank(), TrainConfig(), 3, RandomStream(6))
        for a, b in zip(r1.adapter_set.adapters, r2.adapter_set.adapters):
            assert np.array_equal(a.w1, b.w1)
            assert np.array_equal(a.w2, b.w2)

    def test_loss_declines_on_separable_data(self):
        rng = np.random.RandomState(13)
        samples = make_separable_samples(rng, n_per_class=4)
        result = train_adapter_set(
            samples, text_bank(), TrainConfig(), 30, RandomStream(7)
        )
        losses = [row["l_total"] for row in result.epoch_log]
        assert losses[-1] < losses[0]
        # over the last 10 epochs the mean loss never rises by more than 5%
        tail = losses[-10:]
        for earlier, later in zip(tail, tail[1:]):
            assert later <= earlier * 1.05

    def test_empty_training_set_rejected(self):
        with pytest.raises(DataError):
            train_adapter_set([], text_bank(), TrainConfig(), 1, RandomStream(8))

    def test_epoch_log_csv_format(self, tmp_path):
        from adbank.training import write_epoch_log

        rng = np.random.RandomState(14)
        samples = make_separable_samples(rng, n_per_class=1)
        result = train_adapter_set(samples, text_bank(), TrainConfig(), 2, RandomStream(9))
        path = tmp_path / "log.csv"
        write_epoch_log(result.epoch_log, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "epoch,l_no,l_an,l_syn,l_total"
        assert len(lines) == 3
        fields = lines[1].split(",")
        assert fields[0] == "0"
        no, an, syn, total = map(float, fields[1:])
        assert abs(total - (no + an + syn)) < 1e-9
