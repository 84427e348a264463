import numpy as np
import pytest
import torch

import oracles
import presspose as pp
from presspose.adapters import MockPoseAdapter
from presspose.datasets import TrainingSample
from presspose.errors import ConfigError, NumericalError, ShapeError
from presspose.polishnet import PolishNetConfig, init_polishnet
from presspose.training import (
    LossWeights,
    TrainConfig,
    heatmap_loss,
    learning_rate_at,
    lambda_sweep,
    make_split_plan,
    paf_loss,
    pixel_loss,
    total_loss,
    train,
    SweepConfig,
    write_loss_trace,
)

SIZE = (64, 32)


def toy_setup(n_frames=6, data_seed=1, adapter_seed=3, gain=1.0, widths=(6, 8, 10)):
    seq, store = pp.make_synthetic_recording(n_frames, SIZE, seed=data_seed)
    adapter = MockPoseAdapter(adapter_seed, gain=gain)
    samples = pp.build_training_samples(seq, store, SIZE, adapter.output_scale)
    net = init_polishnet(PolishNetConfig(channel_widths=widths, working_size=SIZE), seed=0)
    return net, adapter, samples, seq, store


class TestLossTerms:
    def test_identical_maps_give_zero(self, rng):
        maps = rng.normal(size=(4, 4, 14))
        assert heatmap_loss(maps, maps.copy()) == 0.0

    def test_constant_unit_difference_on_one_channel(self):
        gt = np.zeros((5, 7, 14))
        pred = gt.copy()
        pred[:, :, 3] = 1.0
        assert heatmap_loss(pred, gt) == 35.0  # H*W

    def test_single_unit_pixel_in_paf(self):
        gt = np.zeros((4, 4, 28))
        pred = gt.copy()
        pred[1, 2, 9] = 1.0
        assert paf_loss(pred, gt) == 1.0

    def test_pixel_loss_closed_form(self):
        assert pixel_loss(np.zeros((2, 2, 3)), np.ones((2, 2, 3))) == 12.0

    def test_heatmap_matches_triple_loop_oracle(self, rng):
        for _ in range(10):
            pred = rng.normal(size=(4, 4, 14))
            gt = rng.normal(size=(4, 4, 14))
            mask = rng.random(14) > 0.3
            got = heatmap_loss(pred, gt, mask)
            want = oracles.sq_sum_oracle(pred, gt, mask)
            assert got == pytest.approx(want, rel=1e-12)

    def test_paf_matches_triple_loop_oracle(self, rng):
        for _ in range(10):
            pred = rng.normal(size=(3, 5, 28))
            gt = rng.normal(size=(3, 5, 28))
            got = paf_loss(pred, gt)
            assert got == pytest.approx(oracles.sq_sum_oracle(pred, gt), rel=1e-12)

    def test_integer_fixtures_exact(self, rng):
        pred = rng.integers(-3, 4, size=(4, 4, 14)).astype(np.float64)
        gt = rng.integers(-3, 4, size=(4, 4, 14)).astype(np.float64)
        assert heatmap_loss(pred, gt) == oracles.sq_sum_oracle(pred, gt)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ShapeError):
            heatmap_loss(np.zeros((4, 4, 14)), np.zeros((4, 5, 14)))
        with pytest.raises(ShapeError):
            paf_loss(np.zeros((4, 4, 14)), np.zeros((4, 4, 14)))
        with pytest.raises(ShapeError):
            pixel_loss(np.zeros((2, 2, 3)), np.zeros((2, 3, 3)))

    def test_symmetry_and_nonnegativity(self, rng):
        pred = rng.normal(size=(4, 4, 14))
        gt = rng.normal(size=(4, 4, 14))
        assert heatmap_loss(pred, gt) == heatmap_loss(gt, pred) >= 0.0

    def test_masked_channels_contribute_zero_loss_and_gradient(self):
        pred = torch.rand(14, 4, 4, dtype=torch.float64, requires_grad=True)
        gt = torch.zeros(14, 4, 4, dtype=torch.float64)
        mask = np.zeros(14, dtype=bool)
        mask[2] = True
        loss = heatmap_loss(pred, gt, mask, channel_axis=0)
        assert loss.item() == pytest.approx(float((pred[2] ** 2).sum()), rel=1e-12)
        loss.backward()
        grads = pred.grad.numpy()
        assert not grads[[k for k in range(14) if k != 2]].any()
        assert grads[2].any()


class TestTotalLoss:
    def test_weighted_sum_with_published_weights(self):
        assert total_loss(2.0, 3.0, 30000.0, LossWeights()) == pytest.approx(6.0)

    def test_all_zero(self):
        assert total_loss(0.0, 0.0, 0.0, LossWeights()) == 0.0

    def test_zero_pixel_weight_drops_term(self):
        w = LossWeights(lambda_pixel=0.0)
        assert total_loss(1.5, 2.5, 1e9, w) == 4.0

    def test_nan_raises(self):
        with pytest.raises(NumericalError):
            total_loss(float("nan"), 0.0, 0.0, LossWeights())

    def test_negative_weight_rejected(self):
        with pytest.raises(ConfigError):
            LossWeights(lambda_paf=-1.0)


class TestSchedule:
    def test_decay_boundaries(self):
        cfg = TrainConfig()
        assert learning_rate_at(cfg, 0) == 1e-4
        assert learning_rate_at(cfg, 99) == 1e-4
        assert learning_rate_at(cfg, 100) == 1e-4 * 0.95
        assert learning_rate_at(cfg, 199) == 1e-4 * 0.95
        assert learning_rate_at(cfg, 250) == 1e-4 * 0.95**2

    def test_iteration_250_value(self):
        assert learning_rate_at(TrainConfig(), 250) == pytest.approx(9.025e-5, rel=1e-12)

    def test_invalid_configs(self):
        with pytest.raises(ConfigError):
            TrainConfig(learning_rate=0.0)
        with pytest.raises(ConfigError):
            TrainConfig(decay_rate=1.5)


class TestSplitPlan:
    def test_thirteen_subjects(self):
        plan = make_split_plan(list(range(1, 14)), holdout=2, seed=0)
        assert len(plan.folds) == 11
        assert len(plan.holdout_validation_subjects) == 2

    def test_test_subject_absent_from_train(self):
        plan = make_split_plan(list(range(1, 14)), holdout=2, seed=3)
        for fold in plan.folds:
            assert fold.test_subject not in fold.train_subjects

    def test_fold_tests_partition_non_holdout_subjects(self):
        subjects = list(range(1, 14))
        plan = make_split_plan(subjects, holdout=2, seed=1)
        tests = {f.test_subject for f in plan.folds}
        assert tests == set(subjects) - set(plan.holdout_validation_subjects)

    def test_deterministic_per_seed(self):
        a = make_split_plan(list(range(1, 14)), seed=5)
        b = make_split_plan(list(range(1, 14)), seed=5)
        assert a == b

    def test_too_few_subjects(self):
        with pytest.raises(ConfigError):
            make_split_plan([1, 2, 3], holdout=2)


class TestTrainLoop:
    def test_adapter_frozen_and_polish_updated(self):
        net, adapter, samples, _, _ = toy_setup()
        before_adapter = adapter.checksum()
        before_net = net.checksum()
        train(net, adapter, samples, TrainConfig(max_iterations=5, batch_size=4))
        assert adapter.checksum() == before_adapter
        assert net.checksum() != before_net

    def test_trace_schema_and_schedule(self):
        net, adapter, samples, _, _ = toy_setup()
        result = train(net, adapter, samples, TrainConfig(max_iterations=7, batch_size=3))
        assert [r.iteration for r in result.trace] == list(range(7))
        assert all(r.lr == 1e-4 for r in result.trace)
        assert all(r.e_total >= 0 for r in result.trace)

    def test_deterministic_given_seed(self):
        runs = []
        for _ in range(2):
            net, adapter, samples, _, _ = toy_setup()
            result = train(net, adapter, samples, TrainConfig(max_iterations=6, batch_size=4, seed=9))
            runs.append((result.trace, net.checksum()))
        assert runs[0][0] == runs[1][0]
        assert runs[0][1] == runs[1][1]

    def test_loss_decreases_on_toy_run(self):
        net, adapter, samples, _, _ = toy_setup(gain=2.0, widths=(8, 12, 16))
        result = train(net, adapter, samples, TrainConfig(max_iterations=60, batch_size=6))
        assert result.trace[-1].e_total < result.trace[0].e_total

    def test_non_finite_loss_aborts_and_restores(self):
        net, adapter, samples, _, _ = toy_setup()
        bad = [
            TrainingSample(
                image=s.image,
                heatmaps=np.full_like(s.heatmaps, np.nan),
                pafs=s.pafs,
                heatmap_mask=s.heatmap_mask,
                paf_mask=s.paf_mask,
                frame_ref=s.frame_ref,
            )
            for s in samples
        ]
        before = net.checksum()
        with pytest.raises(NumericalError):
            train(net, adapter, bad, TrainConfig(max_iterations=3, batch_size=2))
        assert net.checksum() == before  # nothing good ever happened; params intact

    def test_empty_dataset_rejected(self):
        net, adapter, _, _, _ = toy_setup()
        with pytest.raises(ConfigError):
            train(net, adapter, [], TrainConfig(max_iterations=1))

    def test_loss_trace_csv(self, tmp_path):
        net, adapter, samples, _, _ = toy_setup()
        result = train(net, adapter, samples, TrainConfig(max_iterations=3, batch_size=2))
        path = write_loss_trace(result.trace, tmp_path / "trace.csv")
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "iteration,lr,E_heatmap,E_PAF,E_pixel,E_total"
        assert len(lines) == 4

    def test_early_stopping_restores_best(self):
        net, adapter, samples, seq, store = toy_setup(n_frames=8)
        holdout = pp.build_eval_samples(seq, store, SIZE)
        cfg = TrainConfig(max_iterations=50, batch_size=4, eval_every=2, patience=2)
        result = train(net, adapter, samples, cfg, holdout=holdout)
        assert result.stopped_early or len(result.trace) == 50
        if result.stopped_early:
            assert result.best_holdout_auc is not None


class TestLambdaSweep:
    def _sweep_config(self):
        net_cfg = PolishNetConfig(channel_widths=(6, 8, 10), working_size=SIZE)
        seq, store = pp.make_synthetic_recording(5, SIZE, seed=2)
        adapter = MockPoseAdapter(4)
        samples = pp.build_training_samples(seq, store, SIZE, adapter.output_scale)
        evals = pp.build_eval_samples(seq, store, SIZE)
        return SweepConfig(
            polish_config=net_cfg,
            polish_seed=0,
            adapter=adapter,
            train_samples=samples,
            eval_train=evals,
            eval_test=evals,
            train_config=TrainConfig(max_iterations=4, batch_size=5),
        )

    def test_row_per_value_in_order(self):
        rows = lambda_sweep([1e-5, 1e-3, 1e-1], self._sweep_config())
        assert [r.lambda_pixel for r in rows] == [1e-5, 1e-3, 1e-1]

    def test_duplicate_values_identical_rows(self):
        rows = lambda_sweep([1e-4, 1e-4], self._sweep_config())
        assert rows[0] == rows[1]._replace() if hasattr(rows[1], "_replace") else rows[0] == rows[1]

    def test_nonpositive_value_rejected(self):
        with pytest.raises(ConfigError):
            lambda_sweep([0.0], self._sweep_config())
