"""Tests for pipeline module"""

import dataclasses

import numpy as np
import pytest

import vicount.pipeline as pmod
from vicount.config import RunConfig
from vicount.density import render_density
from vicount.exceptions import NumericalError, ParameterError
from vicount.models import HeadPoint, PointSet, SceneConfig, SweepRow
from vicount.pipeline import (
    build_training_set,
    compare_association,
    count_video,
    evaluate_counts,
    initial_count,
    interval_sweep,
    solver_config,
    sweep_trend,
    train,
    training_config,
)
from vicount.simulator import distinct_identities, pair_indices, sampled_frames, simulate


def _scene(**overrides):
    values = dict(frame_height=96, frame_width=96, duration=120, initial_count=8, appearance_dim=32, rng_seed=5)
    values.update(overrides)
    return simulate(SceneConfig(**values), video_id=f"scene-{values['rng_seed']}")


def _closed(**overrides):
    return _scene(entry_rate=0.0, exit_rate=0.0, **overrides)


class TestInitialCount:
    """Tests for initial_count"""

    def test_point_set_counts_points(self):
        points = PointSet(0, [HeadPoint(1.0, 1.0), HeadPoint(5.0, 5.0)], 16, 16)
        assert initial_count(points) == 2.0

    def test_density_map_counts_mass(self):
        points = PointSet(0, [HeadPoint(8.0, 8.0), HeadPoint(20.0, 20.0)], 32, 32)
        assert initial_count(render_density(points)) == pytest.approx(2.0)

    def test_frame_modes(self):
        frame = _closed().frames[0]
        assert initial_count(frame) == 8.0
        assert initial_count(frame, "density") == pytest.approx(8.0)
        assert initial_count(frame, "proposals") <= 8.0

    def test_unknown_mode(self):
        with pytest.raises(ParameterError):
            initial_count(_closed().frames[0], "tracks")


class TestCountVideo:
    """Tests for count_video"""

    def test_oracle_counts_distinct_sampled_identities(self):
        seq = _scene(entry_rate=0.5, exit_rate=0.02)
        result = count_video(seq, 20, config=RunConfig(flow_source="oracle"))
        assert result.total == distinct_identities(seq, sampled_frames(seq.duration, 20))
        assert len(result.pairs) == len(pair_indices(seq.duration, 20))
        assert not result.partial

    def test_transport_on_closed_scene_has_no_inflow(self):
        seq = _closed(initial_count=20, appearance_dim=128, duration=200)
        result = count_video(seq, 50)
        assert result.initial_count == 20
        assert abs(result.total - 20) < 0.5
        assert all(pair.decoded_inflow == 0 for pair in result.pairs)

    def test_hungarian_on_closed_scene(self):
        result = count_video(_closed(), 30, config=RunConfig(flow_source="hungarian"))
        assert result.total == 8.0

    def test_total_is_first_count_plus_inflows(self):
        seq = _scene(entry_rate=0.3)
        result = count_video(seq, 25)
        assert result.total == pytest.approx(result.initial_count + sum(result.inflows))

    def test_appended_frames_keep_prefix_flows(self):
        seq = _scene(entry_rate=0.3)
        prefix = count_video(dataclasses.replace(seq, frames=seq.frames[:41]), 10)
        full = count_video(seq, 10)
        assert [(p.t0, p.t1) for p in prefix.pairs] == [(p.t0, p.t1) for p in full.pairs[:4]]
        assert prefix.inflows == pytest.approx(full.inflows[:4])
        assert full.total >= prefix.total

    def test_thread_pool_matches_serial(self):
        seq = _scene(entry_rate=0.3)
        serial = count_video(seq, 25, config=RunConfig(max_workers=1))
        pooled = count_video(seq, 25, config=RunConfig(max_workers=3))
        assert [p.inflow for p in pooled.pairs] == [p.inflow for p in serial.pairs]
        assert pooled.total == serial.total

    def test_single_frame(self):
        result = count_video(_closed(duration=1), 10)
        assert result.pairs == [] and result.total == 8.0

    def test_failing_pair_gives_partial_result(self, monkeypatch):
        seq = _scene(entry_rate=0.3)
        pairs = pair_indices(seq.duration, 30)
        original = pmod._count_pair

        def flaky(t0, t1, *args):
            if t0 == pairs[1][0]:
                raise NumericalError("non-finite value", iteration=3)
            return original(t0, t1, *args)

        monkeypatch.setattr(pmod, "_count_pair", flaky)
        result = count_video(seq, 30)
        assert result.partial
        assert result.failed_pair == 1
        assert len(result.pairs) == 1
        assert result.total == pytest.approx(result.initial_count + result.pairs[0].inflow)

    def test_trained_encoder_mode_needs_encoder(self):
        with pytest.raises(ParameterError):
            count_video(_closed(), 30, config=RunConfig(descriptor_mode="trained-encoder"))

    def test_missing_features_rejected(self):
        seq = _closed()
        for frame in seq.frames:
            frame.raw_features = None
        with pytest.raises(ParameterError):
            count_video(seq, 30)

    def test_proposal_points(self):
        seq = _closed()
        result = count_video(seq, 40, config=RunConfig(point_mode="proposals"))
        assert result.initial_count == pytest.approx(8.0)
        assert not result.partial

    def test_tau_must_fit_video(self):
        with pytest.raises(ParameterError):
            count_video(_closed(), 500)


def test_solver_config_from_run_config():
    cfg = solver_config(RunConfig(sigma=0.1, sinkhorn_iters=40, log_domain=False))
    assert (cfg.sigma, cfg.iterations, cfg.log_domain) == (0.1, 40, False)


class TestSweep:
    """Tests for interval_sweep and sweep_trend"""

    def test_closed_scene_has_no_error_at_any_interval(self):
        rows = interval_sweep([_closed(), _closed(rng_seed=6)], [10, 40], config=RunConfig(flow_source="oracle"))
        assert [row.tau for row in rows] == [10, 40]
        assert all(row.mae == 0.0 for row in rows)

    def test_trend(self):
        rows = [SweepRow(tau=t, mae=m, mse=m, wrae=m) for t, m in [(10, 1.0), (20, 2.0), (40, 3.5), (80, 3.0)]]
        assert sweep_trend(rows) == pytest.approx(0.8)
        assert sweep_trend(rows, min_tau=20) == pytest.approx(0.5)

    def test_trend_needs_two_rows(self):
        with pytest.raises(ParameterError):
            sweep_trend([SweepRow(tau=10, mae=1.0, mse=1.0, wrae=1.0)])

    def test_empty_taus(self):
        with pytest.raises(ParameterError):
            interval_sweep(_closed(), [])


class TestEvaluateCounts:
    """Tests for evaluate_counts and compare_association"""

    def test_oracle_flows_are_exact(self):
        seqs = [_scene(entry_rate=0.5, exit_rate=0.02), _scene(entry_rate=0.5, exit_rate=0.02, rng_seed=8)]
        config = RunConfig(flow_source="oracle")
        report = evaluate_counts([count_video(seq, 20, config=config) for seq in seqs], seqs)
        assert report.mae == 0.0
        assert report.miae == 0.0 and report.moae == 0.0
        assert [row["video_id"] for row in report.per_video] == ["scene-5", "scene-8"]

    def test_result_count_must_match(self):
        seq = _closed()
        with pytest.raises(ParameterError):
            evaluate_counts([], [seq])

    def test_compare_association_rows(self):
        rows = compare_association(_scene(entry_rate=0.5, exit_rate=0.02), 20)
        assert [row["method"] for row in rows] == ["transport", "hungarian"]
        assert set(rows[0]) == {"method", "mae", "mse", "wrae", "miae", "moae"}


class TestTraining:
    """Tests for training_config, build_training_set and train"""

    def test_training_config_unrolls_naive_domain(self):
        cfg = training_config(RunConfig(sigma=0.1, sinkhorn_iters=25, optimizer="sgd", momentum=0.5))
        assert cfg.solver.log_domain is False
        assert (cfg.solver.sigma, cfg.solver.iterations) == (0.1, 25)
        assert (cfg.optimizer, cfg.momentum) == ("sgd", 0.5)

    def test_ground_truth_training_set(self):
        seqs = [_scene(entry_rate=0.3), _scene(entry_rate=0.3, rng_seed=9)]
        examples = build_training_set(seqs, 4, RunConfig(proposal_source="gt"))
        assert len(examples) == 8
        for ex in examples:
            assert ex.x_raw.shape[0] == ex.gt.m and ex.y_raw.shape[0] == ex.gt.n
            ex.gt.validate()

    def test_training_set_with_proposals(self):
        examples = build_training_set(_scene(entry_rate=0.3), 3, RunConfig(proposal_source="gt+pred"))
        assert len(examples) == 3
        for ex in examples:
            assert ex.x_raw.shape == (ex.gt.m, 32)
            ex.gt.validate()

    def test_train_small(self):
        config = RunConfig(proposal_source="gt", sigma=0.1, sinkhorn_iters=30, epochs=1, descriptor_dim=32)
        result = train(_scene(entry_rate=0.3), 4, config)
        assert len(result.trace) == 4
        assert result.params.d_in == 32 and result.params.d_out == 32
        assert np.all(np.isfinite(result.params.weight))

    def test_train_needs_features(self):
        seq = _scene()
        for frame in seq.frames:
            frame.raw_features = None
        with pytest.raises(ParameterError):
            train(seq, 2, RunConfig(proposal_source="gt"))
