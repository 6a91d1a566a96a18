import pytest

from vicount.config import RunConfig
from vicount.models import SceneConfig
from vicount.pipeline import compare_association, count_video, evaluate_counts, interval_sweep, sweep_trend, train
from vicount.simulator import simulate


def _churn_scenes(count=3, duration=600, seed=100):
    """Busy scenes: one arrival per frame and a 5% per-frame exit hazard"""
    return [simulate(SceneConfig(duration=duration, entry_rate=1.0, exit_rate=0.05, appearance_dim=256,
                                 rng_seed=seed + k), video_id=f"churn-{seed + k}")
            for k in range(count)]


@pytest.mark.slow
def test_transport_beats_hungarian_under_churn():
    rows = {row["method"]: row for row in compare_association(_churn_scenes(), 20)}
    assert rows["transport"]["mae"] < rows["hungarian"]["mae"]
    assert rows["transport"]["miae"] < rows["hungarian"]["miae"]


@pytest.mark.slow
def test_error_grows_with_sampling_interval():
    rows = interval_sweep(_churn_scenes(), [20, 40, 60, 80, 120, 160])
    assert sweep_trend(rows) > 0.8


@pytest.mark.slow
def test_trained_dust_score_beats_hungarian():
    scenes = _churn_scenes(count=2, duration=300)
    config = RunConfig(proposal_source="gt", epochs=2, sigma=0.05, sinkhorn_iters=100)
    result = train(scenes, 20, config)
    assert len(result.trace) == 80
    assert 0.0 < result.params.dust_score < 1.0

    held_out = _churn_scenes(count=2, duration=300, seed=200)
    eval_config = config.replace(descriptor_mode="trained-encoder")
    rows = {row["method"]: row for row in compare_association(held_out, 20, result.params, eval_config)}
    assert rows["transport"]["mae"] < rows["hungarian"]["mae"]


@pytest.mark.slow
def test_trained_encoder_counts_default_scenes():
    training = [simulate(SceneConfig(rng_seed=300 + k), video_id=f"train-{k}") for k in range(2)]
    config = RunConfig(proposal_source="gt", epochs=2, sigma=0.05, sinkhorn_iters=100)
    result = train(training, 20, config)

    videos = [simulate(SceneConfig(rng_seed=400 + k), video_id=f"eval-{k}") for k in range(20)]
    count_config = config.replace(descriptor_mode="trained-encoder", sigma=0.02, sinkhorn_iters=500)
    report = evaluate_counts([count_video(seq, 30, result.params, config=count_config) for seq in videos], videos)
    assert report.wrae_percent < 5.0
    assert report.miae < 1.0
    assert report.moae < 1.0
