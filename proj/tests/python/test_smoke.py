import json

import numpy as np
import pytest

import equireg


PRIOR = {
    "weights": [0.5, 0.5],
    "means": [[1.0, 0.0], [-1.0, 0.0]],
    "covariances": [[[0.1, 0.0], [0.0, 0.1]], [[0.1, 0.0], [0.0, 0.1]]],
}


def test_schedule_and_subsequence():
    ab = equireg.linear_schedule(100)
    assert ab[0] == 1.0
    assert np.all(np.diff(ab) < 0)
    taus = equireg.step_subsequence(100, 7)
    assert taus[-1] == 100 and len(taus) == 7


def test_operator_adjoint_matches_matrix():
    spec = {"kind": "box-inpaint", "size": 2}
    rng = np.random.default_rng(0)
    x = rng.normal(size=(4, 4))
    y = rng.normal(size=(4, 4))
    ax = equireg.operator_apply(spec, x)
    aty = equireg.operator_adjoint(spec, [4, 4], y)
    assert np.isclose(np.sum(ax * y), np.sum(x * aty), rtol=1e-12)
    m = equireg.operator_matrix(spec, [4, 4])
    assert np.allclose(m @ x.ravel(), ax.ravel())


def test_group_flip_is_an_involution():
    x = np.arange(16, dtype=float).reshape(4, 4)
    cfg = {"group": "flip-h"}
    assert equireg.group_size(cfg, [4, 4]) == 2
    once = equireg.group_apply(cfg, 1, x)
    assert np.array_equal(once, x[:, ::-1])
    assert np.array_equal(equireg.group_apply(cfg, 1, once), x)


def test_posterior_matches_gaussian_conditioning():
    prior = {"weights": [1.0], "means": [[0.0, 0.0]], "covariances": [[[1.0, 0.0], [0.0, 1.0]]]}
    post = equireg.posterior_exact(prior, [[1.0, 0.0]], 1.0, [2.0])
    assert np.allclose(post["means"][0], [1.0, 0.0])
    assert np.allclose(post["covariances"][0], [[0.5, 0.0], [0.0, 1.0]])


def test_metrics():
    x = np.full((8, 8), 0.5)
    assert equireg.psnr(x, x) == 99.0
    assert equireg.ssim(x, x) == pytest.approx(1.0)
    a = equireg.sample_gmm(PRIOR, 500, seed=1)
    assert a.shape == (500, 2)
    assert equireg.sliced_wasserstein(a, a, 16, 0) == 0.0
    intra, std = equireg.diversity([np.zeros(4), np.ones(4)])
    assert intra == pytest.approx(2.0)
    assert std == pytest.approx(0.5)


def test_dataset_generation_is_reproducible():
    spec = {"kind": "sym-shapes-grid", "n": 3, "seed": 4, "size": 8}
    items, meta = equireg.generate_dataset(spec)
    again, _ = equireg.generate_dataset(spec)
    assert len(items) == 3 and items[0].shape == (8, 8)
    assert all(np.array_equal(a, b) for a, b in zip(items, again))
    assert meta["kind"] == "sym-shapes-grid"


def test_dps_sample_is_seeded():
    sampler = {"algorithm": "dps", "steps": 20, "seed": 3, "zeta": 0.5}
    op = {"kind": "coordinate-mask", "keep": [0], "sigma_y": 0.1}
    s1, summary = equireg.sample_posterior(PRIOR, sampler, op, [0.9], schedule=(100, 1e-3, 0.1))
    s2, _ = equireg.sample_posterior(PRIOR, sampler, op, [0.9], schedule=(100, 1e-3, 0.1))
    assert np.array_equal(s1, s2)
    assert summary["counters"]["guidance_grads"] == 20


def test_errors_are_mapped():
    with pytest.raises(ValueError):
        equireg.operator_apply({"kind": "warp"}, np.zeros(3))


def test_run_experiment_and_cmd_run(tmp_path):
    cfg = {
        "dataset": {"kind": "gmm-points", "n": 50, "seed": 1, "spec": {"prior": PRIOR}},
        "test": {"n": 2, "seed": 2},
        "schedule": {"steps": 50, "beta_min": 1e-3, "beta_max": 0.2},
        "operator": {"kind": "coordinate-mask", "keep": [1], "sigma_y": 0.1},
        "sampler": {"algorithm": "dps", "steps": 10},
        "samples_per_image": 4,
        "sweep": {"zeta": [0.1, 0.5]},
        "seeds": [0, 1],
        "out": str(tmp_path / "run"),
    }
    csv = equireg.run_experiment(cfg)
    assert len(csv.strip().splitlines()) == 1 + 2 * 2
    h1 = equireg.cmd_run(cfg)
    h2 = equireg.cmd_run(cfg)
    assert h1 == h2 and len(h1) == 64
    report = json.loads((tmp_path / "run" / "report.json").read_text())
    assert len(report["per_seed"]) == 2
