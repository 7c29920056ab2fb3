# SPDX-License-Identifier: Apache-2.0

import numpy as np
import pytest

import tokenlens as tl


@pytest.fixture(scope="module")
def toy():
    arch = tl.ArchConfig()
    arch.n_layers = 3
    arch.width = 32
    arch.n_heads = 4
    arch.mlp_width = 64
    arch.vocab_size = 16
    arch.max_seq_len = 32
    model = tl.Model.init_random(arch, 7)

    spec = tl.TaskSpec()
    spec.kind = tl.TaskKind.lookup
    spec.grid_side = 2
    spec.n_colors = 3
    spec.n_samples = 40
    spec.seed = 5
    data = tl.to_sequences(tl.gen_task(spec), arch.width)
    return arch, model, data


def test_forward_probabilities(toy):
    _, model, data = toy
    res = model.forward_prefill(data[0])
    probs = np.asarray(res.probs)
    assert probs.shape == (16,)
    assert np.all(probs >= 0)
    assert abs(probs.sum() - 1.0) < 1e-6
    assert res.mac_count > 0


def test_attention_shape_and_causality(toy):
    _, model, data = toy
    attn = model.attention_scores(data[0], 1)
    n = data[0].n_visual() + data[0].n_text()
    assert attn.shape == (n, n)
    assert np.allclose(attn.sum(axis=1), 1.0, atol=1e-6)
    assert np.all(np.triu(attn, 1) == 0.0)


def test_information_profile_bounds(toy):
    arch, model, data = toy
    profile = tl.information_profile(model, data[0])
    values = profile.values
    assert values.shape == (arch.n_layers + 1, data[0].n_visual())
    assert np.all(values <= 1.0) and np.all(values >= -1.0)
    assert np.all(values[-1] == 0.0)
    stats = tl.profile_stats(profile)
    assert len(stats) == arch.n_layers + 1


def test_training_improves_accuracy(toy):
    arch, model, data = toy
    cfg = tl.TrainConfig()
    cfg.steps = 150
    cfg.lr = 0.05
    cfg.batch = 8
    cfg.seed = 3
    cfg.momentum = 0.9
    trained, trace = tl.train(model, data, cfg)
    assert len(trace) == 150
    assert tl.accuracy(trained, data) >= tl.accuracy(model, data)


def test_checkpoint_roundtrip(tmp_path, toy):
    _, model, _ = toy
    path = str(tmp_path / "m.ckpt")
    model.save(path)
    loaded = tl.load_checkpoint(path)
    assert loaded.weight_checksum() == model.weight_checksum()


def test_schedule_and_flops(toy):
    arch, model, data = toy
    sched = tl.PruneSchedule()
    sched.name = "demo"
    sched.actions = [
        tl.PruneAction(0, tl.Strategy.maxmin_diversity, 0.5),
        tl.PruneAction(2, tl.Strategy.random, 0.5, 9),
    ]
    run = tl.apply_schedule(model, data[0], sched)
    assert run.retained_counts == [2, 1]
    cost = tl.flops_estimate(arch, sched, data[0].n_visual(), data[0].n_text())
    assert cost.total_flops == 2 * run.result.mac_count

    llava = tl.arch_preset("llava-7b")
    base = tl.flops_estimate(llava, tl.schedule_preset("none"), 576, 116)
    pruned = tl.flops_estimate(llava, tl.schedule_preset("dart-random-64"), 576, 116)
    reduction = 100.0 * (1.0 - pruned.total_flops / base.total_flops)
    assert 64.4 < reduction < 84.4


def test_selectors_match_counts(toy):
    _, model, data = toy
    alive = list(range(4))
    feats = np.random.default_rng(0).normal(size=(4, 8))
    assert len(tl.select_random(alive, 0.5, 1)) == 2
    assert len(tl.select_maxmin_diversity(feats, alive, 0.5)) == 2
    assert len(tl.select_low_duplication(feats, alive, 0.5, 2)) == 2
    assert tl.select_attention_topk([0.4, 0.3, 0.2, 0.1], alive, 0.5) == [0, 1]
