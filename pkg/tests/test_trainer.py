import math

import numpy as np
import pytest
import torch

from coevolve.config import TrainConfig
from coevolve.data import generate_synthetic
from coevolve.graph import homophily_ratio, topk_sparsify
from coevolve.trainer import (
    CoEvolveTrainer,
    cosine_warmup_schedule,
    evaluate,
    infer,
    read_epoch_logs,
    train,
    write_epoch_logs,
)

SMALL = dict(gnn_hidden=16, struct_dim=8, prompt_dim=4, projector_hidden=8, encoder_hidden=16,
             embed_dim=8, heads=2, gate_hidden=4, fusion_hidden=4, k=4)


def small_cfg(**kw):
    base = dict(epochs=8, warmup_epochs=3, lr_semantic=0.01, lr_gnn=0.01, seed=3, **SMALL)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def data():
    return generate_synthetic(60, 3, p_in=0.05, p_out=0.15, d_t=8, text_noise=1.0, seed=2)


def snapshot(module):
    return {k: v.detach().clone() for k, v in module.state_dict().items()}


def same(a, b):
    return all(torch.equal(a[k], b[k]) for k in a)


class TestWarmUp:
    def test_zero_epochs_is_noop(self, data):
        tr = CoEvolveTrainer(data, small_cfg(warmup_epochs=0))
        before = snapshot(tr.model)
        assert tr.warm_up() == []
        assert same(before, snapshot(tr.model))

    def test_scope_and_accuracy(self, data):
        tr = CoEvolveTrainer(data, small_cfg(epochs=30, warmup_epochs=30))
        metric, fusion, proj = snapshot(tr.model.metric), snapshot(tr.model.fusion), snapshot(tr.model.projector)
        logs = tr.warm_up()
        assert len(logs) == 30 and all(r.phase == "warmup" for r in logs)
        assert same(metric, snapshot(tr.model.metric))
        assert same(fusion, snapshot(tr.model.fusion))
        assert same(proj, snapshot(tr.model.projector))
        zeros = torch.zeros(data.num_nodes, tr.cfg.prompt_dim, dtype=torch.float64)
        with torch.no_grad():
            gnn_pred = tr.model.gnn(tr.a_static_norm, tr.x)[1].argmax(1).numpy()
            llm_pred = tr.model.encoder(zeros, tr.t)[1].argmax(1).numpy()
        m = data.train_mask
        assert (gnn_pred[m] == data.y[m]).mean() > 1 / 3
        assert (llm_pred[m] == data.y[m]).mean() > 1 / 3
        np.testing.assert_array_equal(tr.dyn.weights.numpy(), data.graph.to_dense())


class TestStepA:
    def test_freezes_gnn_and_metric(self, data):
        tr = CoEvolveTrainer(data, small_cfg())
        tr.warm_up()
        gnn, metric = snapshot(tr.model.gnn), snapshot(tr.model.metric)
        enc = snapshot(tr.model.encoder)
        tr.step_a_semantic_update()
        assert same(gnn, snapshot(tr.model.gnn))
        assert same(metric, snapshot(tr.model.metric))
        assert not same(enc, snapshot(tr.model.encoder))

    def test_all_weights_zero_changes_nothing(self, data):
        tr = CoEvolveTrainer(data, small_cfg(w_task=0.0, w_conflict=0.0, w_cons=0.0))
        before = snapshot(tr.model)
        values = tr.step_a_semantic_update()
        assert all(math.isnan(v) for v in values.values())
        assert same(before, snapshot(tr.model))

    def test_ablation_wiring(self, data):
        tr = CoEvolveTrainer(data, small_cfg(no_ugc=True, no_cal=True))
        values = tr.step_a_semantic_update()
        assert math.isnan(values["cons"]) and math.isnan(values["conflict"])
        assert not math.isnan(values["task"])

    def test_descent_with_tiny_lr(self, data):
        cfg = small_cfg(lr_semantic=1e-6, lr_warmup_frac=0.0, w_conflict=0.0)
        tr = CoEvolveTrainer(data, cfg)
        tr.warm_up()

        def loss():
            with torch.no_grad():
                h_struct, p_gnn = tr.model.gnn(tr._dyn_norm(), tr.x)
                h_sem, p_llm = tr.model.encoder(tr._prompts(h_struct), tr.t)
                from coevolve.fusion import fuse_predictions, normalized_entropy
                y, _ = fuse_predictions(tr.model.fusion, p_llm, p_gnn, normalized_entropy(p_llm),
                                        normalized_entropy(p_gnn), h_struct)
                terms = tr._loss_terms(y, None, None, p_gnn, p_llm)
                return sum(v for v in terms.values() if v is not None).item()

        before = loss()
        tr.step_a_semantic_update()
        assert loss() <= before


class TestStepB:
    def test_no_ssl_keeps_static(self, data):
        tr = CoEvolveTrainer(data, small_cfg(no_ssl=True))
        for _ in range(2):
            tr.step_a_semantic_update()
            dyn = tr.step_b_reconstruct()
            np.testing.assert_array_equal(dyn.weights.numpy(), data.graph.to_dense())
            tr.step_c_gnn_update()

    def test_gate_closed_gives_static_topk(self, data):
        tr = CoEvolveTrainer(data, small_cfg(gate_init_bias=60.0))
        with torch.no_grad():
            tr.model.metric.gate.last.weight.zero_()
        dyn = tr.step_b_reconstruct()
        static = set(map(tuple, data.graph.undirected_pairs().tolist()))
        assert set(map(tuple, dyn.to_graph().undirected_pairs().tolist())) <= static
        assert dyn.to_graph() == topk_sparsify(data.graph.to_dense(), tr.cfg.k)

    def test_out_degree(self, data):
        tr = CoEvolveTrainer(data, small_cfg())
        tr.warm_up()
        assert tr.step_b_reconstruct().out_degree().max() <= tr.cfg.k


class TestStepC:
    def test_freezes_semantic(self, data):
        tr = CoEvolveTrainer(data, small_cfg())
        tr.warm_up()
        tr.step_a_semantic_update()
        tr.step_b_reconstruct()
        enc, proj, gnn = snapshot(tr.model.encoder), snapshot(tr.model.projector), snapshot(tr.model.gnn)
        tr.step_c_gnn_update()
        assert same(enc, snapshot(tr.model.encoder))
        assert same(proj, snapshot(tr.model.projector))
        assert not same(gnn, snapshot(tr.model.gnn))

    def test_no_cal(self, data):
        tr = CoEvolveTrainer(data, small_cfg(no_cal=True))
        assert math.isnan(tr.step_c_gnn_update()["conflict"])

    def test_gradient_reaches_metric_heads(self, data):
        from coevolve.gnn import dense_normalized
        from coevolve.structure import reconstruct
        from coevolve.trainer import cross_entropy

        tr = CoEvolveTrainer(data, small_cfg())
        tr.warm_up()
        tr.step_b_reconstruct()
        m = tr.model

        def loss():
            w = reconstruct(m.metric, tr.h_sem_fixed, tr.a_static, tr.cfg.k, mask=tr.dyn.mask,
                            normalize=tr.cfg.sim_normalize).weights
            _, p = m.gnn(dense_normalized(w), tr.x)
            return cross_entropy(p, tr.y, data.train_mask)

        base = loss().item()
        with torch.no_grad():
            m.metric.weights[0, 0, 1] += 1e-3
        assert loss().item() != base
        with torch.no_grad():
            m.metric.weights[0, 0, 1] -= 1e-3
        grads = torch.autograd.grad(loss(), [m.metric.weights, *m.metric.gate.parameters()])
        assert all(g.abs().max() > 0 for g in grads)

    def test_metric_moves_during_step(self, data):
        tr = CoEvolveTrainer(data, small_cfg())
        tr.warm_up()
        tr.step_b_reconstruct()
        before = snapshot(tr.model.metric)
        tr.step_c_gnn_update()
        assert not same(before, snapshot(tr.model.metric))


class TestTrain:
    def test_warmup_only(self, data):
        res = train(data, small_cfg(epochs=3, warmup_epochs=3))
        assert [r.phase for r in res.logs] == ["warmup"] * 3
        assert res.best_epoch == 0

    def test_deterministic_logs(self, data, tmp_path):
        cfg = small_cfg()
        write_epoch_logs(train(data, cfg).logs, tmp_path / "a.csv")
        write_epoch_logs(train(data, cfg).logs, tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_thread_count_does_not_change_logs(self, data, tmp_path):
        write_epoch_logs(train(data, small_cfg(threads=1)).logs, tmp_path / "a.csv")
        write_epoch_logs(train(data, small_cfg(threads=2)).logs, tmp_path / "b.csv")
        torch.set_num_threads(1)
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_log_contents_and_round_trip(self, data, tmp_path):
        cfg = small_cfg()
        logs = train(data, cfg).logs
        co = [r for r in logs if r.phase == "coevolve"]
        assert [r.epoch for r in co] == list(range(1, cfg.coevolve_epochs + 1))
        for r in co:
            assert r.max_out_degree <= cfg.k
            assert 0 <= r.homophily <= 1 and 0 < r.beta_mean < 1
        write_epoch_logs(logs, tmp_path / "m.csv")
        back = read_epoch_logs(tmp_path / "m.csv")
        for rec, row in zip(logs, back):
            for key, val in row.items():
                orig = getattr(rec, key)
                assert (val == orig) or (isinstance(orig, float) and math.isnan(orig) and math.isnan(val))

    def test_no_ssl_homophily_constant(self, data):
        logs = train(data, small_cfg(no_ssl=True)).logs
        h0 = homophily_ratio(data.graph, data.y)
        assert all(r.homophily == h0 for r in logs if r.phase == "coevolve")


class TestInfer:
    def test_contracts(self, data, tmp_path):
        cfg = small_cfg()
        res = train(data, cfg)
        before = snapshot(res.model)
        out = infer(data, res.model, cfg)
        assert same(before, snapshot(res.model))
        np.testing.assert_allclose(out.y_final.sum(1).numpy(), 1.0, atol=1e-6)
        assert out.beta.min() > 0 and out.beta.max() < 1
        assert out.graph.out_degree().max() <= cfg.k
        path = tmp_path / "y.csv"
        np.savetxt(path, out.y_final.numpy(), delimiter=",", fmt="%.17g")
        pred = np.loadtxt(path, delimiter=",").argmax(1)
        m = data.test_mask
        assert evaluate(data, out)["test"]["fused"]["acc"] == (pred[m] == data.y[m]).mean()

    def test_no_ssl_uses_static_graph(self, data):
        cfg = small_cfg(no_ssl=True)
        out = infer(data, train(data, cfg).model, cfg)
        np.testing.assert_array_equal(out.graph.weights.numpy(), data.graph.to_dense())


def test_cosine_schedule():
    f = cosine_warmup_schedule(100, 0.1)
    assert f(0) == pytest.approx(0.1) and f(9) == pytest.approx(1.0)
    assert f(10) == pytest.approx(1.0)
    assert f(55) == pytest.approx(0.5)
    assert f(99) < 0.01
    values = [f(s) for s in range(10, 100)]
    assert all(a >= b for a, b in zip(values, values[1:]))
