import torch

from scsd.pipeline.model import ModelConfig, SCSDModel
from scsd.pipeline.train import NonFiniteLossError, compute_loss, train_step
from scsd.sso import SynergyState

import pytest

SMALL = dict(n_queries=6, d_model=32, d_emb=16, d_style=16, channels=(8, 16, 32, 32))


def _batch(b=2):
    g = torch.Generator().manual_seed(0)
    images = torch.rand(b, 3, 64, 64, generator=g)
    labels = torch.randint(0, 5, (b, 64, 64), generator=g)
    return images, labels


def test_forward_outputs_training():
    model = SCSDModel(ModelConfig(**SMALL))
    model.train()
    images, labels = _batch()
    out = model(images, labels, torch.tensor([0, 3]))
    assert len(out["class_logits"]) == 6
    assert out["class_logits"][0].shape == (2, 6, 6)
    assert sorted(out["styled"]) == [3, 4, 5]
    assert out["similarity"].shape == (2, 2, 2, 5)


def test_ablated_model_has_no_components():
    model = SCSDModel(ModelConfig(**SMALL, sqb_on=False, tdst_on=False, sso_on=False))
    assert model.sqb is None and model.tdst is None and model.bank is None
    out = model(*_batch())
    assert "similarity" not in out and "styled" not in out


def test_domain_embeddings_difference():
    model = SCSDModel(ModelConfig(**SMALL))
    labels = torch.tensor([[[0, 1], [255, 2]]])
    spec, gen = model.domain_embeddings(labels, torch.tensor([0]))
    assert torch.equal(spec, gen)  # null condition
    spec, gen = model.domain_embeddings(labels, torch.tensor([2]))
    assert not spec[0, 1, 0].any() and not gen[0, 1, 0].any()
    assert (spec - gen)[0, 0, 0].abs().max() > 0


def test_eval_mode_loss_has_no_style_terms():
    model = SCSDModel(ModelConfig(**SMALL))
    model.eval()
    images, labels = _batch()
    _, metrics, state = compute_loss(model, images, labels, torch.tensor([1, 2]), None)
    assert "L_sc" not in metrics and state is None


def test_train_step_updates_and_renormalises_bank():
    model = SCSDModel(ModelConfig(**SMALL))
    opt = torch.optim.AdamW(model.trainable_parameters(), lr=1e-3)
    before = model.queries.detach().clone()
    metrics, state = train_step(model, opt, *_batch(), SynergyState(), torch.Generator().manual_seed(0))
    assert {"L_cls", "L_seg", "L_sc", "L_sa", "w_sc", "w_sa", "loss"} <= set(metrics)
    assert not torch.equal(before, model.queries)
    torch.testing.assert_close(model.bank.vectors.norm(dim=1), torch.ones(5))
    assert state.prev_sc is not None


def test_non_finite_loss_leaves_parameters():
    model = SCSDModel(ModelConfig(**SMALL, sso_on=False))
    opt = torch.optim.AdamW(model.trainable_parameters(), lr=1e-3)
    with torch.no_grad():
        model.decoder.class_head.bias.fill_(float("nan"))
    snapshot = {k: v.clone() for k, v in model.state_dict().items()}
    with pytest.raises(NonFiniteLossError):
        train_step(model, opt, *_batch(), None, torch.Generator())
    for k, v in model.state_dict().items():
        assert torch.equal(v, snapshot[k]) or torch.isnan(v).any()


def test_backbone_not_in_trainable_parameters():
    model = SCSDModel(ModelConfig(**SMALL))
    ids = {id(p) for p in model.trainable_parameters()}
    assert not any(id(p) in ids for p in model.backbone.parameters())
