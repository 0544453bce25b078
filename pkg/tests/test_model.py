"""Full-model forward: wiring, determinism, prompt path, ablation flags."""

from dataclasses import replace

import numpy as np
import pytest

from farnet.model import Model, ModelConfig, TripletArrays
from farnet.numerics import Rng, Tape
from farnet.train import batch_arrays


def _losses(model, batch, seed=123):
    return model.forward_losses(batch, Rng(seed, stream=29))


def test_forward_losses_are_bit_identical_across_runs(micro_model, micro_batch):
    a = _losses(micro_model, micro_batch).scalars()
    b = _losses(micro_model, micro_batch).scalars()
    assert a == b


def test_total_recomposes_from_parts(micro_model, micro_batch):
    losses = _losses(micro_model, micro_batch)
    parts = (losses.late.item() + losses.attention.item()
             + losses.res.item() + losses.pi.item())
    assert abs(losses.total.item() - parts) <= 1e-12
    assert abs(losses.esam.item()
               - (losses.late.item() + losses.attention.item())) <= 1e-12
    assert abs(losses.arm.item()
               - (losses.res.item() + losses.pi.item())) <= 1e-12


@pytest.mark.parametrize("flag,zeroed", [
    ("use_late", "loss_late"),
    ("use_attention", "loss_attention"),
    ("use_res", "loss_res"),
    ("use_pi", "loss_pi"),
])
def test_ablation_flags_zero_their_terms(micro_cfg, micro_dataset, micro_batch,
                                         flag, zeroed):
    from farnet.train import build_model
    cfg = replace(micro_cfg, **{flag: False})
    model = build_model(cfg, micro_dataset)
    scalars = _losses(model, micro_batch).scalars()
    assert scalars[zeroed] == 0.0
    others = {k: v for k, v in scalars.items()
              if k not in (zeroed, "loss_total")}
    assert all(v > 0.0 for v in others.values())
    assert abs(scalars["loss_total"] - sum(others.values())) <= 1e-12


def test_prompt_embedding_depends_on_reference_image(micro_model, micro_batch):
    base = micro_model.query_embeddings(micro_batch.ref_images,
                                        micro_batch.token_ids,
                                        source="mean_u_uprime")
    bumped = micro_batch.ref_images.copy()
    bumped[0, :4, :4, :] = 1.0 - bumped[0, :4, :4, :]
    changed = micro_model.query_embeddings(bumped, micro_batch.token_ids,
                                           source="mean_u_uprime")
    assert not np.allclose(base[0], changed[0])


def test_identical_reference_and_text_give_identical_prompts(micro_model, micro_batch):
    ref = np.repeat(micro_batch.ref_images[:1], 2, axis=0)
    ids = np.repeat(micro_batch.token_ids[:1], 2, axis=0)
    regions, _ = micro_model.img_enc.encode(ref)
    txt_feats, _ = micro_model.txt_enc.encode(ids)
    attended, _ = micro_model.xattn(regions, txt_feats)
    prompt = micro_model._prompt_embedding(attended, ids)
    assert np.array_equal(prompt.data[0], prompt.data[1])


def test_prompt_embedding_is_unit_norm(micro_model, micro_batch):
    regions, _ = micro_model.img_enc.encode(micro_batch.ref_images)
    txt_feats, _ = micro_model.txt_enc.encode(micro_batch.token_ids)
    attended, _ = micro_model.xattn(regions, txt_feats)
    prompt = micro_model._prompt_embedding(attended, micro_batch.token_ids)
    norms = np.linalg.norm(prompt.data, axis=1)
    assert np.abs(norms - 1.0).max() <= 1e-9


def test_prompt_loss_gradient_reaches_text_encoder(micro_model, micro_batch):
    model = micro_model
    with Tape() as tape:
        losses = model.forward_losses(micro_batch, Rng(5, stream=29))
        tape.backward(losses.pi)
    tok_grad = model.txt_enc.tok.grad
    assert tok_grad is not None and np.linalg.norm(tok_grad) > 0.0


def test_query_embeddings_unit_norm_for_all_sources(micro_model, micro_batch):
    for source in ("u", "mlp_fu", "mean_u_uprime"):
        q = micro_model.query_embeddings(micro_batch.ref_images,
                                         micro_batch.token_ids, source)
        assert np.abs(np.linalg.norm(q, axis=1) - 1.0).max() <= 1e-9


def test_unknown_query_source_rejected(micro_model, micro_batch):
    with pytest.raises(ValueError):
        micro_model.query_embeddings(micro_batch.ref_images,
                                     micro_batch.token_ids, "pooled")


def test_shared_image_encoders_share_parameter_objects(micro_model):
    assert micro_model.tgt_enc is micro_model.img_enc
    params = micro_model.named_parameters()
    assert not any(name.startswith("tgt.") for name in params)


def test_unshared_encoders_have_separate_parameters(micro_cfg, micro_dataset):
    from farnet.train import build_model
    cfg = replace(micro_cfg, share_image_encoders=False)
    model = build_model(cfg, micro_dataset)
    assert model.tgt_enc is not model.img_enc
    params = model.named_parameters()
    assert any(name.startswith("tgt.") for name in params)


def test_attention_maps_are_row_stochastic(micro_model, micro_batch):
    a_ref, a_tgt = micro_model.attention_maps(micro_batch.ref_images,
                                              micro_batch.token_ids,
                                              micro_batch.tgt_images)
    for maps in (a_ref, a_tgt):
        assert np.abs(maps.sum(axis=-1) - 1.0).max() <= 1e-9
        assert (maps > 0.0).all()
