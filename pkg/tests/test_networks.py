import numpy as np
import pytest
import torch

from genvc import flow as flowpred
from genvc.networks import (
    CodecConfig,
    VideoCodec,
    load_checkpoint,
    save_checkpoint,
)

TINY = dict(
    enc_widths=(8, 12, 16, 20), latent_channels=8, hyper_channels=12,
    gen_res_blocks=1, flow_widths=(8, 8, 8, 8), flow_latent_channels=6,
    flow_hyper_channels=8, disc_widths=(12, 16, 24),
)


def tiny_model(**overrides) -> VideoCodec:
    torch.manual_seed(0)
    return VideoCodec(CodecConfig(**{**TINY, **overrides}))


# ---------------------------------------------------------------------------
# I-frame branch
# ---------------------------------------------------------------------------

def test_latent_dims_are_input_over_16():
    model = tiny_model()
    out = model.iframe_code(torch.rand(1, 3, 64, 96), "infer")
    assert out.latent.shape[-2:] == (4, 6)
    assert out.latent.shape[1] == model.config.latent_channels


def test_infer_mode_is_deterministic():
    model = tiny_model()
    x = torch.rand(1, 3, 32, 32)
    a = model.iframe_code(x, "infer")
    b = model.iframe_code(x, "infer")
    assert torch.equal(a.latent, b.latent)
    assert torch.equal(a.recon, b.recon)


def test_train_mode_smoke_rate_positive():
    model = tiny_model()
    out = model.iframe_code(torch.rand(2, 3, 32, 32), "train")
    assert torch.isfinite(out.recon).all()
    assert out.bits.item() > 0


def test_coded_latents_are_integers():
    model = tiny_model()
    out = model.iframe_code(torch.rand(1, 3, 32, 32), "infer")
    assert torch.equal(out.latent, torch.round(out.latent))
    assert torch.equal(out.aux.z_hat, torch.round(out.aux.z_hat))


def test_non_divisible_dims_rejected():
    model = tiny_model()
    with pytest.raises(ValueError):
        model.iframe_code(torch.rand(1, 3, 60, 64), "infer")


def test_reconstruction_clamped_to_unit_range():
    model = tiny_model()
    out = model.iframe_code(torch.rand(1, 3, 32, 32), "infer")
    assert out.recon.min() >= 0.0 and out.recon.max() <= 1.0


# ---------------------------------------------------------------------------
# flow branch
# ---------------------------------------------------------------------------

def test_sigma_bounded_for_any_input():
    model = tiny_model()
    wild = torch.randn(1, 2, 32, 32) * 50
    out = model.flow_code(wild, "infer")
    assert out.sigma.min() >= 0.0
    assert out.sigma.max() <= model.config.sigma_max


def test_flow_latent_same_stride_as_iframe():
    model = tiny_model()
    out = model.flow_code(torch.randn(1, 2, 64, 64), "infer")
    assert out.latent.shape[-2:] == (4, 4)


def test_flow_code_reproducible_from_seed():
    outs = []
    for _ in range(2):
        torch.manual_seed(77)
        model = VideoCodec(CodecConfig(**TINY))
        outs.append(model.flow_code(torch.full((1, 2, 32, 32), 0.3), "infer"))
    assert torch.equal(outs[0].flow_hat, outs[1].flow_hat)
    assert torch.equal(outs[0].sigma, outs[1].sigma)


def test_non_finite_flow_rejected():
    model = tiny_model()
    bad = torch.full((1, 2, 32, 32), float("inf"))
    with pytest.raises(ValueError):
        model.flow_code(bad, "infer")


def test_flow_from_frames_ablation():
    model = tiny_model(use_flow_predictor=False)
    frames = torch.rand(1, 6, 32, 32)
    out = model.flow_code(None, "infer", frames=frames)
    assert out.flow_hat.shape == (1, 2, 32, 32)
    with pytest.raises(ValueError):
        model.flow_code(None, "infer")  # frames required


# ---------------------------------------------------------------------------
# free latent / residual branch
# ---------------------------------------------------------------------------

def test_free_latent_identical_on_both_sides():
    model = tiny_model()
    xw = torch.rand(1, 3, 32, 32)
    assert torch.equal(model.free_latent(xw), model.free_latent(xw.clone()))


def test_residual_latent_channel_concat():
    model = tiny_model()
    r = torch.rand(1, 3, 32, 32) * 2 - 1
    y_free = model.free_latent(torch.rand(1, 3, 32, 32))
    out = model.residual_code(r, y_free, "infer")
    c = model.config.latent_channels
    assert out.latent.shape[1] == 2 * c
    assert out.coded_latent.shape[1] == c
    assert torch.equal(out.latent[:, :c], y_free)


def test_free_latent_carries_zero_rate():
    model = tiny_model()
    torch.manual_seed(1)
    r = torch.rand(1, 3, 32, 32) * 2 - 1
    y_free = model.free_latent(torch.rand(1, 3, 32, 32))
    with_free = model.residual_code(r, y_free, "infer").bits
    model_no = tiny_model(use_free_latent=False)
    model_no.e_res.load_state_dict(model.e_res.state_dict())
    model_no.coder_res.load_state_dict(model.coder_res.state_dict())
    without = model_no.residual_code(r, None, "infer").bits
    assert with_free.item() == pytest.approx(without.item(), abs=1e-4)


def test_no_free_latent_ablation_uses_coded_part_alone():
    model = tiny_model(use_free_latent=False)
    r = torch.rand(1, 3, 32, 32) * 2 - 1
    out = model.residual_code(r, None, "infer")
    assert out.latent.shape[1] == model.config.latent_channels
    assert torch.equal(out.latent, out.coded_latent)


def test_free_latent_spatial_mismatch_rejected():
    model = tiny_model()
    r = torch.rand(1, 3, 32, 32)
    bad_free = torch.rand(1, model.config.latent_channels, 3, 3)
    with pytest.raises(ValueError):
        model.residual_code(r, bad_free, "infer")


def test_frozen_encoder_receives_no_gradient_through_free_latent():
    model = tiny_model()
    model.freeze("e_i", "g_i", "coder_i", "d_i")
    xw = torch.rand(1, 3, 32, 32, requires_grad=True)
    r = torch.rand(1, 3, 32, 32) - xw.detach()
    y_free = model.free_latent(xw)
    out = model.residual_code(r, y_free, "train")
    loss = ((xw + out.detail) ** 2).mean() + 1e-4 * out.bits
    loss.backward()
    for p in model.e_i.parameters():
        assert p.grad is None
    assert xw.grad is not None  # the path through the input stays live


# ---------------------------------------------------------------------------
# discriminators
# ---------------------------------------------------------------------------

def test_discriminator_output_strictly_inside_unit_interval():
    model = tiny_model()
    x = torch.rand(1, 3, 64, 64)
    y = torch.randn(1, model.config.latent_channels, 4, 4)
    probs = model.discriminate(x, y, "d_i")
    assert (probs > 0).all() and (probs < 1).all()


def test_unconditional_discriminator_ignores_latent():
    model = tiny_model(conditional_discriminator=False)
    model.eval()  # freeze the spectral-norm power-iteration state
    x = torch.rand(1, 3, 64, 64)
    y1 = torch.randn(1, model.config.latent_channels, 4, 4)
    y2 = torch.randn_like(y1)
    assert torch.equal(model.discriminate(x, y1, "d_i"), model.discriminate(x, y2, "d_i"))


def test_conditional_discriminator_latent_required_and_checked():
    model = tiny_model()
    x = torch.rand(1, 3, 64, 64)
    with pytest.raises(ValueError):
        model.discriminate(x, None, "d_i")
    wrong_branch = torch.randn(1, model.config.residual_latent_channels, 4, 4)
    with pytest.raises(ValueError):
        model.discriminate(x, wrong_branch, "d_i")
    with pytest.raises(ValueError):
        model.discriminate(x, wrong_branch, "d_q")


def test_spectral_norm_bounds_top_singular_value():
    torch.manual_seed(3)
    model = tiny_model()
    opt = torch.optim.Adam(model.d_i.parameters(), lr=1e-3)
    x = torch.rand(4, 3, 64, 64)
    y = torch.randn(4, model.config.latent_channels, 4, 4)
    for _ in range(3):
        probs = model.discriminate(x, y, "d_i")
        loss = -torch.log(probs.clamp_min(1e-6)).mean()
        opt.zero_grad()
        loss.backward()
        opt.step()
    model.discriminate(x, y, "d_i")  # refresh the power-iteration estimate
    for module in model.d_i.modules():
        if isinstance(module, torch.nn.Conv2d):
            w = module.weight.detach().reshape(module.weight.shape[0], -1).numpy()
            top = np.linalg.svd(w, compute_uv=False)[0]
            assert top <= 1 + 1e-3


# ---------------------------------------------------------------------------
# flow predictors
# ---------------------------------------------------------------------------

def test_classical_estimator_near_zero_on_identical_frames():
    torch.manual_seed(4)
    frame = torch.rand(1, 3, 64, 64)
    flow = flowpred.predict_flow(frame, frame.clone(), flowpred.CLASSICAL)
    mags = flow.abs().reshape(-1)
    assert torch.quantile(mags, 0.9).item() <= 0.1


def test_synthetic_truth_passes_ground_truth_through():
    gt = torch.full((2, 16, 16), 2.0)
    gt[1] = 0.0
    frame = torch.rand(3, 16, 16)
    flow = flowpred.predict_flow(frame, frame, flowpred.SYNTHETIC_TRUTH, gt_flow=gt)
    assert torch.equal(flow, gt)
    with pytest.raises(ValueError):
        flowpred.predict_flow(frame, frame, flowpred.SYNTHETIC_TRUTH)


def test_external_predictor_unavailable_raises():
    flowpred.register_external(None)
    frame = torch.rand(3, 16, 16)
    with pytest.raises(flowpred.FlowPredictorUnavailable):
        flowpred.predict_flow(frame, frame, flowpred.EXTERNAL)
    flowpred.register_external(lambda cur, prev: torch.zeros(cur.shape[0], 2, *cur.shape[-2:]))
    out = flowpred.predict_flow(frame, frame, flowpred.EXTERNAL)
    assert out.shape == (2, 16, 16)
    flowpred.register_external(None)


def test_predictor_never_propagates_gradients():
    frame = torch.rand(1, 3, 32, 32, requires_grad=True)
    flow = flowpred.predict_flow(frame, frame, flowpred.CLASSICAL)
    assert not flow.requires_grad


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    model = tiny_model()
    model.freeze("e_i", "g_i")
    path = str(tmp_path / "model.ckpt")
    save_checkpoint(path, model, extra={"step": 12})
    back, extra = load_checkpoint(path)
    assert extra["step"] == 12
    assert back.frozen == {"e_i", "g_i"}
    for name in ("e_i", "g_res", "d_p"):
        assert back.parameter_hash(name) == model.parameter_hash(name)
    x = torch.rand(1, 3, 32, 32)
    assert torch.equal(back.iframe_code(x, "infer").recon,
                       model.iframe_code(x, "infer").recon)


def test_config_yaml_round_trip(tmp_path):
    import yaml

    cfg = CodecConfig(**TINY, use_gan=False)
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump(cfg.to_dict()))
    assert CodecConfig.from_yaml(str(path)) == cfg
