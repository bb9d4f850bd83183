import math

import numpy as np
import pytest
import torch
from scipy import integrate
from scipy.stats import beta as beta_dist

from lcmopg.errors import CheckpointError, ContractViolation, NonFiniteError
from lcmopg.neural import (
    DTYPE,
    AdamOptimizer,
    BetaHeadOutput,
    CategoricalHeadOutput,
    Mlp,
    beta_head_from_raw,
    beta_log_prob,
    beta_mean,
    categorical_argmax,
    categorical_log_prob,
    categorical_probs,
    categorical_sample,
    categorical_sample_rows,
    cosine_embed,
    init_normal_,
    load_checkpoint,
    make_generator,
    mlp_forward,
    save_checkpoint,
    trunk_widths,
)


def _t(values):
    return torch.tensor(values, dtype=DTYPE)


def test_cosine_embed_examples():
    torch.testing.assert_close(cosine_embed([0.0], 3), _t([1.0, 1.0, 1.0]))
    torch.testing.assert_close(cosine_embed([1.0], 2), _t([-1.0, 1.0]))
    torch.testing.assert_close(cosine_embed([0.5], 4), _t([0.0, -1.0, 0.0, 1.0]), atol=1e-12, rtol=0)


def test_cosine_embed_batch_layout():
    out = cosine_embed([[0.0, 1.0], [0.5, 0.5]], 2)
    assert out.shape == (2, 4)
    torch.testing.assert_close(out[0], _t([1.0, 1.0, -1.0, 1.0]))


def test_cosine_embed_rejects_out_of_range():
    with pytest.raises(ContractViolation):
        cosine_embed([1.5], 3)


def test_zero_net_zero_output():
    net = Mlp([3, 4, 2], ["selu", "identity"])
    with torch.no_grad():
        for p in net.parameters():
            p.zero_()
    torch.testing.assert_close(mlp_forward(net, [1.0, -2.0, 3.0]), _t([0.0, 0.0]))


def test_selu_identity_layer():
    net = Mlp([2, 2], ["selu"])
    with torch.no_grad():
        net.net[0].weight.copy_(torch.eye(2, dtype=DTYPE))
        net.net[0].bias.zero_()
    torch.testing.assert_close(mlp_forward(net, [-1.0, 1.0]), _t([-1.1113307, 1.0507010]), atol=1e-7, rtol=0)


def test_mlp_shape_mismatch():
    net = Mlp([3, 2], ["identity"])
    with pytest.raises(ContractViolation):
        mlp_forward(net, [1.0, 2.0])
    with pytest.raises(ContractViolation):
        Mlp([3, 2], ["selu", "selu"])


def test_trunk_widths():
    assert trunk_widths(5, 8, 3, 2) == ([5, 8, 8, 2], ["selu", "selu", "identity"])
    assert trunk_widths(5, 8, 1, 2) == ([5, 2], ["identity"])


def test_mlp_gradcheck():
    net = Mlp([3, 5, 2], ["selu", "tanh"])
    init_normal_(net, make_generator(0))
    x = torch.randn(4, 3, dtype=DTYPE, generator=make_generator(1), requires_grad=True)
    assert torch.autograd.gradcheck(net, (x,))


def test_init_is_seeded():
    a, b = Mlp([3, 4, 2], ["selu", "identity"]), Mlp([3, 4, 2], ["selu", "identity"])
    init_normal_(a, make_generator(5))
    init_normal_(b, make_generator(5))
    for pa, pb in zip(a.parameters(), b.parameters()):
        torch.testing.assert_close(pa, pb)


def test_adam_zero_gradient_keeps_parameters():
    p = torch.nn.Parameter(_t([1.0, -2.0]))
    opt = AdamOptimizer([p], lr=0.1)
    opt.step([torch.zeros(2, dtype=DTYPE)])
    torch.testing.assert_close(p.detach(), _t([1.0, -2.0]))


def test_adam_first_step_is_lr_sign():
    p = torch.nn.Parameter(_t([0.0, 0.0]))
    opt = AdamOptimizer([p], lr=0.01)
    opt.step([_t([3.0, -0.5])])
    torch.testing.assert_close(p.detach(), _t([-0.01, 0.01]), rtol=1e-6, atol=0)


def test_adam_constant_gradient_steps():
    p = torch.nn.Parameter(_t([0.0]))
    opt = AdamOptimizer([p], lr=0.01)
    before = 0.0
    for _ in range(200):
        opt.step([_t([2.0])])
        step = p.item() - before
        before = p.item()
    assert step == pytest.approx(-0.01, rel=1e-6)


def test_adam_rejects_nan():
    p = torch.nn.Parameter(_t([1.0]))
    opt = AdamOptimizer([p], lr=0.1)
    with pytest.raises(NonFiniteError):
        opt.step([_t([math.nan])])
    torch.testing.assert_close(p.detach(), _t([1.0]))


def test_beta_log_prob_examples():
    uniform = BetaHeadOutput(alpha=_t([1.0]), beta=_t([1.0]))
    assert beta_log_prob(uniform, [0.3]).item() == pytest.approx(0.0, abs=1e-12)
    linear = BetaHeadOutput(alpha=_t([2.0]), beta=_t([1.0]))
    assert beta_log_prob(linear, [0.5]).item() == pytest.approx(0.0, abs=1e-12)


def test_beta_log_prob_matches_scipy():
    rng = np.random.default_rng(0)
    for _ in range(20):
        a, b = rng.uniform(0.5, 8.0, size=2)
        x = rng.uniform(0.01, 0.99)
        head = BetaHeadOutput(alpha=_t([a]), beta=_t([b]))
        assert beta_log_prob(head, [x]).item() == pytest.approx(beta_dist.logpdf(x, a, b), abs=1e-9)


def test_beta_log_prob_clamps_edges():
    head = BetaHeadOutput(alpha=_t([2.0]), beta=_t([2.0]))
    assert math.isfinite(beta_log_prob(head, [0.0]).item())
    assert math.isfinite(beta_log_prob(head, [1.0]).item())


def test_beta_mean():
    for a, b, expected in [(5.0, 5.0, 0.5), (2.0, 1.0, 2 / 3), (1.0, 3.0, 0.25)]:
        head = BetaHeadOutput(alpha=_t([a]), beta=_t([b]))
        assert beta_mean(head).item() == pytest.approx(expected)


def test_beta_head_link():
    head = beta_head_from_raw(_t([0.0, 0.0]))
    assert head.alpha.item() == pytest.approx(1.0 + math.log(2.0))
    assert head.beta.item() == pytest.approx(1.0 + math.log(2.0))


def test_categorical_uniform_logits():
    head = CategoricalHeadOutput(logits=_t([0.0, 0.0, 0.0, 0.0]))
    torch.testing.assert_close(categorical_probs(head), _t([0.25] * 4))
    assert categorical_log_prob(head, 2).item() == pytest.approx(math.log(0.25))


def test_categorical_argmax():
    assert int(categorical_argmax(CategoricalHeadOutput(logits=_t([10.0, 0.0])))) == 0
    assert int(categorical_argmax(CategoricalHeadOutput(logits=_t([0.1, 2.0, 0.1, 0.1])))) == 1
    assert int(categorical_argmax(CategoricalHeadOutput(logits=_t([1.0, 1.0])))) == 0


def test_categorical_sample_rows_uses_one_stream_per_row():
    head = CategoricalHeadOutput(logits=_t([[0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]))
    a = categorical_sample_rows(head, [np.random.default_rng(1), np.random.default_rng(2)])
    b = categorical_sample_rows(head, [np.random.default_rng(1), np.random.default_rng(2)])
    np.testing.assert_array_equal(a, b)
    assert a.shape == (2,)


def test_checkpoint_round_trip(tmp_path):
    net = Mlp([2, 3, 1], ["selu", "identity"])
    init_normal_(net, make_generator(3))
    path = save_checkpoint(tmp_path / "net.pt", "mlp", net.config(), net.state_dict())
    payload = load_checkpoint(path, "mlp")
    other = Mlp(**payload["config"])
    other.load_state_dict(payload["state_dict"])
    x = _t([[0.3, -0.7]])
    torch.testing.assert_close(other(x), net(x), rtol=0, atol=0)
    with pytest.raises(CheckpointError):
        load_checkpoint(path, "policy")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.pt", "mlp")


def test_init_normal_std():
    net = Mlp([300, 300], ["identity"])
    init_normal_(net, make_generator(11))
    values = torch.cat([p.detach().flatten() for p in net.parameters()])
    assert 0.19 <= values.std().item() <= 0.21
    assert abs(values.mean().item()) < 0.01


@pytest.mark.parametrize("a, b", [(1.0, 1.0), (1.5, 2.0), (3.0, 7.0), (1.2, 9.0)])
def test_beta_density_integrates_to_one(a, b):
    head = BetaHeadOutput(alpha=_t([a]), beta=_t([b]))
    total, _ = integrate.quad(lambda x: math.exp(beta_log_prob(head, [x]).item()), 0.0, 1.0, limit=200)
    assert total == pytest.approx(1.0, abs=1e-5)


def test_categorical_sample_frequencies():
    logits = _t([0.5, -1.0, 2.0, 0.0])
    n = 100_000
    head = CategoricalHeadOutput(logits=logits.expand(n, 4))
    draws = categorical_sample(head, np.random.default_rng(12))
    counts = np.bincount(draws, minlength=4)
    p = torch.softmax(logits, dim=-1).numpy()
    assert np.all(np.abs(counts - n * p) <= 4 * np.sqrt(n * p * (1 - p)))


def test_cosine_embed_separates_distinct_latents():
    c = torch.rand(300, 2, dtype=DTYPE, generator=make_generator(13))
    d = torch.cdist(cosine_embed(c, 3), cosine_embed(c, 3))
    d.fill_diagonal_(math.inf)
    assert d.min().item() > 0.0
