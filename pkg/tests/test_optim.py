import numpy as np
import pytest

from samlab import models
from samlab.models import LinearModel, MlpModel
from samlab.optim import (AdamConfig, SamConfig, SgdConfig, adam_step, loss_and_grads, sam_step, sgd_step)
from samlab.tensor import NonFiniteError, Tensor, tsum, mul


def _p(v):
    return Tensor(np.array(v, dtype=np.float64), requires_grad=True, name="p")


def test_sgd_vanilla_step():
    p = _p([1.0])
    sgd_step([p], [np.array([2.0])], None, SgdConfig(lr=0.1))
    assert p.data[0] == pytest.approx(0.8, abs=1e-15)


def test_sgd_momentum_two_steps():
    p = _p([0.0])
    cfg = SgdConfig(lr=0.1, momentum=0.9)
    state = sgd_step([p], [np.array([1.0])], None, cfg)
    sgd_step([p], [np.array([1.0])], state, cfg)
    # v1 = 1, v2 = 1.9; p = -0.1 - 0.19
    assert p.data[0] == pytest.approx(-0.29, abs=1e-15)


def test_sgd_zero_gradient_is_fixed_point():
    p = _p([1.5, -2.0])
    sgd_step([p], [np.zeros(2)], None, SgdConfig(lr=0.3, momentum=0.9))
    assert p.data.tolist() == [1.5, -2.0]


def test_sgd_weight_decay_is_coupled():
    p = _p([2.0])
    sgd_step([p], [np.array([0.0])], None, SgdConfig(lr=0.1, weight_decay=0.5))
    assert p.data[0] == pytest.approx(2.0 - 0.1 * 2 * 0.5 * 2.0)


def test_nonfinite_gradient_names_parameter():
    with pytest.raises(NonFiniteError, match="p"):
        sgd_step([_p([1.0])], [np.array([np.inf])], None, SgdConfig())


def test_adam_first_step():
    p = _p(np.zeros(3))
    cfg = AdamConfig(lr=1e-3)
    adam_step([p], [np.ones(3)], None, cfg)
    np.testing.assert_allclose(p.data, -1e-3 / (1 + cfg.eps_hat), rtol=1e-14)


def test_adam_zero_gradient_is_fixed_point():
    p = _p([0.3, 0.4])
    adam_step([p], [np.zeros(2)], None, AdamConfig())
    assert p.data.tolist() == [0.3, 0.4]


def test_adam_matches_scalar_recurrence():
    cfg = AdamConfig(lr=0.01, beta1=0.8, beta2=0.95, eps_hat=1e-8)
    p, state = _p([1.0]), None
    gs = [0.5, -1.5, 2.0]
    for g in gs:
        state = adam_step([p], [np.array([g])], state, cfg)
    w, m, v = 1.0, 0.0, 0.0
    for t, g in enumerate(gs, start=1):
        m = 0.8 * m + 0.2 * g
        v = 0.95 * v + 0.05 * g * g
        w -= 0.01 * (m / (1 - 0.8 ** t)) / ((v / (1 - 0.95 ** t)) ** 0.5 + 1e-8)
    assert p.data[0] == pytest.approx(w, rel=1e-14)


def test_config_validation():
    with pytest.raises(ValueError):
        SgdConfig(lr=-1)
    with pytest.raises(ValueError):
        AdamConfig(beta1=1.0)
    with pytest.raises(ValueError):
        SamConfig(rho=-0.1)


class Quadratic:
    """L(w) = sum_i c_i w_i^2, exposed through the model interface."""

    def __init__(self, w, c=None):
        self.w = _p(w)
        self.c = np.ones_like(self.w.data) if c is None else np.asarray(c, dtype=np.float64)

    def parameters(self):
        return {"w": self.w}


def _quad_loss(model, x, y):
    return tsum(mul(Tensor(model.c), mul(model.w, model.w)))


def test_sam_one_dimensional_quadratic():
    m = Quadratic([1.0])
    cfg = SamConfig(rho=0.5, base=SgdConfig(lr=0.1))
    _, info = sam_step(m, (None, [0]), cfg, None, loss_fn=_quad_loss)
    # g1 = 2, e = 0.5, g2 = 2 * 1.5 = 3, w' = 1 - 0.3
    assert info.grad_norm == 2.0
    assert info.perturbed_loss == pytest.approx(2.25)
    assert m.w.data[0] == pytest.approx(0.7, abs=1e-15)


def test_sam_guard_skips_perturbation():
    m = Quadratic([0.0, 0.0])
    _, info = sam_step(m, (None, [0]), SamConfig(rho=0.5, base=SgdConfig(lr=0.1)), None, loss_fn=_quad_loss)
    assert not info.perturbed
    assert m.w.data.tolist() == [0.0, 0.0]


def _batch(seed, n=16):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(n, 3)), rng.choice([-1, 1], size=n)


@pytest.mark.parametrize("base", [SgdConfig(lr=0.1, momentum=0.9, weight_decay=1e-3), AdamConfig(lr=1e-2, weight_decay=1e-3)])
def test_sam_rho_zero_equals_base_step(base):
    x, y = _batch(0)
    a, b = MlpModel([3, 6, 2], seed=1), MlpModel([3, 6, 2], seed=1)
    sa = sb = None
    for _ in range(3):
        sa, _ = sam_step(a, (x, y), SamConfig(rho=0.0, base=base), sa)
        params = list(b.parameters().values())
        _, g = loss_and_grads(b, x, y)
        from samlab.optim import base_step
        sb = base_step(params, g, sb, base)
    for p, q in zip(a.parameters().values(), b.parameters().values()):
        assert p.data.tobytes() == q.data.tobytes()


def test_sam_perturbation_has_norm_rho_and_restores_weights(monkeypatch):
    import samlab.optim as optim

    x, y = _batch(2)
    m = MlpModel([3, 5, 2], "tanh", seed=3)
    before = {k: p.data.copy() for k, p in m.parameters().items()}
    seen = []
    real = optim.loss_and_grads

    def spy(model, xb, yb, loss_fn=None):
        seen.append({k: p.data.copy() for k, p in model.parameters().items()})
        return real(model, xb, yb, loss_fn)

    captured = {}

    def fake_base(params, grads, state, cfg, lr=None):
        captured["at_base"] = [p.data.copy() for p in params]
        return {}

    monkeypatch.setattr(optim, "loss_and_grads", spy)
    monkeypatch.setattr(optim, "base_step", fake_base)
    sam_step(m, (x, y), SamConfig(rho=0.07), None)
    diff = np.sqrt(sum(np.sum((seen[1][k] - before[k]) ** 2) for k in before))
    assert diff == pytest.approx(0.07, abs=1e-12)
    for k, arr in zip(before, captured["at_base"]):
        assert arr.tobytes() == before[k].tobytes()


@pytest.mark.parametrize("seed", range(5))
def test_sam_ascent_on_convex_quadratic(seed):
    rng = np.random.default_rng(seed)
    m = Quadratic(rng.normal(size=4), c=rng.uniform(0.1, 3.0, size=4))
    _, info = sam_step(m, (None, [0]), SamConfig(rho=0.3, base=SgdConfig(lr=1e-12)), None, loss_fn=_quad_loss)
    assert info.perturbed_loss >= info.loss


@pytest.mark.filterwarnings("ignore:overflow encountered")
def test_sam_nonfinite_perturbed_loss():
    m = LinearModel(1, w=[700.0])
    x, y = np.array([[1.0]]), [-1]

    def loss_fn(model, xb, yb):
        # finite at w, overflows once the ascent step pushes w past the float range
        return tsum(mul(model.w, Tensor([1e305])))

    with pytest.raises(NonFiniteError):
        sam_step(m, (x, y), SamConfig(rho=1e4), None, loss_fn=loss_fn)


def test_sam_reduces_training_loss():
    x, y = _batch(4, 64)
    m = LinearModel(3, seed=0)
    start = models.loss(m, x, y).item()
    state = None
    for _ in range(50):
        state, _ = sam_step(m, (x, y), SamConfig(rho=0.05, base=SgdConfig(lr=0.5)), state)
    assert models.loss(m, x, y).item() < start
