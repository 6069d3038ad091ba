from __future__ import annotations

import numpy as np
import pytest
from scipy.special import erf

from fieldformer.autodiff import Tensor, coordinate_partials, no_grad
from fieldformer.diagnostics import check_invariances, scaled_error
from fieldformer.models import (ActivationError, Domain, EncoderConfig, FieldFormer, FourierConfig, FourierMLP,
                                Normalizer, Siren, SirenConfig, encode_neighborhood, fourier_features, load_model,
                                save_model)
from fieldformer.neighbors import NeighborSet, ObservationIndex, VelocityScales
from fieldformer.simulators.grid import GridSpec

DOMAIN = Domain((0.0, 0.0, 0.0), (1.0, 1.0, 0.5))


def hand_set(query, coords, values) -> NeighborSet:
    coords = np.asarray(coords, dtype=float)
    B, m = coords.shape[:2]
    z = np.zeros((B, m), int)
    return NeighborSet(coords - np.asarray(query)[:, None, :], np.asarray(values, float).reshape(B, m, -1), z, z,
                       np.zeros((B, m, 3), int), np.zeros((B, m)), None, np.asarray(query, float))


def random_set(rng, B, m, q=1) -> tuple[np.ndarray, NeighborSet]:
    query = rng.uniform(0, 1, (B, 3))
    return query, hand_set(query, query[:, None, :] + rng.normal(0, 0.1, (B, m, 3)), rng.standard_normal((B, m, q)))


# -- straight-line numpy reference of the encoder ---------------------------------------

def _ln(x, g, b, eps=1e-5):
    c = x - x.mean(-1, keepdims=True)
    return c / np.sqrt((c * c).mean(-1, keepdims=True) + eps) * g + b


def _gelu(x):
    return 0.5 * x * (1 + erf(x / np.sqrt(2)))


def reference_forward(model: FieldFormer, ns: NeighborSet) -> np.ndarray:
    P = {k: model.params[k].data for k in model.params.names()}
    cfg = model.cfg
    feats = np.concatenate([ns.deltas * np.exp(P["theta"]), model.norm.encode(ns.values)], -1)
    h = feats @ P["embed.w"] + P["embed.b"]
    dk = cfg.d_model // cfg.heads
    for i in range(cfg.layers):
        pre = f"layer{i}."
        a = _ln(h, P[pre + "ln1.g"], P[pre + "ln1.b"])
        qkv = a @ P[pre + "qkv.w"] + P[pre + "qkv.b"]
        q, k, v = (qkv[..., j * cfg.d_model:(j + 1) * cfg.d_model] for j in range(3))
        heads = []
        for hh in range(cfg.heads):
            sl = slice(hh * dk, (hh + 1) * dk)
            s = q[..., sl] @ np.swapaxes(k[..., sl], -1, -2) / np.sqrt(dk)
            w = np.exp(s - s.max(-1, keepdims=True))
            heads.append((w / w.sum(-1, keepdims=True)) @ v[..., sl])
        h = h + np.concatenate(heads, -1) @ P[pre + "out.w"] + P[pre + "out.b"]
        f = _ln(h, P[pre + "ln2.g"], P[pre + "ln2.b"])
        h = h + _gelu(f @ P[pre + "ff1.w"] + P[pre + "ff1.b"]) @ P[pre + "ff2.w"] + P[pre + "ff2.b"]
    pooled = _ln(h, P["ln_f.g"], P["ln_f.b"]).mean(1)
    out = _gelu(pooled @ P["head1.w"] + P["head1.b"]) @ P["head2.w"] + P["head2.b"]
    return out * model.norm.std + model.norm.mean


def small_model(rng, m=6, q=1, **kw) -> FieldFormer:
    cfg = EncoderConfig(m=m, layers=2, d_model=16, heads=4, ffn=24, q=q, **kw)
    return FieldFormer(cfg, VelocityScales(rng.normal(0, 0.5, 3)), Normalizer(np.full(q, 0.3), np.full(q, 2.0)),
                       rng=rng)


def test_encoder_config_validation():
    with pytest.raises(ValueError):
        EncoderConfig(d_model=10, heads=4)
    with pytest.raises(ValueError):
        EncoderConfig(m=0)
    with pytest.raises(ValueError):
        EncoderConfig(layers=0)


def test_encode_neighborhood_hand_case():
    query = np.array([[0.5, 0.25, 1.0]])
    ns = hand_set(query, [[[0.5, 0.25, 1.0], [0.75, 0.0, 0.5]]], [[2.0, -1.0]])
    X = encode_neighborhood(query, ns, 2)
    np.testing.assert_allclose(X[0], [[0.0, 0.0, 0.0, 2.0], [0.25, -0.25, -0.5, -1.0]])
    shifted = hand_set(query + 3.0, [[[3.5, 3.25, 4.0], [3.75, 3.0, 3.5]]], [[2.0, -1.0]])
    np.testing.assert_allclose(encode_neighborhood(query + 3.0, shifted), X)
    with pytest.raises(ValueError):
        encode_neighborhood(query, ns, 3)


def test_forward_matches_numpy_reference(rng):
    model = small_model(rng, q=2)
    query, ns = random_set(rng, 5, 6, q=2)
    with no_grad():
        out = model.forward(Tensor(query), ns).data
    np.testing.assert_allclose(out, reference_forward(model, ns), rtol=1e-12, atol=1e-12)


def test_singleton_attention_is_identity_mixing(rng):
    model = small_model(rng, m=1)
    query, ns = random_set(rng, 4, 1)
    with no_grad():
        out = model.forward(Tensor(query), ns).data
    # with one token softmax weights are exactly 1, so the reference without attention applies
    np.testing.assert_allclose(out, reference_forward(model, ns), rtol=1e-12, atol=1e-12)


def test_encoder_permutation_equivariance(rng):
    model = small_model(rng)
    query, ns = random_set(rng, 3, 6)
    perm = rng.permutation(6)
    with no_grad():
        feats, vals = model.tokens(Tensor(query), ns)
        H = model.encode(feats, vals).data
        feats_p, vals_p = model.tokens(Tensor(query), ns.permuted(perm))
        Hp = model.encode(feats_p, vals_p).data
    np.testing.assert_allclose(Hp, H[:, perm], atol=1e-12)


def test_predict_invariances():
    for seed in range(5):
        for r in check_invariances(seed):
            assert r.passed, (r.name, r.error)


def test_zero_head_gives_bias(rng):
    model = small_model(rng, zero_head=True)
    model.params["head2.b"].data[:] = 0.7
    query, ns = random_set(rng, 4, 6)
    with no_grad():
        out = model.forward(Tensor(query), ns).data
    np.testing.assert_array_equal(out, np.full((4, 1), 0.7 * 2.0 + 0.3))


def test_forward_deterministic(rng):
    a = small_model(np.random.default_rng(5))
    b = small_model(np.random.default_rng(5))
    query, ns = random_set(rng, 3, 6)
    np.testing.assert_array_equal(a.predict(query, ns=ns), b.predict(query, ns=ns))


def test_non_finite_activation_names_layer(rng):
    model = small_model(rng)
    model.params["layer1.ff2.b"].data[:] = np.inf
    query, ns = random_set(rng, 2, 6)
    with pytest.raises(ActivationError) as err:
        with np.errstate(invalid="ignore"):
            model.predict(query, ns=ns)
    assert err.value.layer == 1


def test_coordinate_partials_match_fd(rng):
    model = small_model(rng)
    query, ns = random_set(rng, 4, 6)
    parts = coordinate_partials(lambda z: model.forward(z, ns), query, ("u_x", "u_y", "u_t"), order=1)
    for k, name in enumerate(("u_x", "u_y", "u_t")):
        e = np.zeros(3)
        e[k] = 1e-6
        fd = (model.predict(query + e, ns=ns) - model.predict(query - e, ns=ns)) / 2e-6
        assert scaled_error(parts[name].data, fd) < 1e-6


def test_attached_model_gathers(rng):
    g = GridSpec(10, 10, 20, 0.05)
    idx = ObservationIndex(g, np.array([[1, 2], [5, 5], [8, 1]]), rng.standard_normal((3, 20, 1)),
                           np.ones((3, 20), bool))
    model = FieldFormer(EncoderConfig(m=4, d_model=8, heads=2, ffn=8), VelocityScales.cell_isotropic(g), rng=rng)
    with pytest.raises(RuntimeError):
        model.predict(g.coords(0, 0, 0)[None])
    model.attach(idx)
    z = g.coords(np.arange(5), np.arange(5), np.arange(5))
    np.testing.assert_array_equal(model.predict(z), model.predict(z, ns=model.gather(z)))


# -- baselines -------------------------------------------------------------------------

def test_siren_zero_weights_give_bias():
    m = Siren(SirenConfig(hidden=8, layers=2), DOMAIN)
    for n in m.params.names():
        m.params[n].data[:] = 0.0
    m.params["out.b"].data[:] = 1.25
    np.testing.assert_array_equal(m.predict(np.random.default_rng(0).uniform(0, 0.5, (5, 3))), 1.25)


def test_siren_frequency_scale_doubles_gradient(rng):
    z = rng.uniform(0, 0.5, (6, 3))
    grads = []
    for w0 in (10.0, 20.0):
        m = Siren(SirenConfig(hidden=8, layers=2, omega0=w0), DOMAIN, rng=np.random.default_rng(3))
        parts = coordinate_partials(lambda zz: m.preactivation(zz, 0)[:, :1], z, ("u_x",), order=1)
        grads.append(parts["u_x"].data)
    np.testing.assert_allclose(grads[1], 2 * grads[0], rtol=1e-12)


def test_fourier_features_degenerate_and_norm(rng):
    z = Tensor(rng.uniform(0, 1, (7, 3)))
    feats = fourier_features(z, np.zeros((5, 3))).data
    np.testing.assert_array_equal(feats, np.concatenate([np.zeros((7, 5)), np.ones((7, 5))], 1))
    feats = fourier_features(z, rng.standard_normal((9, 3))).data
    np.testing.assert_allclose(np.linalg.norm(feats, axis=1), 3.0, rtol=1e-12)


@pytest.mark.parametrize("kind", ["siren", "fourier"])
def test_baseline_parameter_gradients(rng, kind):
    if kind == "siren":
        m = Siren(SirenConfig(hidden=8, layers=2, omega0=3.0, omega=3.0), DOMAIN, rng=rng)
    else:
        m = FourierMLP(FourierConfig(features=4, hidden=8, layers=2, bandwidth=1.0), DOMAIN, rng=rng)
    z = rng.uniform(0, 0.5, (5, 3))
    w = rng.standard_normal((5, 1))
    loss = lambda: (m.forward(Tensor(z)) * Tensor(w)).sum()
    ad = m.params.compute_grads(loss())
    for name in m.params.names():
        flat = m.params[name].data.reshape(-1)
        for i in range(min(4, flat.size)):
            orig = flat[i]
            flat[i] = orig + 1e-6
            with no_grad():
                fp = loss().item()
            flat[i] = orig - 1e-6
            with no_grad():
                fm = loss().item()
            flat[i] = orig
            fd = (fp - fm) / 2e-6
            assert abs(ad[name].reshape(-1)[i] - fd) / max(1.0, abs(fd)) < 1e-6, name


@pytest.mark.parametrize("kind", ["fieldformer", "siren", "fourier"])
def test_model_io_round_trip(tmp_path, rng, kind):
    query, ns = random_set(rng, 4, 6)
    if kind == "fieldformer":
        m = small_model(rng)
        pred = lambda mm: mm.predict(query, ns=ns)
    elif kind == "siren":
        m = Siren(SirenConfig(hidden=8, layers=2), DOMAIN, Normalizer(np.array([1.0]), np.array([3.0])), rng=rng)
        pred = lambda mm: mm.predict(query)
    else:
        m = FourierMLP(FourierConfig(features=4, hidden=8, layers=2), DOMAIN, rng=rng)
        pred = lambda mm: mm.predict(query)
    save_model(m, tmp_path / "m.ffar")
    back, meta = load_model(tmp_path / "m.ffar")
    assert meta["model_kind"] == kind
    np.testing.assert_array_equal(pred(back), pred(m))
