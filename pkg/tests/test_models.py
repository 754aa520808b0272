from dataclasses import replace

import numpy as np
import pytest

from biosigflux.autodiff import Tensor, grad_check_params, no_grad
from biosigflux.autodiff import functional as F
from biosigflux.autodiff.layers import MultiHeadAttention
from biosigflux.dataset import generate_dataset
from biosigflux.models import (
    BCNN,
    CNN,
    CnnConfig,
    PlateauSchedule,
    PriorMask,
    SquatConfig,
    TrainConfig,
    VitConfig,
    bcnn_loss,
    biased_cross_attention,
    build_model,
    build_prior_mask,
    desk_model_config,
    mix_prior,
    train,
)
from biosigflux.spectra import SPECIES, Band, SpeciesCatalog, build_wavelength_grid

TINY = {
    "cnn": CnnConfig(filters=[4, 4, 4, 4, 4], fc=[8, 8], dropout=0.2),
    "bcnn": CnnConfig(filters=[4, 4, 4, 4, 4], fc=[8, 8], dropout=0.2, init_sigma=0.05),
    "vit": VitConfig(dim=8, depth=1, heads=2, mlp_ratio=2, dropout=0.1),
    "squat": SquatConfig(dim=8, depth=1, heads=2, mlp_ratio=2, dropout=0.1, branch_channels=4),
}


def spectra(b, seed=0):
    return np.random.default_rng(seed).standard_normal((b, 1, 355)).astype(np.float32)


@pytest.mark.parametrize("kind", list(TINY))
@pytest.mark.parametrize("batch", [1, 3])
def test_output_shape(kind, batch):
    out = build_model(kind, TINY[kind])(spectra(batch))
    assert out.mean.shape == (batch, 8)


@pytest.mark.parametrize("kind", list(TINY))
def test_wrong_length_rejected(kind):
    with pytest.raises(ValueError, match="355"):
        build_model(kind, TINY[kind])(np.zeros((1, 1, 300), dtype=np.float32))


def test_vit_shorter_than_patch_rejected():
    with pytest.raises(ValueError, match="patch size"):
        build_model("vit", TINY["vit"])(np.zeros((1, 1, 5), dtype=np.float32))


@pytest.mark.parametrize("kind", list(TINY))
def test_seeded_init_is_reproducible(kind):
    a, b = build_model(kind, TINY[kind], seed=3), build_model(kind, TINY[kind], seed=3)
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb
        np.testing.assert_array_equal(pa.data, pb.data)


@pytest.mark.parametrize("kind", list(TINY))
def test_full_loss_gradients(kind):
    m = build_model(kind, TINY[kind], seed=0, dtype=np.float64)
    rng = np.random.default_rng(1)
    x, y = rng.standard_normal((2, 1, 355)), Tensor(rng.standard_normal((2, 8)))
    errs = grad_check_params(lambda: m.loss(m(x), y, beta_kl=1e-3, mode="nll"), dict(m.named_parameters()),
                             step=1e-5, probes_per_param=2)
    assert max(errs.values()) <= 1e-4


class TestCNN:
    def test_conv_stack_parameter_count(self):
        m = CNN(CnnConfig(), np.random.default_rng(0))
        conv = sum(p.data.size for c in m.convs for p in c.parameters())
        expected = sum(co * ci * k + co for co, ci, k in
                       zip([32, 64, 128, 256, 512], [1, 32, 64, 128, 256], [13, 11, 9, 7, 5]))
        assert conv == expected == 982_400

    def test_zero_input_gives_final_bias(self):
        m = CNN(TINY["cnn"], np.random.default_rng(0))
        for layer in [*m.convs, *m.fcs]:
            layer.bias.data[:] = 0
        m.head.bias.data[:] = np.arange(8)
        out = m(np.zeros((2, 1, 355), dtype=np.float32)).mean.data
        np.testing.assert_array_equal(out, np.tile(np.arange(8, dtype=np.float32), (2, 1)))

    def test_eval_is_deterministic_and_training_is_not(self):
        m = CNN(TINY["cnn"], np.random.default_rng(0))
        x = spectra(2)
        np.testing.assert_array_equal(m(x).mean.data, m(x).mean.data)
        a = m(x, training=True, rng=np.random.default_rng(1)).mean.data
        b = m(x, training=True, rng=np.random.default_rng(2)).mean.data
        assert not np.array_equal(a, b)


class TestBCNN:
    def test_deterministic_mode_repeats(self):
        m = BCNN(TINY["bcnn"], np.random.default_rng(0))
        x = spectra(2)
        np.testing.assert_array_equal(m(x).mean.data, m(x).mean.data)

    def test_collapsed_posterior_matches_mean_weights(self):
        m = BCNN(TINY["bcnn"], np.random.default_rng(0), dtype=np.float64)
        for layer in m.variational_layers():
            layer.weight_rho.data[:] = -40.0
            layer.bias_rho.data[:] = -40.0
        x = spectra(2).astype(np.float64)
        det = m(x).mean.data
        sto = m(x, stochastic=True, rng=np.random.default_rng(5)).mean.data
        np.testing.assert_allclose(sto, det, atol=1e-5)

    def test_stochastic_draws_differ(self):
        m = BCNN(TINY["bcnn"], np.random.default_rng(0))
        x = spectra(2)
        a = m(x, stochastic=True, rng=np.random.default_rng(1)).mean.data
        b = m(x, stochastic=True, rng=np.random.default_rng(2)).mean.data
        assert not np.array_equal(a, b)

    def test_mse_loss_values(self):
        mean = Tensor(np.array([[3.0]]))
        assert bcnn_loss(mean, None, np.array([[3.0]]), None, 0.0, "mse").item() == 0.0
        assert bcnn_loss(mean, None, np.array([[1.0]]), None, 0.0, "mse").item() == 2.0

    def test_kl_zero_when_posterior_is_prior(self):
        m = BCNN(TINY["bcnn"], np.random.default_rng(0), dtype=np.float64)
        for layer in m.variational_layers():
            for p in (layer.weight_mu, layer.bias_mu):
                p.data[:] = 0.0
            for p in (layer.weight_rho, layer.bias_rho):
                p.data[:] = np.log(np.expm1(1.0))
        assert abs(m.kl().item()) < 1e-9
        out = m(spectra(2).astype(np.float64))
        target = np.ones((2, 8))
        with_kl = bcnn_loss(out.mean, out.log_var, target, m, 0.7, "nll").item()
        data = bcnn_loss(out.mean, out.log_var, target, m, 0.0, "nll").item()
        assert with_kl == pytest.approx(data, abs=1e-9)

    def test_negative_beta_rejected(self):
        with pytest.raises(ValueError):
            bcnn_loss(Tensor(np.zeros((1, 8))), None, np.zeros((1, 8)), None, -1.0, "mse")

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError):
            bcnn_loss(Tensor(np.zeros((1, 8))), None, np.zeros((1, 8)), None, 0.0, "huber")


class TestViT:
    def test_token_count(self):
        assert VitConfig().n_tokens == 347

    def test_positional_encoding_matters(self):
        m = build_model("vit", TINY["vit"], seed=0)
        x = spectra(1)
        before = m(x).mean.data.copy()
        m.pos_embed.data[:] = m.pos_embed.data[:, ::-1]
        assert not np.allclose(m(x).mean.data, before)


class TestPriorMask:
    def setup_method(self):
        self.grid = build_wavelength_grid()

    def test_rows_sum_to_one(self):
        P = build_prior_mask(SpeciesCatalog(), self.grid.points).P
        np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(P >= 0)

    def test_no_bands_gives_uniform_rows(self):
        cat = SpeciesCatalog(bands={n: [] for n in SPECIES})
        P = build_prior_mask(cat, self.grid.points).P
        np.testing.assert_array_equal(P, np.full((8, 355), 1 / 355))

    def test_single_band_argmax(self):
        cat = SpeciesCatalog(bands={n: [] for n in SPECIES} | {"O2": [Band(0.76, 0.015, 1.0)]})
        P = build_prior_mask(cat, self.grid.points).P
        assert np.argmax(P[0]) == np.argmin(np.abs(self.grid.points - 0.76))

    def test_rejects_unsorted_centers(self):
        with pytest.raises(ValueError):
            build_prior_mask(SpeciesCatalog(), self.grid.points[::-1])

    def test_dict_roundtrip(self):
        pm = build_prior_mask(SpeciesCatalog(), self.grid.points)
        again = PriorMask.from_dict(pm.to_dict())
        np.testing.assert_array_equal(again.P, pm.P)


class TestPriorMixing:
    def test_worked_example(self):
        out = mix_prior(Tensor(np.array([[1.0, 0.0]])), np.array([[0.2, 0.8]]), Tensor(np.array([0.5])))
        np.testing.assert_allclose(out.data, [[0.6, 0.4]], atol=1e-12)

    def test_endpoints(self):
        rng = np.random.default_rng(0)
        A = F.softmax(Tensor(rng.standard_normal((2, 3, 8, 5)))).data
        P = F.softmax(Tensor(rng.standard_normal((8, 5)))).data
        np.testing.assert_array_equal(mix_prior(Tensor(A), P, Tensor(np.zeros(8))).data, A)
        np.testing.assert_array_equal(mix_prior(Tensor(A), P, Tensor(np.ones(8))).data, np.broadcast_to(P, A.shape))

    def test_shape_mismatch_rejected(self):
        mha = MultiHeadAttention(4, 1, np.random.default_rng(0), dtype=np.float64)
        q, t = Tensor(np.zeros((1, 8, 4))), Tensor(np.zeros((1, 6, 4)))
        with pytest.raises(ValueError, match="prior mask shape"):
            biased_cross_attention(q, t, np.full((8, 5), 0.2), Tensor(np.zeros(8)), mha)

    def test_one_hot_prior_selects_value_projection(self):
        # α = 1 with P one-hot on token t* returns out_proj(v_proj(token t*)) for every query
        rng = np.random.default_rng(0)
        mha = MultiHeadAttention(4, 1, rng, dtype=np.float64)
        tokens = Tensor(rng.standard_normal((1, 4, 4)))
        queries = Tensor(rng.standard_normal((1, 8, 4)))
        P = np.zeros((8, 4))
        P[:, 2] = 1.0
        emb, attn = biased_cross_attention(queries, tokens, P, Tensor(np.full(8, 50.0)), mha)
        expected = mha.out_proj(mha.v_proj(tokens)).data[0, 2]
        np.testing.assert_allclose(emb.data[0], np.tile(expected, (8, 1)), atol=1e-12)


class TestSQuAT:
    def test_attention_shape_and_simplex(self):
        m = build_model("squat", TINY["squat"], seed=0)
        out = m(spectra(2))
        assert out.attention.shape == (2, 2, 8, 355)
        np.testing.assert_allclose(out.attention.data.sum(-1), 1.0, atol=1e-5)

    def test_default_attention_shape(self):
        cfg = SquatConfig()
        assert (cfg.heads, cfg.n_queries, cfg.input_length) == (8, 8, 355)

    def test_interaction_ablation_decouples_species(self):
        # with the interaction projection zeroed, species s's output ignores other queries
        m = build_model("squat", TINY["squat"], seed=0, dtype=np.float64)
        for layer in m.interaction:
            layer.attn.out_proj.weight.data[:] = 0
            layer.attn.out_proj.bias.data[:] = 0
        x = spectra(1).astype(np.float64)
        before = m(x).mean.data.copy()
        m.queries.data[0, 3] += np.random.default_rng(1).standard_normal(m.queries.shape[-1])
        after = m(x).mean.data
        changed = np.abs(after - before)[0] > 1e-12
        assert changed.tolist() == [s == 3 for s in range(8)]

    def test_alpha_starts_at_half(self):
        np.testing.assert_allclose(build_model("squat", TINY["squat"]).alpha, 0.5)

    def test_prior_shape_checked(self):
        with pytest.raises(ValueError):
            build_model("squat", TINY["squat"], prior=PriorMask(np.full((8, 10), 0.1), np.arange(10.0)))


class TestPlateauSchedule:
    def test_decay_and_stop(self):
        s = PlateauSchedule(1.0, plateau_patience=2, factor=0.5, min_lr=0.1, stop_patience=4)
        assert s.step(1.0)
        for _ in range(2):
            s.step(2.0)
        assert s.lr == 0.5 and not s.should_stop
        for _ in range(2):
            s.step(2.0)
        assert s.lr == 0.25 and s.should_stop and s.best_epoch == 0

    def test_min_lr_floor(self):
        s = PlateauSchedule(1.0, plateau_patience=1, factor=0.1, min_lr=0.05, stop_patience=100)
        s.step(1.0)
        for _ in range(5):
            s.step(2.0)
        assert s.lr == 0.05


@pytest.fixture(scope="module")
def tiny_data():
    return generate_dataset(60, seed=1)


def test_zero_target_converges_immediately():
    cat = SpeciesCatalog(flux_scale={n: 0.0 for n in SPECIES})
    ds = generate_dataset(30, seed=0, catalog=cat)
    m = build_model("cnn", TINY["cnn"])
    m.head.weight.data[:] = 0
    m.head.bias.data[:] = 0
    res = train(m, ds, TrainConfig(epochs=2, lr=1e-3, batch_size=16))
    assert res.history[0]["val_mse"] == 0.0


def test_training_is_reproducible(tiny_data):
    hp = TrainConfig(epochs=2, lr=1e-3, batch_size=16)
    h1 = train(build_model("squat", TINY["squat"]), tiny_data, hp).history
    h2 = train(build_model("squat", TINY["squat"]), tiny_data, hp).history
    assert h1 == h2


def test_training_reduces_loss_and_restores_best(tiny_data):
    m = build_model("bcnn", TINY["bcnn"])
    res = train(m, tiny_data, TrainConfig(epochs=4, lr=3e-3, batch_size=16, beta_kl=1e-4))
    vals = [h["val_mse"] for h in res.history]
    assert res.best_epoch == int(np.argmin(vals))
    assert m.trained
    assert set(res.history[0]) == {"epoch", "train_loss", "val_mse", "lr"}


@pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
@pytest.mark.filterwarnings("ignore:invalid value:RuntimeWarning")
def test_early_stopping_halts(tiny_data):
    # lr so large the model diverges after the first epoch
    hp = TrainConfig(epochs=50, lr=5.0, batch_size=16, plateau_patience=1, stop_patience=2)
    res = train(build_model("cnn", TINY["cnn"]), tiny_data, hp)
    assert len(res.history) < 50
    assert res.best_epoch == int(np.argmin([h["val_mse"] for h in res.history]))


class TestWarmup:
    def test_warmup_phase_is_squared_error(self, tiny_data):
        hp = TrainConfig(epochs=3, lr=1e-3, batch_size=16, loss_mode="mse")
        plain = train(build_model("bcnn", TINY["bcnn"]), tiny_data, hp).history
        warm = train(build_model("bcnn", TINY["bcnn"]), tiny_data, replace(hp, warmup_epochs=2)).history
        assert plain == warm

    def test_best_weights_come_from_main_phase(self, tiny_data):
        hp = TrainConfig(epochs=3, lr=1e-3, batch_size=16, warmup_epochs=2)
        res = train(build_model("bcnn", TINY["bcnn"]), tiny_data, hp)
        assert res.best_epoch == 2 and len(res.history) == 3

    def test_warmup_longer_than_run_rejected(self):
        with pytest.raises(ValueError, match="warmup"):
            TrainConfig(epochs=3, warmup_epochs=4)


def test_empty_split_rejected():
    ds = generate_dataset(12, seed=0, split_ratios=(1, 0, 0))
    with pytest.raises(ValueError, match="non-empty"):
        train(build_model("cnn", TINY["cnn"]), ds, TrainConfig(epochs=1))


@pytest.mark.parametrize("kind", ["cnn", "bcnn", "vit", "squat"])
def test_desk_configs_build(kind):
    m = build_model(kind, desk_model_config(kind))
    with no_grad():
        assert m(spectra(1)).mean.shape == (1, 8)


def test_config_strict_parsing():
    with pytest.raises(ValueError, match="widht"):
        VitConfig.from_dict({"widht": 3})
    assert SquatConfig.from_dict(SquatConfig().to_dict()) == SquatConfig()


def test_unknown_kind():
    with pytest.raises(ValueError):
        build_model("rnn")
