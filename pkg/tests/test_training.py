import numpy as np
import pytest

from mvdamage.models import ModelC, ModelL
from mvdamage.tensor import Parameter, Tensor, backward, grad_check, ops, precision
from mvdamage.training import (
    CLIP_EPSILON,
    MODEL_C_PHASE1,
    MODEL_C_PHASE2,
    MODEL_L_TRAINING,
    Adam,
    AdamState,
    EarlyStopping,
    EpochRecord,
    TrainConfig,
    TrainingError,
    TrainLog,
    adam_step,
    binary_focal_loss,
    classification_evaluator,
    cross_entropy_loss,
    focal_loss,
    inverse_frequency_alpha,
    set_trainable,
    train_model_c,
    train_model_l,
)

P_GRID = np.linspace(0.01, 0.99, 99)
QUICK = TrainConfig(max_epochs=1, augment=False, early_stopping=False)


def _pairs(p):
    return Tensor(np.stack([p, 1.0 - p], axis=1))


class TestFocalLoss:
    def test_reduces_to_cross_entropy(self):
        with precision(np.float64):
            for p in P_GRID:
                probs = Tensor(np.array([p, 1.0 - p]))
                focal = focal_loss(probs, 0, gamma=0.0, alpha=[1.0, 1.0]).item()
                assert abs(focal - cross_entropy_loss(probs, 0).item()) < 1e-9
                assert focal == pytest.approx(-np.log(p), abs=1e-12)

    def test_bounded_by_cross_entropy(self):
        with precision(np.float64):
            probs = _pairs(P_GRID)
            targets = np.zeros(len(P_GRID), dtype=int)
            for p in P_GRID:
                one = Tensor(np.array([p, 1.0 - p]))
                assert focal_loss(one, 0, gamma=2.0).item() <= cross_entropy_loss(one, 0).item()
            assert focal_loss(probs, targets).item() < cross_entropy_loss(probs, targets).item()

    def test_decreases_as_true_class_probability_rises(self):
        rng = np.random.default_rng(31)
        with precision(np.float64):
            for _ in range(50):
                gamma = float(rng.choice([0.0, 0.5, 1.0, 2.0, 5.0]))
                alpha = rng.uniform(0.25, 4.0, size=5)
                target = int(rng.integers(0, 5))
                rest = rng.dirichlet(np.ones(4))
                losses = []
                for p in P_GRID:
                    probs = np.insert(rest * (1.0 - p), target, p)
                    losses.append(focal_loss(Tensor(probs), target, gamma=gamma, alpha=alpha).item())
                assert np.all(np.diff(losses) < 0), (gamma, target)

    def test_known_value(self):
        with precision(np.float64):
            loss = focal_loss(Tensor(np.array([0.5, 0.25, 0.25])), 0, gamma=2.0).item()
        assert loss == pytest.approx(0.25 * np.log(2.0))

    def test_alpha_weights_true_class(self):
        with precision(np.float64):
            probs = Tensor(np.array([[0.7, 0.3], [0.4, 0.6]]))
            plain = focal_loss(probs, [0, 1], gamma=0.0).item()
            weighted = focal_loss(probs, [0, 1], gamma=0.0, alpha=[2.0, 2.0]).item()
            first_only = focal_loss(probs, [0, 1], gamma=0.0, alpha=[1.0, 0.0]).item()
        assert weighted == pytest.approx(2 * plain)
        assert first_only == pytest.approx(-np.log(0.7) / 2)

    def test_clipping_keeps_loss_finite(self):
        with precision(np.float64):
            loss = cross_entropy_loss(Tensor(np.array([0.0, 1.0])), 0).item()
        assert loss == pytest.approx(-np.log(CLIP_EPSILON))

    @pytest.mark.parametrize(
        "probs, targets",
        [
            ([0.5, 0.6], 0),
            ([0.5, 0.5], 2),
            ([0.5, 0.5], -1),
            ([0.5, 0.5], 0.0),
            ([[0.5, 0.5], [0.5, 0.5]], [0]),
        ],
    )
    def test_rejects_bad_input(self, probs, targets):
        with precision(np.float64):
            with pytest.raises(ValueError):
                focal_loss(Tensor(np.array(probs)), targets)

    def test_rejects_wrong_alpha_length(self):
        with pytest.raises(ValueError):
            focal_loss(Tensor(np.array([0.5, 0.5])), 0, alpha=[1.0, 1.0, 1.0])

    @pytest.mark.parametrize("seed", range(20))
    def test_gradient_through_softmax(self, seed):
        rng = np.random.default_rng(seed)
        targets = rng.integers(0, 5, size=4)
        alpha = rng.uniform(0.5, 2.0, size=5)
        with precision(np.float64):
            report = grad_check(
                lambda logits: focal_loss(ops.softmax(logits), targets, gamma=2.0, alpha=alpha),
                Tensor(rng.normal(size=(4, 5))),
            )
        assert report.passed, report


class TestBinaryFocalLoss:
    def test_single_pixel_values(self):
        with precision(np.float64):
            probs = Tensor(np.array([0.8, 0.8]).reshape(2, 1, 1, 1))
            loss = binary_focal_loss(probs, np.array([1, 0]).reshape(2, 1, 1), gamma=2.0).item()
        expected = (-(0.2 ** 2) * np.log(0.8) - (0.8 ** 2) * np.log(0.2)) / 2
        assert loss == pytest.approx(expected)

    def test_alpha_is_background_then_building(self):
        with precision(np.float64):
            probs = Tensor(np.full((1, 1, 1, 2), 0.6))
            masks = np.array([[[0, 1]]])
            loss = binary_focal_loss(probs, masks, gamma=0.0, alpha=[0.0, 1.0]).item()
        assert loss == pytest.approx(-np.log(0.6) / 2)

    def test_rejects_non_binary_masks(self):
        with pytest.raises(ValueError):
            binary_focal_loss(Tensor(np.full((1, 1, 2, 2), 0.5)), np.full((1, 2, 2), 2))

    @pytest.mark.parametrize("seed", range(20))
    def test_gradient_through_sigmoid(self, seed):
        rng = np.random.default_rng(seed)
        masks = rng.integers(0, 2, size=(2, 4, 4))
        with precision(np.float64):
            report = grad_check(
                lambda logits: binary_focal_loss(ops.sigmoid(logits), masks, alpha=[0.7, 1.3]),
                Tensor(rng.normal(size=(2, 1, 4, 4))),
            )
        assert report.passed, report


def test_inverse_frequency_alpha():
    alpha = inverse_frequency_alpha([10, 5, 0, 5, 20])
    assert alpha.mean() == pytest.approx(1.0)
    assert alpha[2] == alpha.max() and alpha[4] == alpha.min()
    assert alpha[1] == pytest.approx(alpha[3])
    np.testing.assert_allclose(inverse_frequency_alpha([3, 3, 3]), 1.0)


class TestAdam:
    def test_first_step_moves_by_learning_rate(self):
        param = Parameter(np.array([1.0, -2.0, 0.5]), name="w")
        param.grad = np.array([0.3, -4.0, 1e-3])
        adam_step([param], AdamState(), lr=0.01)
        np.testing.assert_allclose(param.data, [0.99, -1.99, 0.49], atol=1e-5)

    def test_minimises_quadratic(self):
        with precision(np.float64):
            param = Parameter(np.array([0.0, 10.0]), name="w")
            state = AdamState()
            for _ in range(2000):
                param.zero_grad()
                backward(ops.sum((param - 3.0) * (param - 3.0)))
                adam_step([param], state, lr=0.05)
        np.testing.assert_allclose(param.data, [3.0, 3.0], atol=5e-2)
        assert state.t == 2000

    def test_frozen_parameters_are_untouched(self):
        live = Parameter(np.ones(2), name="live")
        frozen = Parameter(np.ones(2), name="frozen", frozen=True)
        live.grad = np.ones(2)
        frozen.grad = np.full(2, np.nan)
        state = AdamState()
        adam_step([live, frozen], state, lr=0.1)
        assert np.array_equal(frozen.data, np.ones(2))
        assert not np.array_equal(live.data, np.ones(2))
        assert not state.m["frozen"].any() and not state.v["frozen"].any()

    @pytest.mark.parametrize("bad", [np.nan, np.inf])
    def test_non_finite_gradient_aborts(self, bad):
        first = Parameter(np.ones(2), name="a")
        second = Parameter(np.ones(2), name="b")
        first.grad = np.ones(2)
        second.grad = np.array([1.0, bad])
        with pytest.raises(TrainingError):
            adam_step([first, second], AdamState(), lr=0.1)
        assert np.array_equal(first.data, np.ones(2))

    def test_zero_learning_rate_keeps_parameters(self):
        rng = np.random.default_rng(8)
        param = Parameter(rng.normal(size=(3, 4)), name="w")
        start = param.data.copy()
        state = AdamState()
        for _ in range(10):
            param.grad = rng.normal(size=(3, 4))
            adam_step([param], state, lr=0.0)
        assert np.array_equal(param.data, start)
        assert state.t == 10 and state.m["w"].any()

    def test_zero_gradient_on_fresh_state_does_not_move(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            param = Parameter(rng.normal(size=5), name="w")
            start = param.data.copy()
            param.grad = np.zeros(5)
            adam_step([param], AdamState(), lr=float(rng.uniform(1e-4, 1.0)))
            assert np.array_equal(param.data, start)

    def test_mismatched_gradient(self):
        param = Parameter(np.ones(3), name="w")
        param.grad = np.ones(2)
        with pytest.raises(TrainingError):
            adam_step([param], AdamState(), lr=0.1)

    def test_optimizer_wraps_model(self, tiny_l_config):
        model = ModelL(tiny_l_config, seed=0)
        optimizer = Adam(model, lr=1e-3)
        for param in model.parameters():
            param.grad = np.ones_like(param.data)
        before = model.state()
        optimizer.step()
        after = model.state()
        assert all(not np.array_equal(before[k], after[k]) for k in before)
        optimizer.zero_grad()
        assert all(not p.grad.any() for p in model.parameters())


class TestSetTrainable:
    def test_freezes_by_prefix(self, tiny_c_config):
        model = set_trainable(ModelC(tiny_c_config, 0), "backbone.", False)
        for name, param in model.named_parameters():
            assert param.frozen == name.startswith("backbone.")
        set_trainable(model, "", True)
        assert not any(p.frozen for p in model.parameters())

    def test_unknown_prefix(self, tiny_c_config):
        with pytest.raises(TrainingError):
            set_trainable(ModelC(tiny_c_config, 0), "decoder.", False)


class TestEarlyStopping:
    def test_patience(self, tiny_l_config):
        model = ModelL(tiny_l_config, 0)
        stopper = EarlyStopping(patience=2)
        assert not stopper.update(1, 1.0, model)
        assert not stopper.update(2, 0.5, model)
        assert not stopper.update(3, 0.6, model)
        assert stopper.update(4, 0.5, model)
        assert (stopper.best_epoch, stopper.best_loss) == (2, 0.5)


class TestTrainConfig:
    def test_presets(self):
        assert (MODEL_L_TRAINING.learning_rate, MODEL_L_TRAINING.batch_size, MODEL_L_TRAINING.loss) == (1e-4, 1, "focal")
        assert MODEL_L_TRAINING.early_stopping
        assert (MODEL_C_PHASE1.learning_rate, MODEL_C_PHASE1.max_epochs, MODEL_C_PHASE1.early_stopping) == (1e-3, 25, False)
        assert MODEL_C_PHASE2.learning_rate == 1e-4

    @pytest.mark.parametrize(
        "change",
        [
            {"learning_rate": 0.0},
            {"batch_size": 0},
            {"max_epochs": 0},
            {"early_stop_patience": 0},
            {"loss": "hinge"},
            {"focal_gamma": -1.0},
            {"focal_alpha": (1.0, 0.0)},
        ],
    )
    def test_validate(self, change):
        with pytest.raises(ValueError):
            TrainConfig()._replace(**change).validate()

    def test_dict_round_trip(self):
        config = TrainConfig(focal_alpha=(0.5, 1.5), seed=9)
        assert TrainConfig.from_dict(config.to_dict()) == config


class TestTrainLog:
    def test_write_and_read(self, tmp_path):
        log = TrainLog()
        log.append(EpochRecord("frozen-backbone", 1, 1e-3, 1.5, 1.25, 0.4))
        log.append(EpochRecord("fine-tune", 1, 1e-4, 1.0, 0.75, 0.6))
        log.stop_reason = "max-epochs"
        path = log.write(tmp_path / "train.log.jsonl")
        assert len(path.read_text().splitlines()) == 3
        assert TrainLog.read(path) == log
        assert [e.epoch for e in log.phase("fine-tune")] == [1]


class TestTrainModelL:
    def test_early_stop_restores_best_epoch(self, dataset, tiny_l_config):
        train = dataset.segmentation_items("train")[:4]
        val = dataset.segmentation_items("val")
        model = ModelL(tiny_l_config, seed=0)
        snapshots = []

        def evaluate(m):
            snapshots.append(m.state())
            return float(len(snapshots)), 0.0

        config = TrainConfig(max_epochs=5, early_stop_patience=1, augment=False)
        model, log = train_model_l(model, train, val, config, evaluate=evaluate)
        assert len(log) == 2 and log.stop_reason == "early-stop"
        assert [e.val_loss for e in log.entries] == [1.0, 2.0]
        state = model.state()
        assert all(np.array_equal(state[k], snapshots[0][k]) for k in state)
        assert any(not np.array_equal(snapshots[1][k], snapshots[0][k]) for k in state)

    def test_log_records(self, dataset, tiny_l_config):
        train = dataset.segmentation_items("train")[:3]
        val = dataset.segmentation_items("val")[:2]
        _, log = train_model_l(ModelL(tiny_l_config, 0), train, val, QUICK._replace(max_epochs=2))
        assert [(e.phase, e.epoch) for e in log.entries] == [("localization", 1), ("localization", 2)]
        assert log.stop_reason == "max-epochs"
        assert all(np.isfinite(e.train_loss) and 0.0 <= e.val_metric <= 1.0 for e in log.entries)

    def test_deterministic(self, dataset, tiny_l_config):
        train = dataset.segmentation_items("train")[:3]
        val = dataset.segmentation_items("val")[:2]
        config = QUICK._replace(augment=True, seed=11)
        first, first_log = train_model_l(ModelL(tiny_l_config, 1), train, val, config)
        second, second_log = train_model_l(ModelL(tiny_l_config, 1), train, val, config)
        assert first_log == second_log
        assert all(np.array_equal(a, b) for a, b in zip(first.state().values(), second.state().values()))

    def test_empty_split(self, dataset, tiny_l_config):
        with pytest.raises(TrainingError):
            train_model_l(ModelL(tiny_l_config, 0), [], dataset.segmentation_items("val"), QUICK)

    @pytest.mark.slow
    def test_training_loss_falls(self, dataset, tiny_l_config):
        config = QUICK._replace(learning_rate=1e-3, max_epochs=6)
        _, log = train_model_l(
            ModelL(tiny_l_config, 0), dataset.segmentation_items("train"), dataset.segmentation_items("val"), config
        )
        assert len(log) == 6
        assert log.entries[-1].train_loss < log.entries[0].train_loss


class TestTrainModelC:
    def test_freeze_contract(self, dataset, tiny_c_config):
        model = ModelC(tiny_c_config, seed=0)
        initial = model.state()
        snapshots = []

        def evaluate(m):
            snapshots.append(m.state())
            return 1.0 / len(snapshots), 0.0

        phase1 = TrainConfig(learning_rate=1e-3, batch_size=4, max_epochs=2, early_stopping=False, loss="cross-entropy", augment=False)
        phase2 = phase1._replace(max_epochs=1)
        model, log = train_model_c(
            model, dataset.classification_items("train"), dataset.classification_items("val"), phase1, phase2, evaluate
        )
        backbone = [k for k in initial if k.startswith("backbone.")]
        head = [k for k in initial if k.startswith("head.")]
        for snapshot in snapshots[:2]:
            assert all(np.array_equal(snapshot[k], initial[k]) for k in backbone)
            assert any(not np.array_equal(snapshot[k], initial[k]) for k in head)
        final = model.state()
        assert any(not np.array_equal(final[k], initial[k]) for k in backbone)
        assert [e.phase for e in log.entries] == ["frozen-backbone", "frozen-backbone", "fine-tune"]
        assert not any(p.frozen for p in model.parameters())

    def test_default_evaluator_reports_accuracy(self, dataset, tiny_c_config):
        phase = TrainConfig(learning_rate=1e-3, max_epochs=1, early_stopping=False, augment=True)
        _, log = train_model_c(
            ModelC(tiny_c_config, 0), dataset.classification_items("train")[:3], dataset.classification_items("val"), phase, phase
        )
        assert len(log) == 2
        assert all(e.val_metric in (0.0, 1.0) for e in log.entries)

    def test_empty_split(self, dataset, tiny_c_config):
        with pytest.raises(TrainingError):
            train_model_c(ModelC(tiny_c_config, 0), dataset.classification_items("train"), [])

    @pytest.mark.slow
    def test_fine_tuning_continues_from_phase_one_loss(self, dataset, tiny_c_config):
        train = dataset.classification_items("train")
        phase1 = TrainConfig(learning_rate=1e-3, batch_size=4, max_epochs=5, early_stopping=False, loss="cross-entropy", augment=False)
        phase2 = phase1._replace(learning_rate=1e-4, max_epochs=1)
        # val_loss is measured on the training split itself
        _, log = train_model_c(
            ModelC(tiny_c_config, 0), train, train, phase1, phase2, classification_evaluator(train, 0.0, None)
        )
        phase1_end = log.phase("frozen-backbone")[-1].val_loss
        phase2_start = log.phase("fine-tune")[0].val_loss
        assert phase2_start <= phase1_end
