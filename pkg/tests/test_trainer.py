"""Trainer tests: Adam mechanics, safety invariants, determinism, evaluation."""

import numpy as np
import pytest

from koopstab.data import synth_stable_spiral
from koopstab.errors import ContractError, DataError, NumericError
from koopstab.model import KoopmanModel, LossWeights, MlpParams, load_checkpoint
from koopstab.stability import barrier_values, certify_stable
from koopstab.trainer import (
    AdamState,
    IterationRecord,
    TrainConfig,
    TrainHistory,
    adam_step,
    evaluate,
    train,
)


def small_config(**over):
    base = dict(lr=1e-2, epochs=30, weights=LossWeights(horizon=3), seed=1)
    base.update(over)
    return TrainConfig(**base)


def small_dataset(seed=20, n_traj=3, length=20):
    return synth_stable_spiral(n_traj=n_traj, length=length, dt=0.1, decay=0.95,
                               angular_rate=1.2, noise=0.005, seed=seed, n_val=1)


def small_model(seed=21, **over):
    kwargs = dict(n=2, d=3, hidden=(8,), seed=seed)
    kwargs.update(over)
    return KoopmanModel.init(**kwargs)


class TestTrainConfig:
    def test_reference_defaults(self):
        c = TrainConfig()
        assert c.lr == 1e-3 and c.alpha == 1.0 and c.epochs == 3000
        assert c.weights == LossWeights(1.0, 0.1, 1.0, horizon=10)

    @pytest.mark.parametrize("bad", [
        dict(lr=0.0), dict(beta1=1.0), dict(beta2=0.0), dict(eps=0.0),
        dict(epochs=0), dict(batch_size=-1), dict(alpha=0.0), dict(alpha=1.5),
        dict(mode="spectral"), dict(margin=-0.1), dict(patience=0)])
    def test_invalid_fields_rejected(self, bad):
        with pytest.raises(ContractError):
            TrainConfig(**bad)

    def test_as_dict_is_stringly_typed(self):
        d = TrainConfig().as_dict()
        assert d["lr"] == "0.001" and d["mode"] == "symmetric"
        assert all(isinstance(v, str) for v in d.values())


class TestAdamStep:
    def test_zero_gradient_is_exact_noop(self):
        params = {"w": np.array([[1.0, -2.0]])}
        grads = {"w": np.zeros((1, 2))}
        state = AdamState.init(params)
        out = adam_step(params, grads, state, TrainConfig())
        np.testing.assert_array_equal(out["w"], params["w"])

    def test_first_step_magnitude_is_learning_rate(self):
        config = TrainConfig(lr=1e-3)
        params = {"w": np.array([[0.5]])}
        grads = {"w": np.array([[7.0]])}
        out = adam_step(params, grads, AdamState.init(params), config)
        step = float((params["w"] - out["w"])[0, 0])
        assert step == pytest.approx(1e-3, rel=1e-6)
        assert np.sign(step) == np.sign(7.0)

    def test_quadratic_bowl_converges(self):
        target = np.array([[0.3, -1.2], [2.0, 0.1]])
        params = {"w": np.zeros((2, 2))}
        state = AdamState.init(params)
        config = TrainConfig(lr=1e-2)
        for _ in range(5000):
            grads = {"w": 2.0 * (params["w"] - target)}
            params = adam_step(params, grads, state, config)
            if np.abs(params["w"] - target).max() <= 1e-6:
                break
        assert np.abs(params["w"] - target).max() <= 1e-6

    def test_nan_gradient_rejected(self):
        params = {"w": np.zeros((2, 2))}
        grads = {"w": np.full((2, 2), np.nan)}
        with pytest.raises(NumericError):
            adam_step(params, grads, AdamState.init(params), TrainConfig())

    def test_name_mismatch_rejected(self):
        params = {"w": np.zeros(2)}
        with pytest.raises(ContractError):
            adam_step(params, {"q": np.zeros(2)}, AdamState.init(params),
                      TrainConfig())


class TestTrainHistory:
    def _record(self, h_pre, h_post, it=0):
        return IterationRecord(
            iteration=it, epoch=0, total=1.0, pred=1.0, lin=0.0, rec=0.0,
            h_pre=np.asarray(h_pre, dtype=float),
            h_unprojected=np.asarray(h_pre, dtype=float),
            h_post=np.asarray(h_post, dtype=float),
            displacement=0.0, val_nmse=float("nan"), wall_time=0.0)

    def test_contract_violation_rejected(self):
        history = TrainHistory(alpha=0.5, mode="symmetric")
        with pytest.raises(ContractError):
            history.append(self._record(h_pre=[-0.4], h_post=[-0.3]))

    def test_contract_satisfied_accepted(self):
        history = TrainHistory(alpha=0.5, mode="symmetric")
        history.append(self._record(h_pre=[-0.4], h_post=[-0.2]))
        history.append(self._record(h_pre=[0.3], h_post=[0.0], it=1))
        assert len(history) == 2

    def test_csv_has_stable_header_and_no_wall_clock(self):
        history = TrainHistory(alpha=1.0, mode="symmetric")
        history.append(self._record(h_pre=[0.1], h_post=[0.1]))
        lines = history.to_csv().splitlines()
        assert lines[0] == ("iteration,epoch,total,pred,lin,rec,margin_pre,"
                            "margin_unprojected,margin_post,displacement,val_nmse")
        assert "wall" not in lines[0]
        assert len(lines) == 2


class TestTrainLoop:
    def test_loss_decreases_and_stays_certified(self):
        model = small_model()
        dataset = small_dataset()
        history = train(model, dataset, small_config())
        assert len(history) == 30
        totals = [r.total for r in history.records]
        assert totals[-1] < totals[0]
        # certified from step zero means certified at tolerance 0 throughout
        assert np.all(history.min_margins() >= 0.0)
        assert certify_stable(model.K, margin_tol=0.0).certified

    def test_bitwise_deterministic_under_seed(self):
        a_model, b_model = small_model(), small_model()
        dataset = small_dataset()
        a_hist = train(a_model, dataset, small_config())
        b_hist = train(b_model, dataset, small_config())
        assert a_hist.to_csv() == b_hist.to_csv()
        for name, arr in a_model.get_params().items():
            np.testing.assert_array_equal(b_model.get_params()[name], arr)

    def test_seed_changes_the_run(self):
        dataset = small_dataset()
        a, b = small_model(), small_model()
        train(a, dataset, small_config(batch_size=1, seed=1, epochs=5))
        train(b, dataset, small_config(batch_size=1, seed=2, epochs=5))
        assert np.any(a.K != b.K)

    def test_infeasible_start_recovers_geometrically(self):
        model = small_model(k_init="infeasible")
        dataset = small_dataset()
        config = small_config(alpha=0.5, epochs=40)
        h0 = barrier_values(model.K).margin
        assert h0 < 0.0
        history = train(model, dataset, config)
        margins = history.min_margins()
        for prev, cur in zip(margins[:-1], margins[1:]):
            if prev < 0.0:
                assert cur >= prev - 1e-12  # never regresses while infeasible
            else:
                assert cur >= -1e-15  # never falls back out of the set
        # alpha^t h0 is the guaranteed approach rate
        assert margins[-1] >= 0.5 ** len(margins) * h0 - 1e-12
        assert margins[-1] >= -1e-9

    def test_mini_batching_runs_every_trajectory(self):
        model = small_model()
        dataset = small_dataset(n_traj=4)
        history = train(model, dataset, small_config(batch_size=1, epochs=3))
        # 3 train trajectories (one is validation), one iteration each
        assert len(history) == 9
        assert [r.epoch for r in history.records] == [0, 0, 0, 1, 1, 1, 2, 2, 2]

    def test_displacement_zero_when_update_feasible(self):
        model = small_model()
        dataset = small_dataset()
        # tiny learning rate keeps K deep inside the feasible set
        history = train(model, dataset, small_config(lr=1e-6, epochs=3))
        assert all(r.displacement == 0.0 for r in history.records)

    def test_early_stopping_halts_before_budget(self):
        model = small_model()
        dataset = small_dataset()
        # a learning rate below float resolution pins every parameter, so
        # validation NMSE is exactly constant and the plateau must trigger
        config = small_config(epochs=300, early_stop=True, patience=3, lr=1e-300)
        history = train(model, dataset, config)
        assert len(history) < 300
        assert np.isfinite(history.records[-1].val_nmse)

    def test_checkpointing_preserves_latest_state(self, tmp_path):
        model = small_model()
        dataset = small_dataset()
        path = tmp_path / "run.ckpt"
        train(model, dataset, small_config(epochs=4), checkpoint_path=path,
              checkpoint_every=2)
        loaded, pre, config = load_checkpoint(path)
        np.testing.assert_array_equal(loaded.K, model.K)
        assert pre.dt == dataset.preprocessing.dt
        assert config["epochs"] == "4"

    def test_divergent_forward_raises_numeric_error(self):
        # identity activations let a huge weight overflow the loss to inf
        model = KoopmanModel.init(n=2, d=3, hidden=(4,), seed=3,
                                  activation="identity")
        model.encoder.weights[0][:] = 1e200
        dataset = small_dataset()
        with np.errstate(over="ignore"), pytest.raises(NumericError):
            train(model, dataset, small_config(epochs=2))

    def test_empty_train_split_rejected(self):
        dataset = small_dataset()
        empty = type(dataset)(trajectories=dataset.trajectories,
                              split=("val",) * len(dataset.trajectories),
                              preprocessing=dataset.preprocessing)
        with pytest.raises(DataError):
            train(small_model(), empty, small_config())

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ContractError):
            train(KoopmanModel.init(n=3, d=4, hidden=(4,)), small_dataset(),
                  small_config())


class TestEvaluate:
    def test_perfect_linear_model_scores_zero(self):
        theta = 1.2 * 0.1
        A = 0.95 * np.array([[np.cos(theta), -np.sin(theta)],
                             [np.sin(theta), np.cos(theta)]])
        def eye():
            return MlpParams(weights=[np.eye(2)], biases=[np.zeros((2, 1))],
                             activation="identity")
        model = KoopmanModel(encoder=eye(), decoder=eye(), K=A, S=np.eye(2))
        clean = synth_stable_spiral(n_traj=3, length=20, dt=0.1, decay=0.95,
                                    angular_rate=1.2, noise=0.0, seed=22, n_val=1)
        report = evaluate(model, clean, split="val")
        assert report.nmse <= 1e-16
        assert report.norm_std <= 1e-8
        assert report.spectral_radius == pytest.approx(0.95, abs=1e-10)

    def test_report_covers_each_validation_trajectory(self):
        model = small_model(seed=23)
        dataset = small_dataset(n_traj=5)
        report = evaluate(model, dataset, split="val")
        assert len(report.per_trajectory) == 1
        report_train = evaluate(model, dataset, split="train")
        assert len(report_train.per_trajectory) == 4

    def test_empty_split_rejected(self):
        model = small_model(seed=24)
        dataset = synth_stable_spiral(n_traj=2, length=10, n_val=0, seed=25)
        with pytest.raises(DataError):
            evaluate(model, dataset, split="val")

    def test_barrier_margin_matches_certificate(self):
        model = small_model(seed=26)
        dataset = small_dataset()
        report = evaluate(model, dataset, split="train")
        assert report.barrier_margin == pytest.approx(
            certify_stable(model.K).report.margin)
