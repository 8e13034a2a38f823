# tests/test_adversarial.py
import numpy as np
import pytest

from models.cloud import Proposal
from models.errors import ConfigError, InputError
from models.part import PartClass, symmetry_group
from utils.adversarial import (EmptyQueryWarning, FeatureMap, FocalConfig, GradientReversal,
                               LayerQuery, TinyClassifier, adv_demo_train, focal_weight,
                               grl_backward, loss_q_adv, loss_qb_adv, loss_qr_adv, loss_qrb_adv,
                               make_demo_dataset, npcs_loss, offset_loss, qb_adv_gradients,
                               query_proposal_features, score_loss, semantic_loss,
                               softmax_cross_entropy, total_segmentation_loss)
from utils.geometry import apply_rotation
from utils.posefit import symmetry_aware_npcs_loss

EPS = 1e-6


def relative_error(analytic, numeric):
    analytic, numeric = np.ravel(analytic), np.ravel(numeric)
    scale = max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-12)
    return np.linalg.norm(analytic - numeric) / scale


def numeric_gradient(f, x):
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        step = np.zeros_like(x)
        step[i] = EPS
        grad[i] = (f(x + step) - f(x - step)) / (2 * EPS)
    return grad


@pytest.fixture
def problem(rng):
    """Six pooled proposals over three domains and two part classes"""
    pooled = rng.normal(size=(6, 5))
    domains = np.array([0, 1, 2, 0, 1, 2])
    classes = np.array([1, 1, 1, 2, 2, 2])
    cfg = FocalConfig({(d, c): rng.uniform(0.5, 2.0) for d in range(3) for c in (1, 2)},
                      gamma=2.0, acc={(d, c): rng.uniform(0.0, 0.9) for d in range(3)
                                      for c in (1, 2)})
    classifier = TinyClassifier.create(5, 3, hidden=4, rng=rng)
    return pooled, domains, classes, cfg, classifier


class TestGradientReversal:
    def test_forward_is_identity(self, rng):
        x = rng.normal(size=(3, 4))
        assert GradientReversal(0.3).forward(x) is x

    def test_backward_scales_by_minus_lambda(self):
        np.testing.assert_array_equal(grl_backward([1.0, -2.0], 0.3), [-0.3, 0.6])
        np.testing.assert_array_equal(grl_backward([1.0, -2.0], 0.0), [0.0, 0.0])

    def test_rejects_non_finite_gradients(self):
        with pytest.raises(InputError):
            grl_backward([np.nan], 0.3)


class TestFeatureQuery:
    def test_mean_pools_proposals_above_threshold(self):
        values = np.arange(12, dtype=float).reshape(6, 2)
        proposals = [Proposal([0, 1], 3, 0.5, 1), Proposal([2, 3, 4], 4, 0.09, 0),
                     Proposal([4, 5], 5, 0.1, 0)]
        query = query_proposal_features(FeatureMap(values), proposals, s_thre=0.09)
        assert len(query) == 2
        np.testing.assert_allclose(query.pooled, [[1.0, 2.0], [9.0, 10.0]])
        assert query.domains.tolist() == [1, 0]
        assert query.part_classes.tolist() == [3, 5]

    def test_pooling_examples(self):
        values = np.array([[0.0, 0.0], [2.0, 4.0], [3.0, 1.0], [3.0, 1.0]])
        query = query_proposal_features(FeatureMap(values), [Proposal([0, 1], 2, 0.8, 0),
                                                             Proposal([2, 3], 3, 0.6, 1)])
        np.testing.assert_array_equal(query.pooled, [[1.0, 2.0], [3.0, 1.0]])
        low = [Proposal([0, 1], 2, 0.09, 0), Proposal([2, 3], 3, 0.05, 1)]
        assert len(query_proposal_features(FeatureMap(values), low)) == 0

    def test_out_of_range_proposal(self):
        with pytest.raises(InputError):
            query_proposal_features(FeatureMap(np.zeros((3, 2))), [Proposal([0, 5], 1, 0.5)])

    def test_empty_query_warns_and_costs_nothing(self, problem):
        _, _, _, cfg, classifier = problem
        query = query_proposal_features(FeatureMap(np.zeros((4, 5))), [Proposal([0, 1], 1, 0.01)])
        with pytest.warns(EmptyQueryWarning):
            assert loss_q_adv(query.pooled, query.domains, classifier) == 0.0
        with pytest.warns(EmptyQueryWarning):
            loss, grads, dpooled = qb_adv_gradients(query.pooled, query.domains,
                                                    query.part_classes, cfg, classifier)
        assert loss == 0.0
        assert all(not g.any() for g in grads.values())
        assert dpooled.shape == (0, 5)


class TestFocalConfig:
    def test_weight_is_alpha_times_miss_rate_power(self):
        cfg = FocalConfig({(0, 1): 2.0}, gamma=2.0, acc={(0, 1): 0.75})
        assert focal_weight(cfg, 0, 1) == pytest.approx(2.0 * 0.25 ** 2)
        assert cfg.weight(0, 1) == focal_weight(cfg, 0, 1)

    def test_missing_pair_is_a_config_error(self):
        with pytest.raises(ConfigError):
            focal_weight(FocalConfig.uniform([0], [1]), 1, 1)

    def test_validation(self):
        with pytest.raises(ConfigError):
            FocalConfig({(0, 1): 0.0})
        with pytest.raises(ConfigError):
            FocalConfig({(0, 1): 1.0}, acc={(0, 1): 1.5})
        with pytest.raises(ConfigError):
            FocalConfig({(0, 1): 1.0}, gamma=-1.0)

    def test_update_is_an_exponential_moving_average(self):
        cfg = FocalConfig.uniform([0], [1, 2])
        updated = cfg.update(0, 1, 1.0).update(0, 1, 1.0)
        assert updated.acc[(0, 1)] == pytest.approx(0.19)
        assert updated.acc[(0, 2)] == 0.0
        assert cfg.acc[(0, 1)] == 0.0

    def test_update_from_batch_groups_pairs(self):
        cfg = FocalConfig.uniform([0, 1], [1]).update_from_batch([0, 0, 1], [1, 1, 1],
                                                                [True, False, True])
        assert cfg.acc[(0, 1)] == pytest.approx(0.05)
        assert cfg.acc[(1, 1)] == pytest.approx(0.1)

    def test_alpha_from_counts_favours_rare_pairs(self):
        cfg = FocalConfig.alpha_from_counts({(0, 1): 30, (0, 2): 10, (1, 1): 0})
        assert cfg.alpha[(0, 2)] == pytest.approx(3 * cfg.alpha[(0, 1)])
        assert 30 * cfg.alpha[(0, 1)] + 10 * cfg.alpha[(0, 2)] == pytest.approx(40.0)
        assert (1, 1) not in cfg.alpha
        with pytest.raises(ConfigError):
            FocalConfig.alpha_from_counts({(0, 1): 0})


class TestLosses:
    def test_uniform_logits_cost_log_of_domain_count(self, rng):
        classifier = TinyClassifier({'w1': rng.normal(size=(5, 4)), 'b1': np.zeros(4),
                                     'w2': np.zeros((4, 4)), 'b2': np.zeros(4)})
        pooled = rng.normal(size=(3, 5))
        assert loss_q_adv(pooled, [0, 3, 1], classifier) == pytest.approx(np.log(4))

    def test_query_loss_of_hand_set_logits(self):
        classifier = TinyClassifier({'w1': np.eye(2), 'b1': np.zeros(2),
                                     'w2': np.array([[2.0, 0.0, 0.0], [0.0, 1.0, 0.0]]),
                                     'b2': np.zeros(3)})
        t = np.tanh(1.0)
        first = -np.log(np.exp(2 * t) / (np.exp(2 * t) + 2.0))
        second = np.log(2.0 + np.exp(-t))
        loss = loss_q_adv([[1.0, 0.0], [0.0, -1.0]], [0, 2], classifier)
        assert loss == pytest.approx((first + second) / 2, abs=1e-12)

    def test_zero_gamma_unit_alpha_reduces_to_query_loss(self, problem):
        pooled, domains, classes, _, classifier = problem
        cfg = FocalConfig.uniform(range(3), (1, 2), alpha=1.0, gamma=0.0)
        assert loss_qb_adv(pooled, domains, classes, cfg, classifier) == \
            loss_q_adv(pooled, domains, classifier)

    def test_perfect_accuracy_removes_the_term(self, problem):
        pooled, domains, classes, cfg, classifier = problem
        solved = FocalConfig(cfg.alpha, gamma=2.0, acc={key: 1.0 for key in cfg.alpha})
        assert loss_qb_adv(pooled, domains, classes, solved, classifier) == 0.0

    def test_multi_resolution_sums(self, problem, rng):
        pooled, domains, classes, cfg, classifier = problem
        other = TinyClassifier.create(5, 3, hidden=4, rng=rng)
        layers = [LayerQuery(pooled, domains, classes, classifier),
                  LayerQuery(pooled * 2.0, domains, classes, other)]
        expected = 0.25 * loss_q_adv(pooled, domains, classifier) + \
            0.75 * loss_q_adv(pooled * 2.0, domains, other)
        assert loss_qr_adv(layers, (0.25, 0.75)) == pytest.approx(expected)
        expected_b = 0.25 * loss_qb_adv(pooled, domains, classes, cfg, classifier) + \
            0.75 * loss_qb_adv(pooled * 2.0, domains, classes, cfg, other)
        assert loss_qrb_adv(layers, (0.25, 0.75), cfg) == pytest.approx(expected_b)
        assert loss_qrb_adv(layers, (0.25, 0.75), [cfg, cfg]) == pytest.approx(expected_b)
        with pytest.raises(InputError):
            loss_qr_adv(layers, (1.0,))

    def test_cross_entropy_rejects_bad_labels(self):
        with pytest.raises(InputError):
            softmax_cross_entropy(np.zeros((2, 3)), [0, 3])


class TestGradients:
    @pytest.mark.parametrize('seed', range(10))
    def test_parameter_gradients_match_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        pooled = rng.normal(size=(6, 5))
        domains = rng.integers(0, 3, size=6)
        classes = rng.integers(1, 3, size=6)
        cfg = FocalConfig({(d, c): rng.uniform(0.5, 2.0) for d in range(3) for c in (1, 2)},
                          gamma=float(rng.uniform(0.0, 3.0)),
                          acc={(d, c): rng.uniform(0.0, 0.9) for d in range(3) for c in (1, 2)})
        classifier = TinyClassifier.create(5, 3, hidden=4, rng=rng)

        _, grads, dpooled = qb_adv_gradients(pooled, domains, classes, cfg, classifier)
        numeric = numeric_gradient(
            lambda flat: loss_qb_adv(pooled, domains, classes, cfg,
                                     classifier.with_flat_params(flat)),
            classifier.flat_params())
        assert relative_error(TinyClassifier.flatten_grads(grads), numeric) < 1e-4

        numeric_x = numeric_gradient(
            lambda x: loss_qb_adv(x, domains, classes, cfg, classifier), pooled)
        assert relative_error(dpooled, numeric_x) < 1e-4

    def test_reversed_gradient_reaches_point_features(self, problem, rng):
        _, _, _, cfg, classifier = problem
        values = rng.normal(size=(10, 5))
        proposals = [Proposal([0, 1, 2], 1, 0.5, 0), Proposal([3, 4], 2, 0.8, 1),
                     Proposal([5, 6, 7, 8, 9], 1, 0.3, 2)]

        def loss(v):
            query = query_proposal_features(FeatureMap(v), proposals)
            return loss_qb_adv(query.pooled, query.domains, query.part_classes, cfg, classifier)

        query = query_proposal_features(FeatureMap(values), proposals)
        _, _, dpooled = qb_adv_gradients(query.pooled, query.domains, query.part_classes, cfg,
                                         classifier)
        dfeatures = query.pooling.T @ dpooled
        assert relative_error(dfeatures, numeric_gradient(loss, values)) < 1e-4
        np.testing.assert_allclose(grl_backward(dfeatures, 0.3), -0.3 * dfeatures)

    def test_plain_query_gradients_without_config(self, problem):
        pooled, domains, classes, _, classifier = problem
        loss, grads, _ = qb_adv_gradients(pooled, domains, classes, None, classifier)
        assert loss == pytest.approx(loss_q_adv(pooled, domains, classifier))
        numeric = numeric_gradient(
            lambda flat: loss_q_adv(pooled, domains, classifier.with_flat_params(flat)),
            classifier.flat_params())
        assert relative_error(TinyClassifier.flatten_grads(grads), numeric) < 1e-4


class TestReferenceLosses:
    def test_semantic_loss_of_uniform_logits(self):
        assert semantic_loss(np.zeros((4, 10)), [0, 3, 9, 2]) == pytest.approx(np.log(10))

    def test_offset_loss_vanishes_for_exact_offsets(self, rng):
        positions = rng.normal(size=(8, 3))
        labels = np.array([0, 0, 0, 1, 1, 1, -1, -1])
        centroids = np.vstack([np.repeat(positions[:3].mean(axis=0)[None], 3, axis=0),
                               np.repeat(positions[3:6].mean(axis=0)[None], 3, axis=0),
                               positions[6:]])
        assert offset_loss(positions, centroids - positions, labels) == pytest.approx(0.0,
                                                                                    abs=1e-12)
        assert offset_loss(positions, np.zeros((8, 3)), -np.ones(8)) == 0.0

    def test_score_loss_targets(self):
        # IoU 0.5 maps to a soft target of 0.5
        assert score_loss([0.5], [0.5]) == pytest.approx(np.log(2))
        assert score_loss([0.9], [0.8]) == pytest.approx(-np.log(0.9))
        assert score_loss([], []) == 0.0

    def test_npcs_loss_averages_parts(self, rng):
        gt = rng.uniform(-0.5, 0.5, size=(20, 3))
        knob_copy = apply_rotation(gt, list(symmetry_group(PartClass.HINGE_KNOB))[-1])
        shifted = gt + 0.05
        drawer_term = symmetry_aware_npcs_loss(shifted, gt, PartClass.SLIDER_DRAWER)
        assert drawer_term > 0.0
        loss = npcs_loss([knob_copy, shifted], [gt, gt], [PartClass.HINGE_KNOB, 'SliderDrawer'])
        assert loss == pytest.approx(drawer_term / 2)
        assert npcs_loss([], [], []) == 0.0

    def test_total_loss_weights_the_adversarial_term(self):
        assert total_segmentation_loss(1.0, 2.0, 3.0, 4.0, 20.0) == pytest.approx(11.0)
        assert total_segmentation_loss(1.0, 0.0, 0.0, 0.0, 2.0, classification_weight=0.5) == 2.0


class TestDemo:
    def test_dataset_validation(self):
        with pytest.raises(InputError):
            make_demo_dataset(1, 4)
        with pytest.raises(InputError):
            make_demo_dataset(3, 10)

    def test_dataset_layout(self):
        data = make_demo_dataset(3, 4)
        assert len(data.proposals) == 3 * 4 * 8
        assert len(data.train) + len(data.test) == len(data.proposals)
        assert set(data.domains.tolist()) == {0, 1, 2}
        assert {p.semantic_label for p in data.proposals} == {1, 2, 3, 4}

    def test_report_layout_and_determinism(self):
        report = adv_demo_train(epochs=3, seed=4)
        assert [e['epoch'] for e in report['epochs']] == [1, 2, 3]
        assert set(report['epochs'][0]) == {'epoch', 'loss_qrb_adv', 'task_loss',
                                            'domain_accuracy', 'task_accuracy'}
        assert {'probe_domain_accuracy', 'task_accuracy'} <= set(report['final'])
        assert adv_demo_train(epochs=3, seed=4) == report

    def test_negative_epochs(self):
        with pytest.raises(ConfigError):
            adv_demo_train(epochs=-1)

    def test_zero_epochs_echo_the_initial_snapshot(self):
        report = adv_demo_train(epochs=0, seed=2)
        assert report['epochs'] == []
        assert report['final'] == report['initial']

    def test_reversal_removes_domain_information(self):
        domain_drops, task_drops, plain_domain = [], [], []
        for seed in range(10):
            plain = adv_demo_train(grl_lambda=0.0, seed=seed)['final']
            adversarial = adv_demo_train(grl_lambda=0.3, seed=seed)['final']
            plain_domain.append(plain['probe_domain_accuracy'])
            domain_drops.append(plain['probe_domain_accuracy'] -
                                adversarial['probe_domain_accuracy'])
            task_drops.append(plain['task_accuracy'] - adversarial['task_accuracy'])

        assert np.median(plain_domain) > 0.9
        assert np.median(domain_drops) >= 0.15
        assert np.median(task_drops) < 0.10
