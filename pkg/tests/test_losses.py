import numpy as np
import pytest

from pucontrast import diagnostics
from pucontrast.data import ClassPrior
from pucontrast.losses import (
    DEGENERATE_LABELED_BATCH,
    EmbeddedBatch,
    info_nce,
    punce,
    punce_labeled,
    punce_pnu,
    punce_unlabeled,
    scl,
    scl_pu,
)

from oracles import (
    central_difference,
    grads_close,
    info_nce_ref,
    labeled_risk_ref,
    punce_pnu_ref,
    punce_ref,
    random_batch,
    random_unit_rows,
    scl_pu_ref,
    scl_ref,
    unlabeled_risk_ref,
)

AXIS_BATCH = dict(
    z=np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]]),
    pair_index=[1, 0, 3, 2],
    indicator=[1, 1, 0, 0],
)


def axis_batch(tau=1.0, labels=None):
    return EmbeddedBatch(
        AXIS_BATCH["z"].copy(), AXIS_BATCH["pair_index"], AXIS_BATCH["indicator"], labels, tau
    )


def make_pnu_labels(gen, indicator):
    labels = np.zeros(len(indicator), dtype=np.int64)
    src_signs = gen.choice([-1, 1], size=len(indicator) // 2)
    signs = np.repeat(src_signs, 2)
    labels[np.asarray(indicator) == 1] = signs[np.asarray(indicator) == 1]
    return labels


class TestWorkedExamples:
    """Expected values computed with the double-loop oracle and frozen."""

    def test_info_nce_identical_embeddings(self):
        z = np.tile([1.0, 0.0], (4, 1))
        for tau in (0.1, 0.5, 2.0):
            batch = EmbeddedBatch(z.copy(), [1, 0, 3, 2], [0, 0, 0, 0], None, tau)
            assert info_nce(batch).value == pytest.approx(np.log(3.0), abs=1e-12)

    def test_info_nce_single_pair_is_zero(self):
        z = random_unit_rows(np.random.default_rng(0), 2, 3)
        batch = EmbeddedBatch(z, [1, 0], [0, 0], None, 0.5)
        assert info_nce(batch).value == pytest.approx(0.0, abs=1e-12)

    def test_info_nce_axis_example(self):
        assert info_nce(axis_batch()).value == pytest.approx(0.5514447139320511, abs=1e-9)

    def test_labeled_risk_axis_example(self):
        assert punce_labeled(axis_batch()).value == pytest.approx(1.1028894278641022, abs=1e-9)

    def test_unlabeled_risk_axis_example(self):
        out = punce_unlabeled(axis_batch(), ClassPrior(0.5))
        assert out.value == pytest.approx(1.7695560945307687, abs=1e-9)

    def test_punce_axis_example(self):
        out = punce(axis_batch(), ClassPrior(0.5))
        assert out.value == pytest.approx(0.7181113805987177, abs=1e-9)

    def test_scl_identical_embeddings(self):
        b = 3
        z = np.tile([0.0, 1.0], (2 * b, 1))
        pair = np.arange(2 * b)
        pair[0::2] += 1
        pair[1::2] -= 1
        batch = EmbeddedBatch(z, pair, np.ones(2 * b, dtype=int), np.ones(2 * b, dtype=int), 0.7)
        assert scl(batch).value == pytest.approx(np.log(2 * b - 1), abs=1e-12)

    def test_scl_all_same_class_uses_every_other_view(self):
        gen = np.random.default_rng(1)
        z, pair, _ = random_batch(gen, 3, 4)
        labels = np.ones(6, dtype=np.int64)
        batch = EmbeddedBatch(z, pair, np.ones(6, dtype=int), labels, 0.5)
        assert scl(batch).value == pytest.approx(scl_ref(z, labels, 0.5), abs=1e-12)

    def test_scl_two_classes_orthogonal(self):
        z = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
        labels = np.array([1, 1, -1, -1])
        batch = EmbeddedBatch(z, [1, 0, 3, 2], [1, 1, 1, 1], labels, 1.0)
        assert scl(batch).value == pytest.approx(scl_ref(z, labels, 1.0), abs=1e-12)

    def test_labeled_risk_empty_set_is_zero(self):
        diagnostics.reset()
        batch = EmbeddedBatch(
            AXIS_BATCH["z"].copy(), AXIS_BATCH["pair_index"], [0, 0, 0, 0], None, 1.0
        )
        out = punce_labeled(batch)
        assert out.value == 0.0
        assert np.all(out.grad_z == 0.0)
        assert diagnostics.count(DEGENERATE_LABELED_BATCH) == 1

    def test_labeled_risk_singleton_flags_counter(self):
        diagnostics.reset()
        gen = np.random.default_rng(3)
        z, pair, _ = random_batch(gen, 2, 3)
        batch = EmbeddedBatch(z, pair, [1, 0, 0, 0], None, 0.5)
        # the lone labeled view cannot form a positive pair
        out = punce_labeled(batch)
        assert out.value == 0.0
        assert diagnostics.count(DEGENERATE_LABELED_BATCH) == 1


class TestOracleEquivalence:
    def test_all_losses_match_double_loop(self):
        gen = np.random.default_rng(2024)
        for _ in range(100):
            b = int(gen.integers(2, 5))
            k = int(gen.choice([2, 4, 8]))
            tau = float(gen.uniform(0.2, 2.0))
            pi = float(gen.uniform(0.0, 1.0))
            z, pair, s = random_batch(gen, b, k)
            batch = EmbeddedBatch(z, pair, s, None, tau)
            prior = ClassPrior(pi)

            assert info_nce(batch).value == pytest.approx(info_nce_ref(z, pair, tau), abs=1e-10)
            assert punce_labeled(batch).value == pytest.approx(labeled_risk_ref(z, s, tau), abs=1e-10)
            assert punce_unlabeled(batch, prior).value == pytest.approx(
                unlabeled_risk_ref(z, s, pair, tau, pi), abs=1e-10
            )
            assert punce(batch, prior).value == pytest.approx(
                punce_ref(z, s, pair, tau, pi), abs=1e-10
            )
            assert scl_pu(batch).value == pytest.approx(scl_pu_ref(z, s, pair, tau), abs=1e-10)

            labels = np.where(np.arange(2 * b) % 4 < 2, 1, -1)
            sup = EmbeddedBatch(z, pair, np.ones(2 * b, dtype=int), labels, tau)
            assert scl(sup).value == pytest.approx(scl_ref(z, labels, tau), abs=1e-10)

            pnu_labels = make_pnu_labels(gen, s)
            pnu = EmbeddedBatch(z, pair, s, pnu_labels, tau)
            assert punce_pnu(pnu, prior).value == pytest.approx(
                punce_pnu_ref(z, s, pnu_labels, pair, tau, pi), abs=1e-10
            )

    def test_pnu_six_view_example(self):
        gen = np.random.default_rng(77)
        z = random_unit_rows(gen, 6, 3)
        pair = np.array([1, 0, 3, 2, 5, 4])
        s = np.array([1, 1, 1, 1, 0, 0])
        labels = np.array([1, 1, -1, -1, 0, 0])
        batch = EmbeddedBatch(z, pair, s, labels, 0.5)
        out = punce_pnu(batch, ClassPrior(0.4))
        assert out.value == pytest.approx(punce_pnu_ref(z, s, labels, pair, 0.5, 0.4), abs=1e-12)


class TestReductionIdentities:
    def test_punce_reduces_to_scl_when_all_labeled(self):
        gen = np.random.default_rng(5)
        for _ in range(100):
            b = int(gen.integers(2, 5))
            k = int(gen.choice([2, 4, 8]))
            tau = float(gen.uniform(0.2, 2.0))
            z, pair, _ = random_batch(gen, b, k)
            ones = np.ones(2 * b, dtype=int)
            pu = EmbeddedBatch(z, pair, ones, None, tau)
            sup = EmbeddedBatch(z, pair, ones, ones, tau)
            assert abs(punce(pu, ClassPrior(0.3)).value - scl(sup).value) <= 1e-12

    def test_punce_reduces_to_infonce_when_none_labeled(self):
        gen = np.random.default_rng(6)
        for _ in range(100):
            b = int(gen.integers(2, 5))
            k = int(gen.choice([2, 4, 8]))
            tau = float(gen.uniform(0.2, 2.0))
            pi = float(gen.uniform(0.0, 1.0))
            z, pair, _ = random_batch(gen, b, k)
            zeros = np.zeros(2 * b, dtype=int)
            batch = EmbeddedBatch(z, pair, zeros, None, tau)
            assert abs(punce(batch, ClassPrior(pi)).value - info_nce(batch).value) <= 1e-12

    def test_scl_pu_equals_punce_at_zero_prior(self):
        gen = np.random.default_rng(7)
        for _ in range(100):
            b = int(gen.integers(2, 5))
            k = int(gen.choice([2, 4, 8]))
            tau = float(gen.uniform(0.2, 2.0))
            z, pair, s = random_batch(gen, b, k)
            batch = EmbeddedBatch(z, pair, s, None, tau)
            assert abs(scl_pu(batch).value - punce(batch, ClassPrior(0.0)).value) <= 1e-12

    def test_pnu_reduces_to_scl_and_infonce(self):
        gen = np.random.default_rng(8)
        for _ in range(50):
            b = int(gen.integers(2, 5))
            k = int(gen.choice([2, 4]))
            tau = float(gen.uniform(0.2, 2.0))
            pi = float(gen.uniform(0.0, 1.0))
            z, pair, _ = random_batch(gen, b, k)
            ones = np.ones(2 * b, dtype=int)
            labels = np.repeat(gen.choice([-1, 1], size=b), 2)
            if len(set(labels)) < 2 or np.sum(labels == 1) < 2 or np.sum(labels == -1) < 2:
                labels = np.where(np.arange(2 * b) % 4 < 2, 1, -1)
            sup = EmbeddedBatch(z, pair, ones, labels, tau)
            assert abs(punce_pnu(sup, ClassPrior(pi)).value - scl(sup).value) <= 1e-12
            zeros = np.zeros(2 * b, dtype=int)
            unsup = EmbeddedBatch(z, pair, zeros, np.zeros(2 * b, dtype=int), tau)
            plain = EmbeddedBatch(z, pair, zeros, None, tau)
            assert abs(punce_pnu(unsup, ClassPrior(pi)).value - info_nce(plain).value) <= 1e-12


class TestStructuralProperties:
    def test_unlabeled_risk_linear_in_prior(self):
        gen = np.random.default_rng(9)
        for _ in range(30):
            b = int(gen.integers(2, 5))
            z, pair, s = random_batch(gen, b, 4)
            batch = EmbeddedBatch(z, pair, s, None, 0.5)
            lo = punce_unlabeled(batch, ClassPrior(0.0))
            mid = punce_unlabeled(batch, ClassPrior(0.5))
            hi = punce_unlabeled(batch, ClassPrior(1.0))
            assert mid.value == pytest.approx(0.5 * (lo.value + hi.value), abs=1e-12)
            np.testing.assert_allclose(
                mid.per_anchor, 0.5 * (lo.per_anchor + hi.per_anchor), atol=1e-12
            )

    def test_rotation_invariance(self):
        gen = np.random.default_rng(10)
        for _ in range(20):
            b = int(gen.integers(2, 5))
            k = int(gen.choice([2, 4, 8]))
            z, pair, s = random_batch(gen, b, k)
            q, _ = np.linalg.qr(gen.normal(size=(k, k)))
            zr = z @ q
            zr = zr / np.sqrt(np.sum(zr * zr, axis=1, keepdims=True))
            a = punce(EmbeddedBatch(z, pair, s, None, 0.5), ClassPrior(0.4))
            bb = punce(EmbeddedBatch(zr, pair, s, None, 0.5), ClassPrior(0.4))
            assert abs(a.value - bb.value) <= 1e-10

    def test_permutation_equivariance(self):
        gen = np.random.default_rng(11)
        for _ in range(20):
            b = int(gen.integers(2, 5))
            z, pair, s = random_batch(gen, b, 4)
            perm = gen.permutation(2 * b)
            inv = np.empty_like(perm)
            inv[perm] = np.arange(2 * b)
            z2 = z[perm]
            pair2 = inv[pair[perm]]
            s2 = s[perm]
            a = punce(EmbeddedBatch(z, pair, s, None, 0.5), ClassPrior(0.4))
            bb = punce(EmbeddedBatch(z2, pair2, s2, None, 0.5), ClassPrior(0.4))
            assert abs(a.value - bb.value) <= 1e-12
            np.testing.assert_allclose(bb.per_anchor, a.per_anchor[perm], atol=1e-12)

    def test_labeled_views_pair_with_labeled_views_only(self):
        z = random_unit_rows(np.random.default_rng(12), 4, 3)
        batch = EmbeddedBatch(z, [1, 0, 3, 2], [1, 0, 0, 0], None, 0.5)
        with pytest.raises(ValueError, match="sibling"):
            punce_unlabeled(batch, ClassPrior(0.5))

    def test_unnormalized_rows_rejected(self):
        with pytest.raises(ValueError, match="unit"):
            EmbeddedBatch(np.ones((4, 2)), [1, 0, 3, 2], [0, 0, 0, 0], None, 0.5)

    def test_prior_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            punce(axis_batch(), ClassPrior(1.5))

    def test_scl_requires_labels(self):
        with pytest.raises(ValueError, match="label"):
            scl(axis_batch())


def _loss_value(fn, z, pair, s, labels, tau, prior):
    zn = z / np.sqrt(np.sum(z * z, axis=1, keepdims=True))
    batch = EmbeddedBatch(zn, pair, s, labels, tau)
    return fn(batch) if prior is None else fn(batch, prior)


class TestGradients:
    """Analytic grad_z vs central differences, on raw (pre-normalization)
    embeddings so the check stays inside the unit-norm contract."""

    @pytest.mark.parametrize(
        "name,needs_prior,needs_labels,all_labeled",
        [
            ("info_nce", False, False, False),
            ("scl", False, True, True),
            ("punce_labeled", False, False, False),
            ("punce_unlabeled", True, False, False),
            ("punce", True, False, False),
            ("scl_pu", False, False, False),
            ("punce_pnu", True, "pnu", False),
        ],
    )
    def test_grad_matches_central_differences(self, name, needs_prior, needs_labels, all_labeled):
        import pucontrast.losses as L

        fn = getattr(L, name)
        gen = np.random.default_rng(abs(hash(name)) % 2**31)
        for trial in range(4):
            b = int(gen.integers(2, 5))
            k = int(gen.choice([2, 4, 8]))
            tau = float(gen.uniform(0.3, 1.5))
            z, pair, s = random_batch(gen, b, k, n_labeled_sources=max(1, b // 2))
            if all_labeled:
                s = np.ones(2 * b, dtype=int)
            labels = None
            if needs_labels == "pnu":
                labels = make_pnu_labels(gen, s)
            elif needs_labels:
                labels = np.repeat(gen.choice([-1, 1], size=b), 2)
            prior = ClassPrior(float(gen.uniform(0.1, 0.9))) if needs_prior else None

            batch = EmbeddedBatch(z, pair, s, labels, tau)
            out = fn(batch) if prior is None else fn(batch, prior)

            fd = central_difference(lambda zz: _loss_value(fn, zz, pair, s, labels, tau, prior), z)
            # chain through the normalization used inside _loss_value
            norms = np.sqrt(np.sum(z * z, axis=1, keepdims=True))
            zn = z / norms
            g = out.grad_z
            g_pre = (g - zn * np.sum(g * zn, axis=1, keepdims=True)) / norms
            assert grads_close(g_pre, fd, rtol=1e-4, atol=1e-8), f"{name} trial {trial}"
