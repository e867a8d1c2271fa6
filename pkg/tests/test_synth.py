"""Synthetic data generator: determinism, structure, statistics."""

import math

import numpy as np
import pytest

from consattn.config import ConfigError
from consattn.synth import (
    DAMAGE_CHANNELS,
    DAMAGE_MARKER,
    SynthConfig,
    build_inventory,
    gen_synthetic,
)


def small_cfg(**kw):
    base = dict(n_examples=60, vocab=20, n_words=12, d_fr=8, n_objects=2, seed=3)
    base.update(kw)
    return SynthConfig(**base)


def dataset_fingerprint(ds):
    parts = []
    for ex in ds.examples:
        parts.append(ex.ocr_appearance.tobytes())
        parts.append(ex.ocr_boxes.tobytes())
        parts.append(ex.ocr_tokens.tobytes())
        parts.append(ex.obj_appearance.tobytes())
        parts.append(ex.question_tokens.tobytes())
        parts.append(ex.boundaries.tobytes())
        parts.append(bytes([ex.answer % 256]))
    return b"".join(parts)


class TestConfigValidation:
    def test_probs_must_sum_to_one(self):
        with pytest.raises(ConfigError):
            small_cfg(word_len_probs=(0.5, 0.5, 0.5))

    def test_rho_range(self):
        with pytest.raises(ConfigError):
            small_cfg(rho=1.5)

    def test_unknown_answer_scheme(self):
        with pytest.raises(ConfigError):
            small_cfg(answer_scheme="free-form")

    def test_infeasible_inventory(self):
        # 1-syllable words only: at most `vocab` distinct words exist
        with pytest.raises(ConfigError, match="cannot draw"):
            build_inventory(small_cfg(vocab=4, n_words=10,
                                      word_len_probs=(1.0, 0.0, 0.0), sibling_frac=0.0))

    def test_roundtrip_dict(self):
        cfg = small_cfg(rho=0.35)
        assert SynthConfig.from_dict(cfg.to_dict()) == cfg


class TestDeterminism:
    def test_same_seed_bit_identical(self):
        assert dataset_fingerprint(gen_synthetic(small_cfg())) == \
            dataset_fingerprint(gen_synthetic(small_cfg()))

    def test_different_seed_differs(self):
        assert dataset_fingerprint(gen_synthetic(small_cfg(seed=3))) != \
            dataset_fingerprint(gen_synthetic(small_cfg(seed=4)))

    def test_inventory_shared_across_example_seeds(self):
        a = gen_synthetic(small_cfg(seed=3))
        b = gen_synthetic(small_cfg(seed=9))
        assert a.inventory == b.inventory


class TestLineStructure:
    def test_boundaries_match_word_runs(self):
        ds = gen_synthetic(small_cfg())
        for ex in ds.examples:
            lengths = [len(ds.inventory[w]) for w in ex.word_ids]
            expected = []
            for L in lengths:
                expected.extend([True] * (L - 1))
                expected.append(False)
            expected = expected[:-1]
            np.testing.assert_array_equal(ex.boundaries, np.array(expected, dtype=bool))

    def test_boxes_share_line_and_advance(self):
        ds = gen_synthetic(small_cfg())
        for ex in ds.examples:
            boxes = ex.ocr_boxes
            assert np.allclose(boxes[:, 1], boxes[0, 1])
            assert np.allclose(boxes[:, 3], boxes[0, 3])
            assert (boxes[1:, 0] >= boxes[:-1, 2] - 1e-12).all()
            assert boxes.min() >= 0.0 and boxes.max() <= 1.0

    def test_word_gaps_exceed_syllable_gaps(self):
        ds = gen_synthetic(small_cfg(n_examples=200))
        checked = False
        for ex in ds.examples:
            gaps = ex.ocr_boxes[1:, 0] - ex.ocr_boxes[:-1, 2]
            for gap, same_word in zip(gaps, ex.boundaries):
                if same_word:
                    other = gaps[~ex.boundaries]
                    if other.size:
                        assert gap < other.min()
                        checked = True
        assert checked

    def test_probe_unique_and_in_target(self):
        ds = gen_synthetic(small_cfg(n_examples=200, damage_prob=0.3))
        for ex in ds.examples:
            probe = ex.question_tokens[1] - 1
            assert int((ex.ocr_tokens == probe).sum()) == 1
            assert probe in ds.inventory[ex.answer]
            assert ex.answer in ex.word_ids

    def test_single_token_words_only_all_boundaries_false(self):
        ds = gen_synthetic(small_cfg(word_len_probs=(1.0, 0.0, 0.0), sibling_frac=0.0))
        for ex in ds.examples:
            assert not ex.boundaries.any()

    def test_damaged_tokens_marked(self):
        cfg = small_cfg(n_examples=300, damage_prob=0.4)
        ds = gen_synthetic(cfg)
        marked = 0
        for ex in ds.examples:
            flags = ex.ocr_appearance[:, 0] > DAMAGE_MARKER / 2
            marked += int(flags.sum())
            rows = np.flatnonzero(flags)
            for r in rows:
                cols = ex.ocr_appearance[r, :min(DAMAGE_CHANNELS, cfg.d_fr)]
                assert (cols > DAMAGE_MARKER / 2).any()
        total = sum(len(ex.ocr_tokens) for ex in ds.examples)
        assert 0.25 < marked / total < 0.55

    def test_no_damage_when_prob_zero(self):
        ds = gen_synthetic(small_cfg(damage_prob=0.0))
        for ex in ds.examples:
            lengths = [len(ds.inventory[w]) for w in ex.word_ids]
            expected = np.array([t for w in ex.word_ids for t in ds.inventory[w]])
            np.testing.assert_array_equal(ex.ocr_tokens, expected)

    def test_object_labels_only_when_configured(self):
        assert gen_synthetic(small_cfg()).examples[0].obj_labels is None
        ds = gen_synthetic(small_cfg(obj_label_vocab=5))
        assert ds.examples[0].obj_labels is not None
        assert (ds.examples[0].obj_labels < 5).all()


class TestFeatureCorrelation:
    @staticmethod
    def adjacent_dots(ds, limit=None):
        same, cross = [], []
        for ex in ds.examples:
            f = ex.ocr_appearance
            norm = np.linalg.norm(f, axis=1)
            for i, linked in enumerate(ex.boundaries):
                d = float(f[i] @ f[i + 1] / (norm[i] * norm[i + 1] + 1e-12))
                (same if linked else cross).append(d)
        if limit:
            same, cross = same[:limit], cross[:limit]
        return np.array(same), np.array(cross)

    @staticmethod
    def welch_p(a, b):
        # two-sided Welch z-test; large samples make the normal approx fine
        va, vb = a.var(ddof=1) / len(a), b.var(ddof=1) / len(b)
        z = (a.mean() - b.mean()) / math.sqrt(va + vb)
        return math.erfc(abs(z) / math.sqrt(2.0))

    def test_rho_zero_indistinguishable(self):
        cfg = small_cfg(n_examples=2500, rho=0.0, damage_prob=0.0, seed=11)
        same, cross = self.adjacent_dots(gen_synthetic(cfg), limit=10000)
        assert len(same) > 1500 and len(cross) > 1500
        assert self.welch_p(same, cross) > 0.01

    def test_rho_high_strongly_separated(self):
        cfg = small_cfg(n_examples=800, rho=0.8, damage_prob=0.0, seed=12)
        same, cross = self.adjacent_dots(gen_synthetic(cfg))
        assert same.mean() > cross.mean() + 0.3
        assert self.welch_p(same, cross) < 1e-6
