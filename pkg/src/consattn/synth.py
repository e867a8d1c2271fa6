"""Synthetic scene-text lines whose answers require word-level grouping.

A fixed inventory of multi-syllable "words" is drawn from a syllable
vocabulary small enough that syllables recur across words.  Each example is
one line of 1..max words; the question carries a probe syllable that occurs
in exactly one of the line's words, and the answer is that word's inventory
index.  Because a shared syllable does not identify a word on its own, the
answer is recoverable only by reading the probed word as a unit.

Appearance features mark the grouping itself: every word instance draws a
signature (half fixed per inventory word, half fresh per instance) that all
its tokens share with weight sqrt(rho), on top of per-token noise with weight
sqrt(1 - rho).  At rho = 0 the features are pure noise and carry no grouping
signal at all.

Two optional corruptions shape what each attention arm can exploit.  A
*confuser* swaps one line word for an inventory word sharing a syllable with
the target, so content-matched attention across words is misleading.
*Damage* replaces a token's id with a random syllable and adds a marker to
its appearance (the signature component stays, so boundary structure is
unharmed): recovering the word then rewards content-selective routing within
the word rather than uniform span pooling.

Token boxes sit on one text line: a shared y-band, consecutive x-ranges,
small gaps inside a word and wider gaps between words.

The inventory is derived from ``inventory_seed`` alone (given the same
structural parameters), so several splits generated with different ``seed``
values share one answer space.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .config import ConfigError


@dataclass
class SynthConfig:
    n_examples: int = 1000
    vocab: int = 36
    n_words: int = 28
    word_len_probs: tuple = (0.15, 0.5, 0.35)  # syllable counts 1, 2, 3
    max_words_per_line: int = 4
    line_len_weights: tuple = (0.1, 0.2, 0.3, 0.4)  # words per line 1..max, renormalized
    confuser_prob: float = 0.5   # chance a line word is forced to share a syllable with the target
    damage_prob: float = 0.35    # chance a token's id is corrupted (appearance gets a marker)
    damage_adversarial: float = 0.85  # corrupted id prefers one that spells a sibling word
    sibling_frac: float = 0.4    # fraction of the inventory built as one-slot variants
    n_objects: int = 2
    d_fr: int = 24
    rho: float = 0.8
    answer_scheme: str = "probe-word"
    obj_label_vocab: int = 0
    inventory_seed: int = 0
    seed: int = 0

    def __post_init__(self):
        self.word_len_probs = tuple(float(p) for p in self.word_len_probs)
        self.line_len_weights = tuple(float(p) for p in self.line_len_weights)
        if self.n_examples <= 0 or self.vocab <= 0 or self.n_words <= 0 or self.d_fr <= 0:
            raise ConfigError("n_examples, vocab, n_words and d_fr must all be positive")
        if len(self.word_len_probs) != 3 or any(p < 0 for p in self.word_len_probs) \
                or abs(sum(self.word_len_probs) - 1.0) > 1e-9:
            raise ConfigError(f"word_len_probs must be 3 non-negative values summing to 1, "
                              f"got {self.word_len_probs}")
        if not (1 <= self.max_words_per_line <= 4):
            raise ConfigError(f"max_words_per_line must lie in 1..4, got {self.max_words_per_line}")
        if len(self.line_len_weights) < self.max_words_per_line \
                or any(w < 0 for w in self.line_len_weights) \
                or sum(self.line_len_weights[:self.max_words_per_line]) <= 0:
            raise ConfigError(f"line_len_weights must cover 1..{self.max_words_per_line} "
                              f"with non-negative mass, got {self.line_len_weights}")
        if not (0.0 <= self.confuser_prob <= 1.0):
            raise ConfigError(f"confuser_prob must lie in [0, 1], got {self.confuser_prob}")
        if not (0.0 <= self.damage_prob <= 1.0):
            raise ConfigError(f"damage_prob must lie in [0, 1], got {self.damage_prob}")
        if not (0.0 <= self.damage_adversarial <= 1.0):
            raise ConfigError(f"damage_adversarial must lie in [0, 1], got {self.damage_adversarial}")
        if not (0.0 <= self.sibling_frac <= 1.0):
            raise ConfigError(f"sibling_frac must lie in [0, 1], got {self.sibling_frac}")
        if not (0.0 <= self.rho <= 1.0):
            raise ConfigError(f"rho must lie in [0, 1], got {self.rho}")
        if self.n_objects < 0:
            raise ConfigError(f"n_objects must be >= 0, got {self.n_objects}")
        if self.answer_scheme != "probe-word":
            raise ConfigError(f"unknown answer scheme {self.answer_scheme!r}")

    def to_dict(self):
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["word_len_probs"] = list(self.word_len_probs)
        d["line_len_weights"] = list(self.line_len_weights)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class SyntheticExample:
    example_id: int
    ocr_appearance: np.ndarray   # (n, d_fr)
    ocr_boxes: np.ndarray        # (n, 4)
    ocr_tokens: np.ndarray       # (n,) syllable ids
    obj_appearance: np.ndarray   # (m, d_fr)
    obj_boxes: np.ndarray        # (m, 4)
    question_tokens: np.ndarray  # (L,) question-vocab ids: [ask, probe + 1]
    boundaries: np.ndarray       # (n-1,) bool, True = same word
    answer: int                  # inventory index of the probed word
    word_ids: np.ndarray         # line composition, inventory indices
    obj_labels: Optional[np.ndarray] = None


@dataclass
class Dataset:
    config: SynthConfig
    inventory: list              # word index -> tuple of syllable ids
    examples: list = field(default_factory=list)

    def word_string(self, word_index):
        return " ".join(f"s{t}" for t in self.inventory[word_index])

    @property
    def question_vocab(self):
        return self.config.vocab + 1

    @property
    def n_answers(self):
        return len(self.inventory)


def build_inventory(cfg):
    """Word inventory and per-word signature matrix, from inventory_seed only.

    A sibling_frac share of the inventory is built as one-slot variants of
    already drawn multi-syllable words, so words systematically share
    syllables and single syllables underdetermine word identity.
    """
    rng = np.random.default_rng(cfg.inventory_seed)
    n_base = max(1, int(round(cfg.n_words * (1.0 - cfg.sibling_frac))))
    words = []
    seen = set()
    attempts = 0
    cap = 200 * cfg.n_words
    lengths = np.array([1, 2, 3])
    while len(words) < cfg.n_words:
        if attempts >= cap:
            raise ConfigError(
                f"cannot draw {cfg.n_words} distinct words from a vocabulary of {cfg.vocab} "
                f"with length distribution {cfg.word_len_probs} and sibling share "
                f"{cfg.sibling_frac}")
        attempts += 1
        multi = [w for w in words if len(w) > 1]
        if len(words) >= n_base and multi:
            base = multi[int(rng.integers(0, len(multi)))]
            slot = int(rng.integers(0, len(base)))
            word = list(base)
            word[slot] = int(rng.integers(0, cfg.vocab))
            word = tuple(word)
        else:
            k = int(rng.choice(lengths, p=cfg.word_len_probs))
            word = tuple(int(t) for t in rng.integers(0, cfg.vocab, size=k))
        if word not in seen:
            seen.add(word)
            words.append(word)
    signatures = rng.normal(size=(cfg.n_words, cfg.d_fr))
    return words, signatures


def _line_boxes(word_lengths, rng):
    token_w = 0.05
    inner_gap = 0.004
    word_gap = 0.04
    y0 = float(rng.uniform(0.1, 0.8))
    y1 = y0 + 0.1
    boxes = []
    x = float(rng.uniform(0.0, 0.02))
    for wi, length in enumerate(word_lengths):
        if wi:
            x += word_gap
        for s in range(length):
            if s:
                x += inner_gap
            boxes.append((x, y0, x + token_w, y1))
            x += token_w
    arr = np.array(boxes)
    right = arr[:, 2].max()
    if right > 1.0:
        arr[:, 0] /= right
        arr[:, 2] /= right
    return arr


def _random_box(rng):
    x = np.sort(rng.uniform(0.0, 1.0, size=2))
    y = np.sort(rng.uniform(0.0, 1.0, size=2))
    return np.array([x[0], y[0], x[1], y[1]])


DAMAGE_MARKER = 2.5     # added to the first marker channels of damaged tokens
DAMAGE_CHANNELS = 4     # how many leading appearance channels carry the marker


def _sibling_alternatives(inventory):
    """(word, slot) -> syllables that turn the word into another inventory word."""
    by_len = {}
    for w in inventory:
        by_len.setdefault(len(w), []).append(w)
    alts = {}
    for w in inventory:
        for s in range(len(w)):
            options = [v[s] for v in by_len[len(w)]
                       if v != w and v[s] != w[s]
                       and all(v[t] == w[t] for t in range(len(w)) if t != s)]
            if options:
                alts[(w, s)] = options
    return alts


def _inject_confuser(inventory, word_ids, pos, rng):
    """Swap one non-target word for one sharing a syllable with the target,
    so cross-word attention is actively misleading.  No-op without candidates."""
    target = set(inventory[word_ids[pos]])
    if len(word_ids) < 2:
        return word_ids
    present = set(int(w) for w in word_ids)
    candidates = [w for w in range(len(inventory))
                  if w not in present and target & set(inventory[w])]
    if not candidates:
        return word_ids
    slots = [i for i in range(len(word_ids)) if i != pos]
    slot = slots[int(rng.integers(0, len(slots)))]
    word_ids = word_ids.copy()
    word_ids[slot] = candidates[int(rng.integers(0, len(candidates)))]
    return word_ids


def _compose_line(cfg, inventory, alts, rng):
    """Draw words, a probed target, per-token damage, and a legible probe.

    Damaged ids prefer a syllable that spells a sibling word (misleading
    evidence) over a uniform one.  The probe syllable must survive damage and
    occur exactly once among the line's final token ids, so the question
    always points at one word.
    """
    weights = np.asarray(cfg.line_len_weights[:cfg.max_words_per_line], dtype=np.float64)
    weights = weights / weights.sum()
    for _ in range(200):
        k = int(rng.choice(np.arange(1, cfg.max_words_per_line + 1), p=weights))
        k = min(k, len(inventory))
        word_ids = rng.choice(len(inventory), size=k, replace=False)
        pos = int(rng.integers(0, k))
        if rng.random() < cfg.confuser_prob:
            word_ids = _inject_confuser(inventory, word_ids, pos, rng)
        lengths = [len(inventory[w]) for w in word_ids]
        owner = [wi for wi, L in enumerate(lengths) for _ in range(L)]
        slot = [s for L in lengths for s in range(L)]
        true_ids = np.array([t for w in word_ids for t in inventory[w]], dtype=np.int64)
        n = true_ids.shape[0]
        damaged = rng.random(n) < cfg.damage_prob
        final_ids = true_ids.copy()
        for i in np.flatnonzero(damaged):
            options = alts.get((inventory[word_ids[owner[i]]], slot[i]))
            if options and rng.random() < cfg.damage_adversarial:
                final_ids[i] = options[int(rng.integers(0, len(options)))]
            else:
                final_ids[i] = rng.integers(0, cfg.vocab)
        start = sum(lengths[:pos])
        probe_rows = [i for i in range(start, start + lengths[pos])
                      if not damaged[i] and int((final_ids == true_ids[i]).sum()) == 1]
        if not probe_rows:
            continue
        probe = int(true_ids[probe_rows[int(rng.integers(0, len(probe_rows)))]])
        return word_ids, pos, probe, lengths, final_ids, damaged
    raise ConfigError("could not draw a line with a legible unambiguous probe; "
                      "damage_prob or the word inventory leaves no usable lines")


def gen_synthetic(cfg):
    """Deterministically generate a Dataset for the config's seeds."""
    inventory, word_sig = build_inventory(cfg)
    alts = _sibling_alternatives(inventory)
    rng = np.random.default_rng(cfg.seed)
    ds = Dataset(config=cfg, inventory=inventory)
    sig_w = np.sqrt(cfg.rho)
    noise_w = np.sqrt(1.0 - cfg.rho)
    marker_dims = min(DAMAGE_CHANNELS, cfg.d_fr)
    for idx in range(cfg.n_examples):
        word_ids, target_pos, probe, lengths, tokens, damaged = _compose_line(
            cfg, inventory, alts, rng)
        n = tokens.shape[0]
        feats = np.zeros((n, cfg.d_fr))
        row = 0
        boundaries = np.zeros(max(n - 1, 0), dtype=bool)
        for wi, wid in enumerate(word_ids):
            inst = (word_sig[wid] + rng.normal(size=cfg.d_fr)) / np.sqrt(2.0)
            for s in range(lengths[wi]):
                feats[row] = sig_w * inst + noise_w * rng.normal(size=cfg.d_fr)
                if damaged[row]:
                    feats[row, :marker_dims] += DAMAGE_MARKER
                if s:
                    boundaries[row - 1] = True
                row += 1
        boxes = _line_boxes(lengths, rng)
        obj_feats = rng.normal(size=(cfg.n_objects, cfg.d_fr))
        obj_boxes = np.array([_random_box(rng) for _ in range(cfg.n_objects)]).reshape(
            cfg.n_objects, 4)
        obj_labels = None
        if cfg.obj_label_vocab:
            obj_labels = rng.integers(0, cfg.obj_label_vocab, size=cfg.n_objects)
        question = np.array([0, probe + 1], dtype=np.int64)
        ds.examples.append(SyntheticExample(
            example_id=idx,
            ocr_appearance=feats,
            ocr_boxes=boxes,
            ocr_tokens=tokens,
            obj_appearance=obj_feats,
            obj_boxes=obj_boxes,
            question_tokens=question,
            boundaries=boundaries,
            answer=int(word_ids[target_pos]),
            word_ids=np.asarray(word_ids, dtype=np.int64),
            obj_labels=obj_labels,
        ))
    return ds
