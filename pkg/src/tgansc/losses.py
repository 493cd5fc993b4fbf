"""Matching-aware and temporal-coherence training objectives.

Probabilities are clamped into [EPS, 1-EPS] before any log and the clamp
events are counted in ``LossDiagnostics``. Per-triplet losses are vectors
over the batch; scheme objectives sum them (the optimizer sees the sum over
the triplet set, reports carry the mean).

Scheme menu:
  tgans-c-1   video matching loss only
  tgans-c-2   video + frame matching losses
  tgans-c-c   adds the coherence distance penalty (generator side only)
  tgans-c-a   adds the adversarial motion critic to both sides
"""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from tgansc.engine import tensor as T
from tgansc.errors import InputError

EPS = 1e-7


class Scheme(Enum):
    VIDEO_ONLY = "tgans-c-1"
    VIDEO_FRAME = "tgans-c-2"
    COHERENCE_CONSTRAINT = "tgans-c-c"
    COHERENCE_ADVERSARIAL = "tgans-c-a"

    @classmethod
    def parse(cls, name):
        for s in cls:
            if s.value == name:
                return s
        raise InputError(f"unknown scheme {name!r}; choose from {[s.value for s in cls]}")


@dataclass
class LossDiagnostics:
    clamped: int = 0
    scores_seen: int = 0

    def observe(self, scores):
        self.scores_seen += scores.size
        self.clamped += int(np.count_nonzero((scores <= EPS) | (scores >= 1.0 - EPS)))


@dataclass(frozen=True)
class RealSyntheticTriplet:
    v_syn_plus: object
    v_real_plus: object
    v_real_minus: object
    caption: object
    sentence: np.ndarray


class TripletBatch:
    """Stacked triplet roles; ``syn`` may carry a generator graph."""

    def __init__(self, syn, real_pos, real_neg, sentences, captions=None):
        self.syn = syn if isinstance(syn, T.Tensor) else T.Tensor(syn)
        self.real_pos = real_pos if isinstance(real_pos, T.Tensor) else T.Tensor(real_pos)
        self.real_neg = real_neg if isinstance(real_neg, T.Tensor) else T.Tensor(real_neg)
        self.sentences = np.asarray(sentences, dtype=np.float32)
        self.captions = captions
        if not (self.syn.shape == self.real_pos.shape == self.real_neg.shape):
            raise InputError("triplet roles must share one video shape")
        if self.sentences.shape[0] != self.syn.shape[0]:
            raise InputError("one sentence vector per triplet is required")

    def __len__(self):
        return self.syn.shape[0]

    @property
    def frames(self):
        return self.syn.shape[2]

    @classmethod
    def from_triplets(cls, triplets):
        if isinstance(triplets, cls):
            return triplets
        triplets = list(triplets)
        if not triplets:
            raise InputError("empty triplet batch")

        def stack(vs):
            rows = [v.data if isinstance(v, T.Tensor) else np.asarray(v, dtype=np.float32) for v in vs]
            return np.stack(rows)

        return cls(
            stack([t.v_syn_plus for t in triplets]),
            stack([t.v_real_plus for t in triplets]),
            stack([t.v_real_minus for t in triplets]),
            np.stack([np.asarray(t.sentence, dtype=np.float32) for t in triplets]),
            captions=[t.caption for t in triplets],
        )


def _safe_log(probs, diag):
    if diag is not None:
        diag.observe(probs.data)
    return T.log(T.clamp(probs, EPS, 1.0 - EPS))


def _matching_vector(p_pos, p_neg_mismatch, p_neg_syn, diag):
    """-(1/3)[log p+ + log(1-p-) + log(1-p_syn)] per batch row."""
    one = 1.0
    term = (
        _safe_log(p_pos, diag)
        + _safe_log(one - p_neg_mismatch, diag)
        + _safe_log(one - p_neg_syn, diag)
    )
    return term * (-1.0 / 3.0)


def _tile_sentences(sent, copies):
    """(B, d) -> (B*copies, d), row-major per video."""
    b, d = sent.shape
    return np.broadcast_to(sent[:, None, :], (b, copies, d)).reshape(b * copies, d)


def video_matching_loss(triplets, d0, training=False, diag=None):
    """Per-triplet video-level matching-aware loss, shape (B,)."""
    tb = TripletBatch.from_triplets(triplets if not isinstance(triplets, RealSyntheticTriplet) else [triplets])
    b = len(tb)
    videos = T.concat([tb.real_pos, tb.real_neg, tb.syn.detach()], axis=0)
    sents = np.concatenate([tb.sentences] * 3, axis=0)
    scores = d0(videos, sents, training=training)
    return _matching_vector(scores[0:b], scores[b:2 * b], scores[2 * b:3 * b], diag)


def frame_matching_loss(triplets, d1, training=False, diag=None):
    """Per-triplet frame-level matching-aware loss, averaged over frames."""
    tb = TripletBatch.from_triplets(triplets if not isinstance(triplets, RealSyntheticTriplet) else [triplets])
    b, l = len(tb), tb.frames
    frames = T.concat(
        [_video_to_frames(tb.real_pos), _video_to_frames(tb.real_neg), _video_to_frames(tb.syn.detach())],
        axis=0,
    )
    sents = np.concatenate([_tile_sentences(tb.sentences, l)] * 3, axis=0)
    scores = d1(frames, sents, training=training)
    pos = T.reshape(scores[0:b * l], (b, l))
    neg = T.reshape(scores[b * l:2 * b * l], (b, l))
    syn = T.reshape(scores[2 * b * l:3 * b * l], (b, l))
    term = (
        T.mean(_safe_log(pos, diag), axis=1)
        + T.mean(_safe_log(1.0 - neg, diag), axis=1)
        + T.mean(_safe_log(1.0 - syn, diag), axis=1)
    )
    return term * (-1.0 / 3.0)


def _video_to_frames(videos):
    b, c, l, h, w = videos.shape
    return T.reshape(T.transpose(videos, (0, 2, 1, 3, 4)), (b * l, c, h, w))


def _frame_feature_sequence(videos, extractor, training):
    """(B, c, l, h, w) -> frame features (B, l, C, fh, fw) through the shared stack."""
    b, _, l = videos.shape[0], videos.shape[1], videos.shape[2]
    feats = extractor(_video_to_frames(videos), training=training)
    return T.reshape(feats, (b, l, *feats.shape[1:]))


def coherence_constraint_loss(videos, extractor, training=False):
    """Mean squared feature distance of consecutive frames, (B,) over the batch.

    Zero iff all consecutive frame features are equal; needs >= 2 frames.
    """
    videos = videos if isinstance(videos, T.Tensor) else T.Tensor(videos)
    if videos.ndim == 4:
        videos = T.reshape(videos, (1, *videos.shape))
    l = videos.shape[2]
    if l < 2:
        raise InputError(f"coherence needs at least 2 frames, got {l}")
    seq = _frame_feature_sequence(videos, extractor, training)
    delta = seq[:, 1:] - seq[:, :-1]
    sq = T.tensor_sum(T.square(delta), axis=(2, 3, 4))
    return T.mean(sq, axis=1)


def _motion_scores(feature_seq, sent, d2, diag_probe=None):
    """Phi2 over consecutive-frame differences; returns (B, l-1) probabilities."""
    b, l = feature_seq.shape[0], feature_seq.shape[1]
    delta = feature_seq[:, 1:] - feature_seq[:, :-1]
    flat = T.reshape(delta, (b * (l - 1), *feature_seq.shape[2:]))
    scores = d2(flat, _tile_sentences(sent, l - 1))
    return T.reshape(scores, (b, l - 1))


def coherence_adversarial_loss(triplets, d2, training=False, diag=None):
    """Per-triplet motion matching-aware loss over the l-1 consecutive pairs."""
    tb = TripletBatch.from_triplets(triplets if not isinstance(triplets, RealSyntheticTriplet) else [triplets])
    b, l = len(tb), tb.frames
    if l < 2:
        raise InputError(f"coherence needs at least 2 frames, got {l}")
    extractor = d2.extractor
    stacked = T.concat([tb.real_pos, tb.real_neg, tb.syn.detach()], axis=0)
    seq = _frame_feature_sequence(stacked, extractor, training)
    sents3 = np.concatenate([tb.sentences] * 3, axis=0)
    scores = _motion_scores(seq, sents3, d2)
    pos, neg, syn = scores[0:b], scores[b:2 * b], scores[2 * b:3 * b]
    term = (
        T.mean(_safe_log(pos, diag), axis=1)
        + T.mean(_safe_log(1.0 - neg, diag), axis=1)
        + T.mean(_safe_log(1.0 - syn, diag), axis=1)
    )
    return term * (-1.0 / 3.0)


def discriminator_objective(triplets, discs, scheme, training=False, diag=None, return_components=False):
    """Scheme-weighted sum over the triplet batch of the critic losses.

    The coherence distance penalty never appears here; it shapes only the
    generator. Synthetic videos are detached, so this objective carries no
    gradient into generator parameters.
    """
    scheme = Scheme.parse(scheme) if isinstance(scheme, str) else scheme
    tb = TripletBatch.from_triplets(triplets)
    b, l = len(tb), tb.frames

    videos = T.concat([tb.real_pos, tb.real_neg, tb.syn.detach()], axis=0)
    sents3 = np.concatenate([tb.sentences] * 3, axis=0)
    v_scores = discs.video(videos, sents3, training=training)
    l_v = _matching_vector(v_scores[0:b], v_scores[b:2 * b], v_scores[2 * b:3 * b], diag)

    l_f = None
    l_t = None
    if scheme is not Scheme.VIDEO_ONLY:
        seq = _frame_feature_sequence(videos, discs.frame_features, training)
        flat = T.reshape(seq, (3 * b * l, *seq.shape[2:]))
        f_scores = discs.frame.score_features(flat, _tile_sentences(sents3, l))
        f_mat = T.reshape(f_scores, (3 * b, l))
        term = (
            T.mean(_safe_log(f_mat[0:b], diag), axis=1)
            + T.mean(_safe_log(1.0 - f_mat[b:2 * b], diag), axis=1)
            + T.mean(_safe_log(1.0 - f_mat[2 * b:3 * b], diag), axis=1)
        )
        l_f = term * (-1.0 / 3.0)
        if scheme is Scheme.COHERENCE_ADVERSARIAL:
            m_scores = _motion_scores(seq, sents3, discs.motion)
            mterm = (
                T.mean(_safe_log(m_scores[0:b], diag), axis=1)
                + T.mean(_safe_log(1.0 - m_scores[b:2 * b], diag), axis=1)
                + T.mean(_safe_log(1.0 - m_scores[2 * b:3 * b], diag), axis=1)
            )
            l_t = mterm * (-1.0 / 3.0)

    if scheme is Scheme.VIDEO_ONLY:
        per_triplet = l_v
    elif scheme is Scheme.COHERENCE_ADVERSARIAL:
        per_triplet = (l_v + l_f + l_t) * (1.0 / 3.0)
    else:
        per_triplet = (l_v + l_f) * 0.5

    total = T.tensor_sum(per_triplet)
    if not return_components:
        return total
    components = {
        "l_v": float(l_v.data.mean()),
        "l_f": float(l_f.data.mean()) if l_f is not None else 0.0,
        "l_t": float(l_t.data.mean()) if l_t is not None else 0.0,
    }
    return total, components


def generator_objective(triplets, discs, scheme, training=False, diag=None, return_components=False):
    """Scheme-weighted generator loss, summed over the batch.

    Gradients flow through the critics into the synthetic videos; critic
    parameters are only read, never updated from here. The bracket keeps the
    1/3 weight in every scheme, with absent terms dropped.
    """
    scheme = Scheme.parse(scheme) if isinstance(scheme, str) else scheme
    tb = TripletBatch.from_triplets(triplets)
    b, l = len(tb), tb.frames

    v_scores = discs.video(tb.syn, tb.sentences, training=training)
    term = _safe_log(v_scores, diag)
    coherence = None

    if scheme is not Scheme.VIDEO_ONLY:
        seq = _frame_feature_sequence(tb.syn, discs.frame_features, training)
        flat = T.reshape(seq, (b * l, *seq.shape[2:]))
        f_scores = discs.frame.score_features(flat, _tile_sentences(tb.sentences, l))
        term = term + T.mean(_safe_log(T.reshape(f_scores, (b, l)), diag), axis=1)
        if scheme is Scheme.COHERENCE_CONSTRAINT:
            delta = seq[:, 1:] - seq[:, :-1]
            coherence = T.mean(T.tensor_sum(T.square(delta), axis=(2, 3, 4)), axis=1)
            term = term - coherence
        elif scheme is Scheme.COHERENCE_ADVERSARIAL:
            m_scores = _motion_scores(seq, tb.sentences, discs.motion)
            term = term + T.mean(_safe_log(m_scores, diag), axis=1)

    per_triplet = term * (-1.0 / 3.0)
    total = T.tensor_sum(per_triplet)
    if not return_components:
        return total
    components = {
        "coherence": float(coherence.data.mean()) if coherence is not None else None,
        "mean": float(per_triplet.data.mean()),
    }
    return total, components
