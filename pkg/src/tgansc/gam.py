"""Head-to-head evaluation of two (generator, discriminator) pairs.

Each discriminator is scored on a mixed test batch (real clips labeled real
plus an equal number of clips produced by the opposing generator labeled
fake) giving the test error ratio, and on the opposing generator's samples
alone giving the sample error ratio. The winner rule wants the sample ratio
on one side of 1 while the test ratio stays close to 1; closeness is judged
multiplicatively (max(r, 1/r) <= 1 + tolerance) so that swapping the two
models exactly inverts both ratios and the verdict.
"""

from dataclasses import dataclass

import numpy as np

from tgansc.engine.rng import make_rng
from tgansc.errors import InputError

DEFAULT_TOLERANCE = 0.1


@dataclass
class BattleModel:
    """Callable pair: generate(z_batch, captions) -> videos; score(videos, captions) -> probs."""

    name: str
    generate: object
    score: object


@dataclass
class BattleReport:
    r_test: float
    r_sample: float
    err_test_m1: float
    err_test_m2: float
    err_sample_m1: float
    err_sample_m2: float
    winner: str
    n_samples: int
    tolerance: float
    smoothed: bool

    def csv_row(self):
        return (
            f"{self.r_test:.6f},{self.r_sample:.6f},{self.err_test_m1:.6f},"
            f"{self.err_test_m2:.6f},{self.err_sample_m1:.6f},{self.err_sample_m2:.6f},"
            f"{self.winner},{self.n_samples},{self.tolerance},{int(self.smoothed)}"
        )

    CSV_HEADER = "r_test,r_sample,err_test_m1,err_test_m2,err_sample_m1,err_sample_m2,winner,n_samples,tolerance,smoothed"

    def text(self, name1="M1", name2="M2"):
        return (
            f"battle {name1} vs {name2}\n"
            f"  test error rates:   {name1}={self.err_test_m1:.4f}  {name2}={self.err_test_m2:.4f}\n"
            f"  sample error rates: {name1}={self.err_sample_m1:.4f}  {name2}={self.err_sample_m2:.4f}\n"
            f"  r_test={self.r_test:.4f}  r_sample={self.r_sample:.4f}\n"
            f"  winner: {self.winner}\n"
        )


def classification_error(score_fn, samples):
    """Fraction of samples where (score >= 0.5) disagrees with the label.

    ``samples`` is a nonempty list of (video, caption, is_real).
    """
    if not samples:
        raise InputError("classification_error needs a nonempty sample list")
    videos = np.stack([np.asarray(s[0], dtype=np.float32) for s in samples])
    captions = [s[1] for s in samples]
    labels = np.asarray([bool(s[2]) for s in samples])
    scores = np.asarray(score_fn(videos, captions), dtype=np.float64).reshape(-1)
    predicted_real = scores >= 0.5
    return float(np.mean(predicted_real != labels))


def judge_winner(r_test, r_sample, tolerance=DEFAULT_TOLERANCE):
    """M1 wins on r_sample < 1, M2 on r_sample > 1, if r_test stays near 1.

    Nearness is max(r_test, 1/r_test) <= 1 + tolerance, which is symmetric
    under swapping the contestants.
    """
    if r_test <= 0 or r_sample <= 0:
        raise InputError(f"ratios must be positive, got r_test={r_test} r_sample={r_sample}")
    test_ok = max(r_test, 1.0 / r_test) <= 1.0 + tolerance
    if test_ok and r_sample < 1.0:
        return "M1"
    if test_ok and r_sample > 1.0:
        return "M2"
    return "Tie"


def _smooth(rate, n, flag):
    if rate == 0.0:
        flag.append(True)
        return 1.0 / (2.0 * n)
    return rate


def battle(m1, m2, test_set, n_samples=64, seed=0, tolerance=DEFAULT_TOLERANCE, noise_dim=100):
    """Run the two-model battle on a list of (video, caption) real test pairs.

    Both generators consume the same noise and captions, so identical models
    tie exactly. Zero error rates are smoothed to 1/(2n) and flagged.
    """
    test_set = list(test_set)
    if not test_set:
        raise InputError("battle needs a nonempty test set")
    rng = make_rng(seed)
    cap_idx = rng.integers(0, len(test_set), size=n_samples)
    captions = [test_set[i][1] for i in cap_idx]
    z = rng.standard_normal((n_samples, noise_dim)).astype(np.float32)

    fake1 = np.asarray(m1.generate(z, captions), dtype=np.float32)
    fake2 = np.asarray(m2.generate(z, captions), dtype=np.float32)

    real_samples = [(v, c, True) for v, c in test_set]
    fakes_for_m1 = [(fake2[i], captions[i], False) for i in range(n_samples)]
    fakes_for_m2 = [(fake1[i], captions[i], False) for i in range(n_samples)]

    err_test_m1 = classification_error(m1.score, real_samples + fakes_for_m1)
    err_test_m2 = classification_error(m2.score, real_samples + fakes_for_m2)
    err_sample_m1 = classification_error(m1.score, fakes_for_m1)
    err_sample_m2 = classification_error(m2.score, fakes_for_m2)

    flag = []
    n_test = len(real_samples) + n_samples
    r_test = _smooth(err_test_m1, n_test, flag) / _smooth(err_test_m2, n_test, flag)
    r_sample = _smooth(err_sample_m1, n_samples, flag) / _smooth(err_sample_m2, n_samples, flag)
    return BattleReport(
        r_test=r_test,
        r_sample=r_sample,
        err_test_m1=err_test_m1,
        err_test_m2=err_test_m2,
        err_sample_m1=err_sample_m1,
        err_sample_m2=err_sample_m2,
        winner=judge_winner(r_test, r_sample, tolerance),
        n_samples=n_samples,
        tolerance=tolerance,
        smoothed=bool(flag),
    )


def battle_model_from_checkpoint(name, checkpoint_path, encoder_path):
    """Wrap saved generator+discriminator checkpoints as a BattleModel."""
    from tgansc.trainer import load_discriminators, load_encoder, load_generator
    from tgansc.text import tokenize

    encoder = load_encoder(encoder_path)
    gen = load_generator(checkpoint_path)
    discs = load_discriminators(checkpoint_path)
    cache = {}

    def sent_vectors(captions):
        rows = []
        for c in captions:
            if c not in cache:
                cache[c] = encoder.encode(tokenize(c, encoder.vocab))
            rows.append(cache[c])
        return np.stack(rows).astype(np.float32)

    def generate(z, captions):
        return gen(z, sent_vectors(captions), training=False).data

    def score(videos, captions):
        return discs.video(videos, sent_vectors(captions), training=False).data

    return BattleModel(name=name, generate=generate, score=score)
