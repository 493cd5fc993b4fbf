"""Caption tokenization and the recurrent sentence encoder.

Pipeline: one-hot token indices -> learned embedding -> bidirectional LSTM
(per-token context vectors, forward and backward halves concatenated) -> a
second LSTM whose final hidden state is the sentence vector. The whole stack
is pretrained as a sequence autoencoder: a decoder LSTM, seeded with the
sentence vector, reconstructs the token sequence under teacher forcing and
is discarded afterwards. Encoder weights are frozen once pretraining ends.
"""

import string
from dataclasses import dataclass

import numpy as np

from tgansc.engine import nn
from tgansc.engine import tensor as T
from tgansc.engine.optim import Adam
from tgansc.engine.rng import make_rng
from tgansc.errors import ContractError, FormatError, InputError

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<bos>", "<eos>", "<unk>")

_PUNCT_TABLE = str.maketrans({c: " " for c in string.punctuation})


class Vocabulary:
    """Bijective token <-> index map with four reserved leading tokens."""

    def __init__(self, tokens):
        self.index_to_token = list(RESERVED) + [t for t in tokens if t not in RESERVED]
        self.token_to_index = {t: i for i, t in enumerate(self.index_to_token)}
        if len(self.token_to_index) != len(self.index_to_token):
            raise InputError("vocabulary contains duplicate tokens")

    @classmethod
    def from_corpus(cls, texts):
        seen = set()
        for text in texts:
            seen.update(normalize_tokens(text))
        return cls(sorted(seen))

    @property
    def size(self):
        return len(self.index_to_token)

    def index(self, token):
        return self.token_to_index.get(token, UNK)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for token in self.index_to_token:
                fh.write(token + "\n")

    @classmethod
    def load(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh]
        if tokens[:4] != list(RESERVED):
            raise FormatError(f"{path}: first four lines must be {RESERVED}")
        return cls(tokens[4:])


@dataclass(frozen=True)
class Caption:
    tokens: tuple
    raw_text: str

    def __len__(self):
        return len(self.tokens)


def normalize_tokens(text):
    return text.lower().translate(_PUNCT_TABLE).split()


def tokenize(text, vocab):
    """Lowercase, strip punctuation, split on whitespace, map unknowns to <unk>."""
    words = normalize_tokens(text)
    if not words:
        raise InputError(f"caption is empty after normalization: {text!r}")
    return Caption(tuple(vocab.index(w) for w in words), raw_text=text)


class TextEncoder:
    """bi-LSTM contextual embedding plus LSTM sentence encoder."""

    def __init__(self, vocab, hidden_dim=256, seed=0, init_stddev=None):
        self.vocab = vocab
        self.hidden_dim = hidden_dim
        # recurrent stacks need a width-scaled init to carry token identity;
        # the GAN-side 0.02 starves the sentence vector of signal
        std = init_stddev if init_stddev is not None else 1.0 / np.sqrt(hidden_dim)
        rng = make_rng(seed)
        self.embedding = nn.Linear(vocab.size, hidden_dim, rng, bias=False, name="embed", stddev=std)
        self.fwd = nn.LSTMCell(hidden_dim, hidden_dim, rng, name="fwd", stddev=std)
        self.bwd = nn.LSTMCell(hidden_dim, hidden_dim, rng, name="bwd", stddev=std)
        self.enc = nn.LSTMCell(2 * hidden_dim, hidden_dim, rng, name="enc", stddev=std)
        self._frozen = False

    def params(self):
        return nn.merge_params(
            self.embedding.params(), self.fwd.params(), self.bwd.params(), self.enc.params()
        )

    def freeze(self):
        for p in self.params().values():
            p.requires_grad = False
        self._frozen = True

    @property
    def frozen(self):
        return self._frozen

    def _check_mutable(self):
        if self._frozen:
            raise ContractError("text encoder is frozen after pretraining")

    def embed_tokens(self, token_matrix):
        """(B, N) int array -> list of N embedding Tensors of shape (B, hidden)."""
        emb = self.embedding.weight[np.asarray(token_matrix, dtype=np.int64)]
        return [emb[:, t, :] for t in range(token_matrix.shape[1])]

    def bilstm_embed_batch(self, token_matrix):
        """Per-token context vectors: list of N Tensors of shape (B, 2*hidden)."""
        n = token_matrix.shape[1]
        if n < 1:
            raise InputError("bilstm_embed needs at least one token")
        xs = self.embed_tokens(token_matrix)
        batch = token_matrix.shape[0]
        hs_f = self.fwd.run(xs, batch)
        hs_b = self.bwd.run(xs[::-1], batch)[::-1]
        return [T.concat([hs_f[t], hs_b[t]], axis=1) for t in range(n)]

    def bilstm_embed(self, caption):
        mat = np.asarray([caption.tokens], dtype=np.int64)
        return [h.data[0] for h in self.bilstm_embed_batch(mat)]

    def encode_batch_tensor(self, token_matrix):
        """Sentence vectors with graph attached: (B, hidden) Tensor."""
        context = self.bilstm_embed_batch(token_matrix)
        hs = self.enc.run(context, token_matrix.shape[0])
        return hs[-1]

    def encode(self, caption):
        """Deterministic sentence vector for one caption, as a plain array."""
        if len(caption) < 1:
            raise InputError("cannot encode an empty caption")
        mat = np.asarray([caption.tokens], dtype=np.int64)
        return self.encode_batch_tensor(mat).data[0].copy()

    def encode_texts(self, texts):
        """text -> vector map; captions are grouped by length for batching."""
        captions = [tokenize(t, self.vocab) for t in texts]
        by_len = {}
        for i, c in enumerate(captions):
            by_len.setdefault(len(c), []).append(i)
        out = [None] * len(texts)
        for _, idxs in sorted(by_len.items()):
            mat = np.asarray([captions[i].tokens for i in idxs], dtype=np.int64)
            vecs = self.encode_batch_tensor(mat).data
            for row, i in enumerate(idxs):
                out[i] = vecs[row].copy()
        return dict(zip(texts, out))


def encode_sentence(caption, encoder):
    return encoder.encode(caption)


class SequenceAutoencoder:
    """Pretraining head: decoder LSTM + vocabulary projection.

    The sentence vector is the decoder's initial hidden state and is also
    concatenated to every step input and to the readout. The direct readout
    path is what forces the encoder to keep rare tokens (the digit) linearly
    separable in the sentence vector instead of letting them wash out.
    """

    def __init__(self, encoder, seed=1):
        self.encoder = encoder
        hd = encoder.hidden_dim
        rng = make_rng(seed)
        self.dec = nn.LSTMCell(2 * hd, hd, rng, name="dec", stddev=1.0 / np.sqrt(hd))
        self.out = nn.Linear(2 * hd, encoder.vocab.size, rng, name="out", stddev=1.0 / np.sqrt(2 * hd))

    def params(self):
        return nn.merge_params(self.encoder.params(), self.dec.params(), self.out.params())

    def _decode_steps(self, token_matrix, sentence, teacher_forcing):
        """Yield logits per step; targets are tokens followed by <eos>."""
        batch, n = token_matrix.shape
        h = sentence
        c = T.Tensor(np.zeros((batch, self.encoder.hidden_dim), dtype=np.float32))
        current = np.full((batch,), BOS, dtype=np.int64)
        logits = []
        for t in range(n + 1):
            x = T.concat([self.encoder.embedding.weight[current], sentence], axis=1)
            h, c = self.dec.step(x, h, c)
            step_logits = self.out(T.concat([h, sentence], axis=1))
            logits.append(step_logits)
            if t < n:
                if teacher_forcing:
                    current = token_matrix[:, t]
                else:
                    current = step_logits.data.argmax(axis=1)
        return logits

    def batch_loss(self, token_matrix):
        sentence = self.encoder.encode_batch_tensor(token_matrix)
        logits = self._decode_steps(token_matrix, sentence, teacher_forcing=True)
        batch, n = token_matrix.shape
        targets = np.concatenate([token_matrix, np.full((batch, 1), EOS, dtype=np.int64)], axis=1)
        stacked = T.concat(logits, axis=0)  # step-major: (n+1)*batch rows
        flat_targets = targets.T.reshape(-1)
        return T.mean(T.cross_entropy_logits(stacked, flat_targets))

    def greedy_accuracy(self, token_matrices):
        """Token-level accuracy of free-running greedy decoding, <eos> included."""
        correct = 0
        total = 0
        for mat in token_matrices:
            sentence = self.encoder.encode_batch_tensor(mat)
            logits = self._decode_steps(mat, sentence, teacher_forcing=False)
            batch, n = mat.shape
            targets = np.concatenate([mat, np.full((batch, 1), EOS, dtype=np.int64)], axis=1)
            pred = np.stack([l.data.argmax(axis=1) for l in logits], axis=1)
            correct += int((pred == targets).sum())
            total += targets.size
        return correct / total if total else 0.0


@dataclass
class PretrainReport:
    epochs: int
    epoch_losses: list
    final_token_accuracy: float


def pretrain_autoencoder(corpus, encoder, epochs, learning_rate=5e-3, seed=1):
    """Train encoder+decoder to reconstruct the corpus, then freeze the encoder.

    Returns the report; the decoder is dropped on exit. Zero epochs leaves
    parameters untouched (accuracy is then whatever random init gives).
    """
    if not corpus:
        raise InputError("pretraining corpus is empty")
    captions = [c if isinstance(c, Caption) else tokenize(c, encoder.vocab) for c in corpus]
    by_len = {}
    for c in captions:
        by_len.setdefault(len(c), []).append(c.tokens)
    matrices = [
        np.asarray(group, dtype=np.int64) for _, group in sorted(by_len.items())
    ]
    auto = SequenceAutoencoder(encoder, seed=seed)
    opt = Adam(auto.params(), learning_rate=learning_rate)
    losses = []
    for _ in range(epochs):
        total = 0.0
        rows = 0
        for mat in matrices:
            opt.zero_grad()
            loss = auto.batch_loss(mat)
            T.backward(loss)
            opt.step()
            total += loss.item() * mat.shape[0]
            rows += mat.shape[0]
        losses.append(total / rows)
    accuracy = auto.greedy_accuracy(matrices)
    encoder.freeze()
    return PretrainReport(epochs=epochs, epoch_losses=losses, final_token_accuracy=accuracy)
