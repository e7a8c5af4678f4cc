"""Discrete-latent recurrent variational model for dialog state induction.

Per turn t the model keeps a distribution z_t over K latent states. The
prior conditions directly on z_{t-1} (a learned start vector seeds t = 0),
the posterior conditions on the encoded utterance and the running dialog
state, and two decoders reconstruct the utterance: a teacher-forced token
decoder and an auxiliary (optionally tf-idf weighted) bag-of-words head that
counteracts posterior collapse.

Batches are processed turn-major: utterance (b, t) maps to row t * B + b of
every stacked tensor, including the decision matrix consumed by the
constraint loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .corpus import BOS_ID, EOS_ID, PAD_ID, DialogCorpus, Vocabulary
from .errors import ConfigError, NumericError
from .params import ParameterStore
from .rng import stream
from .softlogic import LogicConfig, batch_rule_truths, constraint_loss_vec


@dataclass
class ModelConfig:
    k_states: int
    vocab_size: int
    embed_dim: int = 24
    encoder_dim: int = 32
    dialog_dim: int = 32
    decoder_dim: int = 32
    bow_hidden_dim: int = 64
    lambda_bow: float = 0.1
    bow_weighting: str = "uniform"      # or "tfidf"
    alpha: float = 0.5                  # tf-idf mixing coefficient
    tau: float = 0.0                    # 0 = deterministic soft state
    max_utt_len: int = 40
    max_dialog_len: int = 10
    kl_mode: str = "per_step"           # or "batch_prior"

    def __post_init__(self):
        if self.k_states < 2:
            raise ConfigError("k_states must be at least 2")
        if self.lambda_bow < 0:
            raise ConfigError("lambda_bow must be non-negative")
        if not (0.0 <= self.alpha <= 1.0):
            raise ConfigError("alpha must lie in [0, 1]")
        if self.tau < 0:
            raise ConfigError("tau must be non-negative")
        if self.bow_weighting not in ("uniform", "tfidf"):
            raise ConfigError("bow_weighting must be 'uniform' or 'tfidf'")
        if self.kl_mode not in ("per_step", "batch_prior"):
            raise ConfigError("kl_mode must be 'per_step' or 'batch_prior'")


@dataclass
class DialogBatch:
    """Padded turn-major tensors for a batch of whole dialogs."""

    tokens: np.ndarray        # [B, T, L] token ids, PAD-padded, EOS-terminated
    utt_lens: np.ndarray      # [B, T] non-pad token counts
    dialog_lens: np.ndarray   # [B]
    speakers: np.ndarray      # [B, T]
    labels: np.ndarray        # [B, T] latent index or -1
    utt_ids: np.ndarray       # [B, T] global utterance index or -1

    @property
    def size(self) -> int:
        return self.tokens.shape[0]

    @property
    def max_turns(self) -> int:
        return self.tokens.shape[1]


@dataclass
class LossBreakdown:
    reconstruction: float
    kl: float
    bow: float
    supervised: float
    constraint: float
    total: float

    def to_dict(self) -> dict:
        return {
            "reconstruction": self.reconstruction,
            "kl": self.kl,
            "bow": self.bow,
            "supervised": self.supervised,
            "constraint": self.constraint,
            "total": self.total,
        }


@dataclass
class BatchGraph:
    """Loss nodes plus the per-utterance quantities evaluators need."""

    total: ad.Node
    breakdown: LossBreakdown
    decisions: np.ndarray        # [B*T, K] posterior rows (turn-major)
    features: np.ndarray         # [B*T, K + dialog_dim] probe features
    constraint_truths: np.ndarray  # concatenated ground-rule truth values


def encode_dialogs(corpus: DialogCorpus, vocab: Vocabulary, cfg: ModelConfig,
                   class_map: dict[str, int] | None = None) -> list[dict]:
    """Token-id form of each dialog, truncated to the configured maxima."""
    encoded = []
    base = 0
    for dialog in corpus.dialogs:
        turns = dialog.turns[: cfg.max_dialog_len]
        token_rows, states = [], []
        for turn in turns:
            ids = vocab.encode(turn.tokens)[: cfg.max_utt_len - 1] + [EOS_ID]
            token_rows.append(ids)
            if class_map is not None and turn.state is not None:
                states.append(class_map.get(turn.state, -1))
            else:
                states.append(-1)
        encoded.append({
            "tokens": token_rows,
            "speakers": [t.speaker for t in turns],
            "labels": states,
            "utt_ids": list(range(base, base + len(turns))),
        })
        base += len(dialog.turns)
    return encoded


def make_batch(encoded_dialogs: list[dict],
               labeled_ids: set[int] | None = None) -> DialogBatch:
    """Pad a list of encoded dialogs into one turn-major batch.

    Only global utterance ids in ``labeled_ids`` keep their gold labels (the
    few-shot supervision schemes); by default every label is wiped to -1, so
    gold states never leak into unsupervised training.
    """
    b = len(encoded_dialogs)
    t_max = max(len(d["tokens"]) for d in encoded_dialogs)
    l_max = max(len(row) for d in encoded_dialogs for row in d["tokens"])
    tokens = np.full((b, t_max, l_max), PAD_ID, dtype=np.int64)
    utt_lens = np.zeros((b, t_max), dtype=np.int64)
    dialog_lens = np.zeros(b, dtype=np.int64)
    speakers = np.zeros((b, t_max), dtype=np.int64)
    labels = np.full((b, t_max), -1, dtype=np.int64)
    utt_ids = np.full((b, t_max), -1, dtype=np.int64)
    for i, d in enumerate(encoded_dialogs):
        dialog_lens[i] = len(d["tokens"])
        for t, row in enumerate(d["tokens"]):
            tokens[i, t, : len(row)] = row
            utt_lens[i, t] = len(row)
            speakers[i, t] = d["speakers"][t]
            uid = d["utt_ids"][t]
            utt_ids[i, t] = uid
            lab = d["labels"][t]
            if lab >= 0 and labeled_ids is not None and uid in labeled_ids:
                labels[i, t] = lab
    return DialogBatch(tokens=tokens, utt_lens=utt_lens, dialog_lens=dialog_lens,
                       speakers=speakers, labels=labels, utt_ids=utt_ids)


def step_kl(q: np.ndarray, p: np.ndarray) -> float:
    """KL(q || p) with 0 log 0 = 0 and p clamped at 1e-10."""
    q = np.asarray(q, dtype=np.float64)
    p = np.maximum(np.asarray(p, dtype=np.float64), 1e-10)
    terms = np.where(q > 0, q * (np.log(np.maximum(q, 1e-300)) - np.log(p)), 0.0)
    return float(terms.sum())


def tfidf_weights(corpus: DialogCorpus, alpha: float, vocab: Vocabulary) -> np.ndarray:
    """Mixture of a uniform vector and normalized tf-idf weights; sums to 1.

    tf is the token's corpus frequency, idf = log(1 + D / df) with D the
    utterance count. Tokens absent from the corpus get zero tf-idf mass.
    """
    if not (0.0 <= alpha <= 1.0):
        raise ConfigError("alpha must lie in [0, 1]")
    n_vocab = len(vocab)
    if n_vocab == 0:
        raise ConfigError("empty vocabulary")
    counts = np.zeros(n_vocab, dtype=np.float64)
    doc_freq = np.zeros(n_vocab, dtype=np.float64)
    n_utts = 0
    for _, _, _, turn in corpus.iter_utterances():
        n_utts += 1
        ids = vocab.encode(turn.tokens)
        for i in ids:
            counts[i] += 1
        for i in set(ids):
            doc_freq[i] += 1
    if n_utts == 0:
        raise ConfigError("empty corpus")
    tf = counts / max(1.0, counts.sum())
    idf = np.where(doc_freq > 0, np.log(1.0 + n_utts / np.maximum(doc_freq, 1.0)), 0.0)
    raw = tf * idf
    total = raw.sum()
    w_prime = raw / total if total > 0 else np.full(n_vocab, 1.0 / n_vocab)
    return (1.0 - alpha) / n_vocab + alpha * w_prime


def _glorot(rng: np.random.Generator, n_in: int, n_out: int) -> np.ndarray:
    scale = np.sqrt(2.0 / (n_in + n_out))
    return rng.normal(0.0, scale, size=(n_in + 1, n_out))  # +1 row folds the bias


class DDVRNN:
    """The model: parameters plus graph builders for training and evaluation."""

    def __init__(self, cfg: ModelConfig, seed: int):
        self.cfg = cfg
        self.seed = seed
        self.store = ParameterStore()
        c = cfg
        specs = {
            "emb": (c.vocab_size, c.embed_dim),
            "enc_wz": (c.embed_dim + c.encoder_dim + 1, c.encoder_dim),
            "enc_wr": (c.embed_dim + c.encoder_dim + 1, c.encoder_dim),
            "enc_wh": (c.embed_dim + c.encoder_dim + 1, c.encoder_dim),
            "dial_wz": (c.encoder_dim + c.k_states + 1 + c.dialog_dim + 1, c.dialog_dim),
            "dial_wr": (c.encoder_dim + c.k_states + 1 + c.dialog_dim + 1, c.dialog_dim),
            "dial_wh": (c.encoder_dim + c.k_states + 1 + c.dialog_dim + 1, c.dialog_dim),
            "prior_w1": (c.k_states + 1, c.dialog_dim),
            "prior_w2": (c.dialog_dim + 1, c.k_states),
            "post_w1": (c.encoder_dim + c.dialog_dim + 1, c.dialog_dim),
            "post_w2": (c.dialog_dim + 1, c.k_states),
            "dec_init": (c.k_states + c.dialog_dim + 1, c.decoder_dim),
            "dec_wz": (c.embed_dim + c.decoder_dim + 1, c.decoder_dim),
            "dec_wr": (c.embed_dim + c.decoder_dim + 1, c.decoder_dim),
            "dec_wh": (c.embed_dim + c.decoder_dim + 1, c.decoder_dim),
            "dec_out": (c.decoder_dim + 1, c.vocab_size),
            "bow_w1": (c.k_states + c.dialog_dim + 1, c.bow_hidden_dim),
            "bow_w2": (c.bow_hidden_dim + 1, c.vocab_size),
        }
        for name, (rows_plus_bias, cols) in specs.items():
            g = stream(seed, "init", name)
            if name == "emb":
                self.store.add(name, g.normal(0.0, 0.1, size=(rows_plus_bias, cols)))
            else:
                self.store.add(name, _glorot(g, rows_plus_bias - 1, cols))
        self.store.add("prior_start", stream(seed, "init", "prior_start")
                       .normal(0.0, 0.1, size=(1, c.k_states)))

    # -- graph helpers ------------------------------------------------------

    def _affine(self, p: dict, name: str, x: ad.Node, ones: ad.Node) -> ad.Node:
        return ad.matmul(ad.concat([x, ones], axis=1), p[name])

    def _gru(self, p: dict, prefix: str, x: ad.Node, h: ad.Node,
             ones: ad.Node) -> ad.Node:
        xh = ad.concat([x, h, ones], axis=1)
        z = ad.sigmoid(ad.matmul(xh, p[prefix + "_wz"]))
        r = ad.sigmoid(ad.matmul(xh, p[prefix + "_wr"]))
        xrh = ad.concat([x, ad.mul(r, h), ones], axis=1)
        h_new = ad.tanh(ad.matmul(xrh, p[prefix + "_wh"]))
        return ad.add(ad.mul(ad.const(1.0) - z, h), ad.mul(z, h_new))

    def _masked(self, new: ad.Node, old: ad.Node, mask_rows: np.ndarray) -> ad.Node:
        m = ad.const(np.repeat(mask_rows[:, None], new.value.shape[1], axis=1))
        return ad.add(ad.mul(m, new), ad.mul(ad.const(1.0) - m, old))

    def _encode_rows(self, p: dict, tokens_flat: np.ndarray) -> ad.Node:
        """Run the utterance GRU over all rows at once; returns [rows, enc_dim]."""
        rows = tokens_flat.shape[0]
        ones = ad.const(np.ones((rows, 1)))
        h = ad.const(np.zeros((rows, self.cfg.encoder_dim)))
        for j in range(tokens_flat.shape[1]):
            ids = tokens_flat[:, j]
            x = ad.lookup(p["emb"], ids)
            h_new = self._gru(p, "enc", x, h, ones)
            h = self._masked(h_new, h, (ids != PAD_ID).astype(np.float64))
        return h

    def _prior(self, p: dict, z_prev: ad.Node, ones: ad.Node) -> ad.Node:
        hidden = ad.tanh(self._affine(p, "prior_w1", z_prev, ones))
        return ad.softmax(self._affine(p, "prior_w2", hidden, ones))

    def _posterior_logits(self, p: dict, enc: ad.Node, d_state: ad.Node,
                          ones: ad.Node) -> ad.Node:
        hidden = ad.tanh(self._affine(
            p, "post_w1", ad.concat([enc, d_state], axis=1), ones))
        return self._affine(p, "post_w2", hidden, ones)

    def _kl_rows(self, q: ad.Node, prior: ad.Node) -> ad.Node:
        logq = ad.log(ad.maxs(q, 1e-300))
        logp = ad.log(ad.maxs(prior, 1e-10))
        return ad.rsum(ad.mul(q, ad.sub(logq, logp)), axis=1)

    def _sample_state(self, q: ad.Node, gumbel: np.ndarray | None) -> ad.Node:
        if self.cfg.tau <= 0 or gumbel is None:
            return q
        logits = ad.log(ad.maxs(q, 1e-12)) + ad.const(gumbel)
        return ad.softmax(logits / self.cfg.tau)

    # -- public single-step operations (the unit-test surface) ---------------

    def _params(self) -> dict[str, ad.Node]:
        return {name: self.store.node(name) for name in self.store.names()}

    def encode_utterance(self, token_ids: list[int]) -> np.ndarray:
        ids = [i for i in token_ids if i != PAD_ID]
        if not ids:
            raise ConfigError("cannot encode an empty (all-padding) utterance")
        p = self._params()
        h = self._encode_rows(p, np.asarray([ids], dtype=np.int64))
        return h.value[0].copy()

    def prior_step(self, z_prev: np.ndarray) -> np.ndarray:
        p = self._params()
        ones = ad.const(np.ones((1, 1)))
        z = ad.const(np.asarray(z_prev, dtype=np.float64)[None, :])
        return self._prior(p, z, ones).value[0].copy()

    def start_state(self) -> np.ndarray:
        return ad.softmax(self.store.node("prior_start")).value[0].copy()

    def posterior_step(self, utt_vec: np.ndarray, dialog_state: np.ndarray) -> np.ndarray:
        p = self._params()
        ones = ad.const(np.ones((1, 1)))
        enc = ad.const(np.asarray(utt_vec, dtype=np.float64)[None, :])
        d = ad.const(np.asarray(dialog_state, dtype=np.float64)[None, :])
        return ad.softmax(self._posterior_logits(p, enc, d, ones)).value[0].copy()

    def reconstruction_nll(self, z: np.ndarray, dialog_state: np.ndarray,
                           target_ids: list[int]) -> float:
        if not target_ids:
            raise ConfigError("cannot score an empty target utterance")
        batch = DialogBatch(
            tokens=np.asarray([[list(target_ids)]], dtype=np.int64),
            utt_lens=np.asarray([[len(target_ids)]]),
            dialog_lens=np.asarray([1]),
            speakers=np.zeros((1, 1), dtype=np.int64),
            labels=np.full((1, 1), -1, dtype=np.int64),
            utt_ids=np.asarray([[0]]),
        )
        p = self._params()
        ctx = ad.concat([ad.const(np.asarray(z)[None, :]),
                         ad.const(np.asarray(dialog_state)[None, :])], axis=1)
        ones = ad.const(np.ones((1, 1)))
        recon_rows = self._decode_rows(p, ctx, batch.tokens.reshape(1, -1), ones)
        return float(recon_rows.value[0])

    def bow_nll(self, z: np.ndarray, dialog_state: np.ndarray,
                target_ids: list[int], weights: np.ndarray) -> float:
        p = self._params()
        ctx = ad.concat([ad.const(np.asarray(z)[None, :]),
                         ad.const(np.asarray(dialog_state)[None, :])], axis=1)
        ones = ad.const(np.ones((1, 1)))
        targets = np.full((1, max(1, len(target_ids))), PAD_ID, dtype=np.int64)
        targets[0, : len(target_ids)] = target_ids
        bow_rows = self._bow_rows(p, ctx, targets, np.asarray(weights), ones)
        return float(bow_rows.value[0])

    # -- decoding helpers ----------------------------------------------------

    def _decode_rows(self, p: dict, ctx: ad.Node, targets: np.ndarray,
                     ones: ad.Node) -> ad.Node:
        """Mean token NLL per row (zero for all-pad rows); teacher forced."""
        rows, length = targets.shape
        v = self.cfg.vocab_size
        dec_in = np.concatenate(
            [np.full((rows, 1), BOS_ID, dtype=np.int64), targets[:, :-1]], axis=1)
        dec_in[targets == PAD_ID] = PAD_ID
        s = ad.tanh(self._affine(p, "dec_init", ctx, ones))
        nll_rows = None
        for j in range(length):
            x = ad.lookup(p["emb"], dec_in[:, j])
            s = self._gru(p, "dec", x, s, ones)
            logits = self._affine(p, "dec_out", s, ones)
            probs = ad.softmax(logits)
            onehot = np.zeros((rows, v))
            valid = targets[:, j] != PAD_ID
            onehot[np.nonzero(valid)[0], targets[valid, j]] = 1.0
            p_tgt = ad.rsum(ad.mul(probs, ad.const(onehot)), axis=1)
            # pad rows get p_tgt = 0; shift them to 1 so log contributes 0
            shifted = ad.add(p_tgt, ad.const((~valid).astype(np.float64)))
            term = -ad.log(ad.maxs(shifted, 1e-12))
            nll_rows = term if nll_rows is None else ad.add(nll_rows, term)
        counts = (targets != PAD_ID).sum(axis=1)
        inv = np.where(counts > 0, 1.0 / np.maximum(counts, 1), 0.0)
        return ad.mul(nll_rows, ad.const(inv))

    def _bow_rows(self, p: dict, ctx: ad.Node, targets: np.ndarray,
                  weights: np.ndarray, ones: ad.Node) -> ad.Node:
        """Weighted bag-of-words NLL per row, normalized by total target weight."""
        rows = targets.shape[0]
        v = self.cfg.vocab_size
        hidden = ad.tanh(self._affine(p, "bow_w1", ctx, ones))
        f = self._affine(p, "bow_w2", hidden, ones)
        shift = f.value.max(axis=1)  # exact identity for any constant shift
        z = ad.exp(ad.sub(f, ad.const(np.repeat(shift[:, None], v, axis=1))))
        lse = ad.add(ad.log(ad.rsum(z, axis=1)), ad.const(shift))
        wmask = np.zeros((rows, v))
        for j in range(targets.shape[1]):
            valid = targets[:, j] != PAD_ID
            idx = np.nonzero(valid)[0]
            np.add.at(wmask, (idx, targets[valid, j]), weights[targets[valid, j]])
        wsum = wmask.sum(axis=1)
        inv = np.where(wsum > 0, 1.0 / np.maximum(wsum, 1e-300), 0.0)
        hit = ad.rsum(ad.mul(f, ad.const(wmask)), axis=1)
        total = ad.sub(ad.mul(lse, ad.const(wsum)), hit)
        return ad.mul(total, ad.const(inv))

    # -- full batch objective -------------------------------------------------

    def build_batch_graph(self, batch: DialogBatch,
                          groundings: list | None = None,
                          logic_cfg: LogicConfig | None = None,
                          bow_weights: np.ndarray | None = None,
                          utt_row_map: dict[int, int] | None = None,
                          gumbel_rng: np.random.Generator | None = None,
                          want_reconstruction: bool = True) -> BatchGraph:
        """Compose the joint objective for one batch of dialogs.

        Row layout is turn-major. ``groundings`` reference global utterance
        ids; ``utt_row_map`` translates those to batch rows. When
        ``want_reconstruction`` is false only the posterior pass runs (enough
        for prediction and probing).
        """
        cfg = self.cfg
        b, t_max = batch.size, batch.max_turns
        p = self._params()
        ones_b = ad.const(np.ones((b, 1)))

        tokens_flat = batch.tokens.transpose(1, 0, 2).reshape(t_max * b, -1)
        enc_all = self._encode_rows(p, tokens_flat)

        turn_mask = (np.arange(t_max)[None, :] < batch.dialog_lens[:, None])
        z0 = ad.matmul(ones_b, ad.softmax(p["prior_start"]))
        d_state = ad.const(np.zeros((b, cfg.dialog_dim)))
        z_prev = z0
        kl_total = None
        q_nodes, ctx_nodes, feat_rows = [], [], []
        for t in range(t_max):
            mask_rows = turn_mask[:, t].astype(np.float64)
            enc_t = ad.lookup(enc_all, np.arange(b) + t * b)
            prior_t = self._prior(p, z_prev, ones_b)
            post_logits = self._posterior_logits(p, enc_t, d_state, ones_b)
            q_t = ad.softmax(post_logits)
            if cfg.kl_mode == "batch_prior":
                # one KL per turn between batch-averaged posterior and prior;
                # individual posteriors stay free to commit to a state
                avg = ad.const((mask_rows / mask_rows.sum())[None, :])
                kl_t = ad.rsum(self._kl_rows(
                    ad.matmul(avg, q_t), ad.matmul(avg, prior_t)))
            else:
                kl_t = ad.rsum(ad.mul(self._kl_rows(q_t, prior_t),
                                      ad.const(mask_rows)))
            kl_total = kl_t if kl_total is None else ad.add(kl_total, kl_t)

            gumbel = None
            if cfg.tau > 0 and gumbel_rng is not None:
                u = gumbel_rng.random((b, cfg.k_states))
                gumbel = -np.log(-np.log(np.clip(u, 1e-12, 1.0 - 1e-12)))
            z_t = self._sample_state(q_t, gumbel)

            ctx_nodes.append(ad.concat([z_t, d_state], axis=1))
            q_nodes.append(q_t)
            feat_rows.append(np.concatenate(
                [post_logits.value, d_state.value], axis=1))

            spk = ad.const(batch.speakers[:, t].astype(np.float64)[:, None])
            d_in = ad.concat([enc_t, z_t, spk], axis=1)
            d_new = self._gru(p, "dial", d_in, d_state, ones_b)
            d_state = self._masked(d_new, d_state, mask_rows)
            z_prev = self._masked(z_t, z_prev, mask_rows)

        decisions = ad.concat(q_nodes, axis=0)                # [B*T, K]
        kl_node = kl_total if cfg.kl_mode == "batch_prior" else kl_total / float(b)
        features = np.concatenate(feat_rows, axis=0)

        zero = ad.const(0.0)
        recon_node = bow_node = zero
        if want_reconstruction:
            ctx_all = ad.concat(ctx_nodes, axis=0)
            ones_rows = ad.const(np.ones((t_max * b, 1)))
            recon_rows = self._decode_rows(p, ctx_all, tokens_flat, ones_rows)
            recon_node = ad.rsum(recon_rows) / float(b)
            w = bow_weights
            if w is None:
                w = np.full(cfg.vocab_size, 1.0 / cfg.vocab_size)
            bow_rows = self._bow_rows(p, ctx_all, tokens_flat, w, ones_rows)
            bow_node = ad.rsum(bow_rows) / float(b)

        labels_flat = batch.labels.transpose(1, 0).reshape(-1)
        n_labeled = int((labels_flat >= 0).sum())
        if n_labeled > 0:
            onehot = np.zeros((t_max * b, cfg.k_states))
            lab_rows = np.nonzero(labels_flat >= 0)[0]
            onehot[lab_rows, labels_flat[lab_rows]] = 1.0
            p_lab = ad.rsum(ad.mul(decisions, ad.const(onehot)), axis=1)
            shifted = ad.add(p_lab, ad.const((labels_flat < 0).astype(np.float64)))
            ce_node = ad.rsum(-ad.log(ad.maxs(shifted, 1e-12))) / float(n_labeled)
        else:
            ce_node = zero

        truth_values = np.zeros(0)
        constraint_node = zero
        if groundings:
            remapped = _remap_groundings(groundings, utt_row_map)
            groups = batch_rule_truths(remapped, decisions, logic_cfg or LogicConfig())
            constraint_node = constraint_loss_vec(groups, logic_cfg or LogicConfig())
            truth_values = np.concatenate([t.value for t, _ in groups])

        total = ad.add(
            ad.add(ad.add(recon_node, kl_node), ad.mul(ad.const(cfg.lambda_bow), bow_node)),
            ad.add(ce_node, constraint_node))

        breakdown = LossBreakdown(
            reconstruction=float(recon_node.value),
            kl=float(kl_node.value),
            bow=float(bow_node.value),
            supervised=float(ce_node.value),
            constraint=float(constraint_node.value),
            total=float(total.value),
        )
        for name, val in breakdown.to_dict().items():
            if not np.isfinite(val):
                raise NumericError(f"non-finite loss component '{name}': {breakdown}")
        return BatchGraph(total=total, breakdown=breakdown,
                          decisions=decisions.value.copy(), features=features,
                          constraint_truths=truth_values)


def _remap_groundings(groundings: list, utt_row_map: dict[int, int] | None) -> list:
    if utt_row_map is None:
        return groundings
    from .rules import GroundLiteral, GroundRule

    out = []
    for g in groundings:
        def remap(lit: GroundLiteral) -> GroundLiteral:
            if lit.ref is None:
                return lit
            return GroundLiteral(negated=lit.negated,
                                 ref=(utt_row_map[lit.ref[0]], lit.ref[1]))
        out.append(GroundRule(
            template_index=g.template_index, weight=g.weight,
            substitution=g.substitution, body=[remap(l) for l in g.body],
            head=[remap(l) for l in g.head], dialog=g.dialog))
    return out
