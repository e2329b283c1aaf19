"""The group-decoder autoencoder with auxiliary classifier.

One shared encoder feeds M section-specific decoders (reconstruction
task) and a single linear classification head over the bottleneck
(section-classification task). The two losses are mixed adaptively:
per-decoder weights proportional to each decoder's own loss, and a
harmonic-style total that balances reconstruction against
classification. All mixing coefficients are treated as constants during
differentiation unless differentiable_weights is requested.

M = 1 builds the plain-autoencoder ablation: a single decoder and no
classification head.
"""

from dataclasses import dataclass

import numpy as np

from . import nn
from ._binio import read_container, split_blocks, write_container
from .errors import BadSection, MissingSection, ShapeMismatch

CKPT_MAGIC = b"AEGMCKPT"
CKPT_VERSION = 1


@dataclass(frozen=True)
class AegmConfig:
    input_dim: int
    encoder_layers: tuple = (128, 128, 128, 128)
    bottleneck_dim: int = 8
    num_sections: int = 3
    use_batch_norm: bool = True

    def __post_init__(self):
        object.__setattr__(self, "encoder_layers", tuple(int(w) for w in self.encoder_layers))
        if self.num_sections < 1:
            raise ValueError("num_sections must be >= 1")
        if self.bottleneck_dim >= self.input_dim:
            raise ValueError("bottleneck_dim must be smaller than input_dim")

    @property
    def has_classifier(self):
        # The classification head needs at least two sections to separate;
        # num_sections == 1 is the plain-AE ablation.
        return self.num_sections >= 2


@dataclass
class GroupedBatch:
    """One training batch: feature rows plus their section routing."""

    rows: np.ndarray
    section_ids: np.ndarray

    def __post_init__(self):
        self.rows = np.asarray(self.rows)
        self.section_ids = np.asarray(self.section_ids, dtype=np.int64)
        if self.rows.shape[0] != self.section_ids.shape[0]:
            raise ShapeMismatch("rows and section_ids lengths differ")

    def one_hot(self, num_sections, dtype):
        out = np.zeros((len(self.section_ids), num_sections), dtype=dtype)
        out[np.arange(len(self.section_ids)), self.section_ids] = 1
        return out


@dataclass
class LossBreakdown:
    l_aux: float
    l_rec_per_decoder: list
    weights: list
    l_rec: float
    l_total: float

    def all_finite(self):
        vals = [self.l_aux, self.l_rec, self.l_total] + list(self.l_rec_per_decoder)
        return bool(np.isfinite(vals).all())


def adaptive_weights(l_rec_per_decoder):
    """Per-decoder weights: each loss's share of the summed losses.

    Zero-loss (or empty-section) decoders get weight 0; if every loss is
    zero there is nothing to weight and all weights are 0.
    """
    losses = np.asarray(l_rec_per_decoder, dtype=np.float64)
    total = losses.sum()
    if total <= 0.0:
        return np.zeros_like(losses)
    with np.errstate(invalid="ignore"):  # inf losses propagate as nan weights
        return losses / total


def combine_total(l_rec, l_aux):
    """Mix the two task losses; returns (l_total, alpha, beta) with
    l_total = alpha * l_rec + beta * l_aux and alpha, beta the cross
    proportions (so l_total = 2ab/(a+b) when both are positive).
    """
    s = l_rec + l_aux
    if s <= 0.0:
        return 0.0, 0.0, 0.0
    alpha = l_aux / s
    beta = l_rec / s
    return alpha * l_rec + beta * l_aux, alpha, beta


class AegmModel:
    def __init__(self, cfg, seed=0, dtype=np.float32):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        ss = np.random.SeedSequence([0x0AE6, int(seed)])
        n_dec_layers = len(cfg.encoder_layers) + 1
        n_layers = (len(cfg.encoder_layers) + 1) + cfg.num_sections * n_dec_layers + 1
        children = ss.spawn(n_layers)
        next_rng = iter(np.random.default_rng(c) for c in children).__next__

        bn = cfg.use_batch_norm
        enc_dims = [cfg.input_dim, *cfg.encoder_layers, cfg.bottleneck_dim]
        self.encoder = nn.Mlp([
            nn.DenseLayer(enc_dims[i], enc_dims[i + 1], activation="relu",
                          batch_norm=bn, rng=next_rng(), dtype=dtype)
            for i in range(len(enc_dims) - 1)
        ])
        dec_dims = enc_dims[::-1]
        self.decoders = []
        for _j in range(cfg.num_sections):
            layers = []
            for i in range(len(dec_dims) - 1):
                last = i == len(dec_dims) - 2
                layers.append(nn.DenseLayer(
                    dec_dims[i], dec_dims[i + 1],
                    activation="identity" if last else "relu",
                    batch_norm=bn and not last,
                    rng=next_rng(), dtype=dtype))
            self.decoders.append(nn.Mlp(layers))
        if cfg.has_classifier:
            self.classifier = nn.DenseLayer(
                cfg.bottleneck_dim, cfg.num_sections,
                activation="identity", batch_norm=False,
                rng=next_rng(), dtype=dtype)
        else:
            self.classifier = None

    # --- parameter bookkeeping -------------------------------------

    def _named_layers(self):
        for i, layer in enumerate(self.encoder.layers):
            yield f"enc.{i}", layer
        for j, dec in enumerate(self.decoders):
            for i, layer in enumerate(dec.layers):
                yield f"dec.{j}.{i}", layer
        if self.classifier is not None:
            yield "clf", self.classifier

    def parameters(self):
        """Trainable (name, array) pairs in declaration order."""
        out = []
        for prefix, layer in self._named_layers():
            out += [(f"{prefix}.{k}", arr) for k, arr in layer.params()]
        return out

    def buffers(self):
        """Non-trainable state (BN running stats)."""
        out = []
        for prefix, layer in self._named_layers():
            out += [(f"{prefix}.{k}", arr) for k, arr in layer.buffers()]
        return out

    def gae_parameters(self):
        return [(n, p) for n, p in self.parameters() if not n.startswith("clf.")]

    def classifier_parameters(self):
        return [(n, p) for n, p in self.parameters() if n.startswith("clf.")]

    def zero_grads(self):
        return {name: np.zeros_like(p) for name, p in self.parameters()}

    # --- forward pieces ---------------------------------------------

    def encode(self, rows, train=False, update_stats=True):
        """Bottleneck embeddings for a batch of feature rows."""
        z, caches = self.encoder.forward(np.asarray(rows, dtype=self.dtype),
                                         train=train, update_stats=update_stats)
        return (z, caches) if train else z

    def decode_group(self, embeddings, section):
        """Route embeddings through one section's decoder (eval mode)."""
        self._check_section(section)
        recon, _ = self.decoders[section].forward(np.asarray(embeddings, dtype=self.dtype))
        return recon

    def classifier_logits(self, embeddings):
        if self.classifier is None:
            raise BadSection("model was built without a classification head")
        logits, _ = self.classifier.forward(np.asarray(embeddings, dtype=self.dtype))
        return logits

    def classifier_probs(self, embeddings):
        """Softmax section probabilities, entries clipped away from {0, 1}."""
        p = nn.softmax(self.classifier_logits(embeddings))
        return np.clip(p, nn.PROB_CLIP, 1.0 - nn.PROB_CLIP)

    def _check_section(self, section):
        if not (0 <= section < self.cfg.num_sections):
            raise BadSection(f"section {section} outside [0, {self.cfg.num_sections})")

    # --- losses and gradients ----------------------------------------

    def _forward_pass(self, batch, train, update_stats):
        rows = np.asarray(batch.rows, dtype=self.dtype)
        if rows.shape[1] != self.cfg.input_dim:
            raise ShapeMismatch(f"batch dim {rows.shape[1]} != model input {self.cfg.input_dim}")
        m = self.cfg.num_sections
        if batch.section_ids.min(initial=0) < 0 or batch.section_ids.max(initial=0) >= m:
            raise BadSection("section id outside [0, M) in batch")

        z, enc_caches = self.encoder.forward(rows, train=train, update_stats=update_stats)

        per_section = []
        l_rec = np.zeros(m, dtype=np.float64)
        for j in range(m):
            idx = np.nonzero(batch.section_ids == j)[0]
            if len(idx) == 0:
                per_section.append(None)
                continue
            recon, caches = self.decoders[j].forward(z[idx], train=train,
                                                     update_stats=update_stats)
            loss_j, dunit = nn.mse_loss(recon, rows[idx], reduction="mean")
            l_rec[j] = loss_j
            per_section.append((idx, caches, dunit))

        if self.classifier is not None:
            logits, clf_cache = self.classifier.forward(z, train=train,
                                                        update_stats=update_stats)
            l_aux, dlogits = nn.softmax_cross_entropy(
                logits, batch.one_hot(m, self.dtype))
        else:
            l_aux, dlogits, clf_cache = 0.0, None, None

        return rows, z, enc_caches, per_section, l_rec, l_aux, dlogits, clf_cache

    def loss_value(self, batch, train=True, frozen_mix=None, update_stats=False):
        """Scalar total loss; frozen_mix = (weights, alpha, beta) evaluates
        the loss with those mixing coefficients held fixed (the function a
        detached-gradient check differentiates)."""
        *_head, l_rec_j, l_aux, _dl, _cc = self._forward_pass(batch, train, update_stats)
        if self.classifier is None:
            if frozen_mix is not None:
                w, _, _ = frozen_mix
                return float(np.dot(w, l_rec_j))
            return float(adaptive_weights(l_rec_j) @ l_rec_j)
        if frozen_mix is not None:
            w, alpha, beta = frozen_mix
            return float(alpha * np.dot(w, l_rec_j) + beta * l_aux)
        weights = adaptive_weights(l_rec_j)
        total, _, _ = combine_total(float(weights @ l_rec_j), l_aux)
        return total

    def compute_losses(self, batch, train=True, update_stats=True,
                       differentiable_weights=False, with_grads=True):
        """Joint loss of one batch; returns (LossBreakdown, grads dict).

        Empty sections contribute zero loss and zero weight. Gradients
        flow to each decoder only from its own section's rows and to the
        classification head only from the classification loss; the
        encoder accumulates both tasks.
        """
        rows, z, enc_caches, per_section, l_rec_j, l_aux, dlogits, clf_cache = \
            self._forward_pass(batch, train, update_stats)

        weights = adaptive_weights(l_rec_j)
        l_rec = float(weights @ l_rec_j)
        if self.classifier is not None:
            l_total, alpha, beta = combine_total(l_rec, l_aux)
        else:
            l_total, alpha, beta = l_rec, 1.0, 0.0

        breakdown = LossBreakdown(
            l_aux=float(l_aux),
            l_rec_per_decoder=[float(v) for v in l_rec_j],
            weights=[float(w) for w in weights],
            l_rec=l_rec,
            l_total=float(l_total),
        )
        if not with_grads:
            return breakdown, None

        # Scalar chain coefficients: dL_total/dL_rec_j and dL_total/dL_aux.
        if differentiable_weights:
            s_tot = l_rec + l_aux
            if s_tot > 0.0:
                d_total_d_lrec = 2.0 * l_aux * l_aux / (s_tot * s_tot) if self.classifier is not None else 1.0
                d_total_d_laux = 2.0 * l_rec * l_rec / (s_tot * s_tot)
            else:
                d_total_d_lrec = d_total_d_laux = 0.0
            w_sq = float(weights @ weights)
            coef_rec = d_total_d_lrec * (2.0 * weights - w_sq)
            coef_aux = d_total_d_laux
        else:
            coef_rec = alpha * weights
            coef_aux = beta

        grads = {}
        dz = np.zeros_like(z)
        for j, entry in enumerate(per_section):
            if entry is None:
                # empty section: the decoder still reports (zero) gradients
                for i, layer in enumerate(self.decoders[j].layers):
                    for k, p in layer.params():
                        grads[f"dec.{j}.{i}.{k}"] = np.zeros_like(p)
                continue
            idx, caches, dunit = entry
            c = coef_rec[j]
            drecon = (c * dunit).astype(self.dtype, copy=False)
            dz_j, dec_grads = self.decoders[j].backward(caches, drecon)
            dz[idx] += dz_j
            for i, layer_grads in enumerate(dec_grads):
                for k, g in layer_grads.items():
                    grads[f"dec.{j}.{i}.{k}"] = g
        if self.classifier is not None:
            dlog = (coef_aux * dlogits).astype(self.dtype, copy=False)
            dz_clf, clf_grads = self.classifier.backward(clf_cache, dlog)
            dz += dz_clf
            for k, g in clf_grads.items():
                grads[f"clf.{k}"] = g
        _, enc_grads = self.encoder.backward(enc_caches, dz)
        for i, layer_grads in enumerate(enc_grads):
            for k, g in layer_grads.items():
                grads[f"enc.{i}.{k}"] = g
        return breakdown, grads


# --- checkpoint container -------------------------------------------


def _layer_spec(layer):
    return {"in": layer.in_dim, "out": layer.out_dim,
            "activation": layer.activation, "bn": layer.bn is not None}


def save_checkpoint(path, model, feature_config_hash="", seed=0, epoch=0,
                    section_map=None):
    """Serialize model parameters and BN stats as an AEGMCKPT container."""
    cfg = model.cfg
    header = {
        "config": {
            "input_dim": cfg.input_dim,
            "encoder_layers": list(cfg.encoder_layers),
            "bottleneck_dim": cfg.bottleneck_dim,
            "num_sections": cfg.num_sections,
            "use_batch_norm": cfg.use_batch_norm,
        },
        "layers": [{"name": name, **_layer_spec(layer)}
                   for name, layer in model._named_layers()],
        "num_sections": cfg.num_sections,
        "section_map": section_map or {},
        "feature_config_hash": feature_config_hash,
        "seed": int(seed),
        "epoch": int(epoch),
        "dtype": "float32",
    }
    blocks = []
    for _name, layer in model._named_layers():
        blocks.append(layer.W)
        blocks.append(layer.b)
        if layer.bn is not None:
            blocks += [layer.bn.gamma, layer.bn.beta,
                       layer.bn.running_mean, layer.bn.running_var]
    write_container(path, CKPT_MAGIC, CKPT_VERSION, header, blocks)


def load_checkpoint(path, dtype=np.float32):
    """Rebuild an AegmModel from an AEGMCKPT container; returns (model, header)."""
    _version, header, raw = read_container(path, CKPT_MAGIC)
    c = header["config"]
    cfg = AegmConfig(input_dim=c["input_dim"],
                     encoder_layers=tuple(c["encoder_layers"]),
                     bottleneck_dim=c["bottleneck_dim"],
                     num_sections=c["num_sections"],
                     use_batch_norm=c["use_batch_norm"])
    model = AegmModel(cfg, seed=header.get("seed", 0), dtype=dtype)
    shapes = []
    for _name, layer in model._named_layers():
        shapes.append(layer.W.shape)
        shapes.append(layer.b.shape)
        if layer.bn is not None:
            shapes += [layer.bn.gamma.shape, layer.bn.beta.shape,
                       layer.bn.running_mean.shape, layer.bn.running_var.shape]
    blocks = iter(split_blocks(raw, shapes, path=str(path)))
    for _name, layer in model._named_layers():
        layer.W = next(blocks).astype(dtype)
        layer.b = next(blocks).astype(dtype)
        if layer.bn is not None:
            layer.bn.gamma = next(blocks).astype(dtype)
            layer.bn.beta = next(blocks).astype(dtype)
            layer.bn.running_mean = next(blocks).astype(dtype)
            layer.bn.running_var = next(blocks).astype(dtype)
    return model, header


def validate_sections_present(section_ids, num_sections):
    """Raise MissingSection unless every section in [0, M) appears."""
    present = set(int(s) for s in np.unique(section_ids))
    expected = set(range(num_sections))
    missing = expected - present
    if missing:
        raise MissingSection(f"dataset lacks sections {sorted(missing)} of 0..{num_sections - 1}")
