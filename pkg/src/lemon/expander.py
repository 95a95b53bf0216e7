"""Whole-model width and depth expansion.

Width expansion replicates neurons and attention heads circularly and
splits their fan-out weights according to a policy; norm layers get the
gain-corrected parameter expansion; embeddings and the decoder are
expanded so the target model reproduces the source model's logits on
every input.  Depth expansion inserts blocks immediately after the
block they copy, built so that their contribution to the residual
stream is exactly zero at initialization.

Fan-out policies
----------------
``lemon``          equal split plus zero-sum noise, so replicated units
                   carry pairwise-distinct fan-out (symmetry broken).
``net2net_equal``  all replicas share the identical equal split; the
                   replicas stay exactly interchangeable.
``zero_tail``      the first copy keeps the whole fan-out, later copies
                   get zeros.

Depth modes
-----------
``type1``  the inserted block's output projections (attention output
           and second MLP layer, plus their biases) are zeroed.
``type2``  the inserted block keeps nonzero output projections arranged
           as cancelling ± pairs over replicated units.  The pairs are
           laid out so every output element sees exactly one ± pair,
           which makes the cancellation exact in floating point, not
           just in exact arithmetic.

Per-style stream conventions: pre-norm and post-norm streams carry
average-expanded activations, the post-residual-norm and RMS styles
carry zero-expanded activations.  Post-norm (``post_ln``) supports
divisible widths only and grows depth through a dedicated block chain;
the residual-norm style inserts blocks whose norm weights are all
zero.  All randomness comes from per-role counter-based substreams of
the plan seed, so expansion is bitwise reproducible and per-block work
could run in parallel without changing the result.

Expansion arithmetic runs in float64; float32 models are promoted on
the way in and cast back on the way out.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PlanError
from .expand_ops import (ColumnSplit, expand_bias, expand_layernorm,
                         expand_matrix_cols, expand_matrix_rows,
                         expand_rmsnorm, expand_vector)
from .model import (AttentionWeights, BlockWeights, EmbeddingWeights,
                    HeadWeights, MlpWeights, ModelSpec, ModelWeights,
                    NormParams, spec_with, validate_weights)
from .rng import substream

POLICIES = ("lemon", "net2net_equal", "zero_tail")
DEPTH_MODES = ("type1", "type2")
DEPTH_SOURCES = ("self", "next")

#: replicated fan-out entries under the lemon policy must differ by more
#: than this fraction of the noise scale (enforced by redraw)
MIN_SEPARATION = 1e-6

DEFAULT_NOISE_SCALE = 0.02


@dataclass(frozen=True)
class ExpansionPlan:
    """Source-to-target expansion request.

    ``depth_source`` selects where inserted blocks copy their non-output
    weights from: the block they follow (``self``, default) or the next
    block over (``next``), which seeds the new block with the upcoming
    layer's features instead of repeating the previous ones.  Norm-layer
    tails are drawn uniform on (-1, 1) and matrix split noise is
    N(0, noise_scale^2).
    """

    target_width: int
    target_depth: int
    policy: str = "lemon"
    depth_mode: str = "type1"
    seed: int = 0
    noise_scale: float = DEFAULT_NOISE_SCALE
    depth_source: str = "self"

    def validate(self, spec: ModelSpec) -> "ExpansionPlan":
        if self.policy not in POLICIES:
            raise PlanError(f"unknown policy {self.policy!r}")
        if self.depth_mode not in DEPTH_MODES:
            raise PlanError(f"unknown depth_mode {self.depth_mode!r}")
        if self.depth_source not in DEPTH_SOURCES:
            raise PlanError(f"unknown depth_source {self.depth_source!r}")
        if not 0 < self.noise_scale:
            raise PlanError("noise_scale must be positive")
        if self.seed < 0 or self.seed > 0xFFFFFFFFFFFFFFFF:
            raise PlanError("seed must fit in 64 unsigned bits")
        if self.target_width < spec.width:
            raise PlanError(f"target width {self.target_width} below source {spec.width}")
        if self.target_depth < spec.depth:
            raise PlanError(f"target depth {self.target_depth} below source {spec.depth}")
        if self.target_width % spec.head_dim != 0:
            raise PlanError(f"target width {self.target_width} not a multiple of "
                            f"head_dim {spec.head_dim} (head dimension is preserved)")
        if spec.norm_style == "post_ln" and self.target_width % spec.width != 0:
            raise PlanError("post_ln models support divisible width expansion only")
        if spec.depth == 0 and self.target_depth > 0:
            raise PlanError("cannot grow depth of a zero-depth model")
        return self


# ---------------------------------------------------------------------------
# policy-driven column splits


def _zero_sum_noise(rng: np.random.Generator, shape: tuple[int, ...], count: int,
                    scale: float) -> list[np.ndarray]:
    """``count`` noise blocks summing to zero, pairwise separated entries."""
    for _ in range(64):
        draws = [rng.normal(0.0, scale, size=shape) for _ in range(count - 1)]
        draws.append(-sum(draws))
        sep = min(np.abs(a - b).max() for i, a in enumerate(draws)
                  for b in draws[i + 1:])
        if sep > MIN_SEPARATION * scale:
            return draws
    raise PlanError("could not draw separated split noise")  # pragma: no cover


def column_split(m: np.ndarray, d_t: int, mode: str, policy: str,
                 rng: np.random.Generator, noise_scale: float) -> ColumnSplit:
    """Draw the per-copy parts for a column expansion of ``m``.

    The parts always satisfy the sum constraints of
    :func:`lemon.expand_ops.expand_matrix_cols`; the policy only decides
    how the total is distributed between replicas (and what fills the
    free ``rand`` tail).
    """
    if policy not in POLICIES:
        raise PlanError(f"unknown policy {policy!r}")
    m = np.asarray(m)
    p, d_s = m.shape
    k, r = d_t // d_s, d_t % d_s
    empty = np.zeros((p, 0), dtype=m.dtype)
    if k == 1 and r == 0:
        return ColumnSplit.identity(m)

    if mode == "rand":
        if k == 1:
            parts = [m.copy()]
        elif policy == "net2net_equal":
            base = m / k
            parts = [base.copy() for _ in range(k)]
        elif policy == "zero_tail":
            parts = [m.copy()] + [np.zeros_like(m) for _ in range(k - 1)]
        else:  # lemon
            noise = _zero_sum_noise(rng, m.shape, k, noise_scale)
            parts = [m / k + n for n in noise[:-1]]
            parts.append(m - sum(parts))
        if r == 0:
            tail = empty
        elif policy == "lemon":
            tail = rng.normal(0.0, noise_scale, size=(p, r))
        elif policy == "zero_tail":
            tail = np.zeros((p, r), dtype=m.dtype)
        else:
            tail = m[:, :r].copy()  # circular wrap keeps replicas identical
        return ColumnSplit(parts=[np.asarray(q, dtype=m.dtype) for q in parts],
                           tail=np.asarray(tail, dtype=m.dtype))

    if mode != "circ":
        raise PlanError(f"unknown column mode {mode!r}")
    parts = [np.zeros_like(m) for _ in range(k)]
    residual = np.zeros((p, r), dtype=m.dtype)
    for z in range(d_s):
        copies = k + (1 if z < r else 0)
        col = m[:, z]
        if copies == 1:
            parts[0][:, z] = col
            continue
        if policy == "net2net_equal":
            share = col / copies
            blocks = [share.copy() for _ in range(copies)]
        elif policy == "zero_tail":
            blocks = [col.copy()] + [np.zeros_like(col) for _ in range(copies - 1)]
        else:  # lemon: equal base + zero-sum noise, last copy closes the sum
            noise = _zero_sum_noise(rng, col.shape, copies, noise_scale)
            blocks = [col / copies + n for n in noise[:-1]]
            blocks.append(col - sum(blocks))
        for i in range(k):
            parts[i][:, z] = blocks[i]
        if z < r:
            residual[:, z] = blocks[k]
    return ColumnSplit(parts=parts, tail=None, residual=residual)


# ---------------------------------------------------------------------------
# width expansion of individual layers


def _row_expanded_cols(m: np.ndarray, d_rows: int, row_mode: str, d_cols: int,
                       policy: str, rng: np.random.Generator,
                       noise_scale: float) -> np.ndarray:
    """Row expansion followed by a policy-driven circular column split."""
    grown = expand_matrix_rows(m, d_rows, row_mode)
    split = column_split(grown, d_cols, "circ", policy, rng, noise_scale)
    return expand_matrix_cols(grown, d_cols, "circ", split)


def _expand_head(head: HeadWeights, d_t: int, policy: str,
                 rng: np.random.Generator, noise_scale: float) -> HeadWeights:
    """Expand one head's input dimension; its biases and output dim stay."""
    def grow(w: np.ndarray) -> np.ndarray:
        wt = np.ascontiguousarray(w.T)
        split = column_split(wt, d_t, "rand", policy, rng, noise_scale)
        return np.ascontiguousarray(expand_matrix_cols(wt, d_t, "rand", split).T)

    return HeadWeights(grow(head.wq), grow(head.wk), grow(head.wv),
                       head.bq.copy(), head.bk.copy(), head.bv.copy())


def expand_mha(attn: AttentionWeights, spec: ModelSpec, d_t: int, policy: str,
               rng: np.random.Generator, noise_scale: float,
               row_mode: str = "avg") -> AttentionWeights:
    """Expand attention weights to width ``d_t``.

    Heads replicate circularly (head dimension unchanged), each replica
    drawing its own input-dimension split so replicas are distinguishable
    under the lemon policy.  The output projection expands rows with
    ``row_mode`` and columns with a policy-driven circular split, making
    the whole module map zero-expanded inputs to ``row_mode``-expanded
    outputs exactly as the source module maps the originals.
    """
    h_t = d_t // spec.head_dim
    heads = [_expand_head(attn.heads[m % spec.n_heads], d_t, policy, rng, noise_scale)
             for m in range(h_t)]
    wo_t = np.ascontiguousarray(
        _row_expanded_cols(np.ascontiguousarray(attn.wo.T), d_t, row_mode,
                           d_t, policy, rng, noise_scale).T)
    bo_t = expand_bias(attn.bo, d_t, row_mode)
    return AttentionWeights(heads, wo_t, bo_t)


def expand_mlp(mlp: MlpWeights, spec: ModelSpec, d_t: int, hidden_t: int,
               policy: str, rng: np.random.Generator, noise_scale: float,
               row_mode: str = "avg") -> MlpWeights:
    """Expand MLP weights to width ``d_t`` / hidden size ``hidden_t``.

    The first layer grows rows circularly and columns by a random split;
    the second grows rows by ``row_mode`` and columns by a policy-driven
    circular split (the fan-out of the replicated hidden units).
    """
    w1_rows = expand_matrix_rows(mlp.w1, hidden_t, "circ")
    split1 = column_split(w1_rows, d_t, "rand", policy, rng, noise_scale)
    w1_t = expand_matrix_cols(w1_rows, d_t, "rand", split1)
    b1_t = expand_bias(mlp.b1, hidden_t, "circ")
    w2_t = _row_expanded_cols(mlp.w2, d_t, row_mode, hidden_t, policy, rng, noise_scale)
    b2_t = expand_bias(mlp.b2, d_t, row_mode)
    return MlpWeights(w1_t, b1_t, w2_t, b2_t)


def expand_norm_params(norm: NormParams, d_t: int, rng: np.random.Generator,
                       is_rms: bool) -> NormParams:
    """Gain-corrected norm expansion with a uniform (-1, 1) free tail."""
    r = d_t % norm.mu.shape[0]
    tail = rng.uniform(-1.0, 1.0, size=r).astype(norm.mu.dtype)
    if is_rms:
        mu, eps = expand_rmsnorm(norm.mu, norm.eps, d_t, tail)
        return NormParams(mu, None, eps)
    mu, beta, eps = expand_layernorm(norm.mu, norm.beta, norm.eps, d_t, tail)
    return NormParams(mu, beta, eps)


def expand_block_width(block: BlockWeights, spec: ModelSpec, d_t: int,
                       hidden_t: int, policy: str, rng: np.random.Generator,
                       noise_scale: float) -> BlockWeights:
    """Expand one block: both norms, the attention module, and the MLP."""
    row_mode = "zero" if spec.is_rms else "avg"
    return BlockWeights(
        ln1=expand_norm_params(block.ln1, d_t, rng, spec.is_rms),
        attn=expand_mha(block.attn, spec, d_t, policy, rng, noise_scale, row_mode),
        ln2=expand_norm_params(block.ln2, d_t, rng, spec.is_rms),
        mlp=expand_mlp(block.mlp, spec, d_t, hidden_t, policy, rng, noise_scale, row_mode),
    )


def expand_embeddings(emb: EmbeddingWeights, spec: ModelSpec, d_t: int,
                      mode: str) -> EmbeddingWeights:
    """Expand every embedding vector (token rows, patch-projection output
    channels, class token, positions) with the stream's vector mode."""
    out = EmbeddingWeights()
    if emb.token_table is not None:
        out.token_table = expand_vector(emb.token_table, d_t, mode)
    if emb.patch_weight is not None:
        out.patch_weight = expand_matrix_rows(emb.patch_weight, d_t, mode)
        out.patch_bias = expand_bias(emb.patch_bias, d_t, mode)
        out.cls_token = expand_vector(emb.cls_token, d_t, mode)
        out.positions = expand_vector(emb.positions, d_t, mode)
    return out


def expand_decoder(dec_weight: np.ndarray, d_t: int, policy: str,
                   rng: np.random.Generator, noise_scale: float) -> np.ndarray:
    """Expand an untied decoder's input dimension; logits are unchanged
    because the extra columns only ever multiply zeros."""
    split = column_split(dec_weight, d_t, "rand", policy, rng, noise_scale)
    return expand_matrix_cols(dec_weight, d_t, "rand", split)


# ---------------------------------------------------------------------------
# replica bookkeeping


def replica_groups(n_source: int, n_target: int) -> dict[int, list[int]]:
    """Map each source index to its target replicas (groups of size >= 2)."""
    groups: dict[int, list[int]] = {}
    for j in range(n_target):
        groups.setdefault(j % n_source, []).append(j)
    return {s: idx for s, idx in groups.items() if len(idx) >= 2}


def layer_multiplicities(l_s: int, l_t: int) -> list[int]:
    """As-even-as-possible copy counts; earlier blocks get the extras."""
    if l_s == 0:
        return []
    base, extra = divmod(l_t, l_s)
    return [base + (1 if i < extra else 0) for i in range(l_s)]


# ---------------------------------------------------------------------------
# depth expansion


def _nonzero_normal(rng: np.random.Generator, scale: float) -> float:
    for _ in range(64):
        a = float(rng.normal(0.0, scale))
        if abs(a) > MIN_SEPARATION * scale:
            return a
    raise PlanError("could not draw a nonzero coefficient")  # pragma: no cover


def _zero_output_block(donor: BlockWeights) -> BlockWeights:
    """type1: copy the donor and zero both output projections."""
    blk = donor.copy()
    blk.attn.wo = np.zeros_like(blk.attn.wo)
    blk.attn.bo = np.zeros_like(blk.attn.bo)
    blk.mlp.w2 = np.zeros_like(blk.mlp.w2)
    blk.mlp.b2 = np.zeros_like(blk.mlp.b2)
    return blk


def _cancelling_block(src: BlockWeights, wide: BlockWeights, spec: ModelSpec,
                      d_t: int, hidden_t: int, policy: str,
                      rng: np.random.Generator, noise_scale: float) -> BlockWeights:
    """type2: replicas share bitwise-identical incoming weights and their
    fan-out forms ± pairs, one pair per output element, so the module
    output is exactly zero on any input while the output projections stay
    trainable.

    Units without a replica (including every unit when the width is not
    grown) get zero fan-out, which is the only zero-sum choice for a
    group of one.
    """
    hd, h_s = spec.head_dim, spec.n_heads
    h_t = d_t // hd
    hidden_s = spec.hidden_dim

    base_heads = [_expand_head(src.attn.heads[s], d_t, policy, rng, noise_scale)
                  for s in range(h_s)]
    heads = [base_heads[m % h_s].copy() for m in range(h_t)]

    wo = np.zeros((h_t * hd, d_t), dtype=src.attn.wo.dtype)
    paired_heads = [s for s in range(h_s) if s + h_s < h_t]
    if paired_heads:
        for col in range(d_t):
            s = paired_heads[col % len(paired_heads)]
            off = col % hd
            a = _nonzero_normal(rng, noise_scale)
            wo[s * hd + off, col] = a
            wo[(s + h_s) * hd + off, col] = -a
    bo = np.zeros(d_t, dtype=src.attn.bo.dtype)

    split1 = column_split(src.mlp.w1, d_t, "rand", policy, rng, noise_scale)
    w1 = expand_matrix_rows(expand_matrix_cols(src.mlp.w1, d_t, "rand", split1),
                            hidden_t, "circ")
    b1 = expand_bias(src.mlp.b1, hidden_t, "circ")

    w2 = np.zeros((d_t, hidden_t), dtype=src.mlp.w2.dtype)
    paired_units = [z for z in range(hidden_s) if z + hidden_s < hidden_t]
    if paired_units:
        for row in range(d_t):
            z = paired_units[row % len(paired_units)]
            a = _nonzero_normal(rng, noise_scale)
            w2[row, z] = a
            w2[row, z + hidden_s] = -a
    b2 = np.zeros(d_t, dtype=src.mlp.b2.dtype)

    return BlockWeights(wide.ln1.copy(),
                        AttentionWeights(heads, wo, bo),
                        wide.ln2.copy(),
                        MlpWeights(w1, b1, w2, b2))


def _zero_norm_block(donor: BlockWeights) -> BlockWeights:
    """post_res_norm: zero both norm affines so the block is the identity."""
    blk = donor.copy()
    for ln in (blk.ln1, blk.ln2):
        ln.mu = np.zeros_like(ln.mu)
        if ln.beta is not None:
            ln.beta = np.zeros_like(ln.beta)
    return blk


def _identity_affine(like: NormParams) -> NormParams:
    return NormParams(np.ones_like(like.mu),
                      None if like.beta is None else np.zeros_like(like.beta),
                      like.eps)


def _post_ln_chain(wide: BlockWeights, count: int) -> list[tuple[BlockWeights, str]]:
    """Grow one post-norm block into ``count`` blocks computing the same map.

    The first block keeps the real attention under a plain (identity
    affine) norm, the last keeps the real MLP under the original affines,
    and any middle blocks are pure re-normalizations.  Exact when the
    norm eps is zero, since re-normalizing a normalized stream is then
    the identity.
    """
    if count == 1:
        return [(wide, "carrier")]
    first = wide.copy()
    first.ln1 = _identity_affine(wide.ln1)
    first.ln2 = _identity_affine(wide.ln2)
    first.mlp.w2 = np.zeros_like(first.mlp.w2)
    first.mlp.b2 = np.zeros_like(first.mlp.b2)
    chain: list[tuple[BlockWeights, str]] = [(first, "attn_carrier")]
    for _ in range(count - 2):
        mid = _zero_output_block(wide)
        mid.ln1 = _identity_affine(wide.ln1)
        mid.ln2 = _identity_affine(wide.ln2)
        chain.append((mid, "inserted"))
    last = wide.copy()
    last.attn.wo = np.zeros_like(last.attn.wo)
    last.attn.bo = np.zeros_like(last.attn.bo)
    chain.append((last, "mlp_carrier"))
    return chain


def expand_depth(wide_blocks: list[BlockWeights], src_blocks: list[BlockWeights],
                 spec: ModelSpec, d_t: int, hidden_t: int, l_t: int,
                 depth_mode: str, policy: str, seed: int, noise_scale: float,
                 depth_source: str = "self") -> tuple[list[BlockWeights], list[str]]:
    """Grow ``len(wide_blocks)`` width-expanded blocks to ``l_t`` blocks.

    Returns the new block list plus a per-block role tag: ``carrier``
    blocks compute the source function (``attn_carrier``/``mlp_carrier``
    for the split roles of the post-norm chain) and ``inserted`` blocks
    contribute nothing at initialization.
    """
    mult = layer_multiplicities(len(wide_blocks), l_t)
    out: list[tuple[BlockWeights, str]] = []
    for i, wide in enumerate(wide_blocks):
        if spec.norm_style == "post_ln":
            out.extend(_post_ln_chain(wide, mult[i]))
            continue
        out.append((wide, "carrier"))
        donor_i = min(i + 1, len(wide_blocks) - 1) if depth_source == "next" else i
        for c in range(mult[i] - 1):
            if spec.norm_style == "post_res_norm":
                blk = _zero_norm_block(wide_blocks[donor_i])
            elif depth_mode == "type1":
                blk = _zero_output_block(wide_blocks[donor_i])
            else:
                rng = substream(seed, "depth", i, c)
                blk = _cancelling_block(src_blocks[donor_i], wide, spec, d_t,
                                        hidden_t, policy, rng, noise_scale)
            out.append((blk, "inserted"))
    blocks = [b for b, _ in out]
    roles = [role for _, role in out]
    return blocks, roles


# ---------------------------------------------------------------------------
# whole-model expansion


def map_arrays(w: ModelWeights, fn) -> ModelWeights:
    w = w.copy()

    def conv(a):
        return None if a is None else fn(a)

    emb = w.embedding
    emb.token_table = conv(emb.token_table)
    emb.patch_weight = conv(emb.patch_weight)
    emb.patch_bias = conv(emb.patch_bias)
    emb.cls_token = conv(emb.cls_token)
    emb.positions = conv(emb.positions)
    for blk in w.blocks:
        for ln in (blk.ln1, blk.ln2):
            ln.mu = fn(ln.mu)
            ln.beta = conv(ln.beta)
        for h in blk.attn.heads:
            for f in ("wq", "wk", "wv", "bq", "bk", "bv"):
                setattr(h, f, fn(getattr(h, f)))
        blk.attn.wo = fn(blk.attn.wo)
        blk.attn.bo = fn(blk.attn.bo)
        for f in ("w1", "b1", "w2", "b2"):
            setattr(blk.mlp, f, fn(getattr(blk.mlp, f)))
    if w.final_norm is not None:
        w.final_norm.mu = fn(w.final_norm.mu)
        w.final_norm.beta = conv(w.final_norm.beta)
    w.dec_weight = conv(w.dec_weight)
    w.dec_bias = fn(w.dec_bias)
    return w


def _stream_mode(style: str) -> str:
    return "zero" if style in ("post_res_norm", "rms_pre") else "avg"


def expand_model(weights: ModelWeights, spec: ModelSpec,
                 plan: ExpansionPlan) -> tuple[ModelWeights, ModelSpec, dict]:
    """Expand a whole model per ``plan``; width first, then depth.

    Returns the expanded weights, the target spec, and a duplicate map
    describing which target heads/hidden units are replicas of the same
    source unit (per function-carrying block).  The expanded model
    computes the same function as the source on every input.
    """
    spec.validate()
    validate_weights(weights, spec)
    plan.validate(spec)

    in_dtype = weights.dec_bias.dtype
    work = (map_arrays(weights, lambda a: a.astype(np.float64))
            if in_dtype == np.float32 else weights)
    d_t, l_t = plan.target_width, plan.target_depth
    target_spec = spec_with(spec, width=d_t, depth=l_t)
    hidden_t = target_spec.hidden_dim
    seed, policy, noise = plan.seed, plan.policy, plan.noise_scale

    wide_blocks = [
        expand_block_width(blk, spec, d_t, hidden_t, policy,
                           substream(seed, "block", i), noise)
        for i, blk in enumerate(work.blocks)
    ]
    embedding = expand_embeddings(work.embedding, spec, d_t,
                                  _stream_mode(spec.norm_style))
    final_norm = None
    if work.final_norm is not None:
        final_norm = expand_norm_params(work.final_norm, d_t,
                                        substream(seed, "final_norm"), spec.is_rms)
        if spec.tied_decoder:
            # tiled embedding rows dot a zero-tailed hidden state k times
            k = d_t // spec.width
            if k > 1:
                final_norm.mu = final_norm.mu / k
                if final_norm.beta is not None:
                    final_norm.beta = final_norm.beta / k
    dec_weight = None
    if work.dec_weight is not None:
        dec_weight = expand_decoder(work.dec_weight, d_t, policy,
                                    substream(seed, "decoder"), noise)

    blocks, roles = expand_depth(wide_blocks, work.blocks, spec, d_t, hidden_t,
                                 l_t, plan.depth_mode, policy, seed, noise,
                                 plan.depth_source)

    out = ModelWeights(embedding, blocks, final_norm, dec_weight,
                       work.dec_bias.copy())
    if in_dtype == np.float32:
        out = map_arrays(out, lambda a: a.astype(np.float32))
    validate_weights(out, target_spec)

    head_g = {str(s): idx for s, idx in
              replica_groups(spec.n_heads, target_spec.n_heads).items()}
    mlp_g = {str(s): idx for s, idx in
             replica_groups(spec.hidden_dim, hidden_t).items()}
    dup_blocks = []
    for ti, role in enumerate(roles):
        entry: dict = {"index": ti}
        if role in ("carrier", "attn_carrier") and head_g:
            entry["attn_head_groups"] = head_g
        if role in ("carrier", "mlp_carrier") and mlp_g:
            entry["mlp_hidden_groups"] = mlp_g
        if len(entry) > 1:
            dup_blocks.append(entry)
    duplicate_map = {
        "version": 1,
        "policy": policy,
        "head_dim": spec.head_dim,
        "blocks": dup_blocks,
    }
    return out, target_spec, duplicate_map
