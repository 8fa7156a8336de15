"""Visually grounded question encoding.

Instead of encoding the question from word embeddings alone, each word first
attends over the scene's object-label embeddings, pulls in a weighted sum of
the object visual features, and is fused with that visual counterpart before
entering the recurrence. The resulting question representation depends on the
scene, which is exactly what the language-only baseline encoder lacks.

Attention scores come from the label embeddings only; attended values come
from the visual features only. Scoring for object i is
``score_i = a . (M (l_i * q))`` with a learned vector ``a`` and matrix ``M``
(no bias terms), softmax-normalized over the scene's objects.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .encoder import EmbeddingTable, GruParams, _token_ids, embed, gru_cell
from .fusion import BlockFusionParams, block_fuse, block_params_init
from .layers import Linear, linear_init, matrix_init, seeded_rng, vector_init
from .tensor import ShapeError, Tensor


@dataclass
class SceneFeatures:
    """Per-object visual features (k, d_v) and label embeddings (k, d_w)."""

    visual: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.visual = np.asarray(self.visual, dtype=float)
        self.labels = np.asarray(self.labels, dtype=float)
        if self.visual.ndim != 2 or self.labels.ndim != 2:
            raise ShapeError("scene features must be matrices (objects x dims)")
        if self.visual.shape[0] != self.labels.shape[0]:
            raise ShapeError(f"visual ({self.visual.shape[0]}) and label "
                             f"({self.labels.shape[0]}) object counts differ")
        if self.visual.shape[0] < 1:
            raise ShapeError("a scene needs at least one object")
        if not (np.isfinite(self.visual).all() and np.isfinite(self.labels).all()):
            raise ValueError("scene features must be finite")

    @property
    def object_count(self) -> int:
        return self.visual.shape[0]


@dataclass
class VgwParams:
    """Parameters of the grounded-word module: attention scoring, the two-layer
    word refinement, and the visual-word fusion."""

    attn_vector: Tensor        # (d_w,)
    attn_matrix: Tensor        # (d_w, d_w)
    refine_hidden: Linear      # d_w -> d
    refine_out: Linear         # d -> d
    fusion: BlockFusionParams  # (d_v, d) -> grounded_dim

    @property
    def word_dim(self) -> int:
        return self.attn_vector.shape[0]

    @property
    def refined_dim(self) -> int:
        return self.refine_out.d_out

    @property
    def grounded_dim(self) -> int:
        return self.fusion.out_dim

    def named_arrays(self, prefix: str = "vgw"):
        yield f"{prefix}.attn_vector", self.attn_vector
        yield f"{prefix}.attn_matrix", self.attn_matrix
        yield from self.refine_hidden.named_arrays(f"{prefix}.refine_hidden")
        yield from self.refine_out.named_arrays(f"{prefix}.refine_out")
        yield from self.fusion.named_arrays(f"{prefix}.fusion")


@dataclass
class VgqeParams:
    """Grounded encoder parameters: one (optionally two) grounded-word modules
    plus independent recurrences per direction."""

    vgw: VgwParams
    rnn_forward: GruParams
    rnn_backward: GruParams
    vgw_backward: VgwParams | None = None   # None: both directions share vgw

    @property
    def shared_vgw(self) -> bool:
        return self.vgw_backward is None

    def vgw_for(self, direction: str) -> VgwParams:
        if direction == "backward" and self.vgw_backward is not None:
            return self.vgw_backward
        return self.vgw

    @property
    def hidden_dim(self) -> int:
        return self.rnn_forward.hidden_dim

    def named_arrays(self, prefix: str = "vgqe"):
        yield from self.vgw.named_arrays(f"{prefix}.vgw")
        if self.vgw_backward is not None:
            yield from self.vgw_backward.named_arrays(f"{prefix}.vgw_backward")
        yield from self.rnn_forward.named_arrays(f"{prefix}.rnn_forward")
        yield from self.rnn_backward.named_arrays(f"{prefix}.rnn_backward")


@dataclass
class VgqeState:
    h: Tensor

    def __post_init__(self):
        if not np.isfinite(self.h.data).all():
            raise ValueError("recurrent state must be finite")


def vgw_params_init(d_v: int, d_w: int, refined_dim: int, grounded_dim: int,
                    fusion_proj: int, fusion_out_proj: int, chunks: int,
                    rank: int, seed: int) -> VgwParams:
    rng = seeded_rng(seed, 0x76B3)
    return VgwParams(
        attn_vector=vector_init(rng, d_w),
        attn_matrix=matrix_init(rng, d_w, d_w),
        refine_hidden=linear_init(rng, d_w, refined_dim),
        refine_out=linear_init(rng, refined_dim, refined_dim),
        fusion=block_params_init(d_v, refined_dim, fusion_proj, fusion_out_proj,
                                 grounded_dim, chunks, rank,
                                 seed=int(rng.integers(0, 2**31))),
    )


def _as_batched_scene(visual, labels):
    """Lift (k, d) scene matrices to (1, k, d) constants; pass 3-D through."""
    v = T.as_tensor(visual)
    l = T.as_tensor(labels)
    if v.data.ndim == 2:
        v = T.reshape(v, (1,) + v.shape)
    if l.data.ndim == 2:
        l = T.reshape(l, (1,) + l.shape)
    if v.data.ndim != 3 or l.data.ndim != 3 or v.shape[:2] != l.shape[:2]:
        raise ShapeError(f"scene tensors disagree: visual {v.shape}, labels {l.shape}")
    return v, l


def vgw_attention(labels, word, attn_vector: Tensor, attn_matrix: Tensor,
                  visual) -> tuple[Tensor, Tensor]:
    """Score objects by label-word agreement; return (weights, attended visual).

    Unbatched: labels (k, d_w), word (d_w,), visual (k, d_v) -> ((k,), (d_v,)).
    Batched: labels (B, k, d_w), word (B, d_w), visual (B, k, d_v).
    """
    word = T.as_tensor(word)
    single = word.data.ndim == 1
    w2 = T.reshape(word, (1, word.shape[0])) if single else word
    v3, l3 = _as_batched_scene(visual, labels)
    batch, k, d_w = l3.shape
    if w2.shape != (batch, d_w):
        raise ShapeError(f"word batch {w2.shape} does not match labels {l3.shape}")
    if attn_vector.shape != (d_w,) or attn_matrix.shape != (d_w, d_w):
        raise ShapeError(f"attention parameters sized {attn_vector.shape}/"
                         f"{attn_matrix.shape} do not match word dim {d_w}")

    labels_flat = T.reshape(l3, (batch * k, d_w))
    word_rep = T.repeat_rows(w2, k)
    gated = T.mul(labels_flat, word_rep)
    mapped = T.matmul(gated, T.transpose(attn_matrix))
    scores = T.matmul(mapped, T.reshape(attn_vector, (d_w, 1)))
    alpha = T.softmax(T.reshape(scores, (batch, k)), axis=1)
    attended = T.attend(alpha, v3)
    if single:
        return T.reshape(alpha, (k,)), T.reshape(attended, (attended.shape[1],))
    return alpha, attended


def refine_word(word, p: VgwParams) -> Tensor:
    """Two-layer projection of the raw word embedding (rectifier between)."""
    return p.refine_out(T.relu(p.refine_hidden(word)))


def vgw_fuse(attended, word, p: VgwParams) -> Tensor:
    """Fuse the attended visual feature with the refined word embedding."""
    word = T.as_tensor(word)
    single = word.data.ndim == 1
    w2 = T.reshape(word, (1, word.shape[0])) if single else word
    a2 = (T.reshape(attended, (1, attended.shape[0]))
          if T.as_tensor(attended).data.ndim == 1 else T.as_tensor(attended))
    refined = refine_word(w2, p)
    grounded = block_fuse(a2, refined, p.fusion)
    return T.reshape(grounded, (grounded.shape[1],)) if single else grounded


def grounded_word(visual, labels, word, p: VgwParams) -> tuple[Tensor, Tensor]:
    """Attention plus fusion: the visually grounded embedding for one word."""
    alpha, attended = vgw_attention(labels, word, p.attn_vector, p.attn_matrix, visual)
    return vgw_fuse(attended, word, p), alpha


def vgqe_cell_step(scene: SceneFeatures, word, state: VgqeState, p: VgqeParams,
                   direction: str = "forward") -> tuple[VgqeState, Tensor]:
    """One grounded recurrence step; returns the new state and the attention
    weights used at this step (for traces)."""
    if direction not in ("forward", "backward"):
        raise ValueError(f"unknown direction {direction!r}")
    vgw = p.vgw_for(direction)
    g_t, alpha = grounded_word(scene.visual, scene.labels, word, vgw)
    rnn = p.rnn_forward if direction == "forward" else p.rnn_backward
    h = gru_cell(g_t, state.h, rnn)
    return VgqeState(h=h), alpha


def encode_question_vgqe(scene: SceneFeatures, tokens, table: EmbeddingTable,
                         p: VgqeParams) -> tuple[Tensor, dict[str, np.ndarray]]:
    """Encode one question against one scene.

    Returns the concatenated final states (2H,) and per-direction attention
    traces, each a (T, k) matrix indexed by timestep.
    """
    ids = _token_ids(tokens)
    if not ids:
        raise ValueError("cannot encode an empty question")
    enc, traces = encode_questions_vgqe(
        np.asarray(scene.visual)[None], np.asarray(scene.labels)[None],
        np.asarray([ids]), table, p, return_trace=True)
    trace = {direction: mat[:, 0, :] for direction, mat in traces.items()}
    return T.reshape(enc, (enc.shape[1],)), trace


def encode_questions_vgqe(visual: np.ndarray, labels: np.ndarray,
                          token_matrix: np.ndarray, table: EmbeddingTable,
                          p: VgqeParams, return_trace: bool = False):
    """Batched grounded encoding: scenes (B, k, *) and tokens (B, T) -> (B, 2H).

    With a shared grounded-word module the per-word grounding is computed once
    and consumed by both reading directions.
    """
    token_matrix = np.asarray(token_matrix)
    if token_matrix.ndim != 2 or token_matrix.shape[1] < 1:
        raise ValueError("token matrix must be (batch, T) with T >= 1")
    batch, length = token_matrix.shape
    v3 = T.as_tensor(np.asarray(visual))
    l3 = T.as_tensor(np.asarray(labels))

    words = [embed(token_matrix[:, t], table) for t in range(length)]
    fwd_inputs, fwd_alphas = [], []
    for w in words:
        g, alpha = _grounded_word_batched(v3, l3, w, p.vgw)
        fwd_inputs.append(g)
        fwd_alphas.append(alpha)
    if p.shared_vgw:
        bwd_inputs, bwd_alphas = fwd_inputs, fwd_alphas
    else:
        bwd_inputs, bwd_alphas = [], []
        for w in words:
            g, alpha = _grounded_word_batched(v3, l3, w, p.vgw_backward)
            bwd_inputs.append(g)
            bwd_alphas.append(alpha)

    h_f = Tensor(np.zeros((batch, p.hidden_dim)))
    for g in fwd_inputs:
        h_f = gru_cell(g, h_f, p.rnn_forward)
    h_b = Tensor(np.zeros((batch, p.hidden_dim)))
    for g in reversed(bwd_inputs):
        h_b = gru_cell(g, h_b, p.rnn_backward)
    encoding = T.concat([h_f, h_b], axis=1)

    if not return_trace:
        return encoding
    traces = {
        "forward": np.stack([a.data for a in fwd_alphas]),    # (T, B, k)
        "backward": np.stack([a.data for a in bwd_alphas]),
    }
    return encoding, traces


def _grounded_word_batched(v3: Tensor, l3: Tensor, word: Tensor,
                           vgw: VgwParams) -> tuple[Tensor, Tensor]:
    alpha, attended = vgw_attention(l3, word, vgw.attn_vector, vgw.attn_matrix, v3)
    refined = refine_word(word, vgw)
    return block_fuse(attended, refined, vgw.fusion), alpha


def trace_records(question_id: str, trace: dict[str, np.ndarray]) -> list[dict]:
    """Attention traces as JSON-ready records: one object per direction with
    per-step weight arrays."""
    out = []
    for direction in ("forward", "backward"):
        mat = np.asarray(trace[direction])
        out.append({
            "question_id": question_id,
            "direction": direction,
            "weights": [[float(x) for x in row] for row in mat],
        })
    return out
