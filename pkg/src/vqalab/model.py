"""The two VQA models under comparison.

Both share the head: every object's visual feature is bilinearly fused with
the encoded question, the fused vectors are max-pooled over objects, and a
two-layer classifier produces answer logits. They differ only in the question
encoder: the baseline encodes from words alone; the grounded variant runs the
visually grounded encoder, so its question representation already depends on
the scene. Logits are raw; the softmax lives in the loss.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .encoder import (EmbeddingTable, GruParams, _token_ids,
                      embedding_table_from, embedding_table_init,
                      encode_questions_baseline, gru_params_init)
from .fusion import BlockFusionParams, block_fuse, block_params_init
from .grounding import (SceneFeatures, VgqeParams, VgwParams,
                        encode_questions_vgqe, vgw_params_init)
from .layers import Linear, linear_init, seeded_rng
from .tensor import ShapeError, Tensor

VARIANTS = ("baseline", "vgqe")


@dataclass
class FusionConfig:
    proj_dim: int = 32
    out_proj_dim: int = 32
    chunks: int = 4
    rank: int = 3


@dataclass
class ModelConfig:
    variant: str = "baseline"
    d_v: int = 32
    d_w: int = 16
    hidden: int = 32              # per-direction recurrent state
    refined_dim: int = 16         # width of the refined word embedding
    grounded_dim: int = 32        # grounded-word vector fed to the recurrence
    pooled_dim: int = 32          # object-question fusion output width
    answer_count: int = 11
    vocab_size: int = 16
    dropout: float = 0.2
    seed: int = 0
    vgw_fusion: FusionConfig = field(default_factory=FusionConfig)
    obj_fusion: FusionConfig = field(default_factory=FusionConfig)
    classifier_hidden: int = 0    # 0: defaults to 2 * pooled_dim
    prepool_nonlinearity: bool = False
    shared_vgw: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.answer_count < 2:
            raise ValueError("need at least two answers")
        if not (0.0 <= self.dropout < 1.0):
            raise ValueError("dropout must lie in [0, 1)")
        if isinstance(self.vgw_fusion, dict):
            self.vgw_fusion = FusionConfig(**self.vgw_fusion)
        if isinstance(self.obj_fusion, dict):
            self.obj_fusion = FusionConfig(**self.obj_fusion)
        if self.classifier_hidden == 0:
            self.classifier_hidden = 2 * self.pooled_dim

    @property
    def question_dim(self) -> int:
        return 2 * self.hidden


@dataclass
class ModelParams:
    config: ModelConfig
    embedding: EmbeddingTable
    gru_fwd: GruParams
    gru_bwd: GruParams
    obj_fusion: BlockFusionParams
    cls_hidden: Linear
    cls_out: Linear
    vgw: VgwParams | None = None
    vgw_backward: VgwParams | None = None

    @property
    def variant(self) -> str:
        return self.config.variant

    def vgqe_params(self) -> VgqeParams:
        if self.vgw is None:
            raise ValueError("baseline parameters carry no grounded-word module")
        return VgqeParams(vgw=self.vgw, rnn_forward=self.gru_fwd,
                          rnn_backward=self.gru_bwd, vgw_backward=self.vgw_backward)

    def named_arrays(self):
        """Every array in the model, frozen ones included; fixed order."""
        yield from self.embedding.named_arrays("embedding")
        if self.vgw is not None:
            yield from self.vgw.named_arrays("vgw")
        if self.vgw_backward is not None:
            yield from self.vgw_backward.named_arrays("vgw_backward")
        yield from self.gru_fwd.named_arrays("gru_fwd")
        yield from self.gru_bwd.named_arrays("gru_bwd")
        yield from self.obj_fusion.named_arrays("obj_fusion")
        yield from self.cls_hidden.named_arrays("cls_hidden")
        yield from self.cls_out.named_arrays("cls_out")

    def named_parameters(self):
        """Trainable arrays only (frozen embeddings excluded)."""
        frozen = {name for name, _ in self.embedding.named_arrays("embedding")} \
            if self.embedding.frozen else set()
        for name, t in self.named_arrays():
            if name not in frozen:
                yield name, t


def init_model(config: ModelConfig,
               embedding_vectors: np.ndarray | None = None) -> ModelParams:
    """Build parameters for either variant, deterministically from config.seed.

    embedding_vectors, when given, become the frozen word-embedding table
    (the dataset supplies them so words and object labels share a space).
    """
    rng = seeded_rng(config.seed, 0xD0DE)
    if embedding_vectors is not None:
        embedding = embedding_table_from(embedding_vectors, frozen=True)
        if embedding.dim != config.d_w or embedding.vocab_size != config.vocab_size:
            raise ShapeError(f"embedding table {embedding.vectors.shape} does not match "
                             f"config (vocab={config.vocab_size}, d_w={config.d_w})")
    else:
        embedding = embedding_table_init(config.vocab_size, config.d_w,
                                         seed=config.seed, frozen=True)

    vgw = vgw_backward = None
    if config.variant == "vgqe":
        gru_input = config.grounded_dim
        vgw = vgw_params_init(config.d_v, config.d_w, config.refined_dim,
                              config.grounded_dim, config.vgw_fusion.proj_dim,
                              config.vgw_fusion.out_proj_dim, config.vgw_fusion.chunks,
                              config.vgw_fusion.rank, seed=int(rng.integers(2**31)))
        if not config.shared_vgw:
            vgw_backward = vgw_params_init(
                config.d_v, config.d_w, config.refined_dim, config.grounded_dim,
                config.vgw_fusion.proj_dim, config.vgw_fusion.out_proj_dim,
                config.vgw_fusion.chunks, config.vgw_fusion.rank,
                seed=int(rng.integers(2**31)))
    else:
        gru_input = config.d_w

    gru_fwd = gru_params_init(gru_input, config.hidden, seed=int(rng.integers(2**31)))
    gru_bwd = gru_params_init(gru_input, config.hidden, seed=int(rng.integers(2**31)))
    obj_fusion = block_params_init(
        config.d_v, config.question_dim, config.obj_fusion.proj_dim,
        config.obj_fusion.out_proj_dim, config.pooled_dim,
        config.obj_fusion.chunks, config.obj_fusion.rank,
        seed=int(rng.integers(2**31)))
    cls_rng = seeded_rng(config.seed, 0xC1A55)
    cls_hidden = linear_init(cls_rng, config.pooled_dim, config.classifier_hidden)
    cls_out = linear_init(cls_rng, config.classifier_hidden, config.answer_count)
    return ModelParams(config=config, embedding=embedding, gru_fwd=gru_fwd,
                       gru_bwd=gru_bwd, obj_fusion=obj_fusion,
                       cls_hidden=cls_hidden, cls_out=cls_out,
                       vgw=vgw, vgw_backward=vgw_backward)


def encode_questions(params: ModelParams, visual: np.ndarray, labels: np.ndarray,
                     tokens: np.ndarray) -> Tensor:
    """Question representations (B, 2H) for a batch sharing one length."""
    if params.variant == "vgqe":
        return encode_questions_vgqe(visual, labels, tokens, params.embedding,
                                     params.vgqe_params())
    return encode_questions_baseline(tokens, params.embedding,
                                     params.gru_fwd, params.gru_bwd)


def _dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return T.mul(x, Tensor(mask))


def forward_batch(params: ModelParams, visual: np.ndarray, labels: np.ndarray,
                  tokens: np.ndarray, training: bool = False,
                  drop_rng: np.random.Generator | None = None) -> Tensor:
    """Logits (B, A) for stacked scenes (B, k, *) and token rows (B, T)."""
    visual = np.asarray(visual)
    labels = np.asarray(labels)
    tokens = np.asarray(tokens)
    batch, k, d_v = visual.shape
    cfg = params.config
    if d_v != cfg.d_v or labels.shape != (batch, k, cfg.d_w):
        raise ShapeError(f"scene tensors {visual.shape}/{labels.shape} do not match "
                         f"config dims d_v={cfg.d_v}, d_w={cfg.d_w}")
    if training and cfg.dropout > 0 and drop_rng is None:
        raise ValueError("training-mode forward with dropout needs a generator")

    q_enc = encode_questions(params, visual, labels, tokens)
    v_flat = Tensor(visual.reshape(batch * k, d_v))
    q_rep = T.repeat_rows(q_enc, k)
    fused = block_fuse(v_flat, q_rep, params.obj_fusion)          # (B*k, pooled)
    if cfg.prepool_nonlinearity:
        fused = T.relu(fused)
    pooled = T.reduce_max(T.reshape(fused, (batch, k, cfg.pooled_dim)), axis=1)
    if training and cfg.dropout > 0:
        pooled = _dropout(pooled, cfg.dropout, drop_rng)
    hidden = T.relu(params.cls_hidden(pooled))
    if training and cfg.dropout > 0:
        hidden = _dropout(hidden, cfg.dropout, drop_rng)
    return params.cls_out(hidden)


def forward(scene: SceneFeatures, tokens, params: ModelParams,
            training: bool = False,
            drop_rng: np.random.Generator | None = None) -> Tensor:
    """Single-example logits (A,)."""
    ids = _token_ids(tokens)
    logits = forward_batch(params, scene.visual[None], scene.labels[None],
                           np.asarray([ids]), training=training, drop_rng=drop_rng)
    return T.reshape(logits, (logits.shape[1],))


def predict(logits) -> int:
    """Argmax answer id; ties resolve toward the smaller id."""
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    return int(np.argmax(data))


def count_parameters(params: ModelParams) -> int:
    """Exact count of learnable scalars (frozen tables contribute nothing)."""
    return sum(t.size for _, t in params.named_parameters())


# ---------------------------------------------------------------------------
# checkpoints: one flat binary of arrays plus a JSON manifest


CHECKPOINT_FORMAT = "vqalab-flat-arrays-v1"


def save_checkpoint(params: ModelParams, path) -> None:
    """Write `path` (JSON manifest) and `path`.bin (concatenated arrays)."""
    path = Path(path)
    bin_path = path.with_suffix(path.suffix + ".bin")
    entries = []
    offset = 0
    trainable = {name for name, _ in params.named_parameters()}
    blobs = []
    for name, t in params.named_arrays():
        raw = np.ascontiguousarray(t.data).tobytes()
        entries.append({
            "name": name,
            "shape": list(t.shape),
            "dtype": str(t.data.dtype),
            "byte_offset": offset,
            "trainable": name in trainable,
        })
        blobs.append(raw)
        offset += len(raw)
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "config": asdict(params.config),
        "data_file": bin_path.name,
        "arrays": entries,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(bin_path, "wb") as fh:
        for raw in blobs:
            fh.write(raw)
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path) -> ModelParams:
    """Rebuild a model from a manifest, validating every shape against config."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint manifest not found: {path}")
    with open(path) as fh:
        manifest = json.load(fh)
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unrecognized checkpoint format in {path}")
    config = ModelConfig(**manifest["config"])
    params = init_model(config)
    arrays = dict(params.named_arrays())
    bin_path = path.parent / manifest["data_file"]
    if not bin_path.exists():
        raise FileNotFoundError(f"checkpoint data file not found: {bin_path}")
    raw = bin_path.read_bytes()
    seen = set()
    for entry in manifest["arrays"]:
        name = entry["name"]
        if name not in arrays:
            raise ValueError(f"checkpoint array {name!r} is not part of this config")
        target = arrays[name]
        shape = tuple(entry["shape"])
        if shape != target.shape:
            raise ShapeError(f"checkpoint array {name!r} has shape {shape}, "
                             f"config expects {target.shape}")
        dtype = np.dtype(entry["dtype"])
        nbytes = int(np.prod(shape)) * dtype.itemsize if shape else dtype.itemsize
        start = entry["byte_offset"]
        data = np.frombuffer(raw[start:start + nbytes], dtype=dtype).reshape(shape)
        target.data = data.astype(target.data.dtype).copy()
        seen.add(name)
    missing = set(arrays) - seen
    if missing:
        raise ValueError(f"checkpoint is missing arrays: {sorted(missing)}")
    return params
