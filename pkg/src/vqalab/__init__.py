"""Desk-scale visual question answering lab.

A small numpy-based stack for studying how much a VQA model leans on answer
priors: a tensor library with reverse-mode autodiff, block-term bilinear
fusion, a language-only and a visually grounded question encoder, a synthetic
changing-priors benchmark, and the training/evaluation harness that compares
the two encoders under distribution shift.
"""

from .data import DataConfig, DatasetSplit, SyntheticDataset, generate_dataset
from .encoder import (EmbeddingTable, GruParams, QuestionTokens, embed,
                      embedding_table_init, encode_question_baseline, gru_cell,
                      gru_params_init)
from .evaluate import (EvalReport, bias_gap, evaluate_split,
                       summarize_predictions, vqa_accuracy)
from .fusion import BlockFusionParams, block_fuse, block_params_init
from .grounding import (SceneFeatures, VgqeParams, VgqeState, VgwParams,
                        encode_question_vgqe, vgqe_cell_step, vgw_attention,
                        vgw_fuse, vgw_params_init)
from .model import (ModelConfig, ModelParams, count_parameters, forward,
                    init_model, load_checkpoint, predict, save_checkpoint)
from .tensor import Tensor, backward, grad_check, no_grad
from .train import (AdamWState, ScheduleConfig, TrainConfig, adamw_step,
                    clip_grad_norm, cross_entropy, lr_at_epoch, train)

__version__ = "0.1.0"
