"""Desk-scale laboratory for prompt learning on frozen dual-encoder models."""

from .tensor import (
    ShapeError,
    Tensor,
    backward,
    cosine,
    finite_diff_grad,
    matmul,
    softmax_rows,
)
from .encoders import (
    EncoderWeights,
    ImageFeatures,
    TextEmbedding,
    TokenSequence,
    encode_image,
    encode_text,
    template_token_ids,
    tokenize,
)
from .prompts import (
    METHOD_NAMES,
    AttentionRecord,
    ForwardResult,
    ImageMode,
    MetaNet,
    MethodSpec,
    PromptMode,
    PromptSet,
    blended_probability,
    build_cocoop_prompts,
    build_coop_prompts,
    build_ctp_prompts,
    clip_probability,
    ctp_attention,
    method_forward,
    method_spec,
    mlp_ft_features,
    mlp_pl_prompts,
    tft_augment,
)
from .training import (
    FewShotSample,
    SplitSpec,
    TrainConfig,
    TrainedState,
    contrastive_loss,
    lr_at,
    sample_few_shot,
    train,
)
from .evaluation import (
    EvalReport,
    discrimination_distance,
    evaluate,
    evaluate_report,
    export_heatmap,
    harmonic_mean,
)
from .data import (
    Dataset,
    generate_synthetic,
    load_directory,
    read_ppm,
    save_dataset,
    write_ppm,
)
from .experiment import (
    ExperimentConfig,
    format_config,
    parse_config,
    read_report_config,
    run_experiment,
)

__version__ = "0.1.0"
