"""Language-aware procedure planning on a synthetic instructional-video corpus.

Pipeline: generate a corpus, curate horizon-T samples, train a captioner with
professor forcing, predict start/goal actions via ROUGE matching, plan the
intermediate actions with a conditioned diffusion model, and evaluate with
SR / mAcc / mSIoU.
"""

from .corpus import (
    ActionVocabulary,
    AnnotatedVideo,
    DescriptionSet,
    DescriptionSource,
    SyntheticCorpusConfig,
    TaskSpec,
    build_vocabulary,
    generate_synthetic_corpus,
    load_descriptions,
    make_enhanced_descriptions,
    make_task_specs,
)
from .curation import (
    CuratedSample,
    Role,
    TimeInterval,
    WindowSetting,
    extract_windows,
    observation_interval,
)
from .captioning import (
    CaptionModel,
    CaptionTrainConfig,
    Discriminator,
    GeneratedCaption,
    Mode,
    SamplingSchedule,
    TokenVocabulary,
    discriminator_step,
    forward_generate,
    sample_descriptions,
    schedule_ratio,
    train_professor_forcing,
)
from .prediction import (
    ActionLookupProvider,
    CaptionBagOfWordsProvider,
    Prediction,
    RougeVariant,
    VisualPassthroughProvider,
    build_action_lookup,
    embed_caption,
    embed_prediction,
    embed_visual,
    predict_action,
    randomize_unknown,
    rouge1,
    rouge2,
)
from .diffusion import (
    ConditioningMatrix,
    Denoiser,
    NoiseSchedule,
    PlannerConfig,
    build_x0,
    denoiser_forward,
    denoiser_gradients,
    forward_noise,
    linear_schedule,
    sample_plan,
    sample_plans,
    train_planner,
)
from .metrics import (
    EvalReport,
    evaluate_plans,
    mean_accuracy,
    mean_siou,
    rouge_report,
    success_rate,
)
from .projection import project_latent

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
