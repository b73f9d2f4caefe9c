//! The three-stage network: extractor -> adaptation layer -> classifier.
//!
//! The extractor is a fully connected rectifier stack behind
//! [`extractor_forward`]; the adaptation layer is a linear map with a
//! scalar bias followed by batch normalization with per-domain scale and
//! shift. Backward passes are hand-derived, including the pathways through
//! the batch statistics.

mod backward;
mod forward;
mod params;
mod serialize;

pub use backward::{model_backward, train_step, Gradients, LayerGrad, ModelOptim, NuGrad, PsiGrad};
pub use forward::{
    adaptation_forward, adaptation_forward_batch, batch_loss, classifier_forward, embed,
    extractor_forward, ForwardMode,
};
pub use params::{
    freeze, AdaptationParams, ClassifierParams, ExtractorParams, LinearLayer, ModelConfig,
    ModelParams, OptimConfig, ParamGroup,
};
pub use serialize::{
    decode_adaptation, decode_model, encode_adaptation, encode_model, model_text_dump,
    serialize_classifier, serialize_extractor,
};
