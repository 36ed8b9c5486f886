pub mod cin;
pub mod extractor;
pub mod norm_params;
pub mod params;
pub mod predictor;
pub mod stylizer;
pub mod weights;

pub use cin::{cin, CIN_EPS};
pub use extractor::{ExtractorSpec, FeatureExtractor, Features};
pub use norm_params::{NormParams, NormSite, NormVars, SiteParams};
pub use params::{gaussian, ParamStore};
pub use predictor::{Predictor, PredictorConfig, PredictorInit, GAMMA_OFFSET};
pub use stylizer::{check_input_shape, Stylizer, StylizerConfig};
pub use weights::{Stored, WeightFile};
