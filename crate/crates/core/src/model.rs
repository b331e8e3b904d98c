//! The model bundle: configuration, vocabulary, the fixed scaffold
//! prior, and every learned parameter, with checkpoint save/load.
//!
//! A checkpoint is one named-tensor file. Learned parameters keep their
//! store names; the scaffold prior rides along as `prior.initial` and
//! `prior.transition` (it is data-fit, never trained); the architecture
//! and vocabulary are echoed into the metadata so a checkpoint is
//! self-describing and mismatched loads fail loudly.

use std::collections::BTreeMap;
use std::path::Path;

use crate::config::{ModelConfig, ModelKind};
use crate::corpus::Vocabulary;
use crate::dynamics::{self, DynamicsSet};
use crate::emission::GruLm;
use crate::error::{Result, SldsError};
use crate::inference::recognition::{self, RecognitionDims};
use crate::scaffold::MarkovPrior;
use crate::seeding;
use crate::tensor::{Array, ParamStore};
use crate::tensor::{read_named_tensors, write_named_tensors, NamedTensors};

/// Learned pre-first-sentence latent.
pub const Z0: &str = "dyn.z0";

const PRIOR_INITIAL: &str = "prior.initial";
const PRIOR_TRANSITION: &str = "prior.transition";

#[derive(Debug, Clone)]
pub struct SldsModel {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    /// Present exactly for the switching model.
    pub scaffold_prior: Option<MarkovPrior>,
    pub params: ParamStore,
}

impl SldsModel {
    /// Fresh parameters for the given architecture. The scaffold prior
    /// must be supplied for the switching model and absent otherwise.
    pub fn init(
        config: ModelConfig,
        vocab: Vocabulary,
        scaffold_prior: Option<MarkovPrior>,
        seed: u64,
    ) -> SldsModel {
        config.validate().expect("invalid model config");
        match config.kind {
            ModelKind::Slds => {
                let prior = scaffold_prior.as_ref().expect("switching model needs a scaffold prior");
                assert_eq!(prior.num_states(), config.kind.states());
            }
            _ => assert!(scaffold_prior.is_none(), "only the switching model carries a prior"),
        }
        let mut rng = seeding::stream(seed, "model.init", 0);
        let mut params = ParamStore::new();
        let model = SldsModel {
            config,
            vocab,
            scaffold_prior,
            params: ParamStore::new(),
        };
        model.emission().init_params(&mut params, &mut rng);
        if model.config.kind.has_latent() {
            dynamics::init_params(
                &mut params,
                model.config.kind.states(),
                model.config.latent_dim,
                &mut rng,
            );
            params.insert(Z0, Array::vector(vec![0.0; model.config.latent_dim]));
            recognition::init_params(&model.recognition_dims(), &mut params, &mut rng);
        }
        SldsModel { params, ..model }
    }

    pub fn emission(&self) -> GruLm {
        GruLm {
            vocab: self.vocab.len(),
            embed: self.config.embed_dim,
            hidden: self.config.hidden_dim,
            latent: self.config.latent_dim,
        }
    }

    pub fn recognition_dims(&self) -> RecognitionDims {
        RecognitionDims::from_config(&self.config, self.vocab.len())
    }

    pub fn dynamics(&self) -> DynamicsSet {
        assert!(self.config.kind.has_latent(), "plain LM has no dynamics");
        DynamicsSet::from_params(
            &self.params,
            self.config.kind.states(),
            self.config.latent_dim,
        )
    }

    pub fn z0(&self) -> &[f64] {
        &self.params.get(Z0).data
    }

    /// The transition matrix used by sampling and the ELBO: the fitted
    /// scaffold prior for the switching model, the trivial single-state
    /// chain otherwise.
    pub fn prior(&self) -> MarkovPrior {
        match &self.scaffold_prior {
            Some(p) => p.clone(),
            None => MarkovPrior::uniform(1),
        }
    }

    pub fn save(&self, path: &Path, extra_meta: &BTreeMap<String, String>) -> Result<()> {
        let mut nt = NamedTensors::new();
        for (name, value) in self.params.iter() {
            nt.tensors.insert(name.clone(), value.clone());
        }
        if let Some(prior) = &self.scaffold_prior {
            let k = prior.num_states();
            nt.tensors.insert(
                PRIOR_INITIAL.into(),
                Array::vector(prior.initial().to_vec()),
            );
            nt.tensors.insert(
                PRIOR_TRANSITION.into(),
                Array::matrix(k, k, prior.transition_matrix().to_vec()),
            );
        }
        self.config.to_meta(&mut nt.meta);
        nt.meta.insert("vocab".into(), self.vocab.to_meta());
        for (k, v) in extra_meta {
            assert!(
                !k.starts_with("config.") && k != "vocab",
                "extra metadata key `{k}` collides with model metadata"
            );
            nt.meta.insert(k.clone(), v.clone());
        }
        write_named_tensors(path, &nt)
    }

    /// Loads a checkpoint, returning the model and the non-model
    /// metadata (epoch counters and the like).
    pub fn load(path: &Path) -> Result<(SldsModel, BTreeMap<String, String>)> {
        let nt = read_named_tensors(path)?;
        let bad = |msg: String| SldsError::Checkpoint {
            path: path.to_path_buf(),
            msg,
        };
        let config = ModelConfig::from_meta(&nt.meta)?;
        let vocab_meta = nt
            .meta
            .get("vocab")
            .ok_or_else(|| bad("metadata missing `vocab`".into()))?;
        let vocab = Vocabulary::from_meta(vocab_meta);
        let mut params = ParamStore::new();
        let mut prior_parts: BTreeMap<String, Array> = BTreeMap::new();
        for (name, value) in nt.tensors {
            if name.starts_with("prior.") {
                prior_parts.insert(name, value);
            } else {
                params.insert(name, value);
            }
        }
        let scaffold_prior = match config.kind {
            ModelKind::Slds => {
                let initial = prior_parts
                    .remove(PRIOR_INITIAL)
                    .ok_or_else(|| bad(format!("missing tensor `{PRIOR_INITIAL}`")))?;
                let transition = prior_parts
                    .remove(PRIOR_TRANSITION)
                    .ok_or_else(|| bad(format!("missing tensor `{PRIOR_TRANSITION}`")))?;
                Some(MarkovPrior::from_rows(initial.data, transition.data))
            }
            _ => None,
        };
        if let Some(stray) = prior_parts.into_keys().next() {
            return Err(bad(format!("unexpected tensor `{stray}`")));
        }

        // A scratch init with the same architecture gives the exact
        // parameter inventory this checkpoint must carry.
        let expected = SldsModel::init(config.clone(), vocab.clone(), scaffold_prior.clone(), 0);
        for (name, value) in expected.params.iter() {
            if !params.contains(name) {
                return Err(bad(format!("missing tensor `{name}`")));
            }
            if params.get(name).shape != value.shape {
                return Err(bad(format!(
                    "tensor `{name}` has shape {:?}, expected {:?}",
                    params.get(name).shape,
                    value.shape
                )));
            }
        }
        if params.len() != expected.params.len() {
            let extra: Vec<String> = params
                .names()
                .filter(|n| !expected.params.contains(n))
                .cloned()
                .collect();
            return Err(bad(format!("unexpected tensors: {}", extra.join(", "))));
        }

        let mut extra_meta = nt.meta;
        extra_meta.retain(|k, _| !k.starts_with("config.") && k != "vocab");
        Ok((
            SldsModel {
                config,
                vocab,
                scaffold_prior,
                params,
            },
            extra_meta,
        ))
    }

    /// Guards evaluate/interpolate runs against checkpoints trained with
    /// a different architecture.
    pub fn check_config(&self, expected: &ModelConfig) -> Result<()> {
        if &self.config == expected {
            Ok(())
        } else {
            Err(SldsError::ConfigMismatch {
                msg: format!(
                    "checkpoint has {:?}, run asked for {:?}",
                    self.config, expected
                ),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelKind;
    use crate::corpus::{tokenize, TextStory};
    use crate::scaffold::fit_markov_prior;

    fn tiny_vocab() -> Vocabulary {
        let stories = vec![TextStory {
            id: "v".into(),
            sentences: vec![tokenize("sun rain field sun rain wind")],
            labels: None,
        }];
        Vocabulary::build(&stories, 1)
    }

    fn tiny_config(kind: ModelKind) -> ModelConfig {
        let mut cfg = ModelConfig::default_for(kind);
        if kind.has_latent() {
            cfg.latent_dim = 2;
        }
        cfg.embed_dim = 3;
        cfg.hidden_dim = 4;
        cfg.recog_hidden = 4;
        cfg.state_embed = 2;
        cfg.posterior_hidden = 4;
        cfg
    }

    fn prior() -> MarkovPrior {
        fit_markov_prior(&[vec![0, 1, 2, 1], vec![2, 2, 0]], 3)
    }

    #[test]
    fn init_registers_expected_parameter_families() {
        let model = SldsModel::init(tiny_config(ModelKind::Slds), tiny_vocab(), Some(prior()), 1);
        for name in [
            "emission.embed",
            "emission.head.w",
            "dyn.A.0",
            "dyn.A.2",
            "dyn.b.1",
            "dyn.B.2",
            Z0,
            "recog.class.w",
            "recog.state_embed",
            "recog.post.w2",
        ] {
            assert!(model.params.contains(name), "missing {name}");
        }
        assert_eq!(model.z0(), &[0.0, 0.0]);
        assert_eq!(model.dynamics().k, 3);
    }

    #[test]
    fn lm_has_no_latent_machinery() {
        let model = SldsModel::init(tiny_config(ModelKind::Lm), tiny_vocab(), None, 1);
        assert!(!model.params.contains("dyn.A.0"));
        assert!(!model.params.contains(Z0));
        assert!(!model.params.contains("recog.embed"));
        assert_eq!(model.emission().latent, 0);
    }

    #[test]
    fn checkpoint_round_trips_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = SldsModel::init(tiny_config(ModelKind::Slds), tiny_vocab(), Some(prior()), 7);
        let mut extra = BTreeMap::new();
        extra.insert("epoch".to_string(), "3".to_string());
        model.save(&path, &extra).unwrap();

        let (back, meta) = SldsModel::load(&path).unwrap();
        assert_eq!(meta.get("epoch").map(String::as_str), Some("3"));
        assert_eq!(back.config, model.config);
        assert_eq!(back.vocab.tokens(), model.vocab.tokens());
        let (p, q) = (model.scaffold_prior.unwrap(), back.scaffold_prior.unwrap());
        assert_eq!(p.initial(), q.initial());
        assert_eq!(p.transition_matrix(), q.transition_matrix());
        assert_eq!(back.params.len(), model.params.len());
        for (name, value) in model.params.iter() {
            let loaded = back.params.get(name);
            assert_eq!(loaded.shape, value.shape, "{name}");
            let same_bits = loaded
                .data
                .iter()
                .zip(&value.data)
                .all(|(a, b)| a.to_bits() == b.to_bits());
            assert!(same_bits, "{name} changed across the round trip");
        }
    }

    #[test]
    fn load_rejects_missing_tensor() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = SldsModel::init(tiny_config(ModelKind::Lds), tiny_vocab(), None, 7);
        model.save(&path, &BTreeMap::new()).unwrap();

        let mut nt = read_named_tensors(&path).unwrap();
        nt.tensors.remove("dyn.A.0").unwrap();
        write_named_tensors(&path, &nt).unwrap();
        let err = SldsModel::load(&path).unwrap_err();
        assert!(err.to_string().contains("dyn.A.0"), "{err}");
    }

    #[test]
    fn config_mismatch_is_detected() {
        let model = SldsModel::init(tiny_config(ModelKind::Lds), tiny_vocab(), None, 7);
        let mut other = tiny_config(ModelKind::Lds);
        other.hidden_dim = 8;
        assert!(model.check_config(&other).is_err());
        assert!(model.check_config(&tiny_config(ModelKind::Lds)).is_ok());
    }
}
