//! Combining K member classifiers: hard majority vote and a learned fusion head.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classify::ProbVector;
use crate::error::{Error, Result};
use crate::modelfile::{self, ModelReader, ModelWriter};
use crate::nn::{Activation, HiddenSpec, Mlp, OutputKind, TrainConfig, TrainLog};

/// Ordered member outputs for one sample. Order is significant: it is the
/// concatenation order seen by the fusion head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleInput {
    members: Vec<ProbVector>,
}

impl EnsembleInput {
    pub fn new(members: Vec<ProbVector>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::Validation("an ensemble needs at least one member".into()))?;
        if members.iter().any(|m| m.len() != first.len()) {
            return Err(Error::Shape("ensemble members disagree on the number of classes".into()));
        }
        Ok(Self { members })
    }

    pub fn members(&self) -> &[ProbVector] {
        &self.members
    }

    pub fn k(&self) -> usize {
        self.members.len()
    }

    pub fn n_classes(&self) -> usize {
        self.members[0].len()
    }

    /// `[p_1 || p_2 || ... || p_K]`
    pub fn concatenated(&self) -> Vec<f64> {
        self.members.iter().flat_map(|m| m.as_slice().iter().copied()).collect()
    }
}

/// Class with the most member votes, each member voting its argmax (lowest
/// index on ties). Vote ties go to the tied class with the highest mean
/// probability across all members, then to the lowest index.
pub fn majority_vote(input: &EnsembleInput) -> usize {
    let n_c = input.n_classes();
    let mut votes = vec![0usize; n_c];
    let mut mass = vec![0.0f64; n_c];
    for m in input.members() {
        votes[m.argmax()] += 1;
        for (acc, p) in mass.iter_mut().zip(m.as_slice()) {
            *acc += p;
        }
    }
    // summed mass orders classes exactly as the mean does
    let mut best = 0;
    for c in 1..n_c {
        let better = votes[c] > votes[best] || (votes[c] == votes[best] && mass[c] > mass[best]);
        if better {
            best = c;
        }
    }
    best
}

pub const DEFAULT_FUSION_HIDDEN: usize = 32;
pub const DEFAULT_FUSION_DROPOUT: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionTrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub hidden_width: usize,
    pub dropout: f64,
}

impl Default for FusionTrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 200,
            batch_size: 16,
            seed: 0,
            hidden_width: DEFAULT_FUSION_HIDDEN,
            dropout: DEFAULT_FUSION_DROPOUT,
        }
    }
}

/// Two fully connected layers with ReLU and dropout between them, softmax out.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel {
    member_names: Vec<String>,
    n_classes: usize,
    net: Mlp,
    final_loss: f64,
}

impl FusionModel {
    pub fn new(member_names: Vec<String>, n_classes: usize, hidden_width: usize, dropout: f64, seed: u64) -> Result<Self> {
        if member_names.is_empty() || n_classes < 2 {
            return Err(Error::Shape("fusion needs K >= 1 members and n_c >= 2 classes".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Mlp::new(
            member_names.len() * n_classes,
            Some(HiddenSpec {
                width: hidden_width,
                activation: Activation::Relu,
                dropout,
            }),
            n_classes,
            OutputKind::Categorical,
            &mut rng,
        )?;
        Ok(Self {
            member_names,
            n_classes,
            net,
            final_loss: f64::NAN,
        })
    }

    pub fn from_net(member_names: Vec<String>, n_classes: usize, net: Mlp) -> Result<Self> {
        let hidden_ok = net
            .hidden
            .as_ref()
            .is_some_and(|h| h.activation == Activation::Relu);
        if !hidden_ok
            || net.kind != OutputKind::Categorical
            || net.inputs() != member_names.len() * n_classes
            || net.outputs() != n_classes
        {
            return Err(Error::Shape(format!(
                "fusion net must map {}x{n_classes} inputs through a ReLU layer to {n_classes} softmax outputs",
                member_names.len()
            )));
        }
        Ok(Self {
            member_names,
            n_classes,
            net,
            final_loss: f64::NAN,
        })
    }

    pub fn member_names(&self) -> &[String] {
        &self.member_names
    }

    pub fn k(&self) -> usize {
        self.member_names.len()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn hidden_width(&self) -> usize {
        self.net.hidden.as_ref().map_or(0, |h| h.dense.outputs)
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn final_loss(&self) -> f64 {
        self.final_loss
    }

    pub fn to_text(&self) -> String {
        let mut w = ModelWriter::new("fusion");
        w.line("k", [self.k().to_string()]);
        w.line("n_classes", [self.n_classes.to_string()]);
        w.line("hidden_width", [self.hidden_width().to_string()]);
        w.line("members", &self.member_names);
        w.floats("final_loss", &[if self.final_loss.is_finite() { self.final_loss } else { 0.0 }]);
        w.mlp("net", &self.net);
        w.finish()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let r = ModelReader::parse(text, "fusion")?;
        let members = r.values("members")?.to_vec();
        let k: usize = r.single("k")?.parse().map_err(|_| Error::ModelFormat("bad k".into()))?;
        let n_c: usize = r
            .single("n_classes")?
            .parse()
            .map_err(|_| Error::ModelFormat("bad n_classes".into()))?;
        if members.len() != k {
            return Err(Error::ModelFormat(format!("k = {k} but {} member names", members.len())));
        }
        let mut model = Self::from_net(members, n_c, r.mlp("net")?)?;
        model.final_loss = r.floats("final_loss")?.first().copied().unwrap_or(f64::NAN);
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        modelfile::write_file(path.as_ref(), &self.to_text())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    fn check_shape(&self, input: &EnsembleInput) -> Result<()> {
        if input.k() != self.k() || input.n_classes() != self.n_classes {
            return Err(Error::Shape(format!(
                "fusion model expects K={} n_c={}, got K={} n_c={}",
                self.k(),
                self.n_classes,
                input.k(),
                input.n_classes()
            )));
        }
        Ok(())
    }
}

/// Inference-mode fusion; the argmax of the result is the fused decision.
pub fn fusion_forward(model: &FusionModel, input: &EnsembleInput) -> Result<ProbVector> {
    model.check_shape(input)?;
    let p = model.net.predict(&input.concatenated());
    let s: f64 = p.iter().sum();
    ProbVector::new(p.into_iter().map(|v| v / s).collect())
}

/// Trains the fusion head on member outputs over held-out data.
/// Member names default to `member-0..K` when `member_names` is `None`.
pub fn train_fusion(
    fold_outputs: &[(EnsembleInput, usize)],
    member_names: Option<Vec<String>>,
    cfg: &FusionTrainConfig,
) -> Result<(FusionModel, TrainLog)> {
    let (first, _) = fold_outputs
        .first()
        .ok_or_else(|| Error::Training("no fusion training samples".into()))?;
    let (k, n_c) = (first.k(), first.n_classes());
    for (i, (input, label)) in fold_outputs.iter().enumerate() {
        if input.k() != k || input.n_classes() != n_c {
            return Err(Error::Shape(format!(
                "sample {i} has K={} n_c={}, expected K={k} n_c={n_c}",
                input.k(),
                input.n_classes()
            )));
        }
        if *label >= n_c {
            return Err(Error::Training(format!("sample {i}: label {label} out of range")));
        }
    }
    let names = member_names.unwrap_or_else(|| (0..k).map(|i| format!("member-{i}")).collect());
    if names.len() != k {
        return Err(Error::Shape(format!("{} member names for K={k}", names.len())));
    }
    let mut model = FusionModel::new(names, n_c, cfg.hidden_width, cfg.dropout, cfg.seed)?;
    let xs: Vec<Vec<f64>> = fold_outputs.iter().map(|(x, _)| x.concatenated()).collect();
    let ts: Vec<Vec<f64>> = fold_outputs
        .iter()
        .map(|(_, l)| {
            let mut t = vec![0.0; n_c];
            t[*l] = 1.0;
            t
        })
        .collect();
    let log = model.net.fit(
        &xs,
        &ts,
        &TrainConfig {
            learning_rate: cfg.learning_rate,
            epochs: cfg.epochs,
            batch_size: cfg.batch_size,
            seed: cfg.seed,
        },
    )?;
    model.final_loss = log.final_loss();
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(v: &[f64]) -> ProbVector {
        ProbVector::new(v.to_vec()).unwrap()
    }

    fn input(vs: &[&[f64]]) -> EnsembleInput {
        EnsembleInput::new(vs.iter().map(|v| pv(v)).collect()).unwrap()
    }

    #[test]
    fn strict_majority() {
        let x = input(&[&[0.1, 0.1, 0.8], &[0.2, 0.2, 0.6], &[0.7, 0.2, 0.1]]);
        assert_eq!(majority_vote(&x), 2);
    }

    #[test]
    fn single_member_is_its_argmax() {
        assert_eq!(majority_vote(&input(&[&[0.2, 0.5, 0.3]])), 1);
    }

    #[test]
    fn split_vote_goes_to_higher_mean() {
        // votes {0, 1}; means 0.545 vs 0.455
        let x = input(&[&[0.6, 0.4], &[0.49, 0.51]]);
        assert_eq!(majority_vote(&x), 0);
        // (0.5, 0.5) votes for index 0, giving a 1-1 split that mass decides
        let x = input(&[&[0.4, 0.6], &[0.5, 0.5]]);
        assert_eq!(majority_vote(&x), 1);
        let x = input(&[&[0.5, 0.5], &[0.5, 0.5], &[0.1, 0.9]]);
        assert_eq!(majority_vote(&x), 0);
        // full tie on votes and mass: lowest index
        let x = input(&[&[0.7, 0.3], &[0.3, 0.7]]);
        assert_eq!(majority_vote(&x), 0);
    }

    #[test]
    fn mismatched_members_rejected() {
        assert!(EnsembleInput::new(vec![pv(&[0.5, 0.5]), pv(&[0.2, 0.3, 0.5])]).is_err());
        assert!(EnsembleInput::new(vec![]).is_err());
    }

    #[test]
    fn zero_parameters_give_uniform_output() {
        let mut m = FusionModel::new(vec!["a".into(), "b".into()], 3, 4, 0.2, 1).unwrap();
        let zeros = vec![0.0; m.net().param_count()];
        m.net_mut().set_params(&zeros).unwrap();
        let out = fusion_forward(&m, &input(&[&[0.2, 0.3, 0.5], &[1.0, 0.0, 0.0]])).unwrap();
        for p in out.as_slice() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_rejects_wrong_k() {
        let m = FusionModel::new(vec!["a".into(), "b".into()], 2, 4, 0.2, 1).unwrap();
        assert!(matches!(fusion_forward(&m, &input(&[&[0.5, 0.5]])), Err(Error::Shape(_))));
    }

    #[test]
    fn training_rejects_ragged_k() {
        let samples = vec![
            (input(&[&[0.5, 0.5], &[0.5, 0.5]]), 0),
            (input(&[&[0.5, 0.5]]), 1),
        ];
        assert!(matches!(
            train_fusion(&samples, None, &FusionTrainConfig::default()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn model_file_round_trip() {
        let m = FusionModel::new(vec!["dense net".into(), "resnet".into()], 3, 5, 0.2, 9).unwrap();
        let back = FusionModel::from_text(&m.to_text()).unwrap();
        assert_eq!(back.member_names(), m.member_names());
        assert_eq!(back.net(), m.net());
    }
}
