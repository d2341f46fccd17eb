//! The seven model configurations and their training loops, plus warm-start
//! weight transfer and epoch selection. Baseline regimes train a label-logit
//! encoder under a CRF likelihood; metric regimes train the encoder through
//! episode losses and freeze prototypes from the few-shot sample at the end.

use crate::corpus::{self, Episode, LabeledSentence, TaskDataset};
use crate::crf::{self, CrfNodes, CrfParams};
use crate::encoder::{
    encode_batch, init_params, EmbeddingTable, EncoderConfig, EncoderNodes, EncoderParams,
};
use crate::error::{Error, Result};
use crate::ndcore::{mix_seed, Adam, Mode, NodeId, ParamUpdate, Rng, Tape, Tensor};
use crate::protohead::{
    self, build_prototype_set, prototype_nodes_from_encodings, token_logit_row, PrototypeSet,
};

/// Model configuration identifiers. `Warm` regimes pre-train on the
/// out-of-domain pool before fitting the task head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub enum Regime {
    Base,
    BaseProto,
    Protonet,
    WarmBase,
    WarmProto,
    #[serde(rename = "WarmProto-CRF")]
    WarmProtoCrf,
    WarmProtoZero,
}

pub const ALL_REGIMES: [Regime; 7] = [
    Regime::Base,
    Regime::BaseProto,
    Regime::Protonet,
    Regime::WarmBase,
    Regime::WarmProto,
    Regime::WarmProtoCrf,
    Regime::WarmProtoZero,
];

impl Regime {
    pub fn id(&self) -> &'static str {
        match self {
            Regime::Base => "Base",
            Regime::BaseProto => "BaseProto",
            Regime::Protonet => "Protonet",
            Regime::WarmBase => "WarmBase",
            Regime::WarmProto => "WarmProto",
            Regime::WarmProtoCrf => "WarmProto-CRF",
            Regime::WarmProtoZero => "WarmProtoZero",
        }
    }

    pub fn parse(name: &str) -> Result<Regime> {
        ALL_REGIMES
            .into_iter()
            .find(|r| r.id() == name)
            .ok_or_else(|| Error::Spec(format!("unknown regime `{name}`")))
    }

    /// Whether prediction runs Viterbi over a trained transition model.
    pub fn uses_crf(&self) -> bool {
        matches!(self, Regime::Base | Regime::WarmBase | Regime::WarmProtoCrf)
    }

    /// Whether the model scores tokens against prototypes.
    pub fn is_proto(&self) -> bool {
        !matches!(self, Regime::Base | Regime::WarmBase)
    }

    /// Whether training starts from an out-of-domain pre-trained encoder.
    pub fn is_warm(&self) -> bool {
        matches!(
            self,
            Regime::WarmBase | Regime::WarmProto | Regime::WarmProtoCrf | Regime::WarmProtoZero
        )
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.id())
    }
}

/// Full training recipe for one cell. Defaults are the reference settings;
/// benchmark specs shrink the widths and schedules.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct RegimeConfig {
    pub regime: Regime,
    /// Carrier-sentence budget for the few-shot sample and for episode
    /// sampling.
    pub n_support: usize,
    /// Probability that a training step draws an in-domain episode.
    pub p_in_domain: f64,
    pub epochs: usize,
    /// Episodes per epoch for metric regimes.
    pub steps_per_epoch: usize,
    /// Pre-training epochs for warm regimes (defaults to `epochs`).
    pub warm_epochs: Option<usize>,
    pub batch_in_domain: usize,
    pub batch_warm_up: usize,
    pub support_cap: usize,
    pub query_cap: usize,
    pub lr: f64,
    pub l2: f64,
    pub dropout: f64,
    /// Prototype-space width for metric regimes.
    pub proto_dim: usize,
    pub b_o_init: f64,
    pub char_dim: usize,
    pub char_hidden: usize,
    pub word_hidden: usize,
    pub seed: u64,
}

impl RegimeConfig {
    pub fn new(regime: Regime, seed: u64) -> Self {
        RegimeConfig {
            regime,
            n_support: 20,
            p_in_domain: 0.5,
            epochs: 60,
            steps_per_epoch: 50,
            warm_epochs: None,
            batch_in_domain: 10,
            batch_warm_up: 32,
            support_cap: 40,
            query_cap: 60,
            lr: 3e-3,
            l2: 0.1,
            dropout: 0.5,
            proto_dim: 64,
            b_o_init: -4.0,
            char_dim: 16,
            char_hidden: 16,
            word_hidden: 64,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_in_domain) {
            return Err(Error::Spec(format!(
                "p_in_domain must lie in [0, 1], got {}",
                self.p_in_domain
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Spec(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        let sizes = [
            ("n_support", self.n_support),
            ("epochs", self.epochs),
            ("steps_per_epoch", self.steps_per_epoch),
            ("batch_in_domain", self.batch_in_domain),
            ("batch_warm_up", self.batch_warm_up),
            ("support_cap", self.support_cap),
            ("query_cap", self.query_cap),
            ("proto_dim", self.proto_dim),
            ("char_dim", self.char_dim),
            ("char_hidden", self.char_hidden),
            ("word_hidden", self.word_hidden),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(Error::Spec(format!("{name} must be positive")));
            }
        }
        if self.lr <= 0.0 || !self.lr.is_finite() {
            return Err(Error::Spec("lr must be positive".into()));
        }
        if self.l2 < 0.0 || !self.l2.is_finite() {
            return Err(Error::Spec("l2 must be nonnegative".into()));
        }
        Ok(())
    }

    fn warm_epochs(&self) -> usize {
        self.warm_epochs.unwrap_or(self.epochs)
    }

    fn logit_encoder_cfg(&self, word_dim: usize, k: usize) -> EncoderConfig {
        EncoderConfig {
            word_dim,
            char_dim: self.char_dim,
            char_hidden: self.char_hidden,
            word_hidden: self.word_hidden,
            out_width: k,
            b_o_init: None,
        }
    }

    fn proto_encoder_cfg(&self, word_dim: usize) -> EncoderConfig {
        EncoderConfig {
            word_dim,
            char_dim: self.char_dim,
            char_hidden: self.char_hidden,
            word_hidden: self.word_hidden,
            out_width: self.proto_dim,
            b_o_init: Some(self.b_o_init),
        }
    }
}

/// Per-epoch training trace. `test_f1` is filled only when an epoch probe
/// was supplied.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingHistory {
    pub loss: Vec<f64>,
    pub test_f1: Vec<f64>,
}

/// A trained cell: parameters plus whatever the regime's decoder needs.
/// The CRF is present exactly for CRF-decoding regimes and the prototype
/// set exactly for metric regimes.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub regime: Regime,
    pub alphabet: Vec<String>,
    pub encoder: EncoderParams,
    pub crf: Option<CrfParams>,
    pub prototypes: Option<PrototypeSet>,
    pub history: TrainingHistory,
}

impl TrainedModel {
    /// Predicts tag sequences with frozen weights (eval mode throughout).
    pub fn predict_batch(
        &self,
        table: &EmbeddingTable,
        sentences: &[&LabeledSentence],
    ) -> Result<Vec<Vec<String>>> {
        if let Some(set) = &self.prototypes {
            let decode = match &self.crf {
                Some(params) => protohead::Decode::Crf(params),
                None => protohead::Decode::Independent,
            };
            return protohead::predict_tags_batch(&self.encoder, table, set, sentences, decode);
        }
        let crf_params = self.crf.as_ref().ok_or_else(|| {
            Error::Contract("logit-head model is missing its transition parameters".into())
        })?;
        let mut tape = Tape::new(Mode::Eval);
        let nodes = self.encoder.register(&mut tape);
        let mut rng = Rng::seed(0);
        let encodings = encode_batch(&mut tape, &nodes, table, sentences, 0.0, &mut rng)?;
        let mut out = Vec::with_capacity(sentences.len());
        for enc in encodings {
            let indices = crf::viterbi(tape.value(enc), crf_params)?;
            out.push(indices.into_iter().map(|i| self.alphabet[i].clone()).collect());
        }
        Ok(out)
    }

    pub fn predict(&self, table: &EmbeddingTable, sentence: &LabeledSentence) -> Result<Vec<String>> {
        Ok(self.predict_batch(table, &[sentence])?.remove(0))
    }
}

/// Called after each epoch with the epoch index and a frozen snapshot;
/// returns a score (test F1) recorded into the model's history.
pub type EpochProbe<'a> = &'a mut dyn FnMut(usize, &TrainedModel) -> Result<f64>;

/// Scenario choice for one metric-training step: in-domain episode with
/// probability `p`, out-of-domain otherwise. Factored out so the mixing law
/// can be exercised directly.
pub fn draws_in_domain(rng: &mut Rng, p: f64) -> bool {
    rng.uniform() < p
}

/// Picks the epoch with the best mean score across histories; ties go to
/// the earliest epoch.
pub fn select_epoch(histories: &[Vec<f64>]) -> Result<usize> {
    let first = histories
        .first()
        .ok_or_else(|| Error::Contract("select_epoch needs at least one history".into()))?;
    let epochs = first.len();
    if epochs == 0 {
        return Err(Error::Contract("histories must cover at least one epoch".into()));
    }
    if histories.iter().any(|h| h.len() != epochs) {
        return Err(Error::Contract("histories must have equal epoch counts".into()));
    }
    let mut best = 0;
    let mut best_mean = f64::NEG_INFINITY;
    for e in 0..epochs {
        let mean = histories.iter().map(|h| h[e]).sum::<f64>() / histories.len() as f64;
        if mean > best_mean {
            best_mean = mean;
            best = e;
        }
    }
    Ok(best)
}

/// Copies the transferable encoder stack (byte table, byte LSTM, word LSTM)
/// from a pre-trained model into freshly initialized parameters for a new
/// head. The projection (and any transition model) is not transferred.
pub fn warm_start(
    pretrained: &TrainedModel,
    head_cfg: &EncoderConfig,
    rng: &mut Rng,
) -> Result<EncoderParams> {
    let src = &pretrained.encoder;
    let matches = src.cfg.word_dim == head_cfg.word_dim
        && src.cfg.char_dim == head_cfg.char_dim
        && src.cfg.char_hidden == head_cfg.char_hidden
        && src.cfg.word_hidden == head_cfg.word_hidden;
    if !matches {
        return Err(Error::Contract(format!(
            "warm start body widths {:?} do not match target {:?}",
            src.cfg, head_cfg
        )));
    }
    let mut fresh = init_params(head_cfg, rng)?;
    fresh.char_table = src.char_table.clone();
    fresh.char_rnn = src.char_rnn.clone();
    fresh.word_rnn = src.word_rnn.clone();
    Ok(fresh)
}

fn step_context(err: Error, regime: Regime, epoch: usize, step: usize) -> Error {
    Error::Contract(format!("{regime} epoch {epoch} step {step}: {err}"))
}

fn tag_indices(sentence: &LabeledSentence, alphabet: &[String]) -> Result<Vec<usize>> {
    sentence
        .tags
        .iter()
        .map(|tag| {
            alphabet.iter().position(|a| a == tag).ok_or_else(|| {
                Error::Contract(format!("tag `{tag}` is outside the alphabet {alphabet:?}"))
            })
        })
        .collect()
}

/// One optimizer step from the tape's accumulated gradients. Parameters are
/// presented in the fixed `named_tensors` order, transition parameters last.
fn apply_adam(
    adam: &mut Adam,
    tape: &Tape,
    encoder: &mut EncoderParams,
    enc_ids: &[NodeId],
    crf: Option<(&mut CrfParams, &CrfNodes)>,
) -> Result<()> {
    let mut ids = enc_ids.to_vec();
    let mut names: Vec<&str> = encoder.named_tensors().iter().map(|(n, _)| *n).collect();
    if let Some((_, nodes)) = &crf {
        ids.extend([nodes.start, nodes.end, nodes.trans]);
        names.extend(["crf_start", "crf_end", "crf_trans"]);
    }
    // Parameters outside this step's graph still need a gradient tensor so
    // weight decay keeps applying uniformly.
    let zeros: Vec<Option<Tensor>> = ids
        .iter()
        .map(|&id| match tape.grad(id) {
            Some(_) => None,
            None => {
                let v = tape.value(id);
                Some(Tensor::zeros(v.rows(), v.cols()))
            }
        })
        .collect();
    let mut values: Vec<&mut Tensor> =
        encoder.named_tensors_mut().into_iter().map(|(_, t)| t).collect();
    if let Some((params, _)) = crf {
        values.extend([&mut params.start, &mut params.end, &mut params.trans]);
    }
    let mut updates: Vec<ParamUpdate> = Vec::with_capacity(ids.len());
    for ((value, &id), (name, zero)) in
        values.into_iter().zip(&ids).zip(names.iter().zip(&zeros))
    {
        let grad = match zero {
            Some(z) => z,
            None => tape.grad(id).unwrap(),
        };
        updates.push(ParamUpdate { name, value, grad });
    }
    adam.step(&mut updates)
}

/// Minibatch CRF training of a logit-head encoder over a sentence pool.
/// Used by the cold baseline and by both stages of the warm baseline.
fn run_crf_training(
    pool: &[LabeledSentence],
    alphabet: &[String],
    table: &EmbeddingTable,
    cfg: &RegimeConfig,
    epochs: usize,
    batch: usize,
    mut encoder: EncoderParams,
    data_rng: &mut Rng,
    train_rng: &mut Rng,
    on_epoch: &mut dyn FnMut(usize, &EncoderParams, &CrfParams, f64) -> Result<()>,
) -> Result<(EncoderParams, CrfParams, Vec<f64>)> {
    if pool.is_empty() {
        return Err(Error::Contract("training pool is empty".into()));
    }
    let indexed: Vec<Vec<usize>> = pool
        .iter()
        .map(|s| tag_indices(s, alphabet))
        .collect::<Result<_>>()?;
    let mut crf_params = CrfParams::zeros(alphabet.len());
    let mut adam = Adam::new(cfg.lr, cfg.l2);
    let mut losses = Vec::with_capacity(epochs);
    let mut order: Vec<usize> = (0..pool.len()).collect();
    for epoch in 0..epochs {
        data_rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        let mut steps = 0;
        for (step, chunk) in order.chunks(batch).enumerate() {
            let run = |encoder: &mut EncoderParams,
                       crf_params: &mut CrfParams,
                       adam: &mut Adam,
                       train_rng: &mut Rng|
             -> Result<f64> {
                let mut tape = Tape::new(Mode::Train);
                let enc_nodes = encoder.register(&mut tape);
                let crf_nodes = crf_params.register(&mut tape);
                let refs: Vec<&LabeledSentence> = chunk.iter().map(|&i| &pool[i]).collect();
                let encodings =
                    encode_batch(&mut tape, &enc_nodes, table, &refs, cfg.dropout, train_rng)?;
                let mut nlls = Vec::with_capacity(chunk.len());
                for (enc, &i) in encodings.iter().zip(chunk) {
                    nlls.push(crf::crf_nll(&mut tape, &crf_nodes, *enc, &indexed[i])?);
                }
                let loss = tape.mean_nodes(&nlls)?;
                tape.backward(loss)?;
                let ids = enc_nodes.ids();
                apply_adam(adam, &tape, encoder, &ids, Some((crf_params, &crf_nodes)))?;
                Ok(tape.value(loss).item())
            };
            let loss = run(&mut encoder, &mut crf_params, &mut adam, train_rng)
                .map_err(|e| step_context(e, cfg.regime, epoch, step))?;
            epoch_loss += loss;
            steps += 1;
        }
        let mean = epoch_loss / steps as f64;
        losses.push(mean);
        log::debug!("{} epoch {epoch}: loss {mean:.6}", cfg.regime);
        on_epoch(epoch, &encoder, &crf_params, mean)?;
    }
    Ok((encoder, crf_params, losses))
}

/// Subsamples an episode to the configured support and query caps. The
/// query keeps its carrier/empty ratio; the support is a uniform subsample.
fn apply_caps(episode: Episode, cfg: &RegimeConfig, rng: &mut Rng) -> Episode {
    let Episode { support, query } = episode;
    let support = if support.len() > cfg.support_cap {
        rng.sample_indices(support.len(), cfg.support_cap)
            .into_iter()
            .map(|i| support[i].clone())
            .collect()
    } else {
        support
    };
    let query = if query.len() > cfg.query_cap {
        let carriers: Vec<usize> = (0..query.len()).filter(|&i| !query[i].is_all_o()).collect();
        let empties: Vec<usize> = (0..query.len()).filter(|&i| query[i].is_all_o()).collect();
        let keep_carriers = ((cfg.query_cap as f64 * carriers.len() as f64)
            / query.len() as f64)
            .round() as usize;
        let keep_carriers = keep_carriers.min(carriers.len()).min(cfg.query_cap);
        let keep_empties = (cfg.query_cap - keep_carriers).min(empties.len());
        let mut kept: Vec<usize> = rng
            .sample_indices(carriers.len(), keep_carriers)
            .into_iter()
            .map(|i| carriers[i])
            .chain(
                rng.sample_indices(empties.len(), keep_empties)
                    .into_iter()
                    .map(|i| empties[i]),
            )
            .collect();
        rng.shuffle(&mut kept);
        kept.into_iter().map(|i| query[i].clone()).collect()
    } else {
        query
    };
    Episode { support, query }
}

/// Trains the cold baseline: logit-head encoder plus transition model on
/// the few-shot in-domain sample.
pub fn train_base(
    task: &TaskDataset,
    table: &EmbeddingTable,
    cfg: &RegimeConfig,
    mut probe: Option<EpochProbe>,
) -> Result<TrainedModel> {
    cfg.validate()?;
    let alphabet = task.alphabet();
    let enc_cfg = cfg.logit_encoder_cfg(table.dim(), alphabet.len());
    let mut init_rng = Rng::seed(mix_seed(cfg.seed, &["init"]));
    let mut data_rng = Rng::seed(mix_seed(cfg.seed, &["data"]));
    let mut train_rng = Rng::seed(mix_seed(cfg.seed, &["train"]));
    let encoder = init_params(&enc_cfg, &mut init_rng)?;
    let mut f1s = Vec::new();
    let mut on_epoch = |epoch: usize, enc: &EncoderParams, crf: &CrfParams, loss: f64| {
        if let Some(probe) = probe.as_mut() {
            let snapshot = TrainedModel {
                regime: cfg.regime,
                alphabet: alphabet.clone(),
                encoder: enc.clone(),
                crf: Some(crf.clone()),
                prototypes: None,
                history: TrainingHistory { loss: vec![loss], test_f1: vec![] },
            };
            f1s.push(probe(epoch, &snapshot)?);
        }
        Ok(())
    };
    let (encoder, crf_params, losses) = run_crf_training(
        &task.in_domain,
        &alphabet,
        table,
        cfg,
        cfg.epochs,
        cfg.batch_in_domain,
        encoder,
        &mut data_rng,
        &mut train_rng,
        &mut on_epoch,
    )?;
    Ok(TrainedModel {
        regime: cfg.regime,
        alphabet,
        encoder,
        crf: Some(crf_params),
        prototypes: None,
        history: TrainingHistory { loss: losses, test_f1: f1s },
    })
}

/// Pre-trains a logit-head model on the out-of-domain pool over its full
/// multi-class alphabet. This is stage one of every warm regime.
pub fn pretrain_out_of_domain(
    task: &TaskDataset,
    table: &EmbeddingTable,
    cfg: &RegimeConfig,
) -> Result<TrainedModel> {
    cfg.validate()?;
    let alphabet = corpus::alphabet(&task.out_of_domain);
    if alphabet.len() < 2 {
        return Err(Error::Contract(
            "out-of-domain pool carries no tagged classes to pre-train on".into(),
        ));
    }
    let enc_cfg = cfg.logit_encoder_cfg(table.dim(), alphabet.len());
    let mut init_rng = Rng::seed(mix_seed(cfg.seed, &["warm-init"]));
    let mut data_rng = Rng::seed(mix_seed(cfg.seed, &["warm-data"]));
    let mut train_rng = Rng::seed(mix_seed(cfg.seed, &["warm-train"]));
    let encoder = init_params(&enc_cfg, &mut init_rng)?;
    let (encoder, crf_params, losses) = run_crf_training(
        &task.out_of_domain,
        &alphabet,
        table,
        cfg,
        cfg.warm_epochs(),
        cfg.batch_warm_up,
        encoder,
        &mut data_rng,
        &mut train_rng,
        &mut |_, _, _, _| Ok(()),
    )?;
    Ok(TrainedModel {
        regime: cfg.regime,
        alphabet,
        encoder,
        crf: Some(crf_params),
        prototypes: None,
        history: TrainingHistory { loss: losses, test_f1: vec![] },
    })
}

/// Two-stage baseline: out-of-domain pre-training, then in-domain CRF
/// training from warm-started weights.
pub fn train_warmbase(
    task: &TaskDataset,
    table: &EmbeddingTable,
    cfg: &RegimeConfig,
    mut probe: Option<EpochProbe>,
) -> Result<TrainedModel> {
    cfg.validate()?;
    let pretrained = pretrain_out_of_domain(task, table, cfg)?;
    let alphabet = task.alphabet();
    let enc_cfg = cfg.logit_encoder_cfg(table.dim(), alphabet.len());
    let mut init_rng = Rng::seed(mix_seed(cfg.seed, &["init"]));
    let mut data_rng = Rng::seed(mix_seed(cfg.seed, &["data"]));
    let mut train_rng = Rng::seed(mix_seed(cfg.seed, &["train"]));
    let encoder = warm_start(&pretrained, &enc_cfg, &mut init_rng)?;
    let mut f1s = Vec::new();
    let mut on_epoch = |epoch: usize, enc: &EncoderParams, crf: &CrfParams, loss: f64| {
        if let Some(probe) = probe.as_mut() {
            let snapshot = TrainedModel {
                regime: cfg.regime,
                alphabet: alphabet.clone(),
                encoder: enc.clone(),
                crf: Some(crf.clone()),
                prototypes: None,
                history: TrainingHistory { loss: vec![loss], test_f1: vec![] },
            };
            f1s.push(probe(epoch, &snapshot)?);
        }
        Ok(())
    };
    let (encoder, crf_params, losses) = run_crf_training(
        &task.in_domain,
        &alphabet,
        table,
        cfg,
        cfg.epochs,
        cfg.batch_in_domain,
        encoder,
        &mut data_rng,
        &mut train_rng,
        &mut on_epoch,
    )?;
    Ok(TrainedModel {
        regime: cfg.regime,
        alphabet,
        encoder,
        crf: Some(crf_params),
        prototypes: None,
        history: TrainingHistory { loss: losses, test_f1: f1s },
    })
}

/// Episode training for the metric regimes. Each step draws an in-domain
/// episode with probability `cfg.p_in_domain`, otherwise an out-of-domain
/// one; `zero_shot` forces the probability to zero and bars the in-domain
/// sample from every gradient update. Prototypes are frozen at the end from
/// the full in-domain sample.
pub fn train_proto(
    task: &TaskDataset,
    table: &EmbeddingTable,
    cfg: &RegimeConfig,
    warm: Option<EncoderParams>,
    use_crf: bool,
    zero_shot: bool,
    mut probe: Option<EpochProbe>,
) -> Result<TrainedModel> {
    cfg.validate()?;
    let alphabet = task.alphabet();
    let p = if zero_shot { 0.0 } else { cfg.p_in_domain };
    let enc_cfg = cfg.proto_encoder_cfg(table.dim());
    let mut init_rng = Rng::seed(mix_seed(cfg.seed, &["init"]));
    let mut data_rng = Rng::seed(mix_seed(cfg.seed, &["data"]));
    let mut train_rng = Rng::seed(mix_seed(cfg.seed, &["train"]));
    let mut encoder = match warm {
        Some(params) => {
            if params.cfg != enc_cfg {
                return Err(Error::Contract(format!(
                    "warm-started encoder config {:?} does not match target {:?}",
                    params.cfg, enc_cfg
                )));
            }
            // Burn the init stream either way so warm and cold paths stay
            // step-for-step comparable under one seed.
            let _ = init_params(&enc_cfg, &mut init_rng)?;
            params
        }
        None => init_params(&enc_cfg, &mut init_rng)?,
    };
    let mut crf_params = if use_crf {
        Some(CrfParams::zeros(alphabet.len()))
    } else {
        None
    };
    let mut adam = Adam::new(cfg.lr, cfg.l2);
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut f1s = Vec::new();
    let in_domain_refs: Vec<&LabeledSentence> = task.in_domain.iter().collect();
    let ood_index = corpus::PoolIndex::build(&task.out_of_domain);
    for epoch in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        for step in 0..cfg.steps_per_epoch {
            let mut run = || -> Result<f64> {
                let in_domain = !zero_shot && draws_in_domain(&mut data_rng, p);
                let episode = if in_domain {
                    corpus::split_episode(&task.in_domain, &mut data_rng)?
                } else {
                    match corpus::sample_out_of_domain_episode_indexed(
                        &task.out_of_domain,
                        &ood_index,
                        &mut data_rng,
                        cfg.n_support,
                    ) {
                        Ok(e) => e,
                        Err(Error::Sampling(msg)) if !zero_shot => {
                            log::warn!(
                                "out-of-domain episode unavailable ({msg}); using in-domain"
                            );
                            corpus::split_episode(&task.in_domain, &mut data_rng)?
                        }
                        Err(e) => return Err(e),
                    }
                };
                let episode = apply_caps(episode, cfg, &mut data_rng);
                let episode_alphabet = if in_domain {
                    alphabet.clone()
                } else {
                    // Out-of-domain episodes are relabeled to one surviving
                    // class; score them over that class's structural tag set
                    // so a query-only I- tag still has a column.
                    let classes = corpus::classes(&episode.support);
                    let class = classes.first().ok_or_else(|| {
                        Error::Sampling("out-of-domain episode has no tagged support".into())
                    })?;
                    corpus::class_alphabet(class, task.scheme)
                };
                let mut tape = Tape::new(Mode::Train);
                let enc_nodes = encoder.register(&mut tape);
                let loss = match crf_params.as_mut() {
                    None => protohead::episode_loss(
                        &mut tape,
                        &enc_nodes,
                        table,
                        &episode,
                        &episode_alphabet,
                        cfg.dropout,
                        &mut train_rng,
                    )?,
                    Some(crf_mut) => {
                        let crf_nodes = crf_mut.register(&mut tape);
                        let loss = proto_crf_loss(
                            &mut tape,
                            &enc_nodes,
                            &crf_nodes,
                            table,
                            &episode,
                            &episode_alphabet,
                            cfg.dropout,
                            &mut train_rng,
                        )?;
                        tape.backward(loss)?;
                        let ids = enc_nodes.ids();
                        apply_adam(&mut adam, &tape, &mut encoder, &ids, Some((crf_mut, &crf_nodes)))?;
                        return Ok(tape.value(loss).item());
                    }
                };
                tape.backward(loss)?;
                let ids = enc_nodes.ids();
                apply_adam(&mut adam, &tape, &mut encoder, &ids, None)?;
                Ok(tape.value(loss).item())
            };
            let loss = run().map_err(|e| step_context(e, cfg.regime, epoch, step))?;
            epoch_loss += loss;
        }
        let mean = epoch_loss / cfg.steps_per_epoch as f64;
        losses.push(mean);
        log::debug!("{} epoch {epoch}: loss {mean:.6}", cfg.regime);
        if let Some(probe) = probe.as_mut() {
            let snapshot = TrainedModel {
                regime: cfg.regime,
                alphabet: alphabet.clone(),
                encoder: encoder.clone(),
                crf: crf_params.clone(),
                prototypes: Some(build_prototype_set(
                    &encoder,
                    table,
                    &in_domain_refs,
                    &alphabet,
                )?),
                history: TrainingHistory { loss: vec![mean], test_f1: vec![] },
            };
            f1s.push(probe(epoch, &snapshot)?);
        }
    }
    let prototypes = build_prototype_set(&encoder, table, &in_domain_refs, &alphabet)?;
    Ok(TrainedModel {
        regime: cfg.regime,
        alphabet,
        encoder,
        crf: crf_params,
        prototypes: Some(prototypes),
        history: TrainingHistory { loss: losses, test_f1: f1s },
    })
}

/// Episode objective for the CRF-decoding metric regime: transition-model
/// negative log likelihood over the query's prototype logit rows, averaged
/// per query sentence.
#[allow(clippy::too_many_arguments)]
fn proto_crf_loss(
    tape: &mut Tape,
    enc_nodes: &EncoderNodes,
    crf_nodes: &CrfNodes,
    table: &EmbeddingTable,
    episode: &Episode,
    alphabet: &[String],
    dropout: f64,
    rng: &mut Rng,
) -> Result<NodeId> {
    let b_o = enc_nodes
        .b_o
        .ok_or_else(|| Error::Contract("encoder was built without an outside bias".into()))?;
    let support_refs: Vec<&LabeledSentence> = episode.support.iter().collect();
    let query_refs: Vec<&LabeledSentence> = episode.query.iter().collect();
    let support_enc = encode_batch(tape, enc_nodes, table, &support_refs, dropout, rng)?;
    let support_tags: Vec<&[String]> = episode.support.iter().map(|s| s.tags.as_slice()).collect();
    let protos = prototype_nodes_from_encodings(tape, &support_enc, &support_tags)?;
    let query_enc = encode_batch(tape, enc_nodes, table, &query_refs, dropout, rng)?;
    let mut nlls = Vec::with_capacity(query_refs.len());
    for (enc, sentence) in query_enc.iter().zip(&episode.query) {
        let mut rows = Vec::with_capacity(sentence.len());
        for t in 0..sentence.len() {
            let row = tape.row(*enc, t)?;
            rows.push(token_logit_row(tape, row, &protos, b_o, alphabet)?);
        }
        let emissions = tape.stack_rows(&rows)?;
        let indices = tag_indices(sentence, alphabet)?;
        nlls.push(crf::crf_nll(tape, crf_nodes, emissions, &indices)?);
    }
    tape.mean_nodes(&nlls)
}

/// Trains one cell under its configured regime.
pub fn train(
    task: &TaskDataset,
    table: &EmbeddingTable,
    cfg: &RegimeConfig,
    probe: Option<EpochProbe>,
) -> Result<TrainedModel> {
    cfg.validate()?;
    match cfg.regime {
        Regime::Base => train_base(task, table, cfg, probe),
        Regime::WarmBase => train_warmbase(task, table, cfg, probe),
        Regime::BaseProto => {
            let mut c = cfg.clone();
            c.p_in_domain = 1.0;
            train_proto(task, table, &c, None, false, false, probe)
        }
        Regime::Protonet => train_proto(task, table, cfg, None, false, false, probe),
        Regime::WarmProto | Regime::WarmProtoCrf | Regime::WarmProtoZero => {
            let pretrained = pretrain_out_of_domain(task, table, cfg)?;
            let enc_cfg = cfg.proto_encoder_cfg(table.dim());
            let mut warm_rng = Rng::seed(mix_seed(cfg.seed, &["warm-transfer"]));
            let warm = warm_start(&pretrained, &enc_cfg, &mut warm_rng)?;
            let use_crf = cfg.regime == Regime::WarmProtoCrf;
            let zero_shot = cfg.regime == Regime::WarmProtoZero;
            train_proto(task, table, cfg, Some(warm), use_crf, zero_shot, probe)
        }
    }
}
