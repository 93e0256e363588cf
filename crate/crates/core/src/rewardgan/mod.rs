//! Offline adversarial reward learning.
//!
//! A generator maps noise to a simulated `(latent state, action)` pair via a
//! shared trunk, a Gumbel-Softmax action head and a latent state head. The
//! discriminator sees real pairs (encoder mean of a corpus state and its
//! action) against a mixture of generator samples, action-mismatched real
//! states and replayed past generator samples. After training the
//! generator is discarded and the discriminator becomes the reward.

mod gumbel;
mod model;

use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use gumbel::{
    argmax, gumbel_matrix, gumbel_noise, gumbel_sample, gumbel_softmax, gumbel_softmax_backward,
    gumbel_softmax_rows, straight_through, straight_through_rows,
};
pub use model::{RewardModel, LOG_D_FLOOR};

use crate::dialenv::{ActionCatalog, Corpus, SchemaRegistry};
use crate::diffcore::{sigmoid, softplus, Activation, NetParams, NetSpec, OptState, Optimizer, ParamSet};
use crate::error::{reject, Error, Result};
use crate::statevae::{state_matrix, VaeParams};
use crate::xfer::{factorize_action, FactoredVocab};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingMode {
    #[default]
    OneHot,
    Factored,
}

/// Fixed catalog-index → action-feature table.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionEmbedding {
    mode: EmbeddingMode,
    table: Array2<f64>,
    vocab: Option<FactoredVocab>,
}

impl ActionEmbedding {
    pub fn one_hot(num_actions: usize) -> Self {
        Self {
            mode: EmbeddingMode::OneHot,
            table: Array2::eye(num_actions),
            vocab: None,
        }
    }

    pub fn factored(catalog: &ActionCatalog, vocab: FactoredVocab) -> Result<Self> {
        let mut table = Array2::zeros((catalog.len(), vocab.width()));
        for (mut row, a) in table.rows_mut().into_iter().zip(catalog.actions()) {
            row.assign(&Array1::from(factorize_action(a, &vocab)?));
        }
        Ok(Self {
            mode: EmbeddingMode::Factored,
            table,
            vocab: Some(vocab),
        })
    }

    pub fn new(mode: EmbeddingMode, catalog: &ActionCatalog, reg: &SchemaRegistry) -> Result<Self> {
        match mode {
            EmbeddingMode::OneHot => Ok(Self::one_hot(catalog.len())),
            EmbeddingMode::Factored => Self::factored(catalog, FactoredVocab::from_registry(reg)),
        }
    }

    pub fn mode(&self) -> EmbeddingMode {
        self.mode
    }

    pub fn vocab(&self) -> Option<FactoredVocab> {
        self.vocab
    }

    pub fn num_actions(&self) -> usize {
        self.table.nrows()
    }

    pub fn width(&self) -> usize {
        self.table.ncols()
    }

    pub fn table(&self) -> &Array2<f64> {
        &self.table
    }

    pub fn rows(&self, indices: &[usize]) -> Array2<f64> {
        self.table.select(Axis(0), indices)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GanConfig {
    pub noise_dim: usize,
    pub hidden: usize,
    pub disc_hidden: usize,
    pub tau: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub eval_every: usize,
    /// Evaluations without held-out AUC improvement before stopping.
    pub patience: usize,
    pub lr_d: f64,
    pub lr_g: f64,
    pub history_capacity: usize,
    pub generator_frac: f64,
    pub mismatch_frac: f64,
    pub history_frac: f64,
    pub holdout_frac: f64,
    /// Feed straight-through one-hot actions to the discriminator (`true`)
    /// or the relaxed Gumbel-Softmax sample.
    pub hard_actions: bool,
    pub embedding: EmbeddingMode,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            noise_dim: 64,
            hidden: 128,
            disc_hidden: 128,
            tau: 0.8,
            batch_size: 64,
            max_steps: 3000,
            eval_every: 100,
            patience: 5,
            lr_d: 1e-3,
            lr_g: 1e-3,
            history_capacity: 10_000,
            generator_frac: 0.7,
            mismatch_frac: 0.15,
            history_frac: 0.15,
            holdout_frac: 0.1,
            hard_actions: true,
            embedding: EmbeddingMode::OneHot,
        }
    }
}

impl GanConfig {
    fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            reject!("Gumbel-Softmax temperature must be positive");
        }
        if self.batch_size == 0 || self.noise_dim == 0 || self.hidden == 0 || self.disc_hidden == 0 {
            reject!("GAN sizes must be positive");
        }
        let mix = [self.generator_frac, self.mismatch_frac, self.history_frac];
        if mix.iter().any(|&f| !(0.0..=1.0).contains(&f)) || (mix.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            reject!("negative-source fractions must be in [0, 1] and sum to 1");
        }
        if !(0.0..1.0).contains(&self.holdout_frac) {
            reject!("holdout fraction must be in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorParams {
    pub trunk: NetParams,
    pub action_head: NetParams,
    pub state_head: NetParams,
}

impl ParamSet for GeneratorParams {
    fn num_params(&self) -> usize {
        self.trunk.num_params() + self.action_head.num_params() + self.state_head.num_params()
    }

    fn write_flat(&self, out: &mut Vec<f64>) {
        self.trunk.write_flat(out);
        self.action_head.write_flat(out);
        self.state_head.write_flat(out);
    }

    fn read_flat(&mut self, src: &[f64]) -> usize {
        let mut at = self.trunk.read_flat(src);
        at += self.action_head.read_flat(&src[at..]);
        at + self.state_head.read_flat(&src[at..])
    }
}

/// Forward values of one generator pass.
#[derive(Debug, Clone)]
pub struct GeneratedBatch {
    pub latent: Array2<f64>,
    /// Relaxed Gumbel-Softmax sample.
    pub soft: Array2<f64>,
    /// Straight-through one-hot value.
    pub hard: Array2<f64>,
    pub actions: Vec<usize>,
    caches: Option<GenCaches>,
}

#[derive(Debug, Clone)]
struct GenCaches {
    trunk: crate::diffcore::Cache,
    action: crate::diffcore::Cache,
    state: crate::diffcore::Cache,
}

impl GeneratorParams {
    pub fn init<R: Rng + ?Sized>(
        noise_dim: usize,
        hidden: usize,
        num_actions: usize,
        latent: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let trunk = NetParams::init(NetSpec::new(vec![noise_dim, hidden], vec![Activation::Relu])?, rng);
        let action_head = NetParams::init(
            NetSpec::mlp(&[hidden, hidden, num_actions], Activation::Relu, Activation::Identity)?,
            rng,
        );
        let state_head = NetParams::init(
            NetSpec::mlp(&[hidden, hidden, latent], Activation::Relu, Activation::Identity)?,
            rng,
        );
        Ok(Self {
            trunk,
            action_head,
            state_head,
        })
    }

    pub fn noise_dim(&self) -> usize {
        self.trunk.spec().input_dim()
    }

    pub fn num_actions(&self) -> usize {
        self.action_head.spec().output_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.state_head.spec().output_dim()
    }

    /// Runs the generator on noise rows `z` with Gumbel noise `g`.
    pub fn generate(&self, z: &Array2<f64>, g: &Array2<f64>, tau: f64) -> Result<GeneratedBatch> {
        self.run(z, g, tau, true)
    }

    fn run(&self, z: &Array2<f64>, g: &Array2<f64>, tau: f64, keep: bool) -> Result<GeneratedBatch> {
        let (h, trunk) = self.trunk.forward(z)?;
        let (logits, action) = self.action_head.forward(&h)?;
        let (latent, state) = self.state_head.forward(&h)?;
        let soft = gumbel_softmax_rows(&logits, tau, g)?;
        let hard = straight_through_rows(&soft);
        let actions = hard.rows().into_iter().map(|r| r.iter().position(|&v| v == 1.0).unwrap()).collect();
        Ok(GeneratedBatch {
            latent,
            soft,
            hard,
            actions,
            caches: keep.then_some(GenCaches { trunk, action, state }),
        })
    }

    /// Parameter gradients given gradients w.r.t. the latent output and the
    /// action vector passed on (hard or soft: straight-through routes both
    /// to the relaxed sample unchanged).
    pub fn backward(
        &self,
        out: &GeneratedBatch,
        grad_latent: &Array2<f64>,
        grad_action: &Array2<f64>,
        tau: f64,
    ) -> Result<GeneratorParams> {
        let Some(c) = &out.caches else {
            reject!("generator batch was produced without caches");
        };
        let g_logits = gumbel_softmax_backward(&out.soft, grad_action, tau);
        let (g_action, gh_a) = self.action_head.backward(&c.action, &g_logits)?;
        let (g_state, gh_s) = self.state_head.backward(&c.state, grad_latent)?;
        let (g_trunk, _) = self.trunk.backward(&c.trunk, &(gh_a + gh_s))?;
        Ok(GeneratorParams {
            trunk: g_trunk,
            action_head: g_action,
            state_head: g_state,
        })
    }
}

/// One simulated pair from a single noise vector: the latent state and the
/// one-hot action.
pub fn generate_pair<R: Rng + ?Sized>(
    gen: &GeneratorParams,
    z: &[f64],
    tau: f64,
    rng: &mut R,
) -> Result<(Array1<f64>, Array1<f64>)> {
    if z.len() != gen.noise_dim() {
        reject!("noise has {} entries, generator expects {}", z.len(), gen.noise_dim());
    }
    let z = Array2::from_shape_vec((1, z.len()), z.to_vec()).expect("row shape");
    let g = gumbel_matrix(rng, 1, gen.num_actions());
    let out = gen.run(&z, &g, tau, false)?;
    Ok((out.latent.row(0).to_owned(), out.hard.row(0).to_owned()))
}

pub fn sample_generator_noise<R: Rng + ?Sized>(rng: &mut R, rows: usize, dim: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, dim), |_| rng.sample(StandardNormal))
}

pub fn discriminator_spec(input: usize, hidden: usize) -> Result<NetSpec> {
    NetSpec::new(
        vec![input, hidden, hidden, 1],
        vec![Activation::Relu, Activation::Relu, Activation::Identity],
    )
}

/// Discriminator logits, one per row of `x` (latent ⊕ action features).
pub fn disc_logits(disc: &NetParams, x: &Array2<f64>) -> Result<Array1<f64>> {
    Ok(disc.predict(x)?.column(0).to_owned())
}

/// `D = σ(logit)`.
pub fn disc_prob(disc: &NetParams, x: &Array2<f64>) -> Result<Array1<f64>> {
    Ok(disc_logits(disc, x)?.mapv(sigmoid))
}

/// Binary cross-entropy with real pairs labelled 1 and simulated pairs 0:
/// `−mean log D(real) − mean log(1 − D(sim))`.
pub fn disc_loss_and_grad(disc: &NetParams, real: &Array2<f64>, fake: &Array2<f64>) -> Result<(f64, NetParams)> {
    if real.nrows() == 0 || fake.nrows() == 0 {
        reject!("discriminator batches must be non-empty");
    }
    let x = concatenate(Axis(0), &[real.view(), fake.view()]).map_err(|e| Error::RejectedInput(e.to_string()))?;
    let (out, cache) = disc.forward(&x)?;
    let nr = real.nrows();
    let (fr, ff) = (1.0 / nr as f64, 1.0 / fake.nrows() as f64);
    let mut loss = 0.0;
    let mut g = Array2::zeros(out.dim());
    for (i, &l) in out.column(0).iter().enumerate() {
        if i < nr {
            loss += softplus(-l) * fr;
            g[[i, 0]] = (sigmoid(l) - 1.0) * fr;
        } else {
            loss += softplus(l) * ff;
            g[[i, 0]] = sigmoid(l) * ff;
        }
    }
    let (grads, _) = disc.backward(&cache, &g)?;
    Ok((loss, grads))
}

/// Generator loss `mean log(1 − D(sim)) = −mean softplus(logit)` and its
/// gradient, with the discriminator frozen.
pub fn gen_loss_and_grad(
    gen: &GeneratorParams,
    disc: &NetParams,
    emb: &ActionEmbedding,
    z: &Array2<f64>,
    g: &Array2<f64>,
    tau: f64,
    hard: bool,
) -> Result<(f64, GeneratorParams)> {
    let out = gen.generate(z, g, tau)?;
    let action = if hard { &out.hard } else { &out.soft };
    let feat = action.dot(emb.table());
    let x = concatenate(Axis(1), &[out.latent.view(), feat.view()]).map_err(|e| Error::RejectedInput(e.to_string()))?;
    let (l, cache) = disc.forward(&x)?;
    let n = z.nrows() as f64;
    let mut loss = 0.0;
    let mut gl = Array2::zeros(l.dim());
    for (i, &v) in l.column(0).iter().enumerate() {
        loss -= softplus(v) / n;
        gl[[i, 0]] = -sigmoid(v) / n;
    }
    let (_, gx) = disc.backward(&cache, &gl)?;
    let latent = gen.latent_dim();
    let g_latent = gx.slice(s![.., ..latent]).to_owned();
    let g_action = gx.slice(s![.., latent..]).dot(&emb.table().t());
    let grads = gen.backward(&out, &g_latent, &g_action, tau)?;
    Ok((loss, grads))
}

/// Ring store of simulated `(latent, action)` pairs; once full, new pairs
/// overwrite a uniformly chosen slot.
#[derive(Debug, Clone)]
pub struct HistoryBuffer {
    capacity: usize,
    items: Vec<(Array1<f64>, usize)>,
}

impl HistoryBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            items: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push<R: Rng + ?Sized>(&mut self, latent: Array1<f64>, action: usize, rng: &mut R) {
        if self.capacity == 0 {
            return;
        }
        if self.items.len() < self.capacity {
            self.items.push((latent, action));
        } else {
            let i = rng.random_range(0..self.capacity);
            self.items[i] = (latent, action);
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<&(Array1<f64>, usize)> {
        if self.items.is_empty() {
            None
        } else {
            Some(&self.items[rng.random_range(0..self.items.len())])
        }
    }
}

/// A catalog index uniformly drawn from the `num_actions − 1` entries other
/// than `original`.
pub fn mismatch_action<R: Rng + ?Sized>(original: usize, num_actions: usize, rng: &mut R) -> usize {
    let r = rng.random_range(0..num_actions - 1);
    if r >= original {
        r + 1
    } else {
        r
    }
}

/// `n` corpus states (encoder means) paired with an action other than the
/// one taken there.
pub fn mismatch_negatives<R: Rng + ?Sized>(
    corpus: &Corpus,
    vae: &VaeParams,
    rng: &mut R,
    n: usize,
) -> Result<Vec<(Array1<f64>, usize)>> {
    let k = corpus.catalog.len();
    if k < 2 {
        return Err(Error::Config("mismatch negatives need at least two catalog actions".into()));
    }
    let pairs = corpus.pairs();
    if pairs.is_empty() {
        return Err(Error::Config("empty corpus".into()));
    }
    let picks: Vec<usize> = (0..n).map(|_| rng.random_range(0..pairs.len())).collect();
    let states: Vec<_> = picks.iter().map(|&i| pairs[i].0.clone()).collect();
    let latents = if states.is_empty() {
        Array2::zeros((0, vae.latent_dim()))
    } else {
        vae.embed_batch(&state_matrix(&states))?
    };
    Ok(picks
        .iter()
        .zip(latents.rows())
        .map(|(&i, z)| (z.to_owned(), mismatch_action(pairs[i].1, k, rng)))
        .collect())
}

/// Area under the ROC curve of `pos` scores against `neg` scores (ties
/// count one half).
pub fn auc(pos: &[f64], neg: &[f64]) -> f64 {
    if pos.is_empty() || neg.is_empty() {
        return 0.5;
    }
    let mut all: Vec<(f64, bool)> = pos.iter().map(|&v| (v, true)).chain(neg.iter().map(|&v| (v, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let avg_rank = (i + j + 1) as f64 / 2.0;
        rank_sum += all[i..j].iter().filter(|x| x.1).count() as f64 * avg_rank;
        i = j;
    }
    let np = pos.len() as f64;
    (rank_sum - np * (np + 1.0) / 2.0) / (np * neg.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GanCurvePoint {
    pub step: usize,
    pub d_loss: f64,
    pub g_loss: f64,
    pub heldout_auc: f64,
    pub mean_d_real: f64,
    pub mean_d_sim: f64,
}

#[derive(Debug, Clone)]
pub struct GanReport {
    pub curve: Vec<GanCurvePoint>,
    pub best_auc: f64,
    pub steps: usize,
    pub max_history: usize,
    pub train_pairs: usize,
    pub heldout_pairs: usize,
}

/// Corpus pairs as encoder-mean latents plus catalog indices.
struct PairSet {
    latents: Array2<f64>,
    actions: Vec<usize>,
}

impl PairSet {
    fn features(&self, rows: &[usize], emb: &ActionEmbedding) -> Array2<f64> {
        let z = self.latents.select(Axis(0), rows);
        let acts: Vec<usize> = rows.iter().map(|&r| self.actions[r]).collect();
        join(&z, &emb.rows(&acts))
    }
}

fn join(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    concatenate(Axis(1), &[a.view(), b.view()]).expect("row counts agree")
}

fn split_pairs(
    corpus: &Corpus,
    vae: &VaeParams,
    holdout_frac: f64,
    rng: &mut (impl Rng + ?Sized),
) -> Result<(PairSet, PairSet)> {
    let mut order: Vec<usize> = (0..corpus.episodes.len()).collect();
    order.shuffle(rng);
    let n_hold = ((corpus.episodes.len() as f64) * holdout_frac).round() as usize;
    let n_hold = if holdout_frac > 0.0 { n_hold.clamp(1, corpus.episodes.len().saturating_sub(1)) } else { 0 };
    let mut held = vec![false; corpus.episodes.len()];
    for &e in &order[..n_hold] {
        held[e] = true;
    }
    let mut parts = [(Vec::new(), Vec::new()), (Vec::new(), Vec::new())];
    for (e, ep) in corpus.episodes.iter().enumerate() {
        let p = &mut parts[held[e] as usize];
        for t in &ep.turns {
            p.0.push(t.state.clone());
            p.1.push(t.index);
        }
    }
    let mk = |(states, actions): (Vec<_>, Vec<usize>)| -> Result<PairSet> {
        let latents = if states.is_empty() {
            Array2::zeros((0, vae.latent_dim()))
        } else {
            vae.embed_batch(&state_matrix(&states))?
        };
        Ok(PairSet { latents, actions })
    };
    let [train, hold] = parts;
    Ok((mk(train)?, mk(hold)?))
}

/// Trains the discriminator against generator, mismatch and history
/// negatives and freezes it together with the encoder.
pub fn train_reward<R: Rng + ?Sized>(
    corpus: &Corpus,
    vae: &VaeParams,
    reg: &SchemaRegistry,
    cfg: &GanConfig,
    t: u32,
    rng: &mut R,
) -> Result<(RewardModel, GanReport)> {
    cfg.validate()?;
    if corpus.num_turns() == 0 {
        return Err(Error::Config("reward training needs a non-empty corpus".into()));
    }
    if vae.state_dim() != corpus.state_dim {
        return Err(Error::Config(format!(
            "encoder expects {}-bit states, corpus has {}",
            vae.state_dim(),
            corpus.state_dim
        )));
    }
    let k = corpus.catalog.len();
    if k < 2 {
        return Err(Error::Config("reward training needs at least two catalog actions".into()));
    }
    let emb = ActionEmbedding::new(cfg.embedding, &corpus.catalog, reg)?;
    let latent = vae.latent_dim();
    let (train, hold) = split_pairs(corpus, vae, cfg.holdout_frac, rng)?;
    let n_train = train.actions.len();
    if n_train == 0 {
        return Err(Error::Config("no training pairs after the held-out split".into()));
    }

    let mut gen = GeneratorParams::init(cfg.noise_dim, cfg.hidden, k, latent, rng)?;
    let mut disc = NetParams::init(discriminator_spec(latent + emb.width(), cfg.disc_hidden)?, rng);
    let mut opt_g = OptState::for_params(Optimizer::adam(cfg.lr_g), &gen);
    let mut opt_d = OptState::for_params(Optimizer::adam(cfg.lr_d), &disc);
    let mut history = HistoryBuffer::new(cfg.history_capacity);

    // fixed held-out evaluation set: real pairs, one mismatch per pair
    let hold_rows: Vec<usize> = (0..hold.actions.len()).collect();
    let eval_real = (!hold_rows.is_empty()).then(|| hold.features(&hold_rows, &emb));
    let eval_mismatch = eval_real.as_ref().map(|_| {
        let acts: Vec<usize> = hold.actions.iter().map(|&a| mismatch_action(a, k, rng)).collect();
        join(&hold.latents, &emb.rows(&acts))
    });

    let b = cfg.batch_size;
    let n_mis = ((b as f64) * cfg.mismatch_frac).round() as usize;
    let n_hist = ((b as f64) * cfg.history_frac).round() as usize;
    let n_gen = b.saturating_sub(n_mis + n_hist);

    let mut curve = Vec::new();
    let mut best = (f64::NEG_INFINITY, disc.clone());
    let mut since_best = 0usize;
    let mut max_history = 0usize;
    let (mut d_acc, mut g_acc, mut acc_n) = (0.0, 0.0, 0usize);
    let mut steps = 0;
    for step in 1..=cfg.max_steps {
        steps = step;
        // discriminator step
        let real_rows: Vec<usize> = (0..b).map(|_| rng.random_range(0..n_train)).collect();
        let real = train.features(&real_rows, &emb);

        let z = sample_generator_noise(rng, n_gen.max(1), cfg.noise_dim);
        let g = gumbel_matrix(rng, n_gen.max(1), k);
        let sim = gen.run(&z, &g, cfg.tau, false)?;
        let sim_actions = if cfg.hard_actions { &sim.hard } else { &sim.soft };
        let mut fake_parts = vec![join(&sim.latent, &sim_actions.dot(emb.table()))];
        if n_gen == 0 {
            fake_parts.clear();
        }
        let mis_rows: Vec<usize> = (0..n_mis).map(|_| rng.random_range(0..n_train)).collect();
        if !mis_rows.is_empty() {
            let acts: Vec<usize> = mis_rows.iter().map(|&r| mismatch_action(train.actions[r], k, rng)).collect();
            fake_parts.push(join(&train.latents.select(Axis(0), &mis_rows), &emb.rows(&acts)));
        }
        if n_hist > 0 {
            let mut zs = Array2::zeros((n_hist, latent));
            let mut acts = Vec::with_capacity(n_hist);
            for i in 0..n_hist {
                let (zl, a) = match history.sample(rng) {
                    Some((zl, a)) => (zl.clone(), *a),
                    None => {
                        let j = rng.random_range(0..sim.actions.len());
                        (sim.latent.row(j).to_owned(), sim.actions[j])
                    }
                };
                zs.row_mut(i).assign(&zl);
                acts.push(a);
            }
            fake_parts.push(join(&zs, &emb.rows(&acts)));
        }
        let views: Vec<_> = fake_parts.iter().map(|p| p.view()).collect();
        let fake = concatenate(Axis(0), &views).expect("same width");
        let (d_loss, d_grads) = disc_loss_and_grad(&disc, &real, &fake)?;
        if !d_loss.is_finite() {
            return Err(Error::TrainingDivergence(format!("discriminator loss became {d_loss} at step {step}")));
        }
        opt_d.step(&mut disc, &d_grads)?;
        if n_gen > 0 {
            for (row, &a) in sim.latent.rows().into_iter().zip(&sim.actions) {
                history.push(row.to_owned(), a, rng);
            }
        }
        max_history = max_history.max(history.len());

        // generator step
        let z = sample_generator_noise(rng, b, cfg.noise_dim);
        let g = gumbel_matrix(rng, b, k);
        let (g_loss, g_grads) = gen_loss_and_grad(&gen, &disc, &emb, &z, &g, cfg.tau, cfg.hard_actions)?;
        if !g_loss.is_finite() {
            return Err(Error::TrainingDivergence(format!("generator loss became {g_loss} at step {step}")));
        }
        opt_g.step(&mut gen, &g_grads)?;
        d_acc += d_loss;
        g_acc += g_loss;
        acc_n += 1;

        if step % cfg.eval_every.max(1) == 0 || step == cfg.max_steps {
            let point = match (&eval_real, &eval_mismatch) {
                (Some(real), Some(mis)) => {
                    let n = real.nrows();
                    let z = sample_generator_noise(rng, n, cfg.noise_dim);
                    let g = gumbel_matrix(rng, n, k);
                    let sim = gen.run(&z, &g, cfg.tau, false)?;
                    let sim_x = join(&sim.latent, &sim.hard.dot(emb.table()));
                    let pos = disc_prob(&disc, real)?;
                    let neg_m = disc_prob(&disc, mis)?;
                    let neg_g = disc_prob(&disc, &sim_x)?;
                    let neg: Vec<f64> = neg_m.iter().chain(neg_g.iter()).copied().collect();
                    GanCurvePoint {
                        step,
                        d_loss: d_acc / acc_n as f64,
                        g_loss: g_acc / acc_n as f64,
                        heldout_auc: auc(pos.as_slice().unwrap(), &neg),
                        mean_d_real: pos.mean().unwrap_or(0.0),
                        mean_d_sim: neg.iter().sum::<f64>() / neg.len() as f64,
                    }
                }
                _ => GanCurvePoint {
                    step,
                    d_loss: d_acc / acc_n as f64,
                    g_loss: g_acc / acc_n as f64,
                    heldout_auc: f64::NAN,
                    mean_d_real: f64::NAN,
                    mean_d_sim: f64::NAN,
                },
            };
            log::debug!("gan step {step} d {:.4} g {:.4} auc {:.4}", point.d_loss, point.g_loss, point.heldout_auc);
            (d_acc, g_acc, acc_n) = (0.0, 0.0, 0);
            curve.push(point);
            if point.heldout_auc.is_nan() {
                best = (f64::NAN, disc.clone());
            } else if point.heldout_auc > best.0 + 1e-4 {
                best = (point.heldout_auc, disc.clone());
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.patience {
                    break;
                }
            }
        }
    }
    let (best_auc, disc) = best;
    let model = RewardModel::new(vae.clone(), disc, emb, corpus.catalog.clone(), reg, t)?;
    Ok((
        model,
        GanReport {
            curve,
            best_auc,
            steps,
            max_history,
            train_pairs: n_train,
            heldout_pairs: hold.actions.len(),
        },
    ))
}
