use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Axis};

use super::{discriminator_spec, disc_logits, ActionEmbedding, EmbeddingMode};
use crate::dialenv::{handcrafted_reward, ActionCatalog, CompositeAction, RewardSource, SchemaRegistry, StateVector, TurnStatus};
use crate::diffcore::{softplus, CheckpointReader, CheckpointWriter, NetParams};
use crate::error::{reject, Error, Result};
use crate::statevae::{state_matrix, VaeParams};
use crate::xfer::{factorize_action, FactoredVocab};

/// Lower clamp of `log D`: `ln 1e-6`.
pub const LOG_D_FLOOR: f64 = -13.815510557964274;

const MAGIC: &[u8; 4] = b"DRWD";
const VERSION: u32 = 1;

/// Frozen encoder + discriminator scoring `(state, action)` pairs.
#[derive(Debug, Clone)]
pub struct RewardModel {
    encoder: VaeParams,
    discriminator: NetParams,
    embedding: ActionEmbedding,
    catalog: ActionCatalog,
    catalog_fingerprint: String,
    t_max: u32,
}

impl RewardModel {
    pub fn new(
        encoder: VaeParams,
        discriminator: NetParams,
        embedding: ActionEmbedding,
        catalog: ActionCatalog,
        reg: &SchemaRegistry,
        t_max: u32,
    ) -> Result<Self> {
        if embedding.num_actions() != catalog.len() {
            return Err(Error::Config(format!(
                "embedding has {} actions, catalog {}",
                embedding.num_actions(),
                catalog.len()
            )));
        }
        let want = encoder.latent_dim() + embedding.width();
        if discriminator.spec().input_dim() != want || discriminator.spec().output_dim() != 1 {
            return Err(Error::Config(format!(
                "discriminator input {} does not match latent + action width {want}",
                discriminator.spec().input_dim()
            )));
        }
        let catalog_fingerprint = catalog.fingerprint(reg);
        Ok(Self {
            encoder,
            discriminator,
            embedding,
            catalog,
            catalog_fingerprint,
            t_max,
        })
    }

    pub fn encoder(&self) -> &VaeParams {
        &self.encoder
    }

    pub fn discriminator(&self) -> &NetParams {
        &self.discriminator
    }

    pub fn embedding_mode(&self) -> EmbeddingMode {
        self.embedding.mode()
    }

    pub fn catalog(&self) -> &ActionCatalog {
        &self.catalog
    }

    pub fn catalog_fingerprint(&self) -> &str {
        &self.catalog_fingerprint
    }

    pub fn t_max(&self) -> u32 {
        self.t_max
    }

    pub fn state_dim(&self) -> usize {
        self.encoder.state_dim()
    }

    /// Fails with a configuration error unless the model can score actions
    /// of `catalog` in states of width `state_dim` with the same `t_max`.
    pub fn check_compatible(
        &self,
        catalog: &ActionCatalog,
        reg: &SchemaRegistry,
        state_dim: usize,
        t_max: u32,
    ) -> Result<()> {
        if state_dim != self.state_dim() {
            return Err(Error::Config(format!(
                "reward model expects {}-bit states, environment produces {state_dim}",
                self.state_dim()
            )));
        }
        if t_max != self.t_max {
            return Err(Error::Config(format!(
                "reward model was built for T = {}, environment uses {t_max}",
                self.t_max
            )));
        }
        match self.embedding.mode() {
            EmbeddingMode::OneHot => {
                let fp = catalog.fingerprint(reg);
                if fp != self.catalog_fingerprint {
                    return Err(Error::Config(format!(
                        "action catalog {fp} differs from the reward model's {}",
                        self.catalog_fingerprint
                    )));
                }
            }
            EmbeddingMode::Factored => {
                let v = FactoredVocab::from_registry(reg);
                if Some(v) != self.embedding.vocab() {
                    return Err(Error::Config("factored action vocabulary differs from the reward model's".into()));
                }
            }
        }
        Ok(())
    }

    fn action_features(&self, action: &CompositeAction, index: Option<usize>) -> Result<Array1<f64>> {
        match self.embedding.mode() {
            EmbeddingMode::Factored => {
                let vocab = self.embedding.vocab().expect("factored embedding has a vocabulary");
                Ok(Array1::from(factorize_action(action, &vocab)?))
            }
            EmbeddingMode::OneHot => {
                let i = match index {
                    Some(i) if i < self.catalog.len() => i,
                    Some(i) => reject!("action index {i} outside a {}-action catalog", self.catalog.len()),
                    None => self.catalog.index_of(action).unwrap_or_else(|| self.catalog.nearest(action)),
                };
                Ok(self.embedding.table().row(i).to_owned())
            }
        }
    }

    fn log_d_rows(&self, states: &[StateVector], feats: Array2<f64>) -> Result<Vec<f64>> {
        if states.is_empty() {
            return Ok(Vec::new());
        }
        if let Some(s) = states.iter().find(|s| s.dim() != self.state_dim()) {
            reject!("state has {} bits, reward model expects {}", s.dim(), self.state_dim());
        }
        let z = self.encoder.embed_batch(&state_matrix(states))?;
        let x = ndarray::concatenate(Axis(1), &[z.view(), feats.view()]).expect("row counts agree");
        Ok(disc_logits(&self.discriminator, &x)?
            .iter()
            .map(|&l| (-softplus(-l)).max(LOG_D_FLOOR))
            .collect())
    }

    /// Clamped `log D(s, a)`.
    pub fn log_d(&self, state: &StateVector, action: &CompositeAction, index: Option<usize>) -> Result<f64> {
        let f = self.action_features(action, index)?;
        let feats = f.insert_axis(Axis(0));
        Ok(self.log_d_rows(std::slice::from_ref(state), feats)?[0])
    }

    /// Clamped `log D` for catalog indices.
    pub fn log_d_indexed(&self, states: &[StateVector], indices: &[usize]) -> Result<Vec<f64>> {
        if states.len() != indices.len() {
            reject!("{} states for {} actions", states.len(), indices.len());
        }
        if let Some(&i) = indices.iter().find(|&&i| i >= self.catalog.len()) {
            reject!("action index {i} outside a {}-action catalog", self.catalog.len());
        }
        let acts: Vec<&CompositeAction> = indices.iter().map(|&i| &self.catalog.actions()[i]).collect();
        let feats = match self.embedding.mode() {
            EmbeddingMode::OneHot => self.embedding.rows(indices),
            EmbeddingMode::Factored => self.composite_features(&acts)?,
        };
        self.log_d_rows(states, feats)
    }

    /// Clamped `log D` for arbitrary composite actions.
    pub fn log_d_composite(&self, states: &[StateVector], actions: &[CompositeAction]) -> Result<Vec<f64>> {
        if states.len() != actions.len() {
            reject!("{} states for {} actions", states.len(), actions.len());
        }
        let mut feats = Array2::zeros((actions.len(), self.embedding.width()));
        for (mut row, a) in feats.rows_mut().into_iter().zip(actions) {
            row.assign(&self.action_features(a, None)?);
        }
        self.log_d_rows(states, feats)
    }

    fn composite_features(&self, actions: &[&CompositeAction]) -> Result<Array2<f64>> {
        let mut feats = Array2::zeros((actions.len(), self.embedding.width()));
        for (mut row, a) in feats.rows_mut().into_iter().zip(actions) {
            row.assign(&self.action_features(a, None)?);
        }
        Ok(feats)
    }

    /// Handcrafted reward plus clamped `log D(s, a)`.
    pub fn score(
        &self,
        state: &StateVector,
        action: &CompositeAction,
        index: Option<usize>,
        status: TurnStatus,
        t_max: u32,
    ) -> Result<f64> {
        Ok(handcrafted_reward(status, t_max) + self.log_d(state, action, index)?)
    }

    pub fn write<W: Write>(&self, w: W, reg: &SchemaRegistry) -> Result<()> {
        let mut w = CheckpointWriter::new(w);
        w.magic(MAGIC)?;
        w.u32(VERSION)?;
        w.u32(self.t_max)?;
        w.u8(match self.embedding.mode() {
            EmbeddingMode::OneHot => 0,
            EmbeddingMode::Factored => 1,
        })?;
        w.str(&self.catalog_fingerprint)?;
        w.str(&self.catalog.to_text(reg))?;
        w.net(&self.discriminator)?;
        self.encoder.save(w.into_inner())
    }

    pub fn read<R: Read>(r: R, reg: &SchemaRegistry) -> Result<Self> {
        let mut r = CheckpointReader::new(r);
        r.expect_magic(MAGIC)?;
        let v = r.u32()?;
        if v != VERSION {
            return Err(Error::Checkpoint(format!("unsupported reward checkpoint version {v}")));
        }
        let t_max = r.u32()?;
        let mode = match r.u8()? {
            0 => EmbeddingMode::OneHot,
            1 => EmbeddingMode::Factored,
            m => return Err(Error::Checkpoint(format!("unknown embedding mode {m}"))),
        };
        let fingerprint = r.str()?;
        let catalog = ActionCatalog::from_text(&r.str()?, reg).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if catalog.fingerprint(reg) != fingerprint {
            return Err(Error::Checkpoint("stored catalog does not match its fingerprint".into()));
        }
        let disc = r.net()?;
        let encoder = VaeParams::load(r.into_inner())?;
        let embedding = ActionEmbedding::new(mode, &catalog, reg)?;
        if disc.spec() != &discriminator_spec(encoder.latent_dim() + embedding.width(), disc.spec().layer_sizes()[1])? {
            return Err(Error::Checkpoint("discriminator shape does not match encoder and action embedding".into()));
        }
        Self::new(encoder, disc, embedding, catalog, reg, t_max).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: &Path, reg: &SchemaRegistry) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write(&mut w, reg)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path, reg: &SchemaRegistry) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?), reg)
    }
}

impl RewardSource for RewardModel {
    fn reward(&self, state: &StateVector, action: &CompositeAction, index: Option<usize>, status: TurnStatus, t: u32) -> f64 {
        self.score(state, action, index, status, t)
            .unwrap_or_else(|_| handcrafted_reward(status, t) + LOG_D_FLOOR)
    }
}
