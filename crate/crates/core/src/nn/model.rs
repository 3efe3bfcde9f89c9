use super::{component_rng, Activation, DistilledIntentEmbedder, IntentEmbedder, Linear, NamedTensor, Parameters, PrevIntentTable, Real, VelocityNet};
use crate::error::Result;
use crate::types::ModelConfig;

/// Everything that is trained: velocity net, intent embedder, previous-intent
/// memory rows, prototype readout and (after distillation) the student embedder.
#[derive(Clone, Debug)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub net: VelocityNet<T>,
    pub embedder: IntentEmbedder<T>,
    pub prev_table: PrevIntentTable<T>,
    /// Maps an intent embedding to a chunk for the prototype loss.
    pub readout: Linear<T>,
    pub distilled: Option<DistilledIntentEmbedder<T>>,
}

impl<T: Real> PartialEq for Model<T> {
    fn eq(&self, o: &Self) -> bool {
        self.config == o.config
            && self.net == o.net
            && self.embedder == o.embedder
            && self.prev_table == o.prev_table
            && self.readout == o.readout
            && self.distilled == o.distilled
    }
}

impl<T: Real> Model<T> {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        Self::with_activation(config, Activation::Silu)
    }

    pub fn with_activation(config: &ModelConfig, activation: Activation) -> Result<Self> {
        config.validate()?;
        let seed = config.seed;
        Ok(Self {
            config: config.clone(),
            net: VelocityNet::new(config, activation, &mut component_rng(seed, "net")),
            embedder: IntentEmbedder::new(config, &mut component_rng(seed, "embedder")),
            prev_table: PrevIntentTable::new(config, &mut component_rng(seed, "prev_table")),
            readout: Linear::new(config.hidden, config.chunk_dim(), &mut component_rng(seed, "readout")),
            distilled: None,
        })
    }

    /// Converts every parameter to another precision.
    pub fn cast<U: Real>(&self) -> Model<U> {
        let mut out = Model::<U>::with_activation(&self.config, self.net.mlp.activation)
            .expect("config was valid");
        if self.distilled.is_some() {
            out.distilled = Some(DistilledIntentEmbedder::new(&self.config, &mut component_rng(0, "cast")));
        }
        let src = self.tensors();
        for ((_, dst), s) in out.tensors_mut().into_iter().zip(src) {
            for (d, v) in dst.iter_mut().zip(s.data) {
                *d = U::from(*v).unwrap();
            }
        }
        out
    }
}

impl<T: Real> Parameters<T> for Model<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<NamedTensor<'a, T>>) {
        self.net.visit(&format!("{prefix}net."), out);
        self.embedder.visit(&format!("{prefix}embedder."), out);
        self.prev_table.visit(&format!("{prefix}prev_table."), out);
        self.readout.visit(&format!("{prefix}readout."), out);
        if let Some(d) = &self.distilled {
            d.visit(&format!("{prefix}distilled."), out);
        }
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut [T])>) {
        self.net.visit_mut(&format!("{prefix}net."), out);
        self.embedder.visit_mut(&format!("{prefix}embedder."), out);
        self.prev_table.visit_mut(&format!("{prefix}prev_table."), out);
        self.readout.visit_mut(&format!("{prefix}readout."), out);
        if let Some(d) = &mut self.distilled {
            d.visit_mut(&format!("{prefix}distilled."), out);
        }
    }
}
