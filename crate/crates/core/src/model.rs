//! The complete set of learnable weights: dual score encoders plus the
//! variational-noise encoder, all living in one [`ParamStore`].

use rand::Rng;

use crate::error::Result;
use crate::params::ParamStore;
use crate::score_net::{DualParams, NetConfig};
use crate::varnoise::VarNoiseEncoder;

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub store: ParamStore,
    pub net: DualParams,
    pub varnoise: VarNoiseEncoder,
}

impl Model {
    /// Builds and randomly initializes every block. The block layout depends
    /// only on `cfg`, so a store read back from disk can be matched against a
    /// freshly built model.
    pub fn new<R: Rng + ?Sized>(cfg: NetConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let varnoise = VarNoiseEncoder::new(&mut store, &cfg, rng);
        let net = DualParams::new(&mut store, cfg, rng);
        Ok(Self { store, net, varnoise })
    }

    pub fn config(&self) -> &NetConfig {
        &self.net.config
    }
}
