//! End-to-end forward pass: spectral filter stage followed by MCAF.

use crate::config::FusionConfig;
use crate::error::{Error, Result};
use crate::freq_filter::{filter_batch, FilterParams, FilteredBatch, Modality};
use crate::mcaf::{mcaf_forward_traced, McafParams, McafSwitches};
use crate::tensor::{join, Parameters, Tensor4};

/// Structural switches; each disables one stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Ablation {
    pub filter: bool,
    pub cross_attention: bool,
    pub global_gate: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            filter: true,
            cross_attention: true,
            global_gate: true,
        }
    }
}

/// Every learnable tensor of the pipeline.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionParams {
    pub filter: FilterParams,
    pub mcaf: McafParams,
}

impl FusionParams {
    /// Seeded initialisation; each tensor draws from its own named stream.
    pub fn init(cfg: &FusionConfig) -> Self {
        Self {
            filter: FilterParams::init(cfg.seed, cfg.alpha_init),
            mcaf: McafParams::init(cfg.seed, &cfg.mcaf()),
        }
    }

    /// `(name, dims)` of every tensor in visiting order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, dims, _| out.push((name, dims)));
        out
    }

    pub fn alphas(&self) -> [f32; 2] {
        [self.filter.alpha(Modality::Rgb), self.filter.alpha(Modality::Ir)]
    }
}

impl Parameters for FusionParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, Vec<usize>, &[f32])) {
        self.filter.visit(&join(prefix, "filter"), f);
        self.mcaf.visit(&join(prefix, "mcaf"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, Vec<usize>, &mut [f32])) {
        self.filter.visit_mut(&join(prefix, "filter"), f);
        self.mcaf.visit_mut(&join(prefix, "mcaf"), f);
    }
}

/// Raw input plus the α-independent filter results, ready to be blended.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub raw: Tensor4,
    pub filtered: Option<FilteredBatch>,
}

impl Prepared {
    pub fn blend(&self, alphas: [f32; 2]) -> Result<Tensor4> {
        match &self.filtered {
            Some(batch) => batch.blend(alphas),
            None => Ok(self.raw.clone()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// `(B, 3, H, W)` fused image in `[0, 1]`.
    pub image: Tensor4,
    /// MCAF input after blending.
    pub blended: Tensor4,
    pub filter: Option<FilteredBatch>,
    pub gate: Tensor4,
}

#[derive(Clone, Debug)]
pub struct Pipeline {
    config: FusionConfig,
    params: FusionParams,
}

impl Pipeline {
    pub fn new(config: FusionConfig) -> Result<Self> {
        config.validate()?;
        let params = FusionParams::init(&config);
        Ok(Self { config, params })
    }

    /// Uses externally supplied weights; their layout must match `config`.
    pub fn with_params(config: FusionConfig, params: FusionParams) -> Result<Self> {
        config.validate()?;
        let expected = FusionParams::init(&config).layout();
        if params.layout() != expected {
            return Err(Error::config("parameter layout does not match the configuration"));
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &FusionConfig {
        &self.config
    }

    pub fn params(&self) -> &FusionParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut FusionParams {
        &mut self.params
    }

    fn check_input(&self, x: &Tensor4) -> Result<()> {
        if x.channels() != 4 {
            return Err(Error::shape(format!(
                "pipeline input needs 4 channels [R, G, B, IR], got {}",
                x.channels()
            )));
        }
        self.config.mcaf().validate_spatial(x.height(), x.width())
    }

    /// Runs the α-independent part of the filter stage.
    pub fn prepare(&self, x: &Tensor4) -> Result<Prepared> {
        self.check_input(x)?;
        let filtered = if self.config.ablation.filter {
            Some(filter_batch(x, &self.params.filter, &self.config.filter())?)
        } else {
            None
        };
        Ok(Prepared {
            raw: x.clone(),
            filtered,
        })
    }

    fn switches(&self) -> McafSwitches {
        McafSwitches {
            cross_attention: self.config.ablation.cross_attention,
            global_gate: self.config.ablation.global_gate,
        }
    }

    /// Forward from a prepared input with explicit blend coefficients.
    pub fn forward_prepared(&self, prepared: &Prepared, alphas: [f32; 2]) -> Result<ForwardOutput> {
        let blended = prepared.blend(alphas)?;
        let out = mcaf_forward_traced(&blended, &self.params.mcaf, &self.config.mcaf(), self.switches())?;
        if !out.image.all_finite() {
            return Err(Error::Numeric("fused output is not finite".into()));
        }
        Ok(ForwardOutput {
            image: out.image,
            blended,
            filter: prepared.filtered.clone(),
            gate: out.gate,
        })
    }

    /// `(B, 4, H, W)` → `(B, 3, H, W)` with the stored `α` values.
    pub fn forward(&self, x: &Tensor4) -> Result<ForwardOutput> {
        let prepared = self.prepare(x)?;
        self.forward_prepared(&prepared, self.params.alphas())
    }
}
