//! Model instances used by the acceptance suite, the examples and the CLI
//! presets. All at 300 K with the two-level system H = E/2 σ_z + V σ_x.

use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64 as C64;

use crate::bath::{decompose, thymine_components, FeatureSet, SpectralComponent};
use crate::error::Result;
use crate::generator::{build_generator, BexcitonSpace, SopGenerator, SystemModel};
use crate::ttn::{TopologyKind, TreeTopology};

pub const TEMPERATURE: f64 = 300.0;

/// The Table 1 solvent term.
pub fn solvent() -> SpectralComponent {
    SpectralComponent::drude_lorentz(715.73, 54.45)
}

/// (|0⟩ + |1⟩)/√2 as a density matrix.
pub fn plus_state() -> Array2<C64> {
    Array2::from_elem((2, 2), C64::new(0.5, 0.0))
}

pub struct Instance {
    pub model: SystemModel,
    pub features: FeatureSet,
    pub space: BexcitonSpace,
    pub generator: SopGenerator,
    pub rho0: Array2<C64>,
}

impl Instance {
    pub fn new(model: SystemModel, features: FeatureSet, depth: usize) -> Result<Self> {
        let space = BexcitonSpace::uniform(&features, depth);
        let generator = build_generator(&model, &features, &space)?;
        Ok(Self { model, features, space, generator, rho0: plus_state() })
    }

    pub fn topology(&self, kind: TopologyKind) -> Result<Arc<TreeTopology>> {
        let d = &self.generator.depths;
        Ok(Arc::new(match kind {
            TopologyKind::Train => TreeTopology::train(self.model.dim, d)?,
            _ => TreeTopology::balanced(self.model.dim, d)?,
        }))
    }
}

/// Solvent only, no Padé terms: K = 1.
pub fn solvent_only(e: f64, v: f64, depth: usize) -> Result<Instance> {
    let fs = decompose(&[solvent()], TEMPERATURE, 0)?;
    Instance::new(SystemModel::two_level(e, v), fs, depth)
}

/// Solvent plus the strongest Table 1 oscillator and one Padé term: K = 4.
pub fn reduced(e: f64, v: f64, depth: usize) -> Result<Instance> {
    let fs = decompose(&[solvent(), SpectralComponent::brownian(1663.0, 330.0, 50.0)], TEMPERATURE, 1)?;
    Instance::new(SystemModel::two_level(e, v), fs, depth)
}

/// Full Table 1 bath with three Padé terms: K = 20.
pub fn thymine_features() -> Result<FeatureSet> {
    decompose(&thymine_components(), TEMPERATURE, 3)
}

pub fn thymine(e: f64, v: f64, depth: usize) -> Result<Instance> {
    Instance::new(SystemModel::two_level(e, v), thymine_features()?, depth)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_counts() {
        assert_eq!(solvent_only(0.0, 1000.0, 4).unwrap().features.len(), 1);
        assert_eq!(reduced(0.0, 1000.0, 4).unwrap().features.len(), 4);
        // 1 + 2·8 + 3
        assert_eq!(thymine_features().unwrap().len(), 20);
    }
}
