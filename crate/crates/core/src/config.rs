//! Declarative run specification (TOML) and the run manifest.
//!
//! Field names carry their unit: `_cm` is cm⁻¹, `_fs` femtoseconds,
//! `_k` kelvin, `_s` wall-clock seconds.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bath::{decompose, thymine_components, FeatureSet, FeatureTable, SpectralComponent, DEFAULT_COUPLING};
use crate::error::{Error, Result};
use crate::generator::{build_generator, metric, BexcitonSpace, Envelope, MetricKind, SopGenerator, SystemModel};
use crate::propagate::{PropagatorConfig, Strategy};
use crate::ttn::{ExplicitTree, TopologyKind, TreeTopology, TtnState};
use crate::units::CM_PER_FS_INV;

/// A matrix given as real rows, as separate real and imaginary rows, or as
/// a JSON string holding rows of numbers or `[re, im]` pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Real(Vec<Vec<f64>>),
    Complex { re: Vec<Vec<f64>>, im: Vec<Vec<f64>> },
    Json { json: String },
}

impl MatrixSpec {
    pub fn to_array(&self) -> Result<Array2<C64>> {
        let rows: Vec<Vec<C64>> = match self {
            MatrixSpec::Real(r) => r.iter().map(|row| row.iter().map(|&x| C64::new(x, 0.0)).collect()).collect(),
            MatrixSpec::Complex { re, im } => {
                if re.len() != im.len() || re.iter().zip(im).any(|(a, b)| a.len() != b.len()) {
                    return Err(Error::Config("re and im parts differ in shape".into()));
                }
                re.iter().zip(im).map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| C64::new(x, y)).collect()).collect()
            }
            MatrixSpec::Json { json } => {
                #[derive(Deserialize)]
                #[serde(untagged)]
                enum Entry {
                    Re(f64),
                    Pair([f64; 2]),
                }
                let v: Vec<Vec<Entry>> =
                    serde_json::from_str(json).map_err(|e| Error::Config(format!("matrix json: {e}")))?;
                v.into_iter()
                    .map(|row| {
                        row.into_iter()
                            .map(|e| match e {
                                Entry::Re(x) => C64::new(x, 0.0),
                                Entry::Pair([x, y]) => C64::new(x, y),
                            })
                            .collect()
                    })
                    .collect()
            }
        };
        let n = rows.len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(Error::Config("matrix must be square and non-empty".into()));
        }
        Ok(Array2::from_shape_fn((n, n), |(i, j)| rows[i][j]))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveSpec {
    pub envelope: Envelope,
    pub op_cm: MatrixSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSpec {
    /// H = E/2 σ_z + V σ_x, Q = σ_z/2 under the id "q".
    TwoLevel { e_cm: f64, v_cm: f64 },
    Matrix {
        h0_cm: MatrixSpec,
        couplings: BTreeMap<String, MatrixSpec>,
        #[serde(default)]
        drives: Vec<DriveSpec>,
    },
}

impl SystemSpec {
    pub fn build(&self) -> Result<SystemModel> {
        let m = match self {
            SystemSpec::TwoLevel { e_cm, v_cm } => SystemModel::two_level(*e_cm, *v_cm),
            SystemSpec::Matrix { h0_cm, couplings, drives } => {
                let h0 = h0_cm.to_array()?;
                let mut cs = BTreeMap::new();
                for (id, q) in couplings {
                    cs.insert(id.clone(), q.to_array()?);
                }
                let drives = drives.iter().map(|d| Ok((d.envelope.clone(), d.op_cm.to_array()?))).collect::<Result<_>>()?;
                SystemModel { dim: h0.nrows(), h0, drives, couplings: cs }
            }
        };
        m.validate()?;
        Ok(m)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ComponentSpec {
    DrudeLorentz { lambda_cm: f64, gamma_cm: f64 },
    /// `omega_cm` is the damped frequency ω′.
    Brownian { omega_cm: f64, lambda_cm: f64, gamma_cm: f64 },
}

impl ComponentSpec {
    pub fn build(&self) -> SpectralComponent {
        match *self {
            ComponentSpec::DrudeLorentz { lambda_cm, gamma_cm } => SpectralComponent::drude_lorentz(lambda_cm, gamma_cm),
            ComponentSpec::Brownian { omega_cm, lambda_cm, gamma_cm } => {
                SpectralComponent::brownian(omega_cm, lambda_cm, gamma_cm)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BathPreset {
    /// Table 1 of the thymine model: DL solvent plus eight oscillators.
    Thymine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BathSpec {
    #[serde(default)]
    pub temperature_k: Option<f64>,
    #[serde(default)]
    pub n_pade: usize,
    #[serde(default)]
    pub components: Vec<ComponentSpec>,
    #[serde(default)]
    pub preset: Option<BathPreset>,
    /// JSON feature table, relative to the config file.
    #[serde(default)]
    pub feature_table: Option<PathBuf>,
    #[serde(default)]
    pub coupling: Option<String>,
    #[serde(default)]
    pub metric: MetricKind,
}

impl BathSpec {
    pub fn build(&self, base: &Path) -> Result<FeatureSet> {
        let sources = usize::from(!self.components.is_empty()) + usize::from(self.preset.is_some()) + usize::from(self.feature_table.is_some());
        if sources != 1 {
            return Err(Error::Config("bath needs exactly one of components, preset, feature_table".into()));
        }
        let fs = if let Some(p) = &self.feature_table {
            let p = base.join(p);
            let text = std::fs::read_to_string(&p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            let t: FeatureTable = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            FeatureSet::from_table(&t)?
        } else {
            let t = self.temperature_k.ok_or_else(|| Error::Config("bath.temperature_k is required".into()))?;
            let comps: Vec<_> = match self.preset {
                Some(BathPreset::Thymine) => thymine_components(),
                None => self.components.iter().map(ComponentSpec::build).collect(),
            };
            decompose(&comps, t, self.n_pade)?
        };
        Ok(match &self.coupling {
            Some(id) => fs.with_coupling(id),
            None => fs,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceSpec {
    /// Uniform truncation depth N.
    #[serde(default)]
    pub depth: Option<usize>,
    /// Per-feature depths; wins over `depth`.
    #[serde(default)]
    pub depths: Option<Vec<usize>>,
}

impl Default for SpaceSpec {
    fn default() -> Self {
        Self { depth: Some(8), depths: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    pub kind: TopologyKind,
    /// Uniform rank for fixed-rank strategies.
    pub rank: usize,
    /// Per-bond ranks (index 0 unused); wins over `rank`.
    #[serde(default)]
    pub ranks: Option<Vec<usize>>,
    #[serde(default)]
    pub tree: Option<ExplicitTree>,
}

impl Default for TopologySpec {
    fn default() -> Self {
        Self { kind: TopologyKind::Balanced, rank: 16, ranks: None, tree: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub t_end_fs: f64,
    pub output_dt_fs: f64,
    #[serde(default)]
    pub checkpoint_every_s: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    /// Pure-state amplitudes, normalized on load. Default: equal superposition.
    #[serde(default)]
    pub psi: Option<Vec<f64>>,
    #[serde(default)]
    pub rho0: Option<MatrixSpec>,
}

impl InitialSpec {
    pub fn build(&self, dim: usize) -> Result<Array2<C64>> {
        let rho = match (&self.psi, &self.rho0) {
            (Some(_), Some(_)) => return Err(Error::Config("initial: give psi or rho0, not both".into())),
            (_, Some(m)) => m.to_array()?,
            (psi, None) => {
                let psi = psi.clone().unwrap_or_else(|| vec![1.0; dim]);
                let n = psi.iter().map(|x| x * x).sum::<f64>().sqrt();
                if psi.len() != dim || n == 0.0 {
                    return Err(Error::Config(format!("initial.psi needs {dim} amplitudes, not all zero")));
                }
                Array2::from_shape_fn((dim, dim), |(i, j)| C64::new(psi[i] * psi[j] / (n * n), 0.0))
            }
        };
        if rho.nrows() != dim {
            return Err(Error::Config(format!("initial state must be {dim}x{dim}")));
        }
        Ok(rho)
    }
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    pub system: SystemSpec,
    pub bath: BathSpec,
    #[serde(default)]
    pub space: SpaceSpec,
    #[serde(default)]
    pub topology: TopologySpec,
    #[serde(default)]
    pub propagator: PropagatorConfig,
    pub schedule: Schedule,
    #[serde(default)]
    pub initial: InitialSpec,
}

/// Command-line overrides; every `Some` replaces the config value.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub strategy: Option<Strategy>,
    pub rank: Option<usize>,
    pub depth: Option<usize>,
    pub delta: Option<f64>,
    pub epsilon: Option<f64>,
    pub svd_tol: Option<f64>,
    pub max_rank: Option<usize>,
    pub t_end: Option<f64>,
    pub output_dir: Option<PathBuf>,
}

/// Everything needed to start a propagation.
pub struct Assembled {
    pub model: SystemModel,
    pub features: FeatureSet,
    pub space: BexcitonSpace,
    pub generator: SopGenerator,
    pub topology: Arc<TreeTopology>,
    pub rho0: Array2<C64>,
}

impl Assembled {
    pub fn initial_state(&self, spec: &RunSpec) -> Result<TtnState> {
        let ranks = match &spec.topology.ranks {
            Some(r) if matches!(spec.propagator.strategy, Strategy::Direct | Strategy::Ps1) => r.clone(),
            _ => spec.propagator.start_ranks(&self.topology, spec.topology.rank),
        };
        TtnState::init(self.topology.clone(), &self.rho0, &self.topology.clamp_ranks(&ranks))
    }
}

impl RunSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Schema-level checks that need no allocation of the model.
    pub fn validate(&self) -> Result<()> {
        let s = &self.schedule;
        if !(s.t_end_fs >= 0.0 && s.output_dt_fs > 0.0 && s.t_end_fs.is_finite()) {
            return Err(Error::Config("schedule needs t_end_fs >= 0 and output_dt_fs > 0".into()));
        }
        if s.checkpoint_every_s.is_some_and(|x| !(x > 0.0)) {
            return Err(Error::Config("checkpoint_every_s must be positive".into()));
        }
        if self.topology.rank == 0 || self.topology.ranks.as_ref().is_some_and(|r| r.iter().skip(1).any(|&x| x == 0)) {
            return Err(Error::Config("ranks must be positive".into()));
        }
        if self.space.depth.is_none() && self.space.depths.is_none() {
            return Err(Error::Config("space needs depth or depths".into()));
        }
        if self.bath.temperature_k.is_some_and(|t| !(t > 0.0)) {
            return Err(Error::Config("temperature_k must be positive".into()));
        }
        if self.topology.kind == TopologyKind::Explicit && self.topology.tree.is_none() {
            return Err(Error::Config("explicit topology needs topology.tree".into()));
        }
        self.propagator.validate().map_err(|e| Error::Config(e.to_string()))
    }

    /// Apply overrides, logging each replaced value.
    pub fn apply(&mut self, o: &Overrides) {
        fn set<T: std::fmt::Debug + Clone>(name: &str, slot: &mut T, v: &Option<T>) {
            if let Some(v) = v {
                log::info!("override {name}: {slot:?} -> {v:?}");
                *slot = v.clone();
            }
        }
        let p = &mut self.propagator;
        set("propagator.strategy", &mut p.strategy, &o.strategy);
        set("propagator.regularization", &mut p.regularization, &o.epsilon);
        set("propagator.ps.delta", &mut p.ps.delta, &o.delta);
        set("propagator.ps.svd_tol", &mut p.ps.svd_tol, &o.svd_tol);
        if let Some(m) = o.max_rank {
            set("propagator.ps.max_rank", &mut p.ps.max_rank, &Some(m));
            set("propagator.switch_rank", &mut p.switch_rank, &Some(m));
        }
        if let Some(r) = o.rank {
            set("topology.rank", &mut self.topology.rank, &Some(r));
            if self.topology.ranks.take().is_some() {
                log::info!("override topology.ranks dropped in favour of uniform rank {r}");
            }
            // forced rank also fixes where PS2 starts
            set("propagator.ps.initial_rank", &mut p.ps.initial_rank, &Some(r));
        }
        if let Some(n) = o.depth {
            set("space.depth", &mut self.space.depth, &Some(Some(n)));
            self.space.depths = None;
        }
        set("schedule.t_end_fs", &mut self.schedule.t_end_fs, &o.t_end);
        set("output_dir", &mut self.output_dir, &o.output_dir);
    }

    /// Build model, features, generator and topology. `base` resolves
    /// relative paths inside the spec.
    pub fn assemble(&self, base: &Path) -> Result<Assembled> {
        self.validate()?;
        let model = self.system.build()?;
        let mut features = self.bath.build(base)?;
        if self.bath.coupling.is_none() && !model.couplings.contains_key(DEFAULT_COUPLING) && model.couplings.len() == 1 {
            let id = model.couplings.keys().next().unwrap().clone();
            features = features.with_coupling(&id);
        }
        let k = features.len();
        let depths = match (&self.space.depths, self.space.depth) {
            (Some(d), _) => d.clone(),
            (None, Some(n)) => vec![n; k],
            (None, None) => unreachable!("validated"),
        };
        let space = BexcitonSpace { depths, metric_z: metric(&features, self.bath.metric) };
        let generator = build_generator(&model, &features, &space)?;
        let topology = Arc::new(match self.topology.kind {
            TopologyKind::Train => TreeTopology::train(model.dim, &space.depths)?,
            TopologyKind::Balanced => TreeTopology::balanced(model.dim, &space.depths)?,
            TopologyKind::Explicit => TreeTopology::explicit(model.dim, &space.depths, self.topology.tree.as_ref().unwrap())?,
        });
        if let Some(r) = &self.topology.ranks {
            topology.validate_ranks(r)?;
        }
        let rho0 = self.initial.build(model.dim)?;
        Ok(Assembled { model, features, space, generator, topology, rho0 })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileChecksum {
    pub path: String,
    pub sha256: String,
}

/// Written next to every trajectory: the resolved spec, the feature table
/// and enough provenance to reproduce the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub spec: RunSpec,
    pub features: FeatureTable,
    pub metric_z: Vec<[f64; 2]>,
    pub topology_sha256: String,
    pub cm_per_fs_inv: f64,
    pub switched_at_fs: Option<f64>,
    pub truncation_weight: f64,
    pub status: String,
    pub outputs: Vec<FileChecksum>,
}

impl Manifest {
    pub fn new(spec: &RunSpec, a: &Assembled) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            spec: spec.clone(),
            features: a.features.to_table(),
            metric_z: a.space.metric_z.iter().map(|z| [z.re, z.im]).collect(),
            topology_sha256: hex(&a.topology.hash()),
            cm_per_fs_inv: CM_PER_FS_INV,
            switched_at_fs: None,
            truncation_weight: 0.0,
            status: "running".into(),
            outputs: vec![],
        }
    }

    pub fn add_output(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path)?;
        let name = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        self.outputs.retain(|o| o.path != name);
        self.outputs.push(FileChecksum { path: name, sha256: hex(&Sha256::digest(&bytes)) });
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
