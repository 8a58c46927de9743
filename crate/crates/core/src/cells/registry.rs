use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use super::{Gate, GruCell, LayerRecord, LstmCell, Nonlinearity, RecurrentCell, VanillaCell};
use crate::ensembles::{init_gaussian, init_uniform, StreamRng, WeightInit};
use crate::error::{Error, Result};

/// Shape and options of a layer to be generated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellSpec {
    pub n_hidden: usize,
    pub n_input: usize,
    pub nonlinearity: Nonlinearity,
}

/// Builds cells of one architecture, either from a weight record or from a
/// random initialization.
pub trait CellFactory: Send + Sync {
    fn name(&self) -> &'static str;

    fn load(&self, record: &LayerRecord) -> Result<Box<dyn RecurrentCell>>;

    fn random(&self, spec: &CellSpec, init: &WeightInit, rng: &mut StreamRng) -> Result<Box<dyn RecurrentCell>>;
}

pub struct VanillaFactory;

impl CellFactory for VanillaFactory {
    fn name(&self) -> &'static str {
        "vanilla"
    }

    fn load(&self, record: &LayerRecord) -> Result<Box<dyn RecurrentCell>> {
        Ok(Box::new(VanillaCell::from_record(record)?))
    }

    /// `V` from `init`, `U = I`, `b = 0`.
    fn random(&self, spec: &CellSpec, init: &WeightInit, rng: &mut StreamRng) -> Result<Box<dyn RecurrentCell>> {
        if spec.n_input != spec.n_hidden {
            return Err(Error::Config(format!(
                "generated vanilla layers use U = I and need n_in == n (got n_in = {}, n = {}); \
                 supply a weights file for other input sizes",
                spec.n_input, spec.n_hidden
            )));
        }
        let n = spec.n_hidden;
        let cell = VanillaCell::new(
            init.square(n, rng),
            DMatrix::identity(n, n),
            DVector::zeros(n),
            spec.nonlinearity,
        )?;
        Ok(Box::new(cell))
    }
}

/// Draws one gate. Uniform draws every entry including the bias from
/// `[−p, p]`; Gaussian draws `W` and `U` with the given variance and zero
/// bias; orthogonal makes `U` a scaled Haar matrix, `W` Gaussian with
/// variance `1/n_in` and zero bias.
fn random_gate(n: usize, n_in: usize, init: &WeightInit, rng: &mut StreamRng, tag: &str) -> Result<Gate> {
    let (w, u, b) = match *init {
        WeightInit::Uniform { p } => (
            init_uniform(n, n_in, p, rng),
            init_uniform(n, n, p, rng),
            init_uniform(n, 1, p, rng).column(0).into_owned(),
        ),
        WeightInit::Gaussian { sigma2 } => (
            init_gaussian(n, n_in, sigma2, rng),
            init_gaussian(n, n, sigma2, rng),
            DVector::zeros(n),
        ),
        WeightInit::Orthogonal { .. } => {
            let w = init_gaussian(n, n_in, 1.0 / n_in as f64, rng);
            (w, init.square(n, rng), DVector::zeros(n))
        }
    };
    Gate::new(w, u, b, tag)
}

pub struct LstmFactory;

impl CellFactory for LstmFactory {
    fn name(&self) -> &'static str {
        "lstm"
    }

    fn load(&self, record: &LayerRecord) -> Result<Box<dyn RecurrentCell>> {
        Ok(Box::new(LstmCell::from_record(record)?))
    }

    fn random(&self, spec: &CellSpec, init: &WeightInit, rng: &mut StreamRng) -> Result<Box<dyn RecurrentCell>> {
        let (n, n_in) = (spec.n_hidden, spec.n_input);
        let forget = random_gate(n, n_in, init, rng, "f")?;
        let input = random_gate(n, n_in, init, rng, "i")?;
        let output = random_gate(n, n_in, init, rng, "o")?;
        let candidate = random_gate(n, n_in, init, rng, "c")?;
        Ok(Box::new(LstmCell::new(forget, input, output, candidate)?))
    }
}

pub struct GruFactory;

impl CellFactory for GruFactory {
    fn name(&self) -> &'static str {
        "gru"
    }

    fn load(&self, record: &LayerRecord) -> Result<Box<dyn RecurrentCell>> {
        Ok(Box::new(GruCell::from_record(record)?))
    }

    fn random(&self, spec: &CellSpec, init: &WeightInit, rng: &mut StreamRng) -> Result<Box<dyn RecurrentCell>> {
        let (n, n_in) = (spec.n_hidden, spec.n_input);
        let update = random_gate(n, n_in, init, rng, "z")?;
        let reset = random_gate(n, n_in, init, rng, "r")?;
        let candidate = random_gate(n, n_in, init, rng, "c")?;
        Ok(Box::new(GruCell::new(update, reset, candidate)?))
    }
}

/// Architectures by name.
pub struct CellRegistry {
    factories: BTreeMap<&'static str, Box<dyn CellFactory>>,
}

impl CellRegistry {
    pub fn empty() -> Self {
        CellRegistry {
            factories: BTreeMap::new(),
        }
    }

    /// `vanilla`, `lstm` and `gru`.
    pub fn builtin() -> Self {
        let mut reg = CellRegistry::empty();
        reg.register(Box::new(VanillaFactory));
        reg.register(Box::new(LstmFactory));
        reg.register(Box::new(GruFactory));
        reg
    }

    /// Registers `factory`, replacing any previous one with the same name.
    pub fn register(&mut self, factory: Box<dyn CellFactory>) {
        self.factories.insert(factory.name(), factory);
    }

    pub fn get(&self, name: &str) -> Result<&dyn CellFactory> {
        self.factories
            .get(name)
            .map(|f| f.as_ref())
            .ok_or_else(|| Error::UnknownArch(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.factories.keys().copied()
    }
}

impl Default for CellRegistry {
    fn default() -> Self {
        CellRegistry::builtin()
    }
}
