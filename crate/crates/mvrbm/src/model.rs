//! The mixed-variate RBM: type-specific energies, conditionals, free-energy,
//! and brute-force enumeration oracles.
//!
//! Visible units carry per-type energy sub-functions coupled to a shared binary
//! hidden layer. With `s(x)` the one-hot encoded record, the joint energy is
//!
//! ```text
//! E(x, h) = sum_i E_i(x_i) + sum_k (-b_k + sum_i G_ik(x_i)) h_k
//! ```
//!
//! where `E_i` is `-a_i x` (binary), `x^2/2 - a_i x` (gaussian), `-a_ic` for the
//! active category (nominal), `log x! - a_i x` (count), and `G_ik(x_i)` is the
//! matching `-W` coupling. Summing out `h` analytically gives the free-energy
//!
//! ```text
//! F(x) = sum_i E_i(x_i) - sum_k softplus(b_k - sum_i G_ik(x_i))
//! ```
//!
//! which equals `-log P(x)` up to an additive constant and serves as the
//! outlier score. The enumeration oracles here recompute the same quantities by
//! summing over all `2^K` hidden states (and, for the partition function, all
//! discrete visible states) and exist to cross-check the fast path.

use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::error::{Error, Result};
use crate::hexfloat;
use crate::numeric::{ln_factorial, log_sum_exp, sigmoid, softplus, LogSumExp};
use crate::schema::{parse_schema, write_schema, Cell, ColumnKind, Dataset, Schema, StandardizationStats};

/// Default cap on the Poisson conditional rate; beyond it CD has diverged.
pub const DEFAULT_RATE_CAP: f64 = 1e6;

/// Model file format version.
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Maximum hidden size accepted by the `2^K` enumeration oracles.
pub const MAX_BRUTE_FORCE_HIDDEN: usize = 20;

/// A binary hidden configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HiddenState(pub Vec<u8>);

impl HiddenState {
    pub fn zeros(k: usize) -> Self {
        HiddenState(vec![0; k])
    }

    pub fn from_bits(bits: u64, k: usize) -> Self {
        HiddenState((0..k).map(|i| ((bits >> i) & 1) as u8).collect())
    }
}

/// Mv.RBM parameters bound to a schema.
///
/// `visible_bias` (a) and the rows of `weights` (W) live in the encoded slot
/// layout: a nominal column of cardinality `C` owns `C` consecutive slots,
/// category-major, so `a_ic` and `W_ikc` sit at `slot_offset(i) + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub schema: Schema,
    /// Hidden unit count K.
    pub hidden: usize,
    /// Visible biases, one per encoded slot.
    pub visible_bias: Vec<f64>,
    /// Hidden biases, K entries.
    pub hidden_bias: Vec<f64>,
    /// Couplings, row-major `[slot][k]`.
    pub weights: Vec<f64>,
    /// Poisson conditional rate cap; exceeding it signals divergence.
    pub rate_cap: f64,
}

/// Type-specific visible conditional `P(x_i | h)`.
#[derive(Debug, Clone, PartialEq)]
pub enum VisibleConditional {
    Bernoulli { p: f64 },
    Gaussian { mean: f64 },
    Categorical { probs: Vec<f64> },
    Poisson { rate: f64 },
}

impl Model {
    pub fn new(
        schema: Schema,
        hidden: usize,
        visible_bias: Vec<f64>,
        hidden_bias: Vec<f64>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        let width = schema.encoded_width();
        if hidden == 0 {
            return Err(Error::Model("hidden unit count must be positive".into()));
        }
        if visible_bias.len() != width {
            return Err(Error::Model(format!(
                "visible bias has {} entries, encoded width is {}",
                visible_bias.len(),
                width
            )));
        }
        if hidden_bias.len() != hidden {
            return Err(Error::Model(format!(
                "hidden bias has {} entries, K is {}",
                hidden_bias.len(),
                hidden
            )));
        }
        if weights.len() != width * hidden {
            return Err(Error::Model(format!(
                "weight matrix has {} entries, expected {}x{}",
                weights.len(),
                width,
                hidden
            )));
        }
        let finite = visible_bias.iter().chain(&hidden_bias).chain(&weights).all(|v| v.is_finite());
        if !finite {
            return Err(Error::Model("model parameters must be finite".into()));
        }
        Ok(Model {
            schema,
            hidden,
            visible_bias,
            hidden_bias,
            weights,
            rate_cap: DEFAULT_RATE_CAP,
        })
    }

    /// All-zero model.
    pub fn zeros(schema: Schema, hidden: usize) -> Result<Self> {
        let width = schema.encoded_width();
        Model::new(schema, hidden, vec![0.0; width], vec![0.0; hidden], vec![0.0; width * hidden])
    }

    pub fn encoded_width(&self) -> usize {
        self.schema.encoded_width()
    }

    #[inline]
    pub fn weight(&self, slot: usize, k: usize) -> f64 {
        self.weights[slot * self.hidden + k]
    }

    /// Type-specific energy sub-function `E_i(x_i)`.
    pub fn sub_energy(&self, col: usize, cell: &Cell) -> f64 {
        let offset = self.schema.slot_offset(col);
        match (cell, &self.schema.columns()[col].kind) {
            (Cell::Binary(v), ColumnKind::Binary) => -self.visible_bias[offset] * f64::from(*v),
            (Cell::Gaussian(v), ColumnKind::Gaussian) => v * v / 2.0 - self.visible_bias[offset] * v,
            (Cell::Nominal(c), ColumnKind::Nominal(_)) => -self.visible_bias[offset + c],
            (Cell::Count(v), ColumnKind::Count) => {
                ln_factorial(*v) - self.visible_bias[offset] * (*v as f64)
            }
            _ => panic!("cell {:?} does not match column {} kind", cell, col),
        }
    }

    /// Type-specific coupling sub-function `G_ik(x_i)`.
    pub fn sub_coupling(&self, col: usize, k: usize, cell: &Cell) -> f64 {
        let offset = self.schema.slot_offset(col);
        match (cell, &self.schema.columns()[col].kind) {
            (Cell::Nominal(c), ColumnKind::Nominal(_)) => -self.weight(offset + c, k),
            _ => -self.weight(offset, k) * cell.as_f64(),
        }
    }

    /// Sum of the per-column energies `sum_i E_i(x_i)`.
    pub fn visible_energy(&self, row: &[Cell]) -> f64 {
        (0..self.schema.len()).map(|i| self.sub_energy(i, &row[i])).sum()
    }

    /// Hidden pre-activations `z_k = b_k - sum_i G_ik(x_i)`.
    pub fn preactivations(&self, row: &[Cell]) -> Vec<f64> {
        let mut z = self.hidden_bias.clone();
        let mut offset = 0;
        for (cell, col) in row.iter().zip(self.schema.columns()) {
            match (cell, &col.kind) {
                (Cell::Nominal(c), ColumnKind::Nominal(_)) => {
                    let slot = offset + c;
                    for (k, zk) in z.iter_mut().enumerate() {
                        *zk += self.weight(slot, k);
                    }
                }
                _ => {
                    let v = cell.as_f64();
                    if v != 0.0 {
                        for (k, zk) in z.iter_mut().enumerate() {
                            *zk += self.weight(offset, k) * v;
                        }
                    }
                }
            }
            offset += col.kind.encoded_width();
        }
        z
    }

    /// Joint energy `E(x, h)`.
    pub fn total_energy(&self, row: &[Cell], h: &HiddenState) -> f64 {
        let z = self.preactivations(row);
        let hidden_term: f64 = z
            .iter()
            .zip(&h.0)
            .map(|(zk, &hk)| -zk * f64::from(hk))
            .sum();
        self.visible_energy(row) + hidden_term
    }

    /// Posterior activations `P(h_k = 1 | x) = sigmoid(z_k)`.
    pub fn hidden_activation(&self, row: &[Cell]) -> Vec<f64> {
        self.preactivations(row).into_iter().map(sigmoid).collect()
    }

    /// Conditional mean input for column `i` given `h`: `a_slot + sum_k W h_k`,
    /// one value per encoded slot of the column.
    fn conditional_inputs(&self, h: &HiddenState, col: usize) -> Vec<f64> {
        let offset = self.schema.slot_offset(col);
        let width = self.schema.columns()[col].kind.encoded_width();
        (offset..offset + width)
            .map(|slot| {
                let mut mu = self.visible_bias[slot];
                for (k, &hk) in h.0.iter().enumerate() {
                    if hk != 0 {
                        mu += self.weight(slot, k);
                    }
                }
                mu
            })
            .collect()
    }

    /// Type-specific generative conditional `P(x_i | h)`.
    pub fn visible_conditional(&self, h: &HiddenState, col: usize) -> Result<VisibleConditional> {
        let mu = self.conditional_inputs(h, col);
        match self.schema.columns()[col].kind {
            ColumnKind::Binary => Ok(VisibleConditional::Bernoulli { p: sigmoid(mu[0]) }),
            ColumnKind::Gaussian => Ok(VisibleConditional::Gaussian { mean: mu[0] }),
            ColumnKind::Nominal(_) => {
                let log_norm = log_sum_exp(&mu);
                Ok(VisibleConditional::Categorical {
                    probs: mu.iter().map(|m| (m - log_norm).exp()).collect(),
                })
            }
            ColumnKind::Count => {
                let rate = mu[0].exp();
                if !(rate <= self.rate_cap) {
                    return Err(Error::RateCap {
                        rate,
                        cap: self.rate_cap,
                    });
                }
                Ok(VisibleConditional::Poisson { rate })
            }
        }
    }

    /// Sample `h ~ P(h | x)` componentwise.
    pub fn sample_hidden<R: Rng>(&self, row: &[Cell], rng: &mut R) -> HiddenState {
        let probs = self.hidden_activation(row);
        HiddenState(
            probs
                .iter()
                .map(|&p| u8::from(rng.random::<f64>() < p))
                .collect(),
        )
    }

    /// Sample `x ~ P(x | h)`, one draw per column.
    pub fn sample_visible<R: Rng>(&self, h: &HiddenState, rng: &mut R) -> Result<Vec<Cell>> {
        let mut row = Vec::with_capacity(self.schema.len());
        for col in 0..self.schema.len() {
            let cell = match self.visible_conditional(h, col)? {
                VisibleConditional::Bernoulli { p } => Cell::Binary(u8::from(rng.random::<f64>() < p)),
                VisibleConditional::Gaussian { mean } => {
                    let dist = Normal::new(mean, 1.0).expect("unit variance is valid");
                    Cell::Gaussian(dist.sample(rng))
                }
                VisibleConditional::Categorical { probs } => {
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    let mut chosen = probs.len() - 1;
                    for (c, &p) in probs.iter().enumerate() {
                        acc += p;
                        if u < acc {
                            chosen = c;
                            break;
                        }
                    }
                    Cell::Nominal(chosen)
                }
                VisibleConditional::Poisson { rate } => {
                    let dist = Poisson::new(rate.max(f64::MIN_POSITIVE))
                        .map_err(|e| Error::Model(format!("poisson rate {rate}: {e}")))?;
                    Cell::Count(dist.sample(rng) as u64)
                }
            };
            row.push(cell);
        }
        Ok(row)
    }

    /// Free-energy `F(x) = sum_i E_i(x_i) - sum_k softplus(z_k)`.
    pub fn free_energy(&self, row: &[Cell]) -> f64 {
        let hidden_term: f64 = self.preactivations(row).into_iter().map(softplus).sum();
        self.visible_energy(row) - hidden_term
    }

    /// Elementwise [`Model::free_energy`] over a dataset, order preserved.
    pub fn free_energy_batch(&self, data: &Dataset) -> Result<Vec<f64>> {
        if data.schema != self.schema {
            return Err(Error::Model("dataset schema does not match model schema".into()));
        }
        Ok(data.rows.iter().map(|r| self.free_energy(r)).collect())
    }

    /// Free-energy by summing over all `2^K` hidden states. Oracle for
    /// [`Model::free_energy`]; rejects `K > 20`.
    pub fn brute_force_free_energy(&self, row: &[Cell]) -> Result<f64> {
        if self.hidden > MAX_BRUTE_FORCE_HIDDEN {
            return Err(Error::Model(format!(
                "brute-force enumeration limited to K <= {}, got {}",
                MAX_BRUTE_FORCE_HIDDEN, self.hidden
            )));
        }
        let visible = self.visible_energy(row);
        let z = self.preactivations(row);
        let mut acc = LogSumExp::new();
        for bits in 0u64..(1u64 << self.hidden) {
            let mut hidden_term = 0.0;
            for (k, zk) in z.iter().enumerate() {
                if (bits >> k) & 1 == 1 {
                    hidden_term += zk;
                }
            }
            acc.add(hidden_term - visible);
        }
        Ok(-acc.value())
    }

    /// Log partition function `log sum_{x,h} exp(-E(x,h))` by full enumeration
    /// of the discrete visible space (counts truncated at `count_truncation`)
    /// and all hidden states. Oracle for normalization tests.
    pub fn log_partition_exhaustive(&self, count_truncation: u64) -> Result<f64> {
        if self.hidden > 12 {
            return Err(Error::Model(format!(
                "partition enumeration limited to K <= 12, got {}",
                self.hidden
            )));
        }
        let mut acc = LogSumExp::new();
        for row in enumerate_discrete_records(&self.schema, count_truncation, 1_000_000)? {
            // -F via explicit hidden enumeration, not the softplus identity
            acc.add(-self.brute_force_free_energy(&row)?);
        }
        Ok(acc.value())
    }

    /// Write the model (and optional standardization stats) as versioned
    /// hex-float text. Lossless: parameters are bit-identical after load.
    pub fn save<W: Write>(&self, stats: Option<&StandardizationStats>, writer: &mut W) -> Result<()> {
        writeln!(writer, "mvrbm-model v{}", MODEL_FORMAT_VERSION)?;
        writeln!(writer, "schema {}", self.schema.len())?;
        write!(writer, "{}", write_schema(&self.schema))?;
        writeln!(writer, "hidden {}", self.hidden)?;
        match stats {
            None => writeln!(writer, "stats none")?,
            Some(s) => {
                writeln!(writer, "stats {}", s.entries.len())?;
                for &(col, mean, sd) in &s.entries {
                    writeln!(writer, "{} {} {}", col, hexfloat::format(mean), hexfloat::format(sd))?;
                }
            }
        }
        let line = |vals: &[f64]| {
            vals.iter().map(|&v| hexfloat::format(v)).collect::<Vec<_>>().join(" ")
        };
        writeln!(writer, "a {}", line(&self.visible_bias))?;
        writeln!(writer, "b {}", line(&self.hidden_bias))?;
        writeln!(writer, "W {}", line(&self.weights))?;
        writeln!(writer, "end")?;
        Ok(())
    }

    /// Load a model saved by [`Model::save`].
    pub fn load<R: BufRead>(reader: R) -> Result<(Model, Option<StandardizationStats>)> {
        let mut lines = reader.lines();
        let mut next = || -> Result<String> {
            lines
                .next()
                .ok_or_else(|| Error::ModelFile("truncated model file".into()))?
                .map_err(Error::Io)
        };
        let header = next()?;
        let version = header
            .strip_prefix("mvrbm-model v")
            .and_then(|v| v.parse::<u32>().ok())
            .ok_or_else(|| Error::ModelFile(format!("bad header '{header}'")))?;
        if version != MODEL_FORMAT_VERSION {
            return Err(Error::ModelFile(format!(
                "unsupported model format version {version}, expected {MODEL_FORMAT_VERSION}"
            )));
        }
        let ncols: usize = field(&next()?, "schema")?;
        let mut schema_text = String::new();
        for _ in 0..ncols {
            schema_text.push_str(&next()?);
            schema_text.push('\n');
        }
        let schema = parse_schema(&schema_text)?;
        if schema.len() != ncols {
            return Err(Error::ModelFile("schema column count mismatch".into()));
        }
        let hidden: usize = field(&next()?, "hidden")?;
        if hidden == 0 {
            return Err(Error::ModelFile("hidden unit count must be positive".into()));
        }
        let stats_line = next()?;
        let stats = match stats_line.strip_prefix("stats ") {
            Some("none") => None,
            Some(count) => {
                let count: usize = count
                    .trim()
                    .parse()
                    .map_err(|_| Error::ModelFile(format!("bad stats line '{stats_line}'")))?;
                let mut entries = Vec::with_capacity(count);
                for _ in 0..count {
                    let line = next()?;
                    let parts: Vec<&str> = line.split_whitespace().collect();
                    if parts.len() != 3 {
                        return Err(Error::ModelFile(format!("bad stats entry '{line}'")));
                    }
                    let col: usize = parts[0]
                        .parse()
                        .map_err(|_| Error::ModelFile(format!("bad stats column '{}'", parts[0])))?;
                    let mean = hexfloat::parse(parts[1]).map_err(Error::ModelFile)?;
                    let sd = hexfloat::parse(parts[2]).map_err(Error::ModelFile)?;
                    entries.push((col, mean, sd));
                }
                Some(StandardizationStats { entries })
            }
            None => return Err(Error::ModelFile(format!("expected stats line, got '{stats_line}'"))),
        };
        let visible_bias = vector_field(&next()?, "a")?;
        let hidden_bias = vector_field(&next()?, "b")?;
        let weights = vector_field(&next()?, "W")?;
        if next()? != "end" {
            return Err(Error::ModelFile("missing end marker".into()));
        }
        let model = Model::new(schema, hidden, visible_bias, hidden_bias, weights)
            .map_err(|e| Error::ModelFile(format!("inconsistent model file: {e}")))?;
        Ok((model, stats))
    }
}

fn field<T: std::str::FromStr>(line: &str, key: &str) -> Result<T> {
    line.strip_prefix(key)
        .map(str::trim)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::ModelFile(format!("expected `{key} <value>`, got '{line}'")))
}

fn vector_field(line: &str, key: &str) -> Result<Vec<f64>> {
    let body = line
        .strip_prefix(key)
        .ok_or_else(|| Error::ModelFile(format!("expected `{key} ...`, got '{line}'")))?;
    body.split_whitespace()
        .map(|tok| hexfloat::parse(tok).map_err(Error::ModelFile))
        .collect()
}

/// Enumerate every record of a fully discrete schema, counts truncated at
/// `count_truncation` (inclusive). Errors on gaussian columns or a state space
/// beyond `max_states`.
pub fn enumerate_discrete_records(
    schema: &Schema,
    count_truncation: u64,
    max_states: u64,
) -> Result<DiscreteRecords> {
    let mut domains = Vec::with_capacity(schema.len());
    let mut total: u64 = 1;
    for col in schema.columns() {
        let size = match col.kind {
            ColumnKind::Binary => 2,
            ColumnKind::Nominal(c) => c as u64,
            ColumnKind::Count => count_truncation + 1,
            ColumnKind::Gaussian => {
                return Err(Error::Model(format!(
                    "cannot enumerate gaussian column '{}'",
                    col.name
                )))
            }
        };
        total = total
            .checked_mul(size)
            .ok_or_else(|| Error::Model("discrete state space overflow".into()))?;
        if total > max_states {
            return Err(Error::Model(format!(
                "discrete state space exceeds {max_states}"
            )));
        }
        domains.push((col.kind, size));
    }
    Ok(DiscreteRecords {
        domains,
        state: vec![0; schema.len()],
        done: false,
    })
}

/// Odometer iterator over discrete records; see [`enumerate_discrete_records`].
pub struct DiscreteRecords {
    domains: Vec<(ColumnKind, u64)>,
    state: Vec<u64>,
    done: bool,
}

impl Iterator for DiscreteRecords {
    type Item = Vec<Cell>;

    fn next(&mut self) -> Option<Vec<Cell>> {
        if self.done {
            return None;
        }
        let row: Vec<Cell> = self
            .state
            .iter()
            .zip(&self.domains)
            .map(|(&v, (kind, _))| match kind {
                ColumnKind::Binary => Cell::Binary(v as u8),
                ColumnKind::Nominal(_) => Cell::Nominal(v as usize),
                ColumnKind::Count => Cell::Count(v),
                ColumnKind::Gaussian => unreachable!(),
            })
            .collect();
        // advance odometer
        let mut i = self.state.len();
        loop {
            if i == 0 {
                self.done = true;
                break;
            }
            i -= 1;
            self.state[i] += 1;
            if self.state[i] < self.domains[i].1 {
                break;
            }
            self.state[i] = 0;
        }
        Some(row)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::parse_schema;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn binary_schema() -> Schema {
        parse_schema("x:binary").unwrap()
    }

    fn mixed_schema() -> Schema {
        parse_schema("b:binary\ng:gaussian\nn:nominal,3\nc:count").unwrap()
    }

    /// Random model with parameters ~ Normal(0, scale).
    pub(crate) fn random_model(schema: Schema, hidden: usize, scale: f64, rng: &mut ChaCha8Rng) -> Model {
        let width = schema.encoded_width();
        let dist = Normal::new(0.0, scale).unwrap();
        Model::new(
            schema,
            hidden,
            (0..width).map(|_| dist.sample(rng)).collect(),
            (0..hidden).map(|_| dist.sample(rng)).collect(),
            (0..width * hidden).map(|_| dist.sample(rng)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn sub_energy_table_rows() {
        let schema = mixed_schema();
        let mut m = Model::zeros(schema, 1).unwrap();
        assert_eq!(m.sub_energy(0, &Cell::Binary(1)), 0.0);
        assert_eq!(m.sub_energy(1, &Cell::Gaussian(2.0)), 2.0);
        assert!((m.sub_energy(3, &Cell::Count(3)) - 6.0f64.ln()).abs() < 1e-12);
        // nominal picks the active category's bias
        m.visible_bias[2] = 0.1;
        m.visible_bias[3] = 0.2;
        m.visible_bias[4] = 0.3;
        assert!((m.sub_energy(2, &Cell::Nominal(2)) - (-0.3)).abs() < 1e-15);
    }

    #[test]
    fn sub_coupling_table_rows() {
        let schema = mixed_schema();
        let mut m = Model::zeros(schema, 1).unwrap();
        m.weights[0] = 0.7; // binary slot
        assert_eq!(m.sub_coupling(0, 0, &Cell::Binary(0)), 0.0);
        let offset = m.schema.slot_offset(3);
        m.weights[offset] = 0.5;
        assert!((m.sub_coupling(3, 0, &Cell::Count(4)) - (-2.0)).abs() < 1e-15);
        let noff = m.schema.slot_offset(2);
        m.weights[noff] = 0.1;
        m.weights[noff + 1] = 0.2;
        m.weights[noff + 2] = 0.3;
        assert!((m.sub_coupling(2, 0, &Cell::Nominal(2)) - (-0.3)).abs() < 1e-15);
    }

    #[test]
    fn total_energy_hand_cases() {
        let m = Model::zeros(binary_schema(), 3).unwrap();
        assert_eq!(m.total_energy(&[Cell::Binary(1)], &HiddenState::from_bits(5, 3)), 0.0);

        let m = Model::new(binary_schema(), 1, vec![1.0], vec![0.0], vec![1.0]).unwrap();
        let e = m.total_energy(&[Cell::Binary(1)], &HiddenState(vec![1]));
        assert!((e - (-2.0)).abs() < 1e-15);
    }

    #[test]
    fn total_energy_zero_hidden_is_visible_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = random_model(mixed_schema(), 4, 1.0, &mut rng);
        let row = vec![Cell::Binary(1), Cell::Gaussian(-0.3), Cell::Nominal(2), Cell::Count(5)];
        let e = m.total_energy(&row, &HiddenState::zeros(4));
        let direct: f64 = (0..4).map(|i| m.sub_energy(i, &row[i])).sum();
        assert_eq!(e, direct);
    }

    #[test]
    fn hidden_activation_cases() {
        let m = Model::zeros(mixed_schema(), 2).unwrap();
        let row = vec![Cell::Binary(0), Cell::Gaussian(0.0), Cell::Nominal(0), Cell::Count(0)];
        assert_eq!(m.hidden_activation(&row), vec![0.5, 0.5]);

        let m = Model::new(binary_schema(), 1, vec![0.0], vec![50.0], vec![0.0]).unwrap();
        let act = m.hidden_activation(&[Cell::Binary(0)]);
        assert!((act[0] - 1.0).abs() < 1e-15);

        let m = Model::new(binary_schema(), 1, vec![0.0], vec![0.0], vec![2.0]).unwrap();
        let act = m.hidden_activation(&[Cell::Binary(1)]);
        assert!((act[0] - 0.8807970779778823).abs() < 1e-12);
    }

    #[test]
    fn visible_conditional_zero_model() {
        let m = Model::zeros(mixed_schema(), 2).unwrap();
        let h = HiddenState::zeros(2);
        assert_eq!(m.visible_conditional(&h, 0).unwrap(), VisibleConditional::Bernoulli { p: 0.5 });
        match m.visible_conditional(&h, 2).unwrap() {
            VisibleConditional::Categorical { probs } => {
                for p in probs {
                    assert!((p - 1.0 / 3.0).abs() < 1e-12);
                }
            }
            other => panic!("expected categorical, got {:?}", other),
        }
        assert_eq!(m.visible_conditional(&h, 3).unwrap(), VisibleConditional::Poisson { rate: 1.0 });
    }

    #[test]
    fn visible_conditional_rate_cap() {
        let schema = parse_schema("c:count").unwrap();
        let m = Model::new(schema, 1, vec![20.0], vec![0.0], vec![0.0]).unwrap();
        match m.visible_conditional(&HiddenState::zeros(1), 0) {
            Err(Error::RateCap { .. }) => {}
            other => panic!("expected rate cap error, got {:?}", other),
        }
    }

    #[test]
    fn nominal_conditional_normalizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let m = random_model(parse_schema("n:nominal,5").unwrap(), 3, 2.0, &mut rng);
            let bits = rng.random::<u64>() % 8;
            match m.visible_conditional(&HiddenState::from_bits(bits, 3), 0).unwrap() {
                VisibleConditional::Categorical { probs } => {
                    let total: f64 = probs.iter().sum();
                    assert!((total - 1.0).abs() < 1e-12);
                }
                _ => unreachable!(),
            }
        }
    }

    #[test]
    fn poisson_conditional_pmf_sums_to_one() {
        // P(x) = rate^x e^-rate / x! summed against the count energy terms
        for rate in [0.5f64, 1.0, 7.0, 50.0] {
            let bound = (10.0 * rate + 100.0) as u64;
            let log_rate = rate.ln();
            let mut acc = LogSumExp::new();
            for x in 0..=bound {
                acc.add(x as f64 * log_rate - ln_factorial(x));
            }
            let total = (acc.value() - rate).exp();
            assert!((total - 1.0).abs() < 1e-6, "rate {rate}: sum {total}");
        }
    }

    #[test]
    fn sample_hidden_deterministic_and_saturated() {
        let schema = binary_schema();
        let m = Model::new(schema, 2, vec![0.0], vec![500.0, 500.0], vec![0.0, 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = m.sample_hidden(&[Cell::Binary(0)], &mut rng);
        assert_eq!(h.0, vec![1, 1]);

        let m = Model::zeros(binary_schema(), 4).unwrap();
        let mut r1 = ChaCha8Rng::seed_from_u64(3);
        let mut r2 = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(m.sample_hidden(&[Cell::Binary(1)], &mut r1), m.sample_hidden(&[Cell::Binary(1)], &mut r2));
    }

    #[test]
    fn sample_hidden_monte_carlo_mean() {
        let m = Model::zeros(binary_schema(), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mut total = 0u64;
        for _ in 0..n {
            total += u64::from(m.sample_hidden(&[Cell::Binary(0)], &mut rng).0[0]);
        }
        let mean = total as f64 / n as f64;
        assert!((mean - 0.5).abs() < 0.01);
    }

    #[test]
    fn sample_visible_zero_model_means() {
        let m = Model::zeros(mixed_schema(), 1).unwrap();
        let h = HiddenState::zeros(1);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let (mut bin_total, mut count_total) = (0u64, 0u64);
        for _ in 0..n {
            let row = m.sample_visible(&h, &mut rng).unwrap();
            match (row[0], row[3]) {
                (Cell::Binary(b), Cell::Count(c)) => {
                    bin_total += u64::from(b);
                    count_total += c;
                }
                _ => unreachable!(),
            }
            match row[2] {
                Cell::Nominal(v) => assert!(v < 3),
                _ => unreachable!(),
            }
        }
        assert!((bin_total as f64 / n as f64 - 0.5).abs() < 0.01);
        assert!((count_total as f64 / n as f64 - 1.0).abs() < 0.05);
    }

    #[test]
    fn free_energy_hand_cases() {
        let m = Model::zeros(binary_schema(), 1).unwrap();
        assert!((m.free_energy(&[Cell::Binary(0)]) + 2.0f64.ln()).abs() < 1e-15);

        let m = Model::new(binary_schema(), 1, vec![1.0], vec![0.0], vec![1.0]).unwrap();
        let expected = -1.0 - (1.0 + std::f64::consts::E).ln();
        assert!((m.free_energy(&[Cell::Binary(1)]) - expected).abs() < 1e-12);
    }

    #[test]
    fn free_energy_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for trial in 0..200 {
            let k = 1 + (trial % 12);
            let m = random_model(mixed_schema(), k, 1.0, &mut rng);
            let row = vec![
                Cell::Binary((trial % 2) as u8),
                Cell::Gaussian(rng.random::<f64>() * 4.0 - 2.0),
                Cell::Nominal(trial % 3),
                Cell::Count((trial % 9) as u64),
            ];
            let fast = m.free_energy(&row);
            let oracle = m.brute_force_free_energy(&row).unwrap();
            let rel = (fast - oracle).abs() / (1.0 + oracle.abs());
            assert!(rel < 1e-9, "trial {trial}: {fast} vs {oracle}");
        }
    }

    #[test]
    fn brute_force_guards_large_k() {
        let m = Model::zeros(binary_schema(), 21).unwrap();
        assert!(m.brute_force_free_energy(&[Cell::Binary(0)]).is_err());
    }

    #[test]
    fn free_energy_stable_at_large_preactivation() {
        let m = Model::new(binary_schema(), 1, vec![0.0], vec![700.0], vec![0.0]).unwrap();
        assert!(m.free_energy(&[Cell::Binary(0)]).is_finite());
        let m = Model::new(binary_schema(), 1, vec![0.0], vec![-700.0], vec![0.0]).unwrap();
        assert!(m.free_energy(&[Cell::Binary(0)]).is_finite());
    }

    #[test]
    fn free_energy_batch_contract() {
        let m = Model::zeros(binary_schema(), 2).unwrap();
        let empty = Dataset::new(binary_schema(), vec![], None).unwrap();
        assert!(m.free_energy_batch(&empty).unwrap().is_empty());

        let one = Dataset::new(binary_schema(), vec![vec![Cell::Binary(1)]], None).unwrap();
        let scores = m.free_energy_batch(&one).unwrap();
        assert_eq!(scores.len(), 1);
        assert_eq!(scores[0], m.free_energy(&[Cell::Binary(1)]));

        let other = Dataset::new(parse_schema("y:count").unwrap(), vec![], None).unwrap();
        assert!(m.free_energy_batch(&other).is_err());
    }

    #[test]
    fn log_partition_zero_model() {
        let m = Model::zeros(binary_schema(), 1).unwrap();
        let logz = m.log_partition_exhaustive(60).unwrap();
        assert!((logz - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn log_partition_guards() {
        let m = Model::zeros(parse_schema("g:gaussian").unwrap(), 1).unwrap();
        assert!(m.log_partition_exhaustive(60).is_err());
        let m = Model::zeros(binary_schema(), 13).unwrap();
        assert!(m.log_partition_exhaustive(60).is_err());
    }

    #[test]
    fn probabilities_normalize_for_tiny_models() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..10 {
            let schema = parse_schema("b:binary\nn:nominal,3\nc:count").unwrap();
            let m = random_model(schema.clone(), 4, 0.7, &mut rng);
            let logz = m.log_partition_exhaustive(60).unwrap();
            let total: f64 = enumerate_discrete_records(&schema, 60, 1_000_000)
                .unwrap()
                .map(|row| (-m.free_energy(&row) - logz).exp())
                .sum();
            assert!((total - 1.0).abs() < 1e-6, "total {total}");
        }
    }

    #[test]
    fn posterior_matches_enumeration_marginal() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..10 {
            let m = random_model(mixed_schema(), 6, 1.0, &mut rng);
            let row = vec![Cell::Binary(1), Cell::Gaussian(0.4), Cell::Nominal(1), Cell::Count(2)];
            let act = m.hidden_activation(&row);
            for k in 0..6 {
                let mut num = LogSumExp::new();
                let mut den = LogSumExp::new();
                for bits in 0u64..(1 << 6) {
                    let h = HiddenState::from_bits(bits, 6);
                    let neg_e = -m.total_energy(&row, &h);
                    den.add(neg_e);
                    if (bits >> k) & 1 == 1 {
                        num.add(neg_e);
                    }
                }
                let marginal = (num.value() - den.value()).exp();
                assert!((act[k] - marginal).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn save_load_round_trip_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = random_model(mixed_schema(), 5, 1.3, &mut rng);
        let stats = StandardizationStats {
            entries: vec![(1, 0.123456789, 1.7320508075688772)],
        };
        let mut buf = Vec::new();
        m.save(Some(&stats), &mut buf).unwrap();
        let (loaded, loaded_stats) = Model::load(buf.as_slice()).unwrap();
        assert_eq!(loaded.visible_bias, m.visible_bias);
        assert_eq!(loaded.hidden_bias, m.hidden_bias);
        assert_eq!(loaded.weights, m.weights);
        assert_eq!(loaded.schema, m.schema);
        assert_eq!(loaded_stats, Some(stats));
    }

    #[test]
    fn load_rejects_truncation_and_bad_header() {
        let m = Model::zeros(binary_schema(), 2).unwrap();
        let mut buf = Vec::new();
        m.save(None, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let truncated = &text[..text.len() / 2];
        assert!(Model::load(truncated.as_bytes()).is_err());

        let wrong_version = text.replacen("v1", "v9", 1);
        assert!(Model::load(wrong_version.as_bytes()).is_err());

        let zero_hidden = text.replacen("hidden 2", "hidden 0", 1);
        assert!(Model::load(zero_hidden.as_bytes()).is_err());
    }

    #[test]
    fn enumerate_counts_and_guards() {
        let schema = parse_schema("a:binary\nn:nominal,3").unwrap();
        let rows: Vec<_> = enumerate_discrete_records(&schema, 60, 1_000_000).unwrap().collect();
        assert_eq!(rows.len(), 6);
        let schema = parse_schema("c:count").unwrap();
        assert_eq!(enumerate_discrete_records(&schema, 9, 1_000_000).unwrap().count(), 10);
        assert!(enumerate_discrete_records(&schema, 1_000_000, 1_000_000).is_err());
    }
}
