//! Protocol rounds, the append-only event ledger, and the CHSH/QBER
//! estimators computed from it.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::link::HeraldEvent;
use crate::quantum::{
    joint_outcome_probs, MeasurementConvention, OutcomeDistribution, ReadoutSetting, TwoQubitState,
};

/// The four CHSH cells `(x, y)`.
pub const CHSH_CELLS: [(usize, usize); 4] = [(2, 0), (2, 1), (3, 0), (3, 1)];
/// Key-generation cells `x = y`.
pub const KEY_CELLS: [(usize, usize); 2] = [(0, 0), (1, 1)];

/// RNG stream for input choices; link simulation uses stream 0.
const SETTINGS_STREAM: u64 = 1;

/// Readout angles (degrees) for each input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SettingsMap {
    pub alpha_deg: [f64; 4],
    pub beta_deg: [f64; 2],
}

impl Default for SettingsMap {
    fn default() -> Self {
        Self {
            alpha_deg: [-22.5, 22.5, -45.0, 0.0],
            beta_deg: [-22.5, 22.5],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EventRecord {
    pub round_id: u64,
    pub herald_time_ns: u64,
    pub x: u8,
    pub y: u8,
    pub a: u8,
    pub b: u8,
}

impl EventRecord {
    pub fn validate(&self) -> Result<()> {
        if self.x > 3 || self.y > 1 || self.a > 1 || self.b > 1 {
            return Err(Error::Schema(format!(
                "record {} has out-of-range fields",
                self.round_id
            )));
        }
        Ok(())
    }
}

/// Append-only sequence of round records with strictly increasing ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EventLedger {
    records: Vec<EventRecord>,
}

impl EventLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&mut self, record: EventRecord) -> Result<()> {
        record.validate()?;
        if let Some(last) = self.records.last() {
            if record.round_id <= last.round_id {
                return Err(Error::Schema(format!(
                    "round_id {} not after {}",
                    record.round_id, last.round_id
                )));
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[EventRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &EventRecord> {
        self.records.iter()
    }
}

/// Produces the two devices' outputs for a round measured at the given angles.
pub trait Sampler {
    fn sample(&mut self, alpha_deg: f64, beta_deg: f64, rng: &mut ChaCha8Rng) -> Result<(u8, u8)>;
}

/// Born-rule sampler over a fixed two-qubit state.
#[derive(Debug, Clone)]
pub struct StateSampler {
    state: TwoQubitState,
    convention: MeasurementConvention,
    cache: HashMap<(u64, u64), OutcomeDistribution>,
}

impl StateSampler {
    pub fn new(state: TwoQubitState, convention: MeasurementConvention) -> Self {
        Self {
            state,
            convention,
            cache: HashMap::new(),
        }
    }

    fn distribution(&mut self, alpha_deg: f64, beta_deg: f64) -> Result<OutcomeDistribution> {
        let key = (alpha_deg.to_bits(), beta_deg.to_bits());
        if let Some(d) = self.cache.get(&key) {
            return Ok(*d);
        }
        let d = joint_outcome_probs(
            &self.state,
            ReadoutSetting::angle(alpha_deg)?,
            ReadoutSetting::angle(beta_deg)?,
            self.convention,
        )?;
        self.cache.insert(key, d);
        Ok(d)
    }
}

impl Sampler for StateSampler {
    fn sample(&mut self, alpha_deg: f64, beta_deg: f64, rng: &mut ChaCha8Rng) -> Result<(u8, u8)> {
        let d = self.distribution(alpha_deg, beta_deg)?;
        Ok(d.sample(rng.random::<f64>()))
    }
}

/// Chooses a clean or a contaminated state per herald, following the hidden
/// flag the link simulation attached to it.
#[derive(Debug, Clone)]
pub struct HeraldedSampler {
    clean: StateSampler,
    contaminated: StateSampler,
    flags: Vec<bool>,
    next: usize,
}

impl HeraldedSampler {
    pub fn new(clean: StateSampler, contaminated: StateSampler, heralds: &[HeraldEvent]) -> Self {
        Self {
            clean,
            contaminated,
            flags: heralds.iter().map(|h| h.contaminated).collect(),
            next: 0,
        }
    }
}

impl Sampler for HeraldedSampler {
    fn sample(&mut self, alpha_deg: f64, beta_deg: f64, rng: &mut ChaCha8Rng) -> Result<(u8, u8)> {
        let Some(&flag) = self.flags.get(self.next) else {
            return Err(Error::domain(
                "more rounds requested than heralds available",
            ));
        };
        self.next += 1;
        if flag {
            self.contaminated.sample(alpha_deg, beta_deg, rng)
        } else {
            self.clean.sample(alpha_deg, beta_deg, rng)
        }
    }
}

fn protocol_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SETTINGS_STREAM);
    rng
}

fn execute_rounds<S, I>(
    herald_times_ns: I,
    sampler: &mut S,
    settings: &SettingsMap,
    seed: u64,
) -> Result<EventLedger>
where
    S: Sampler + ?Sized,
    I: IntoIterator<Item = u64>,
{
    let mut rng = protocol_rng(seed);
    let mut ledger = EventLedger::new();
    for (round_id, herald_time_ns) in herald_times_ns.into_iter().enumerate() {
        // Alice's input from two random bits, Bob's from one.
        let hi = rng.random::<bool>() as u8;
        let lo = rng.random::<bool>() as u8;
        let x = (hi << 1) | lo;
        let y = rng.random::<bool>() as u8;
        let alpha = settings.alpha_deg[usize::from(x)];
        let beta = settings.beta_deg[usize::from(y)];
        let (a, b) = match sampler.sample(alpha, beta, &mut rng) {
            Ok(out) => out,
            Err(e) => {
                return Err(Error::Aborted {
                    partial: Box::new(ledger),
                    reason: e.to_string(),
                })
            }
        };
        ledger.append(EventRecord {
            round_id: round_id as u64,
            herald_time_ns,
            x,
            y,
            a,
            b,
        })?;
    }
    Ok(ledger)
}

/// Runs `n_rounds` protocol rounds with uniformly random inputs. Herald times
/// are recorded as zero; use [`run_protocol_on_heralds`] for timed rounds.
pub fn run_protocol<S: Sampler + ?Sized>(
    n_rounds: usize,
    sampler: &mut S,
    settings: &SettingsMap,
    seed: u64,
) -> Result<EventLedger> {
    if n_rounds == 0 {
        return Err(Error::domain("n_rounds must be at least 1"));
    }
    execute_rounds(std::iter::repeat_n(0, n_rounds), sampler, settings, seed)
}

/// One protocol round per herald, stamped with the herald time.
pub fn run_protocol_on_heralds<S: Sampler + ?Sized>(
    heralds: &[HeraldEvent],
    sampler: &mut S,
    settings: &SettingsMap,
    seed: u64,
) -> Result<EventLedger> {
    if heralds.is_empty() {
        return Err(Error::domain("no heralds to run rounds on"));
    }
    execute_rounds(
        heralds.iter().map(HeraldEvent::herald_time_ns),
        sampler,
        settings,
        seed,
    )
}

/// Per-setting round counts `n[x][y]` and same-outcome counts `n_same[x][y]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CorrelationTable {
    pub n: [[u64; 2]; 4],
    pub n_same: [[u64; 2]; 4],
}

impl CorrelationTable {
    pub fn validate(&self) -> Result<()> {
        for x in 0..4 {
            for y in 0..2 {
                if self.n_same[x][y] > self.n[x][y] {
                    return Err(Error::Schema(format!(
                        "cell (x={x}, y={y}): n_same {} exceeds n {}",
                        self.n_same[x][y], self.n[x][y]
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn n_diff(&self, x: usize, y: usize) -> u64 {
        self.n[x][y] - self.n_same[x][y]
    }

    pub fn total(&self) -> u64 {
        self.n.iter().flatten().sum()
    }

    /// Cell-wise scaling of all counts.
    pub fn scaled(&self, k: u64) -> Self {
        let mut t = *self;
        for v in
            t.n.iter_mut()
                .flatten()
                .chain(t.n_same.iter_mut().flatten())
        {
            *v *= k;
        }
        t
    }

    pub(crate) fn require(&self, cells: &[(usize, usize)]) -> Result<()> {
        for &(x, y) in cells {
            if self.n[x][y] == 0 {
                return Err(Error::InsufficientData { x, y });
            }
        }
        Ok(())
    }
}

pub fn tabulate(ledger: &EventLedger) -> CorrelationTable {
    let mut t = CorrelationTable::default();
    for r in ledger.iter() {
        let (x, y) = (usize::from(r.x), usize::from(r.y));
        t.n[x][y] += 1;
        if r.a == r.b {
            t.n_same[x][y] += 1;
        }
    }
    t
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BellEstimate {
    /// Correlators indexed `[x - 2][y]` for the CHSH inputs x ∈ {2, 3}.
    pub e: [[f64; 2]; 2],
    pub sigma_e: [[f64; 2]; 2],
    pub s_value: f64,
    pub sigma_s: f64,
    pub q0: f64,
    pub q1: f64,
    /// QBER over the pooled key rounds of both settings.
    pub q_avg: f64,
    /// Plain mean of `q0` and `q1`.
    pub q_unpooled: f64,
}

impl BellEstimate {
    pub fn correlator(&self, x: usize, y: usize) -> f64 {
        self.e[x - 2][y]
    }

    pub fn correlator_sigma(&self, x: usize, y: usize) -> f64 {
        self.sigma_e[x - 2][y]
    }
}

/// `E = (N_same − N_diff) / N`.
pub fn cell_correlator(t: &CorrelationTable, x: usize, y: usize) -> f64 {
    let n = t.n[x][y] as f64;
    (t.n_same[x][y] as f64 - t.n_diff(x, y) as f64) / n
}

/// CHSH value `S = E₂₁ − E₂₀ − E₃₀ − E₃₁` with binomial errors, and the QBERs
/// of the two key settings.
pub fn estimate_bell(t: &CorrelationTable) -> Result<BellEstimate> {
    t.validate()?;
    t.require(&CHSH_CELLS)?;
    t.require(&KEY_CELLS)?;
    let mut e = [[0.0; 2]; 2];
    let mut sigma_e = [[0.0; 2]; 2];
    for &(x, y) in &CHSH_CELLS {
        let corr = cell_correlator(t, x, y);
        e[x - 2][y] = corr;
        sigma_e[x - 2][y] = ((1.0 - corr * corr) / t.n[x][y] as f64).sqrt();
    }
    let s_value = e[0][1] - e[0][0] - e[1][0] - e[1][1];
    let sigma_s = sigma_e.iter().flatten().map(|s| s * s).sum::<f64>().sqrt();
    let q0 = t.n_same[0][0] as f64 / t.n[0][0] as f64;
    let q1 = t.n_same[1][1] as f64 / t.n[1][1] as f64;
    let q_avg = (t.n_same[0][0] + t.n_same[1][1]) as f64 / (t.n[0][0] + t.n[1][1]) as f64;
    Ok(BellEstimate {
        e,
        sigma_e,
        s_value,
        sigma_s,
        q0,
        q1,
        q_avg,
        q_unpooled: 0.5 * (q0 + q1),
    })
}

/// Raw key material from the rounds with matching key inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct SiftedKey {
    pub key_a: Vec<u8>,
    pub key_b: Vec<u8>,
    /// Fraction of sifted rounds with `a = b` (an error for anti-correlated
    /// keys); `None` when nothing survives sifting.
    pub mismatch_rate: Option<f64>,
}

pub fn sift(ledger: &EventLedger) -> SiftedKey {
    let (key_a, key_b): (Vec<u8>, Vec<u8>) = ledger
        .iter()
        .filter(|r| r.x == r.y && r.x < 2)
        .map(|r| (r.a, r.b))
        .unzip();
    let mismatch_rate = if key_a.is_empty() {
        None
    } else {
        let errors = key_a.iter().zip(&key_b).filter(|(a, b)| a == b).count();
        Some(errors as f64 / key_a.len() as f64)
    };
    SiftedKey {
        key_a,
        key_b,
        mismatch_rate,
    }
}
