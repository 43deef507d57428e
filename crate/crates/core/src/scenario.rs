//! Scenario generation: per-slot loads, available PV generation, and prices.
//!
//! Two sources are supported: a synthetic Gaussian-perturbation generator and
//! a trace pipeline that resamples metered kW profiles onto the control grid.
//! Both produce the same [`SlotData`] stream, in per-unit, indexed by internal
//! bus id (entry 0 = substation, always zero). Generation is deterministic for
//! a fixed seed, so repeated runs and different controllers can consume
//! identical realizations.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feeder::FeederTree;

/// Exogenous data for one control slot. Powers are per-unit; prices are in
/// cents per kWh and are converted to dollars only in the metrics layer.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotData {
    pub t: usize,
    /// Active demand per bus.
    pub p_c: Vec<f64>,
    /// Reactive demand per bus (follows `p_c` at the bus power factor).
    pub q_c: Vec<f64>,
    /// Available PV generation ceiling per bus.
    pub pg_max: Vec<f64>,
    /// Price of energy drawn from the transmission grid (cents/kWh).
    pub price_main: f64,
    /// Feed-in-tariff price paid for renewable surplus (cents/kWh).
    pub price_fit: f64,
}

/// Price model shared by both scenario sources.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriceSpec {
    pub schedule: PriceSchedule,
    /// Allows a feed-in tariff of exactly zero (a "utility keeps the surplus
    /// for free" policy). Without this flag a zero or negative price is
    /// rejected as a likely configuration mistake.
    #[serde(default)]
    pub zero_fit: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PriceSchedule {
    /// The same pair of prices every slot.
    Constant { pi0: f64, pif: f64 },
    /// `pi0` steps through blocks of `slots_per_block` slots, cycling if the
    /// horizon is longer than the block list; `pif` stays constant.
    Blocks {
        pi0: Vec<f64>,
        slots_per_block: usize,
        pif: f64,
    },
}

impl PriceSpec {
    pub fn constant(pi0: f64, pif: f64) -> Self {
        PriceSpec {
            schedule: PriceSchedule::Constant { pi0, pif },
            zero_fit: false,
        }
    }
}

/// Expand a price spec into per-slot `(price_main, price_fit)` pairs.
pub fn price_schedule(spec: &PriceSpec, n_slots: usize) -> Result<Vec<(f64, f64)>> {
    let check_pi0 = |pi0: f64| -> Result<()> {
        if !(pi0.is_finite() && pi0 > 0.0) {
            return Err(Error::BadScenario(format!(
                "main-grid price must be positive, got {pi0}"
            )));
        }
        Ok(())
    };
    let check_pif = |pif: f64, zero_fit: bool| -> Result<()> {
        let ok = pif.is_finite() && (pif > 0.0 || (zero_fit && pif == 0.0));
        if !ok {
            return Err(Error::BadScenario(format!(
                "feed-in tariff must be positive (or exactly zero with zero_fit), got {pif}"
            )));
        }
        Ok(())
    };
    match &spec.schedule {
        PriceSchedule::Constant { pi0, pif } => {
            check_pi0(*pi0)?;
            check_pif(*pif, spec.zero_fit)?;
            Ok(vec![(*pi0, *pif); n_slots])
        }
        PriceSchedule::Blocks {
            pi0,
            slots_per_block,
            pif,
        } => {
            if pi0.is_empty() {
                return Err(Error::BadScenario("price block list is empty".into()));
            }
            if *slots_per_block == 0 {
                return Err(Error::BadScenario(
                    "slots_per_block must be positive".into(),
                ));
            }
            for &p in pi0 {
                check_pi0(p)?;
            }
            check_pif(*pif, spec.zero_fit)?;
            Ok((0..n_slots)
                .map(|t| (pi0[(t / slots_per_block) % pi0.len()], *pif))
                .collect())
        }
    }
}

/// Synthetic scenario: nominal load is a fixed fraction of each bus's peak,
/// nominal generation a fixed fraction of each PV nameplate, and both are
/// perturbed per slot by independent zero-mean Gaussian noise with standard
/// deviation proportional to the nominal value. Negative draws clamp to zero.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub load_fraction: f64,
    pub gen_fraction: f64,
    pub noise_std_fraction: f64,
    pub n_slots: usize,
    pub seed: u64,
    pub prices: PriceSpec,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            load_fraction: 0.4,
            gen_fraction: 0.8,
            noise_std_fraction: 0.05,
            n_slots: 120,
            seed: 1,
            prices: PriceSpec::constant(30.0, 15.0),
        }
    }
}

pub fn gen_synthetic(tree: &FeederTree, cfg: &SyntheticConfig) -> Result<Vec<SlotData>> {
    for (name, value) in [
        ("load_fraction", cfg.load_fraction),
        ("gen_fraction", cfg.gen_fraction),
        ("noise_std_fraction", cfg.noise_std_fraction),
    ] {
        if !(value.is_finite() && value >= 0.0) {
            return Err(Error::BadScenario(format!(
                "{name} must be finite and non-negative, got {value}"
            )));
        }
    }
    if cfg.n_slots == 0 {
        return Err(Error::BadScenario("n_slots must be positive".into()));
    }
    let prices = price_schedule(&cfg.prices, cfg.n_slots)?;

    let n = tree.n_buses();
    let nominal_p: Vec<f64> = (0..n)
        .map(|i| cfg.load_fraction * tree.bus(i).peak_pu * tree.bus(i).power_factor)
        .collect();
    let nominal_g: Vec<f64> = (0..n)
        .map(|i| cfg.gen_fraction * tree.bus(i).pv_pu)
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut slots = Vec::with_capacity(cfg.n_slots);
    for (t, &(price_main, price_fit)) in prices.iter().enumerate() {
        let mut p_c = vec![0.0; n];
        let mut q_c = vec![0.0; n];
        let mut pg_max = vec![0.0; n];
        // One standard-normal draw per bus per family, whether or not the bus
        // has load or PV: keeps the random stream layout independent of the
        // fractions, so runs differing only in magnitudes stay coupled.
        for i in 1..n {
            let z: f64 = rng.sample(StandardNormal);
            p_c[i] = (nominal_p[i] * (1.0 + cfg.noise_std_fraction * z)).max(0.0);
            q_c[i] = p_c[i] * tree.bus(i).tan_phi();
        }
        for (i, nom) in nominal_g.iter().enumerate().skip(1) {
            let z: f64 = rng.sample(StandardNormal);
            pg_max[i] = (nom * (1.0 + cfg.noise_std_fraction * z)).max(0.0);
        }
        slots.push(SlotData {
            t,
            p_c,
            q_c,
            pg_max,
            price_main,
            price_fit,
        });
    }
    Ok(slots)
}

/// Diurnal synthetic scenario: a stand-in for metered daily traces when none
/// are available. Solar availability follows a clear-sky half-sine over the
/// 06:00-18:00 daylight window, peaking at `gen_peak_fraction` of nameplate at
/// noon; load follows a smooth 24 h curve that tops out at `load_fraction` of
/// peak around 16:00 and bottoms out 26% lower around 04:00. Both are
/// perturbed by the same per-slot Gaussian noise model as [`SyntheticConfig`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiurnalConfig {
    /// Fraction of peak load reached at the daily load maximum.
    pub load_fraction: f64,
    /// Fraction of PV nameplate reached at solar noon.
    pub gen_peak_fraction: f64,
    pub noise_std_fraction: f64,
    pub n_slots: usize,
    pub seed: u64,
    /// Local hour of day at the first slot.
    pub start_hour: f64,
    /// Slot length in seconds, used only to map slot indices to hours.
    pub dt_s: f64,
    pub prices: PriceSpec,
}

impl Default for DiurnalConfig {
    fn default() -> Self {
        DiurnalConfig {
            load_fraction: 0.25,
            gen_peak_fraction: 1.0,
            noise_std_fraction: 0.05,
            n_slots: 600,
            seed: 1,
            start_hour: 9.5,
            dt_s: 30.0,
            prices: PriceSpec::constant(30.0, 15.0),
        }
    }
}

/// Clear-sky solar multiplier at local hour `h`: a half-sine supported on
/// 06:00-18:00, 1.0 at noon.
fn solar_shape(h: f64) -> f64 {
    let h = h.rem_euclid(24.0);
    if (6.0..=18.0).contains(&h) {
        (std::f64::consts::PI * (h - 6.0) / 12.0).sin().max(0.0)
    } else {
        0.0
    }
}

/// Daily load multiplier at local hour `h`, normalized to 1.0 at the 16:00
/// peak; the 04:00 trough sits at 0.85/1.15 of the peak.
fn load_shape(h: f64) -> f64 {
    let swing = 0.15;
    (1.0 + swing * (2.0 * std::f64::consts::PI * (h - 16.0) / 24.0).cos()) / (1.0 + swing)
}

pub fn gen_diurnal(tree: &FeederTree, cfg: &DiurnalConfig) -> Result<Vec<SlotData>> {
    for (name, value) in [
        ("load_fraction", cfg.load_fraction),
        ("gen_peak_fraction", cfg.gen_peak_fraction),
        ("noise_std_fraction", cfg.noise_std_fraction),
    ] {
        if !(value.is_finite() && value >= 0.0) {
            return Err(Error::BadScenario(format!(
                "{name} must be finite and non-negative, got {value}"
            )));
        }
    }
    if cfg.n_slots == 0 {
        return Err(Error::BadScenario("n_slots must be positive".into()));
    }
    if !(cfg.dt_s.is_finite() && cfg.dt_s > 0.0) {
        return Err(Error::BadScenario(format!(
            "dt_s must be positive, got {}",
            cfg.dt_s
        )));
    }
    if !cfg.start_hour.is_finite() {
        return Err(Error::BadScenario("start_hour must be finite".into()));
    }
    let prices = price_schedule(&cfg.prices, cfg.n_slots)?;

    let n = tree.n_buses();
    let peak_p: Vec<f64> = (0..n)
        .map(|i| cfg.load_fraction * tree.bus(i).peak_pu * tree.bus(i).power_factor)
        .collect();
    let peak_g: Vec<f64> = (0..n)
        .map(|i| cfg.gen_peak_fraction * tree.bus(i).pv_pu)
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut slots = Vec::with_capacity(cfg.n_slots);
    for (t, &(price_main, price_fit)) in prices.iter().enumerate() {
        let hour = cfg.start_hour + t as f64 * cfg.dt_s / 3600.0;
        let lf = load_shape(hour);
        let gf = solar_shape(hour);
        let mut p_c = vec![0.0; n];
        let mut q_c = vec![0.0; n];
        let mut pg_max = vec![0.0; n];
        // Same stream discipline as gen_synthetic: one draw per bus per family
        // per slot, independent of magnitudes, so scenarios differing only in
        // shape parameters stay coupled under a shared seed.
        for i in 1..n {
            let z: f64 = rng.sample(StandardNormal);
            p_c[i] = (peak_p[i] * lf * (1.0 + cfg.noise_std_fraction * z)).max(0.0);
            q_c[i] = p_c[i] * tree.bus(i).tan_phi();
        }
        for (i, nom) in peak_g.iter().enumerate().skip(1) {
            let z: f64 = rng.sample(StandardNormal);
            pg_max[i] = (nom * gf * (1.0 + cfg.noise_std_fraction * z)).max(0.0);
        }
        slots.push(SlotData {
            t,
            p_c,
            q_c,
            pg_max,
            price_main,
            price_fit,
        });
    }
    Ok(slots)
}

/// Trace scenario: metered kW profiles resampled onto the control grid.
///
/// Both CSVs carry a `timestamp_s` column followed by one column per source
/// id; the mapping CSV (`source_id,bus_id`) assigns every source column to a
/// bus, and sources sharing a bus are averaged. Per bus, the resampled curve
/// is normalized to unit peak and scaled by the bus rating (peak active load
/// for the load file, PV nameplate for the solar file).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceConfig {
    pub load_csv: PathBuf,
    pub solar_csv: PathBuf,
    pub mapping_csv: PathBuf,
    /// Sampling period of the load file; inferred from timestamps if omitted.
    #[serde(default)]
    pub load_resolution_s: Option<u64>,
    /// Sampling period of the solar file; inferred from timestamps if omitted.
    #[serde(default)]
    pub solar_resolution_s: Option<u64>,
    /// Control-slot length the profiles are resampled to.
    #[serde(default = "default_target_resolution")]
    pub target_resolution_s: u64,
    /// Truncate the scenario to this many slots.
    #[serde(default)]
    pub n_slots: Option<usize>,
    pub prices: PriceSpec,
}

fn default_target_resolution() -> u64 {
    30
}

pub fn load_trace(tree: &FeederTree, cfg: &TraceConfig) -> Result<Vec<SlotData>> {
    if cfg.target_resolution_s == 0 {
        return Err(Error::BadScenario(
            "target_resolution_s must be positive".into(),
        ));
    }
    let mapping = read_mapping(&cfg.mapping_csv, tree)?;
    let load = bus_curves(
        &cfg.load_csv,
        cfg.load_resolution_s,
        cfg.target_resolution_s,
        &mapping,
        tree,
    )?;
    let solar = bus_curves(
        &cfg.solar_csv,
        cfg.solar_resolution_s,
        cfg.target_resolution_s,
        &mapping,
        tree,
    )?;

    for n in tree.non_root() {
        let bus = tree.bus(n);
        if bus.peak_pu > 0.0 && !load.contains_key(&n) {
            return Err(Error::UnmappedBus(bus.label));
        }
        if bus.pv_pu > 0.0 && !solar.contains_key(&n) {
            return Err(Error::UnmappedBus(bus.label));
        }
    }

    let load_len = load.values().map(Vec::len).min().unwrap_or(0);
    let solar_len = solar.values().map(Vec::len).min().unwrap_or(0);
    let mut n_slots = match (load.is_empty(), solar.is_empty()) {
        (false, false) => load_len.min(solar_len),
        (false, true) => load_len,
        (true, false) => solar_len,
        (true, true) => 0,
    };
    if let Some(cap) = cfg.n_slots {
        n_slots = n_slots.min(cap);
    }
    if n_slots == 0 {
        return Err(Error::BadScenario(
            "trace files yield no complete control slots".into(),
        ));
    }
    let prices = price_schedule(&cfg.prices, n_slots)?;

    let n = tree.n_buses();
    let mut slots = Vec::with_capacity(n_slots);
    for (t, &(price_main, price_fit)) in prices.iter().enumerate() {
        let mut p_c = vec![0.0; n];
        let mut q_c = vec![0.0; n];
        let mut pg_max = vec![0.0; n];
        for i in tree.non_root() {
            let bus = tree.bus(i);
            if let Some(curve) = load.get(&i) {
                p_c[i] = curve[t] * bus.peak_pu * bus.power_factor;
                q_c[i] = p_c[i] * bus.tan_phi();
            }
            if let Some(curve) = solar.get(&i) {
                pg_max[i] = curve[t] * bus.pv_pu;
            }
        }
        slots.push(SlotData {
            t,
            p_c,
            q_c,
            pg_max,
            price_main,
            price_fit,
        });
    }
    Ok(slots)
}

fn read_mapping(path: &Path, tree: &FeederTree) -> Result<BTreeMap<String, usize>> {
    let wrap = |source| Error::Csv {
        path: path.into(),
        source,
    };
    let mut reader = csv::Reader::from_path(path).map_err(wrap)?;
    let mut mapping = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(wrap)?;
        if record.len() != 2 {
            return Err(Error::BadTrace {
                path: path.into(),
                what: format!("mapping rows need exactly 2 fields, got {}", record.len()),
            });
        }
        let source = record[0].trim().to_string();
        let label: usize = record[1].trim().parse().map_err(|_| Error::BadTrace {
            path: path.into(),
            what: format!("bus id {:?} is not an integer", &record[1]),
        })?;
        let internal = tree.internal(label).ok_or(Error::BadTrace {
            path: path.into(),
            what: format!("mapping references unknown bus {label}"),
        })?;
        if mapping.insert(source.clone(), internal).is_some() {
            return Err(Error::BadTrace {
                path: path.into(),
                what: format!("source {source} mapped twice"),
            });
        }
    }
    Ok(mapping)
}

/// Read a trace CSV, resample every column to the target resolution, and
/// average columns that map to the same bus. Curves are normalized to unit
/// peak (left untouched if identically zero).
fn bus_curves(
    path: &Path,
    resolution_s: Option<u64>,
    target_s: u64,
    mapping: &BTreeMap<String, usize>,
    tree: &FeederTree,
) -> Result<BTreeMap<usize, Vec<f64>>> {
    let wrap = |source| Error::Csv {
        path: path.into(),
        source,
    };
    let bad = |what: String| Error::BadTrace {
        path: path.into(),
        what,
    };
    let mut reader = csv::Reader::from_path(path).map_err(wrap)?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(wrap)?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if headers.first().map(String::as_str) != Some("timestamp_s") {
        return Err(bad("first column must be timestamp_s".into()));
    }
    let sources = &headers[1..];
    for source in sources {
        if !mapping.contains_key(source) {
            return Err(bad(format!("source column {source} has no bus mapping")));
        }
    }

    let mut timestamps: Vec<u64> = Vec::new();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); sources.len()];
    for record in reader.records() {
        let record = record.map_err(wrap)?;
        if record.len() != headers.len() {
            return Err(bad(format!(
                "row {} has {} fields, expected {}",
                timestamps.len() + 2,
                record.len(),
                headers.len()
            )));
        }
        let ts: u64 = record[0]
            .trim()
            .parse()
            .map_err(|_| bad(format!("timestamp {:?} is not an integer", &record[0])))?;
        if let Some(&last) = timestamps.last() {
            if ts <= last {
                return Err(bad(format!(
                    "timestamps must be strictly increasing ({last} then {ts})"
                )));
            }
        }
        timestamps.push(ts);
        for (column, field) in columns.iter_mut().zip(record.iter().skip(1)) {
            let value: f64 = field
                .trim()
                .parse()
                .map_err(|_| bad(format!("value {field:?} is not a number")))?;
            if !value.is_finite() {
                return Err(bad(format!("non-finite sample {value}")));
            }
            column.push(value);
        }
    }
    if timestamps.len() < 2 {
        return Err(bad("need at least two samples".into()));
    }
    let step = timestamps[1] - timestamps[0];
    if timestamps.windows(2).any(|w| w[1] - w[0] != step) {
        return Err(bad("samples are not uniformly spaced".into()));
    }
    if let Some(declared) = resolution_s {
        if declared != step {
            return Err(bad(format!(
                "declared resolution {declared}s does not match the {step}s grid"
            )));
        }
    }

    let mut grouped: BTreeMap<usize, Vec<Vec<f64>>> = BTreeMap::new();
    for (source, column) in sources.iter().zip(columns) {
        let resampled = resample(&column, step, target_s).map_err(&bad)?;
        grouped.entry(mapping[source]).or_default().push(resampled);
    }

    let mut curves = BTreeMap::new();
    for (bus, group) in grouped {
        let len = group.iter().map(Vec::len).min().unwrap_or(0);
        let mut mean: Vec<f64> = (0..len)
            .map(|t| group.iter().map(|c| c[t]).sum::<f64>() / group.len() as f64)
            .collect();
        let peak = mean.iter().cloned().fold(0.0, f64::max);
        if peak > 0.0 {
            for v in &mut mean {
                *v /= peak;
            }
        }
        if mean.iter().any(|v| *v < 0.0) {
            return Err(bad(format!("negative samples for bus {}", tree.label(bus))));
        }
        curves.insert(bus, mean);
    }
    Ok(curves)
}

/// Resample a uniformly-spaced series from `src` seconds per sample to `tgt`:
/// linear interpolation when refining, block averages over complete windows
/// when aggregating.
fn resample(values: &[f64], src: u64, tgt: u64) -> std::result::Result<Vec<f64>, String> {
    if src == tgt {
        return Ok(values.to_vec());
    }
    if tgt < src {
        // Refine: sample the piecewise-linear curve at every target instant
        // inside the recorded span.
        let span = (values.len() - 1) as u64 * src;
        let out = (0..=span / tgt)
            .map(|k| {
                let pos = (k * tgt) as f64 / src as f64;
                let left = pos.floor() as usize;
                let frac = pos - left as f64;
                if frac == 0.0 {
                    values[left]
                } else {
                    values[left] * (1.0 - frac) + values[left + 1] * frac
                }
            })
            .collect();
        Ok(out)
    } else {
        // Aggregate: average complete windows of tgt/src samples.
        if !tgt.is_multiple_of(src) {
            return Err(format!(
                "target resolution {tgt}s must be a multiple of the source resolution {src}s"
            ));
        }
        let per = (tgt / src) as usize;
        Ok(values
            .chunks_exact(per)
            .map(|w| w.iter().sum::<f64>() / per as f64)
            .collect())
    }
}

/// How a run obtains its slot stream.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ScenarioSpec {
    Synthetic(SyntheticConfig),
    Diurnal(DiurnalConfig),
    Trace(TraceConfig),
    /// Replay a file previously written by [`write_slots_csv`].
    SlotsCsv {
        path: PathBuf,
    },
}

impl ScenarioSpec {
    /// Produce the slot stream. `seed` overrides the generator seed when set,
    /// letting replica sweeps re-seed a shared base configuration.
    pub fn materialize(&self, tree: &FeederTree, seed: Option<u64>) -> Result<Vec<SlotData>> {
        match self {
            ScenarioSpec::Synthetic(cfg) => {
                let mut cfg = cfg.clone();
                if let Some(seed) = seed {
                    cfg.seed = seed;
                }
                gen_synthetic(tree, &cfg)
            }
            ScenarioSpec::Diurnal(cfg) => {
                let mut cfg = cfg.clone();
                if let Some(seed) = seed {
                    cfg.seed = seed;
                }
                gen_diurnal(tree, &cfg)
            }
            ScenarioSpec::Trace(cfg) => load_trace(tree, cfg),
            ScenarioSpec::SlotsCsv { path } => read_slots_csv(tree, path),
        }
    }
}

/// Write slots as CSV: `t,price_main,price_fit` followed by
/// `p_c_<bus>,q_c_<bus>,pg_max_<bus>` triples for every non-root bus, using
/// external bus ids. Floats round-trip exactly.
pub fn write_slots_csv(
    tree: &FeederTree,
    slots: &[SlotData],
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("t,price_main,price_fit");
    for n in tree.non_root() {
        let label = tree.label(n);
        out.push_str(&format!(",p_c_{label},q_c_{label},pg_max_{label}"));
    }
    out.push('\n');
    for slot in slots {
        out.push_str(&format!(
            "{},{},{}",
            slot.t, slot.price_main, slot.price_fit
        ));
        for n in tree.non_root() {
            out.push_str(&format!(
                ",{},{},{}",
                slot.p_c[n], slot.q_c[n], slot.pg_max[n]
            ));
        }
        out.push('\n');
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes())
        .map_err(|e| Error::io(path, e))?;
    file.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Read a file written by [`write_slots_csv`]. The header must name exactly
/// the non-root buses of `tree`, in canonical order.
pub fn read_slots_csv(tree: &FeederTree, path: impl AsRef<Path>) -> Result<Vec<SlotData>> {
    let path = path.as_ref();
    let wrap = |source| Error::Csv {
        path: path.into(),
        source,
    };
    let bad = |what: String| Error::BadTrace {
        path: path.into(),
        what,
    };
    let mut reader = csv::Reader::from_path(path).map_err(wrap)?;
    let mut expected = vec!["t".to_string(), "price_main".into(), "price_fit".into()];
    for n in tree.non_root() {
        let label = tree.label(n);
        expected.push(format!("p_c_{label}"));
        expected.push(format!("q_c_{label}"));
        expected.push(format!("pg_max_{label}"));
    }
    let headers: Vec<String> = reader
        .headers()
        .map_err(wrap)?
        .iter()
        .map(String::from)
        .collect();
    if headers != expected {
        return Err(bad(
            "header does not match the feeder's bus set and order".into()
        ));
    }
    let n = tree.n_buses();
    let mut slots = Vec::new();
    for record in reader.records() {
        let record = record.map_err(wrap)?;
        if record.len() != expected.len() {
            return Err(bad(format!(
                "row {} has {} fields, expected {}",
                slots.len() + 2,
                record.len(),
                expected.len()
            )));
        }
        let field = |i: usize| -> std::result::Result<f64, Error> {
            record[i]
                .trim()
                .parse::<f64>()
                .map_err(|_| bad(format!("field {:?} is not a number", &record[i])))
        };
        let t: usize = record[0]
            .trim()
            .parse()
            .map_err(|_| bad(format!("slot index {:?} is not an integer", &record[0])))?;
        if t != slots.len() {
            return Err(bad(format!(
                "slot indices must be consecutive from 0, got {t} at row {}",
                slots.len() + 2
            )));
        }
        let mut slot = SlotData {
            t,
            p_c: vec![0.0; n],
            q_c: vec![0.0; n],
            pg_max: vec![0.0; n],
            price_main: field(1)?,
            price_fit: field(2)?,
        };
        for (k, i) in tree.non_root().enumerate() {
            slot.p_c[i] = field(3 + 3 * k)?;
            slot.q_c[i] = field(4 + 3 * k)?;
            slot.pg_max[i] = field(5 + 3 * k)?;
        }
        slots.push(slot);
    }
    if slots.is_empty() {
        return Err(bad("no slots".into()));
    }
    Ok(slots)
}
