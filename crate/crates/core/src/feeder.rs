//! Feeder ingestion, validation, and the canonical bus ordering.
//!
//! A feeder is a radial (tree-shaped) network: one substation bus plus N
//! downstream buses, each fed by exactly one line. Loading a feeder renumbers
//! buses breadth-first from the substation, so every parent index is smaller
//! than all of its children's indices; the power-flow and subproblem modules
//! lean on that ordering to sweep the tree in a single pass. Line impedances
//! and bus ratings are converted to per-unit on load.
//!
//! Throughout the crate, per-bus vectors have length [`FeederTree::n_buses`]
//! and are indexed by internal bus id, with entry 0 belonging to the
//! substation. Line quantities are indexed by the downstream (child) bus of
//! the line, so entry 0 is unused.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// On-disk feeder description.
///
/// ```json
/// {
///   "v_base_kv": 12.0,
///   "s_base_mva": 1.0,
///   "buses": [ {"id": 1, "root": true}, {"id": 2, "peak_load_mva": 0.45, ...} ],
///   "lines": [ {"from": 1, "to": 2, "r_ohm": 0.16, "x_ohm": 0.388} ]
/// }
/// ```
///
/// Unknown keys are rejected. Bus fields other than `id` are optional; see
/// [`BusRow`] for defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeederFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub v_base_kv: f64,
    pub s_base_mva: f64,
    pub buses: Vec<BusRow>,
    pub lines: Vec<LineRow>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusRow {
    pub id: usize,
    #[serde(default)]
    pub root: bool,
    /// Peak apparent load in MVA; scenario generators scale off this value.
    #[serde(default)]
    pub peak_load_mva: f64,
    /// Load power factor, in (0, 1]. Reactive demand follows the active
    /// profile at this power factor.
    #[serde(default = "default_power_factor")]
    pub power_factor: f64,
    /// Shunt capacitor nameplate in Mvar, modeled as a constant reactive
    /// injection.
    #[serde(default)]
    pub shunt_mvar: f64,
    /// PV nameplate in MW (available generation ceiling).
    #[serde(default)]
    pub pv_mw: f64,
    /// Inverter apparent-power rating in MVA (the tight, on-average cap).
    #[serde(default)]
    pub s_mva: f64,
    /// Inverter overload rating in MVA. Defaults to `s_mva` when omitted.
    #[serde(default)]
    pub s_bar_mva: f64,
    /// Marks rows transcribed verbatim from source data that look wrong.
    /// Duplicate ids are tolerated (first row wins) only when every copy is
    /// marked suspect.
    #[serde(default)]
    pub suspect: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

fn default_power_factor() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineRow {
    pub from: usize,
    pub to: usize,
    pub r_ohm: f64,
    pub x_ohm: f64,
}

/// A named replacement for selected fields of one bus, applied before
/// validation. Used by experiment configs to correct suspect data without
/// editing the bundled file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusOverride {
    pub id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peak_load_mva: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power_factor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shunt_mvar: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pv_mw: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_mva: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_bar_mva: Option<f64>,
}

/// Per-bus data in per-unit, in canonical (internal) order.
#[derive(Debug, Clone)]
pub struct BusData {
    /// External id from the source file.
    pub label: usize,
    /// Peak apparent load (p.u. on the system base).
    pub peak_pu: f64,
    pub power_factor: f64,
    /// Constant reactive injection from shunt capacitors (p.u.).
    pub shunt_pu: f64,
    /// PV nameplate (p.u.).
    pub pv_pu: f64,
    /// Inverter rating (p.u.); the on-average apparent-power cap.
    pub s_pu: f64,
    /// Inverter overload rating (p.u.).
    pub s_bar_pu: f64,
    pub suspect: bool,
}

impl BusData {
    /// tan(acos(pf)): multiplying an active load by this gives its reactive
    /// component.
    pub fn tan_phi(&self) -> f64 {
        let pf = self.power_factor;
        (1.0 - pf * pf).max(0.0).sqrt() / pf
    }

    /// Whether the bus hosts a controllable inverter.
    pub fn has_inverter(&self) -> bool {
        self.s_pu > 0.0
    }
}

/// A validated radial feeder with buses renumbered breadth-first from the
/// substation (internal id 0). For every non-root bus `n`, `parent(n) < n`.
#[derive(Debug, Clone)]
pub struct FeederTree {
    v_base_kv: f64,
    s_base_mva: f64,
    z_base_ohm: f64,
    buses: Vec<BusData>,
    parent: Vec<usize>,
    children: Vec<Vec<usize>>,
    /// Per-unit series impedance of the line feeding each bus; entry 0 unused.
    r: Vec<f64>,
    x: Vec<f64>,
    by_label: BTreeMap<usize, usize>,
}

impl FeederTree {
    /// Total bus count, substation included.
    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    /// Line count (= bus count minus one).
    pub fn n_lines(&self) -> usize {
        self.buses.len() - 1
    }

    /// Internal ids of all non-root buses, in canonical order.
    pub fn non_root(&self) -> std::ops::Range<usize> {
        1..self.n_buses()
    }

    pub fn parent(&self, n: usize) -> usize {
        self.parent[n]
    }

    pub fn children(&self, n: usize) -> &[usize] {
        &self.children[n]
    }

    /// Per-unit resistance of the line feeding bus `n` (n ≥ 1).
    pub fn r(&self, n: usize) -> f64 {
        self.r[n]
    }

    /// Per-unit reactance of the line feeding bus `n` (n ≥ 1).
    pub fn x(&self, n: usize) -> f64 {
        self.x[n]
    }

    pub fn bus(&self, n: usize) -> &BusData {
        &self.buses[n]
    }

    pub fn buses(&self) -> &[BusData] {
        &self.buses
    }

    /// External id of internal bus `n`.
    pub fn label(&self, n: usize) -> usize {
        self.buses[n].label
    }

    /// Internal id for an external bus id, if present.
    pub fn internal(&self, label: usize) -> Option<usize> {
        self.by_label.get(&label).copied()
    }

    pub fn v_base_kv(&self) -> f64 {
        self.v_base_kv
    }

    pub fn s_base_mva(&self) -> f64 {
        self.s_base_mva
    }

    pub fn z_base_ohm(&self) -> f64 {
        self.z_base_ohm
    }
}

/// Breadth-first bus ordering: every parent precedes its children, and buses
/// at equal depth are visited in ascending external id. For a canonical tree
/// this is the identity permutation over internal ids.
pub fn topological_order(tree: &FeederTree) -> Vec<usize> {
    let mut order = Vec::with_capacity(tree.n_buses());
    let mut queue = VecDeque::from([0usize]);
    while let Some(n) = queue.pop_front() {
        order.push(n);
        queue.extend(tree.children(n));
    }
    order
}

pub fn parse_feeder(text: &str) -> Result<FeederFile> {
    serde_json::from_str(text).map_err(|source| Error::Json {
        path: "<feeder>".into(),
        source,
    })
}

pub fn load_feeder(path: impl AsRef<Path>) -> Result<FeederTree> {
    load_feeder_with(path, &[])
}

/// Load a feeder file and apply bus overrides before validation.
pub fn load_feeder_with(path: impl AsRef<Path>, overrides: &[BusOverride]) -> Result<FeederTree> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::io(path, source))?;
    let mut file = serde_json::from_str::<FeederFile>(&text).map_err(|source| Error::Json {
        path: path.into(),
        source,
    })?;
    file.apply_overrides(overrides)?;
    file.into_tree()
}

const SCE56_JSON: &str = include_str!("../data/sce56.json");

/// The bundled Southern California Edison 56-bus feeder, verbatim from the
/// published tables (including two rows flagged `suspect`; see the data file
/// notes).
pub fn builtin_sce56() -> FeederTree {
    builtin_sce56_with(&[]).expect("bundled sce56 feeder data is valid")
}

/// [`builtin_sce56`] with bus overrides applied before validation.
pub fn builtin_sce56_with(overrides: &[BusOverride]) -> Result<FeederTree> {
    let mut file = parse_feeder(SCE56_JSON)?;
    file.apply_overrides(overrides)?;
    file.into_tree()
}

/// The documented correction for the bundled feeder: bus 3 is published with
/// a 30 MVA peak load, two orders of magnitude above every other bus and
/// infeasible even at modest loading fractions; the study presets replace it
/// with 0.30 MVA.
pub fn sce56_bus3_override() -> BusOverride {
    BusOverride {
        id: 3,
        peak_load_mva: Some(0.30),
        ..BusOverride::default()
    }
}

impl FeederFile {
    /// Replace fields of matching buses. Every override must name a known bus
    /// id; overrides apply to all rows sharing that id.
    pub fn apply_overrides(&mut self, overrides: &[BusOverride]) -> Result<()> {
        for ov in overrides {
            let mut hit = false;
            for bus in self.buses.iter_mut().filter(|b| b.id == ov.id) {
                hit = true;
                if let Some(v) = ov.peak_load_mva {
                    bus.peak_load_mva = v;
                }
                if let Some(v) = ov.power_factor {
                    bus.power_factor = v;
                }
                if let Some(v) = ov.shunt_mvar {
                    bus.shunt_mvar = v;
                }
                if let Some(v) = ov.pv_mw {
                    bus.pv_mw = v;
                }
                if let Some(v) = ov.s_mva {
                    bus.s_mva = v;
                }
                if let Some(v) = ov.s_bar_mva {
                    bus.s_bar_mva = v;
                }
            }
            if !hit {
                return Err(Error::BadConfig(format!(
                    "override references unknown bus {}",
                    ov.id
                )));
            }
        }
        Ok(())
    }

    /// Validate the description and build the canonical tree.
    pub fn into_tree(self) -> Result<FeederTree> {
        if !(self.v_base_kv.is_finite() && self.v_base_kv > 0.0) {
            return Err(Error::BadConfig(format!(
                "v_base_kv must be positive, got {}",
                self.v_base_kv
            )));
        }
        if !(self.s_base_mva.is_finite() && self.s_base_mva > 0.0) {
            return Err(Error::BadConfig(format!(
                "s_base_mva must be positive, got {}",
                self.s_base_mva
            )));
        }
        let z_base = self.v_base_kv * self.v_base_kv / self.s_base_mva;

        // Deduplicate bus rows: first row wins, and only when every copy of
        // the id is marked suspect.
        let mut rows: BTreeMap<usize, BusRow> = BTreeMap::new();
        for row in &self.buses {
            match rows.get(&row.id) {
                None => {
                    rows.insert(row.id, row.clone());
                }
                Some(kept) => {
                    if !(kept.suspect && row.suspect) {
                        return Err(Error::DuplicateBus(row.id));
                    }
                }
            }
        }

        let roots: Vec<usize> = rows.values().filter(|b| b.root).map(|b| b.id).collect();
        let root = match roots.as_slice() {
            [] => return Err(Error::MissingRoot),
            [r] => *r,
            [a, b, ..] => return Err(Error::MultipleRoots(*a, *b)),
        };

        for bus in rows.values_mut() {
            validate_bus(bus, root)?;
        }

        // Validate lines and build the undirected adjacency.
        let mut seen_pairs: BTreeMap<(usize, usize), ()> = BTreeMap::new();
        let mut adjacency: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        let mut line_by_pair: BTreeMap<(usize, usize), (f64, f64)> = BTreeMap::new();
        for line in &self.lines {
            for endpoint in [line.from, line.to] {
                if !rows.contains_key(&endpoint) {
                    return Err(Error::UnknownBus {
                        from: line.from,
                        to: line.to,
                        unknown: endpoint,
                    });
                }
            }
            if line.from == line.to {
                return Err(Error::SelfLoop(line.from));
            }
            for (name, value) in [("r_ohm", line.r_ohm), ("x_ohm", line.x_ohm)] {
                if !(value.is_finite() && value >= 0.0) {
                    return Err(Error::BadLineData {
                        from: line.from,
                        to: line.to,
                        what: format!("{name} must be finite and non-negative, got {value}"),
                    });
                }
            }
            let pair = (line.from.min(line.to), line.from.max(line.to));
            if seen_pairs.insert(pair, ()).is_some() {
                return Err(Error::DuplicateEdge(pair.0, pair.1));
            }
            line_by_pair.insert(pair, (line.r_ohm, line.x_ohm));
            adjacency.entry(line.from).or_default().push(line.to);
            adjacency.entry(line.to).or_default().push(line.from);
        }
        for neighbors in adjacency.values_mut() {
            neighbors.sort_unstable();
        }

        // Breadth-first traversal from the root: assigns canonical ids,
        // detects cycles (an edge back into visited territory) and
        // disconnected buses (never reached).
        let mut order = Vec::with_capacity(rows.len());
        let mut parent_label: BTreeMap<usize, usize> = BTreeMap::new();
        let mut queue = VecDeque::from([root]);
        let mut visited: BTreeMap<usize, ()> = BTreeMap::from([(root, ())]);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            for &v in adjacency.get(&u).map(Vec::as_slice).unwrap_or(&[]) {
                if parent_label.get(&u) == Some(&v) {
                    continue; // the edge we arrived through
                }
                if visited.insert(v, ()).is_some() {
                    return Err(Error::CycleDetected(v));
                }
                parent_label.insert(v, u);
                queue.push_back(v);
            }
        }
        if let Some(stranded) = rows.keys().find(|id| !visited.contains_key(id)) {
            return Err(Error::DisconnectedBus(*stranded));
        }

        let by_label: BTreeMap<usize, usize> =
            order.iter().enumerate().map(|(n, &id)| (id, n)).collect();
        let s_base = self.s_base_mva;
        let buses: Vec<BusData> = order
            .iter()
            .map(|id| {
                let row = &rows[id];
                BusData {
                    label: row.id,
                    peak_pu: row.peak_load_mva / s_base,
                    power_factor: row.power_factor,
                    shunt_pu: row.shunt_mvar / s_base,
                    pv_pu: row.pv_mw / s_base,
                    s_pu: row.s_mva / s_base,
                    s_bar_pu: if row.s_bar_mva > 0.0 {
                        row.s_bar_mva / s_base
                    } else {
                        row.s_mva / s_base
                    },
                    suspect: row.suspect,
                }
            })
            .collect();

        let n = buses.len();
        let mut parent = vec![0usize; n];
        let mut children = vec![Vec::new(); n];
        let mut r = vec![0.0; n];
        let mut x = vec![0.0; n];
        for (child_n, label) in order.iter().enumerate().skip(1) {
            let p_label = parent_label[label];
            let p_n = by_label[&p_label];
            parent[child_n] = p_n;
            children[p_n].push(child_n);
            let pair = (p_label.min(*label), p_label.max(*label));
            let (r_ohm, x_ohm) = line_by_pair[&pair];
            r[child_n] = r_ohm / z_base;
            x[child_n] = x_ohm / z_base;
        }

        Ok(FeederTree {
            v_base_kv: self.v_base_kv,
            s_base_mva: self.s_base_mva,
            z_base_ohm: z_base,
            buses,
            parent,
            children,
            r,
            x,
            by_label,
        })
    }
}

fn validate_bus(bus: &mut BusRow, root: usize) -> Result<()> {
    let err = |what: String| Error::BadBusData { bus: bus.id, what };
    for (name, value) in [
        ("peak_load_mva", bus.peak_load_mva),
        ("shunt_mvar", bus.shunt_mvar),
        ("pv_mw", bus.pv_mw),
        ("s_mva", bus.s_mva),
        ("s_bar_mva", bus.s_bar_mva),
    ] {
        if !(value.is_finite() && value >= 0.0) {
            return Err(err(format!(
                "{name} must be finite and non-negative, got {value}"
            )));
        }
    }
    if !(bus.power_factor.is_finite() && bus.power_factor > 0.0 && bus.power_factor <= 1.0) {
        return Err(err(format!(
            "power_factor must lie in (0, 1], got {}",
            bus.power_factor
        )));
    }
    if bus.pv_mw > 0.0 && bus.s_mva == 0.0 {
        return Err(err("has PV but no inverter rating (s_mva)".into()));
    }
    if bus.s_bar_mva == 0.0 {
        bus.s_bar_mva = bus.s_mva;
    }
    if bus.s_bar_mva < bus.s_mva {
        return Err(err(format!(
            "overload rating s_bar_mva {} is below the nameplate s_mva {}",
            bus.s_bar_mva, bus.s_mva
        )));
    }
    if bus.id == root && (bus.peak_load_mva > 0.0 || bus.pv_mw > 0.0 || bus.shunt_mvar > 0.0) {
        return Err(err(
            "the root (substation) bus cannot carry load, PV, or shunt compensation".into(),
        ));
    }
    Ok(())
}
