//! Location-month panels: CSV IO, validation and derivation of within-group
//! neighbor event counts.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::statespace::{StateSpace, StateSpec, UnitState};

pub const REQUIRED_COLUMNS: [&str; 7] = ["node_id", "group_id", "period", "age", "cage", "fail", "decision"];
pub const NEIGHBOR_COLUMNS: [&str; 2] = ["nbr_lag", "nbr_fail"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PanelRow {
    pub node_id: u32,
    pub group_id: u32,
    pub period: u32,
    pub age: u32,
    pub cage: u32,
    pub fail: bool,
    /// `true` = replace.
    pub decision: bool,
    /// Replacements among group-mates in the previous period.
    pub nbr_lag: u32,
    /// Failures among group-mates in the current period.
    pub nbr_fail: u32,
}

impl PanelRow {
    /// Encode this observation into `space`, saturating age and binning the
    /// neighbor counts.
    pub fn state(&self, spec: &StateSpec) -> UnitState {
        UnitState::from_observation(spec, self.age, self.cage, self.fail, self.nbr_lag, self.nbr_fail)
    }
}

/// Rows sorted by `(node_id, period)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    rows: Vec<PanelRow>,
    neighbors_derived: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PanelSchema {
    /// Fail loading when the neighbor columns are absent.
    pub require_neighbor_columns: bool,
}

impl Panel {
    /// Sort and check structural invariants: unique `(node, period)`, and
    /// cage and group constant within node.
    pub fn new(mut rows: Vec<PanelRow>, neighbors_derived: bool) -> Result<Self> {
        if !neighbors_derived {
            for r in &mut rows {
                r.nbr_lag = 0;
                r.nbr_fail = 0;
            }
        }
        // stable sort keeps the input order available for error messages
        let mut order: Vec<usize> = (0..rows.len()).collect();
        order.sort_by_key(|&i| (rows[i].node_id, rows[i].period));
        for w in order.windows(2) {
            let (a, b) = (&rows[w[0]], &rows[w[1]]);
            if a.node_id != b.node_id {
                continue;
            }
            if a.period == b.period {
                return Err(Error::Load {
                    row: w[1] + 1,
                    message: format!("duplicate (node_id, period) = ({}, {})", b.node_id, b.period),
                });
            }
            if a.cage != b.cage {
                return Err(Error::Load {
                    row: w[1] + 1,
                    message: format!("node {} changes cage from {} to {}", b.node_id, a.cage, b.cage),
                });
            }
            if a.group_id != b.group_id {
                return Err(Error::Load {
                    row: w[1] + 1,
                    message: format!("node {} changes group from {} to {}", b.node_id, a.group_id, b.group_id),
                });
            }
        }
        let rows = order.into_iter().map(|i| rows[i]).collect();
        Ok(Self {
            rows,
            neighbors_derived,
        })
    }

    pub fn rows(&self) -> &[PanelRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn neighbors_derived(&self) -> bool {
        self.neighbors_derived
    }

    pub fn topology(&self) -> Topology {
        let mut node_group = BTreeMap::new();
        for r in &self.rows {
            node_group.insert(r.node_id, r.group_id);
        }
        Topology::from_assignments(node_group)
    }

    /// Per-node slices of consecutive rows.
    pub fn node_runs(&self) -> impl Iterator<Item = &[PanelRow]> {
        self.rows.chunk_by(|a, b| a.node_id == b.node_id)
    }

    /// Replacement and continuation counts.
    pub fn choice_counts(&self) -> (u64, u64) {
        let rep = self.rows.iter().filter(|r| r.decision).count() as u64;
        (self.rows.len() as u64 - rep, rep)
    }

    pub fn read_csv<R: Read>(reader: R, schema: PanelSchema) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let mut idx = [0usize; 7];
        for (k, name) in REQUIRED_COLUMNS.iter().enumerate() {
            idx[k] = col(name).ok_or_else(|| Error::Load {
                row: 0,
                message: format!("missing required column `{name}`"),
            })?;
        }
        let nbr = match (col(NEIGHBOR_COLUMNS[0]), col(NEIGHBOR_COLUMNS[1])) {
            (Some(a), Some(b)) => Some((a, b)),
            (None, None) => None,
            _ => {
                return Err(Error::Load {
                    row: 0,
                    message: "neighbor columns must both be present or both absent".into(),
                })
            }
        };
        if schema.require_neighbor_columns && nbr.is_none() {
            return Err(Error::Load {
                row: 0,
                message: "neighbor columns `nbr_lag`, `nbr_fail` are required".into(),
            });
        }
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let row_no = i + 1;
            let rec = rec?;
            let int = |k: usize, name: &str| -> Result<u32> {
                let cell = rec.get(k).unwrap_or("");
                cell.parse::<u32>().map_err(|_| Error::Load {
                    row: row_no,
                    message: format!("column `{name}`: `{cell}` is not a non-negative integer"),
                })
            };
            let flag = |k: usize, name: &str| -> Result<bool> {
                match int(k, name)? {
                    0 => Ok(false),
                    1 => Ok(true),
                    v => Err(Error::Load {
                        row: row_no,
                        message: format!("column `{name}` must be 0 or 1, got {v}"),
                    }),
                }
            };
            let (nbr_lag, nbr_fail) = match nbr {
                Some((a, b)) => (int(a, "nbr_lag")?, int(b, "nbr_fail")?),
                None => (0, 0),
            };
            rows.push(PanelRow {
                node_id: int(idx[0], "node_id")?,
                group_id: int(idx[1], "group_id")?,
                period: int(idx[2], "period")?,
                age: int(idx[3], "age")?,
                cage: int(idx[4], "cage")?,
                fail: flag(idx[5], "fail")?,
                decision: flag(idx[6], "decision")?,
                nbr_lag,
                nbr_fail,
            });
        }
        Panel::new(rows, nbr.is_some())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<&str> = REQUIRED_COLUMNS.to_vec();
        if self.neighbors_derived {
            header.extend(NEIGHBOR_COLUMNS);
        }
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                r.node_id.to_string(),
                r.group_id.to_string(),
                r.period.to_string(),
                r.age.to_string(),
                r.cage.to_string(),
                (r.fail as u8).to_string(),
                (r.decision as u8).to_string(),
            ];
            if self.neighbors_derived {
                rec.push(r.nbr_lag.to_string());
                rec.push(r.nbr_fail.to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }
}

/// Load a panel CSV from disk.
pub fn load_panel(path: impl AsRef<Path>, schema: PanelSchema) -> Result<Panel> {
    let file = std::fs::File::open(path.as_ref())?;
    Panel::read_csv(std::io::BufReader::new(file), schema)
}

/// Fixed node-to-group assignment.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Topology {
    node_group: BTreeMap<u32, u32>,
    groups: BTreeMap<u32, Vec<u32>>,
}

impl Topology {
    pub fn from_assignments(node_group: BTreeMap<u32, u32>) -> Self {
        let mut groups: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
        for (&n, &g) in &node_group {
            groups.entry(g).or_default().push(n);
        }
        Self { node_group, groups }
    }

    /// `n_groups` groups of `group_size` consecutive node ids.
    pub fn uniform(n_groups: u32, group_size: u32) -> Self {
        let node_group = (0..n_groups * group_size).map(|n| (n, n / group_size)).collect();
        Self::from_assignments(node_group)
    }

    pub fn group_of(&self, node: u32) -> Option<u32> {
        self.node_group.get(&node).copied()
    }

    pub fn groups(&self) -> &BTreeMap<u32, Vec<u32>> {
        &self.groups
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.node_group.len()
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.groups.values().map(Vec::len).collect()
    }
}

/// Recompute `nbr_lag` (group-mate replacements at t-1) and `nbr_fail`
/// (group-mate failures at t) from the decision and failure columns. The
/// focal node is always excluded; periods with no predecessor get lag 0.
/// Counts are stored raw; binning happens when observations are encoded.
pub fn derive_neighbor_vars(panel: &Panel, topology: &Topology) -> Result<Panel> {
    // (group, period) -> (replacements, failures)
    let mut totals: HashMap<(u32, u32), (u32, u32)> = HashMap::new();
    let mut own: HashMap<(u32, u32), (bool, bool)> = HashMap::with_capacity(panel.len());
    for r in panel.rows() {
        let g = topology
            .group_of(r.node_id)
            .ok_or_else(|| Error::Derivation(format!("node {} is missing from the topology", r.node_id)))?;
        if g != r.group_id {
            return Err(Error::Derivation(format!(
                "node {} is in group {} in the panel but {} in the topology",
                r.node_id, r.group_id, g
            )));
        }
        let t = totals.entry((g, r.period)).or_default();
        t.0 += r.decision as u32;
        t.1 += r.fail as u32;
        own.insert((r.node_id, r.period), (r.decision, r.fail));
    }
    let rows = panel
        .rows()
        .iter()
        .map(|r| {
            let mut out = *r;
            out.nbr_lag = match r.period.checked_sub(1) {
                Some(prev) => {
                    let total = totals.get(&(r.group_id, prev)).map_or(0, |t| t.0);
                    let mine = own.get(&(r.node_id, prev)).map_or(0, |o| o.0 as u32);
                    total - mine
                }
                None => 0,
            };
            let total = totals[&(r.group_id, r.period)].1;
            out.nbr_fail = total - r.fail as u32;
            out
        })
        .collect();
    Ok(Panel {
        rows,
        neighbors_derived: true,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgeViolation {
    pub node_id: u32,
    pub period: u32,
    pub expected_age: u32,
    pub found_age: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PanelReport {
    pub n_rows: usize,
    pub n_nodes: usize,
    pub n_groups: usize,
    /// `(node_id, missing period)` inside a node's observed span.
    pub period_gaps: Vec<(u32, u32)>,
    pub age_violations: Vec<AgeViolation>,
    pub range_violations: Vec<String>,
}

impl PanelReport {
    pub fn is_clean(&self) -> bool {
        self.period_gaps.is_empty() && self.age_violations.is_empty() && self.range_violations.is_empty()
    }
}

/// Report period gaps, age-law violations and range violations. With a state
/// spec, ages follow `min(age + 1, age_max)` after continue and cages must be
/// below `n_cages`; without one, ages grow without a cap.
pub fn validate_panel(panel: &Panel, spec: Option<&StateSpec>) -> PanelReport {
    let mut rep = PanelReport {
        n_rows: panel.len(),
        ..Default::default()
    };
    let topo = panel.topology();
    rep.n_nodes = topo.n_nodes();
    rep.n_groups = topo.n_groups();
    for run in panel.node_runs() {
        for w in run.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            for p in a.period + 1..b.period {
                rep.period_gaps.push((a.node_id, p));
            }
            if b.period != a.period + 1 {
                continue;
            }
            let cap = spec.map_or(u32::MAX, |s| s.age_max);
            let expected = if a.decision { 0 } else { (a.age + 1).min(cap) };
            if b.age.min(cap) != expected {
                rep.age_violations.push(AgeViolation {
                    node_id: b.node_id,
                    period: b.period,
                    expected_age: expected,
                    found_age: b.age,
                });
            }
        }
        if let Some(s) = spec {
            for r in run {
                if r.cage >= s.n_cages {
                    rep.range_violations.push(format!(
                        "node {} period {}: cage {} >= n_cages {}",
                        r.node_id, r.period, r.cage, s.n_cages
                    ));
                }
            }
        }
    }
    rep
}

/// Encode every observation; ids are in panel row order.
pub fn encode_observations(panel: &Panel, space: &StateSpace) -> Result<Vec<crate::statespace::StateId>> {
    panel
        .rows()
        .iter()
        .map(|r| space.encode(&r.state(space.spec())))
        .collect()
}
