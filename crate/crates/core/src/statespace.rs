//! Discrete per-unit state space and the joint product space used by the
//! decomposition oracle.
//!
//! States are enumerated lexicographically with age slowest, then cage,
//! failure flag, lagged neighbor-replacement level and neighbor-failure level
//! (fastest). This order is part of the external contract: EV/CCP and kernel
//! dumps are keyed by the resulting ids.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How neighbor event counts are mapped to discrete levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Binning {
    /// No neighbor variables; the non-spatial model.
    None,
    /// Any event (count >= 1) vs none.
    Binary,
    /// Levels 0, 1, 2+.
    #[serde(rename = "bins_0_1_2plus")]
    Bins012Plus,
    /// Levels 0, 1, 2, 3+.
    #[serde(rename = "bins_0_1_2_3plus")]
    Bins0123Plus,
}

impl Binning {
    /// Number of levels each neighbor variable takes.
    pub fn levels(self) -> usize {
        match self {
            Binning::None => 1,
            Binning::Binary => 2,
            Binning::Bins012Plus => 3,
            Binning::Bins0123Plus => 4,
        }
    }

    /// Map a raw neighbor event count to its level.
    pub fn level(self, count: u32) -> u8 {
        let top = (self.levels() - 1) as u32;
        count.min(top) as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            Binning::None => "none",
            Binning::Binary => "binary",
            Binning::Bins012Plus => "bins_0_1_2plus",
            Binning::Bins0123Plus => "bins_0_1_2_3plus",
        }
    }
}

impl fmt::Display for Binning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateSpec {
    /// Inclusive age cap in months; older units saturate here.
    pub age_max: u32,
    pub n_cages: u32,
    pub binning: Binning,
}

impl Default for StateSpec {
    fn default() -> Self {
        Self {
            age_max: 58,
            n_cages: 3,
            binning: Binning::Binary,
        }
    }
}

impl StateSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_cages == 0 {
            return Err(Error::Config("n_cages must be at least 1".into()));
        }
        Ok(())
    }

    pub fn with_binning(mut self, binning: Binning) -> Self {
        self.binning = binning;
        self
    }
}

/// Dense state index into a [`StateSpace`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StateId(pub u32);

impl StateId {
    #[inline]
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct UnitState {
    pub age: u32,
    pub cage: u32,
    pub fail: u8,
    pub nbr_lag: u8,
    pub nbr_fail: u8,
}

impl UnitState {
    /// Build a state from raw observed quantities: age saturates at the cap
    /// and neighbor counts are binned.
    pub fn from_observation(
        spec: &StateSpec,
        age: u32,
        cage: u32,
        fail: bool,
        nbr_lag_count: u32,
        nbr_fail_count: u32,
    ) -> Self {
        Self {
            age: age.min(spec.age_max),
            cage,
            fail: fail as u8,
            nbr_lag: spec.binning.level(nbr_lag_count),
            nbr_fail: spec.binning.level(nbr_fail_count),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateSpace {
    spec: StateSpec,
    levels: usize,
    size: usize,
}

impl StateSpace {
    pub fn new(spec: StateSpec) -> Result<Self> {
        spec.validate()?;
        let levels = spec.binning.levels();
        let size = (spec.age_max as usize + 1) * spec.n_cages as usize * 2 * levels * levels;
        if size > u32::MAX as usize {
            return Err(Error::Config(format!("state space of {size} states is too large")));
        }
        Ok(Self { spec, levels, size })
    }

    pub fn spec(&self) -> &StateSpec {
        &self.spec
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Levels per neighbor variable.
    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn binning(&self) -> Binning {
        self.spec.binning
    }

    pub fn encode(&self, s: &UnitState) -> Result<StateId> {
        let l = self.levels;
        if s.age > self.spec.age_max
            || s.cage >= self.spec.n_cages
            || s.fail > 1
            || s.nbr_lag as usize >= l
            || s.nbr_fail as usize >= l
        {
            return Err(Error::Index(format!("state {s:?} outside space {:?}", self.spec)));
        }
        let mut id = s.age as usize;
        id = id * self.spec.n_cages as usize + s.cage as usize;
        id = id * 2 + s.fail as usize;
        id = id * l + s.nbr_lag as usize;
        id = id * l + s.nbr_fail as usize;
        Ok(StateId(id as u32))
    }

    pub fn decode(&self, id: StateId) -> Result<UnitState> {
        let mut rem = id.idx();
        if rem >= self.size {
            return Err(Error::Index(format!("state id {rem} >= size {}", self.size)));
        }
        let l = self.levels;
        let nbr_fail = (rem % l) as u8;
        rem /= l;
        let nbr_lag = (rem % l) as u8;
        rem /= l;
        let fail = (rem % 2) as u8;
        rem /= 2;
        let cages = self.spec.n_cages as usize;
        let cage = (rem % cages) as u32;
        let age = (rem / cages) as u32;
        Ok(UnitState {
            age,
            cage,
            fail,
            nbr_lag,
            nbr_fail,
        })
    }

    /// All states in id order.
    pub fn states(&self) -> impl Iterator<Item = UnitState> + '_ {
        (0..self.size as u32).map(move |i| self.decode(StateId(i)).expect("id in range"))
    }
}

/// Build and validate a state space.
pub fn build_state_space(spec: StateSpec) -> Result<StateSpace> {
    StateSpace::new(spec)
}

/// Mixed-radix enumeration of a Cartesian product of group state spaces.
/// Group 0 is the slowest coordinate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointSpace {
    sizes: Vec<usize>,
    strides: Vec<usize>,
    size: usize,
}

impl JointSpace {
    pub fn new(sizes: &[usize]) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::Config("joint space needs at least one group".into()));
        }
        if let Some(g) = sizes.iter().position(|&n| n == 0) {
            return Err(Error::Config(format!("group {g} has no states")));
        }
        let mut strides = vec![1usize; sizes.len()];
        for g in (0..sizes.len() - 1).rev() {
            strides[g] = strides[g + 1]
                .checked_mul(sizes[g + 1])
                .ok_or_else(|| Error::Config("joint space size overflows".into()))?;
        }
        let size = strides[0]
            .checked_mul(sizes[0])
            .ok_or_else(|| Error::Config("joint space size overflows".into()))?;
        Ok(Self {
            sizes: sizes.to_vec(),
            strides,
            size,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn n_groups(&self) -> usize {
        self.sizes.len()
    }

    pub fn group_sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Coordinate of group `g` within joint state `joint`.
    #[inline]
    pub fn coord(&self, joint: usize, g: usize) -> usize {
        (joint / self.strides[g]) % self.sizes[g]
    }

    pub fn decode(&self, joint: usize) -> Vec<usize> {
        (0..self.sizes.len()).map(|g| self.coord(joint, g)).collect()
    }

    pub fn encode(&self, coords: &[usize]) -> Result<usize> {
        if coords.len() != self.sizes.len() {
            return Err(Error::Index(format!(
                "expected {} coordinates, got {}",
                self.sizes.len(),
                coords.len()
            )));
        }
        let mut id = 0;
        for (g, (&c, &n)) in coords.iter().zip(&self.sizes).enumerate() {
            if c >= n {
                return Err(Error::Index(format!("coordinate {c} >= size {n} in group {g}")));
            }
            id += c * self.strides[g];
        }
        Ok(id)
    }
}
