//! Composite labeled Hilbert spaces.
//!
//! A space is an ordered list of subsystems, each with a label and named
//! levels. Basis indexing is row-major with the first subsystem most
//! significant, so the basis label of index 0 is always the all-first-level
//! product state.

use std::sync::Arc;

use crate::error::{Error, Result};

/// One tensor factor: a label plus the names of its levels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subsystem {
    pub label: String,
    pub levels: Vec<String>,
}

impl Subsystem {
    pub fn new(label: &str, levels: &[&str]) -> Self {
        Subsystem {
            label: label.to_string(),
            levels: levels.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Subsystem with levels named "0", "1", ... (cavity modes, toy systems).
    pub fn numbered(label: &str, dim: usize) -> Self {
        Subsystem {
            label: label.to_string(),
            levels: (0..dim).map(|n| n.to_string()).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.levels.len()
    }
}

/// Ordered tensor product of labeled subsystems.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HilbertSpace {
    subsystems: Vec<Subsystem>,
    strides: Vec<usize>,
    total_dim: usize,
}

impl HilbertSpace {
    pub fn new(subsystems: Vec<Subsystem>) -> Result<Arc<Self>> {
        for (i, s) in subsystems.iter().enumerate() {
            if s.dim() < 2 {
                return Err(Error::SubsystemTooSmall {
                    label: s.label.clone(),
                    dim: s.dim(),
                });
            }
            if subsystems[..i].iter().any(|o| o.label == s.label) {
                return Err(Error::DuplicateLabel(s.label.clone()));
            }
        }
        let mut strides = vec![0usize; subsystems.len()];
        let mut acc = 1usize;
        for (k, s) in subsystems.iter().enumerate().rev() {
            strides[k] = acc;
            acc *= s.dim();
        }
        Ok(Arc::new(HilbertSpace {
            subsystems,
            strides,
            total_dim: acc,
        }))
    }

    pub fn total_dim(&self) -> usize {
        self.total_dim
    }

    pub fn subsystems(&self) -> &[Subsystem] {
        &self.subsystems
    }

    pub fn num_subsystems(&self) -> usize {
        self.subsystems.len()
    }

    /// Position of a subsystem in the tensor order.
    pub fn position_of(&self, label: &str) -> Result<usize> {
        self.subsystems
            .iter()
            .position(|s| s.label == label)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    pub fn dim_of(&self, label: &str) -> Result<usize> {
        Ok(self.subsystems[self.position_of(label)?].dim())
    }

    pub fn stride_of(&self, label: &str) -> Result<usize> {
        Ok(self.strides[self.position_of(label)?])
    }

    pub(crate) fn stride_at(&self, position: usize) -> usize {
        self.strides[position]
    }

    /// Index of a named level within a subsystem.
    pub fn level_index(&self, label: &str, level: &str) -> Result<usize> {
        let s = &self.subsystems[self.position_of(label)?];
        s.levels
            .iter()
            .position(|l| l == level)
            .ok_or_else(|| Error::UnknownLabel(format!("{label}:{level}")))
    }

    /// Pack per-subsystem level indices into a basis index.
    pub fn index_of(&self, levels: &[usize]) -> usize {
        debug_assert_eq!(levels.len(), self.subsystems.len());
        levels
            .iter()
            .zip(&self.strides)
            .map(|(l, s)| l * s)
            .sum()
    }

    /// Unpack a basis index into per-subsystem level indices.
    pub fn levels_at(&self, index: usize) -> Vec<usize> {
        self.subsystems
            .iter()
            .zip(&self.strides)
            .map(|(sub, stride)| (index / stride) % sub.dim())
            .collect()
    }

    /// Level index of one subsystem within a basis index.
    pub fn level_of(&self, index: usize, position: usize) -> usize {
        (index / self.strides[position]) % self.subsystems[position].dim()
    }

    /// Human-readable product label, e.g. `g,e,R,R,0,0`.
    pub fn basis_label(&self, index: usize) -> String {
        self.levels_at(index)
            .iter()
            .zip(&self.subsystems)
            .map(|(&l, sub)| sub.levels[l].as_str())
            .collect::<Vec<_>>()
            .join(",")
    }

    /// Basis index from named levels given as `(label, level)` pairs covering
    /// every subsystem.
    pub fn index_from_names(&self, names: &[(&str, &str)]) -> Result<usize> {
        if names.len() != self.subsystems.len() {
            return Err(Error::DimensionMismatch {
                context: "index_from_names",
                expected: self.subsystems.len(),
                got: names.len(),
            });
        }
        let mut levels = vec![0usize; self.subsystems.len()];
        for (label, level) in names {
            let pos = self.position_of(label)?;
            levels[pos] = self.level_index(label, level)?;
        }
        Ok(self.index_of(&levels))
    }
}

/// Node-1 atom: levels `g`, `e` carry the qubit, `r` is auxiliary.
pub fn node1_atom(label: &str) -> Subsystem {
    Subsystem::new(label, &["g", "e", "r"])
}

/// Node-2 atom: levels `G`, `E` carry the qubit, `R` is the receiving level.
pub fn node2_atom(label: &str) -> Subsystem {
    Subsystem::new(label, &["G", "E", "R"])
}

/// Cavity mode truncated at `n_max` photons.
pub fn cavity(label: &str, n_max: usize) -> Subsystem {
    Subsystem::numbered(label, n_max + 1)
}

/// Atomic level indices, identical for both node conventions:
/// `g`/`G` = 0, `e`/`E` = 1, `r`/`R` = 2.
pub mod level {
    pub const G: usize = 0;
    pub const E: usize = 1;
    pub const R: usize = 2;
}

/// The four protocol atoms without cavities, for the abstract channel.
pub fn protocol_space() -> Arc<HilbertSpace> {
    HilbertSpace::new(vec![
        node1_atom("atom1"),
        node1_atom("atomb"),
        node2_atom("atom2"),
        node2_atom("atoma"),
    ])
    .expect("static space")
}

/// The four protocol atoms plus an explicit environment factor.
pub fn protocol_space_with_env(env_dim: usize) -> Result<Arc<HilbertSpace>> {
    HilbertSpace::new(vec![
        node1_atom("atom1"),
        node1_atom("atomb"),
        node2_atom("atom2"),
        node2_atom("atoma"),
        Subsystem::numbered("env", env_dim),
    ])
}

/// Full physical space: atoms (atom1, atomb, atom2, atoma) and both cavity
/// modes, in the frozen subsystem order.
pub fn physical_space(n_max: usize) -> Arc<HilbertSpace> {
    HilbertSpace::new(vec![
        node1_atom("atom1"),
        node1_atom("atomb"),
        node2_atom("atom2"),
        node2_atom("atoma"),
        cavity("cav1", n_max),
        cavity("cav2", n_max),
    ])
    .expect("static space")
}
