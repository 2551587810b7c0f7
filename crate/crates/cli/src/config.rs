//! Experiment configuration. Every section and key is optional; missing
//! values fall back to the shipped defaults.

use std::path::Path;

use ineqlab_core::fdflow::FlowConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub duality: DualityConfig,
    pub lp: LpConfig,
    pub sobolev: SobolevConfig,
    pub local: LocalConfig,
    pub flow: FlowSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DualityConfig {
    /// Cell counts of the parabola tables on [-2, 2].
    pub parabola_cells: Vec<usize>,
    pub young_samples: usize,
    pub reversal_samples: usize,
}

impl Default for DualityConfig {
    fn default() -> Self {
        Self {
            parabola_cells: vec![16, 64, 256, 1024],
            young_samples: 10_000,
            reversal_samples: 1_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LpConfig {
    pub points: usize,
    pub half_width: f64,
    pub p_small: Vec<f64>,
    pub p_large: Vec<f64>,
    pub convexity_pairs: usize,
    pub p_lipschitz: Vec<f64>,
    pub p_holder: Vec<f64>,
    pub holder_radius: f64,
    pub continuity_pairs: usize,
    /// Separations t of the disjoint-support witness family.
    pub witness_steps: Vec<f64>,
    /// Rows per exponent kept in lp_witnesses.csv (the smallest margins).
    pub witnesses_kept: usize,
}

impl Default for LpConfig {
    fn default() -> Self {
        Self {
            points: 256,
            half_width: 8.0,
            p_small: vec![1.1, 1.25, 1.5, 1.75, 2.0],
            p_large: vec![2.5, 3.0, 4.0, 6.0],
            convexity_pairs: 10_000,
            p_lipschitz: vec![1.25, 1.5],
            p_holder: vec![3.0, 4.0],
            holder_radius: 2.0,
            continuity_pairs: 1_000,
            witness_steps: vec![1e-1, 1e-2, 1e-3, 1e-4, 1e-6, 1e-8],
            witnesses_kept: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SobolevConfig {
    pub n: usize,
    pub alpha: f64,
    pub points: usize,
    pub half_width: f64,
    /// Replaces the computed constant in every deficit (fault injection).
    pub constant: Option<f64>,
    pub bubbles: usize,
    pub samples: usize,
    pub transfer_samples: usize,
    /// Hypothesis for the primal stability constant; not a computed value.
    pub kappa_be: f64,
}

impl Default for SobolevConfig {
    fn default() -> Self {
        Self {
            n: 1,
            alpha: 0.25,
            points: 4096,
            half_width: 80.0,
            constant: None,
            bubbles: 20,
            samples: 10_000,
            transfer_samples: 1_000,
            kappa_be: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalConfig {
    pub points: usize,
    pub half_width: f64,
    /// Hypothesized radius and constant of the local primal inequality.
    pub r: f64,
    pub lambda: f64,
    /// Samples per side.
    pub samples: usize,
}

impl Default for LocalConfig {
    fn default() -> Self {
        Self {
            points: 1024,
            half_width: 20.0,
            r: 0.3,
            lambda: 0.05,
            samples: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowSection {
    pub n: usize,
    pub m: f64,
    pub dt: f64,
    pub t_end: f64,
    pub sample_every: f64,
    pub mass: f64,
    pub m_points: usize,
    pub r_max: f64,
    pub sandwich_from: f64,
    /// Per-step clipped mass allowed, relative to the mass.
    pub clip_limit: f64,
    /// Relative L1 change allowed for one step from the Barenblatt profile.
    pub steady_step_tol: f64,
    pub mass_tol: f64,
    /// dt-halving agreement, relative to the member's initial deficit.
    pub halving_tol: f64,
    /// Total clipped mass per run, relative to the mass.
    pub clip_run_tol: f64,
}

impl Default for FlowSection {
    fn default() -> Self {
        let f = FlowConfig::default();
        Self {
            n: f.n,
            m: f.m,
            dt: f.dt,
            t_end: f.t_end,
            sample_every: f.sample_every,
            mass: f.mass,
            m_points: f.points,
            r_max: f.r_max,
            sandwich_from: f.sandwich_from,
            clip_limit: f.clip_limit,
            steady_step_tol: 1e-6,
            mass_tol: 1e-4,
            halving_tol: 1e-3,
            clip_run_tol: 1e-6,
        }
    }
}

impl FlowSection {
    pub fn params(&self) -> FlowConfig {
        FlowConfig {
            n: self.n,
            m: self.m,
            dt: self.dt,
            t_end: self.t_end,
            sample_every: self.sample_every,
            mass: self.mass,
            points: self.m_points,
            r_max: self.r_max,
            sandwich_from: self.sandwich_from,
            clip_limit: self.clip_limit,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::ConfigParse(e.to_string()))
    }

    /// Canonical JSON: struct fields in declaration order, shortest float
    /// representations.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON.
    pub fn hash(&self) -> String {
        short_digest(self.canonical_json().as_bytes())
    }
}

pub fn short_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    hex::encode(&digest[..8])
}

/// Scales a configured sample count by the command-line multiplier.
pub fn scaled(count: usize, multiplier: f64) -> usize {
    (count as f64 * multiplier).round() as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(Config::parse("").unwrap(), Config::default());
    }

    #[test]
    fn partial_override_keeps_other_keys() {
        let c = Config::parse("[sobolev]\nconstant = 2.0\n[flow]\ndt = 1e-3\n").unwrap();
        assert_eq!(c.sobolev.constant, Some(2.0));
        assert_eq!(c.sobolev.points, 4096);
        assert_eq!(c.flow.dt, 1e-3);
        assert_eq!(c.flow.m_points, 2048);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(Config::parse("[lp]\nbogus = 1\n"), Err(CliError::ConfigParse(_))));
        assert!(matches!(Config::parse("not toml ["), Err(CliError::ConfigParse(_))));
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = Config::default();
        assert_eq!(a.hash(), Config::default().hash());
        assert_eq!(a.hash().len(), 16);
        let mut b = a.clone();
        b.lp.points = 128;
        assert_ne!(a.hash(), b.hash());
    }
}
