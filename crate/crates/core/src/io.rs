//! JSON interchange for MDPs and policy stacks.
//!
//! An MDP file looks like
//!
//! ```json
//! { "n_states": 1, "n_actions": 2, "gamma": 0.5, "r_star": 1.0,
//!   "mu": [1.0], "rewards": [[1.0, 0.0]], "noise": [[null, {"std": 0.1}]],
//!   "transitions": [[[1.0], [1.0]]] }
//! ```
//!
//! `noise` may be omitted. A stack file carries the SHA-256 of the MDP's
//! canonical JSON so that it cannot be evaluated against a different MDP.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mdp::{GaussianNoise, PolicyStack, StochasticPolicy, TabularMdp};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MdpFile {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    r_star: f64,
    mu: Vec<f64>,
    rewards: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    noise: Option<Vec<Vec<Option<GaussianNoise>>>>,
    transitions: Vec<Vec<Vec<f64>>>,
}

fn expect_len(field: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::invalid_mdp(field, format!("expected {want} entries, got {got}")));
    }
    Ok(())
}

impl MdpFile {
    fn into_mdp(self) -> Result<TabularMdp> {
        let (ns, na) = (self.n_states, self.n_actions);
        if ns == 0 {
            return Err(Error::invalid_mdp("n_states", "must be at least 1"));
        }
        if na == 0 {
            return Err(Error::invalid_mdp("n_actions", "must be at least 1"));
        }
        expect_len("mu", self.mu.len(), ns)?;
        expect_len("rewards", self.rewards.len(), ns)?;
        for (s, row) in self.rewards.iter().enumerate() {
            expect_len(&format!("rewards[{s}]"), row.len(), na)?;
        }
        expect_len("transitions", self.transitions.len(), ns)?;
        for (s, rows) in self.transitions.iter().enumerate() {
            expect_len(&format!("transitions[{s}]"), rows.len(), na)?;
            for (a, row) in rows.iter().enumerate() {
                expect_len(&format!("transitions[{s}][{a}]"), row.len(), ns)?;
            }
        }
        let p = Array3::from_shape_fn((ns, na, ns), |(s, a, n)| self.transitions[s][a][n]);
        let r = Array2::from_shape_fn((ns, na), |(s, a)| self.rewards[s][a]);
        let mdp = TabularMdp::new(p, r, self.gamma, Array1::from(self.mu), self.r_star)?;
        match self.noise {
            None => Ok(mdp),
            Some(noise) => {
                expect_len("noise", noise.len(), ns)?;
                for (s, row) in noise.iter().enumerate() {
                    expect_len(&format!("noise[{s}]"), row.len(), na)?;
                }
                mdp.with_noise(Array2::from_shape_fn((ns, na), |(s, a)| noise[s][a]))
            }
        }
    }

    fn from_mdp(mdp: &TabularMdp) -> Self {
        let (ns, na) = (mdp.n_states(), mdp.n_actions());
        let has_noise = mdp.noise().iter().any(Option::is_some);
        MdpFile {
            n_states: ns,
            n_actions: na,
            gamma: mdp.gamma(),
            r_star: mdp.reward_bound(),
            mu: mdp.init_dist().to_vec(),
            rewards: mdp.rewards().rows().into_iter().map(|r| r.to_vec()).collect(),
            noise: has_noise.then(|| mdp.noise().rows().into_iter().map(|r| r.to_vec()).collect()),
            transitions: (0..ns)
                .map(|s| {
                    (0..na)
                        .map(|a| (0..ns).map(|n| mdp.transition(s, a, n)).collect())
                        .collect()
                })
                .collect(),
        }
    }
}

/// Parses and validates an MDP. Malformed documents and invariant violations
/// are reported as [`Error::InvalidMdp`] naming the offending field.
pub fn mdp_from_json(text: &str) -> Result<TabularMdp> {
    let file: MdpFile = serde_json::from_str(text).map_err(|e| Error::InvalidMdp {
        field: json_field(&e),
        message: e.to_string(),
    })?;
    file.into_mdp()
}

/// Best-effort field name from a serde error message.
fn json_field(e: &serde_json::Error) -> String {
    let msg = e.to_string();
    for marker in ["missing field `", "unknown field `"] {
        if let Some(rest) = msg.split(marker).nth(1) {
            if let Some(name) = rest.split('`').next() {
                return name.to_string();
            }
        }
    }
    format!("line {}, column {}", e.line(), e.column())
}

pub fn mdp_to_json(mdp: &TabularMdp) -> String {
    serde_json::to_string_pretty(&MdpFile::from_mdp(mdp)).expect("MDP serializes")
}

pub fn load_mdp(path: &Path) -> Result<TabularMdp> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    mdp_from_json(&text)
}

pub fn save_mdp(path: &Path, mdp: &TabularMdp) -> Result<()> {
    write_text(path, &mdp_to_json(mdp))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// Hex SHA-256 of the MDP's compact canonical JSON.
pub fn mdp_hash(mdp: &TabularMdp) -> String {
    let canonical = serde_json::to_string(&MdpFile::from_mdp(mdp)).expect("MDP serializes");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StackFile {
    policies: Vec<Vec<Vec<f64>>>,
    gamma: f64,
    mdp_hash: String,
}

pub fn stack_to_json(stack: &PolicyStack, mdp: &TabularMdp) -> String {
    let file = StackFile {
        policies: stack
            .policies()
            .iter()
            .map(|pi| pi.probs().rows().into_iter().map(|r| r.to_vec()).collect())
            .collect(),
        gamma: mdp.gamma(),
        mdp_hash: mdp_hash(mdp),
    };
    serde_json::to_string_pretty(&file).expect("stack serializes")
}

/// Reloads a stack saved for `mdp`; refuses stacks saved for another MDP.
pub fn stack_from_json(text: &str, mdp: &TabularMdp) -> Result<PolicyStack> {
    let file: StackFile =
        serde_json::from_str(text).map_err(|e| Error::Input(format!("malformed stack file: {e}")))?;
    let expected = mdp_hash(mdp);
    if file.mdp_hash != expected {
        return Err(Error::Input(format!(
            "stack was saved for MDP {}, not {expected}",
            file.mdp_hash
        )));
    }
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let policies = file
        .policies
        .into_iter()
        .enumerate()
        .map(|(k, rows)| {
            if rows.len() != ns || rows.iter().any(|r| r.len() != na) {
                return Err(Error::Shape(format!("policy {k} is not {ns} x {na}")));
            }
            StochasticPolicy::new(Array2::from_shape_fn((ns, na), |(s, a)| rows[s][a]))
        })
        .collect::<Result<_>>()?;
    Ok(PolicyStack::from_policies(policies))
}
