//! File formats: TOML MDP descriptions and JSON-lines expert datasets.
//!
//! MDP file keys: `n_states`, `n_actions`, `gamma`, `tau`, `transition`
//! (`[s][a][s']`), `initial_dist`, and optionally `features` (`[s][a][i]`),
//! `expert` (`[s][a]`) and `w_true`. Unknown keys are rejected.
//!
//! Dataset files start with a header object `{"n": N, "horizon": H, "seed": S}`
//! followed by one JSON array of `[state, action]` pairs per trajectory.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::EnvironmentBundle;
use crate::error::{Error, Result};
use crate::mdp::{validate_mdp, FeatureMap, Mdp, MdpParts, Policy, RewardWeights};
use crate::sampling::ExpertDataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpFile {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub tau: f64,
    pub transition: Vec<Vec<Vec<f64>>>,
    pub initial_dist: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expert: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_true: Option<Vec<f64>>,
}

/// Contents of a validated MDP file.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedMdp {
    pub mdp: Mdp,
    pub phi: Option<FeatureMap>,
    pub expert: Option<Policy>,
    pub w_true: Option<RewardWeights>,
}

fn flatten3(what: &str, table: &[Vec<Vec<f64>>], outer: usize, middle: usize, inner: Option<usize>) -> Result<(Vec<f64>, usize)> {
    if table.len() != outer {
        return Err(Error::invalid(format!("{what} has {} outer entries, expected {outer}", table.len())));
    }
    let width = inner.or_else(|| table.first().and_then(|m| m.first()).map(Vec::len)).unwrap_or(0);
    let mut flat = Vec::with_capacity(outer * middle * width);
    for (s, rows) in table.iter().enumerate() {
        if rows.len() != middle {
            return Err(Error::invalid(format!("{what}[{s}] has {} entries, expected {middle}", rows.len())));
        }
        for (a, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(Error::invalid(format!("{what}[{s}][{a}] has {} entries, expected {width}", row.len())));
            }
            flat.extend_from_slice(row);
        }
    }
    Ok((flat, width))
}

impl MdpFile {
    pub fn from_bundle(b: &EnvironmentBundle) -> Self {
        let p = b.mdp.parts();
        let (ns, na, k) = (p.n_states, p.n_actions, b.phi.k());
        MdpFile {
            n_states: ns,
            n_actions: na,
            gamma: p.discount,
            tau: p.temperature,
            transition: p.transition.chunks(ns * na.max(1)).map(|s| s.chunks(ns).map(<[f64]>::to_vec).collect()).collect(),
            initial_dist: p.initial_dist.clone(),
            features: Some(
                b.phi
                    .values()
                    .chunks(na * k)
                    .map(|s| s.chunks(k).map(<[f64]>::to_vec).collect())
                    .collect(),
            ),
            expert: Some(b.pi_expert.probs().chunks(na).map(<[f64]>::to_vec).collect()),
            w_true: b.w_true.as_ref().map(|w| w.as_slice().to_vec()),
        }
    }

    /// Shape-checks, validates and assembles the file contents.
    pub fn into_loaded(self) -> Result<LoadedMdp> {
        let (ns, na) = (self.n_states, self.n_actions);
        let (transition, _) = flatten3("transition", &self.transition, ns, na, Some(ns))?;
        let parts = MdpParts {
            n_states: ns,
            n_actions: na,
            transition,
            initial_dist: self.initial_dist,
            discount: self.gamma,
            temperature: self.tau,
        };
        let report = validate_mdp(&parts);
        if !report.is_ok() {
            return Err(Error::InvalidMdp(report));
        }
        let mdp = Mdp::from_parts(parts)?;
        let phi = match self.features {
            Some(f) => {
                let (values, k) = flatten3("features", &f, ns, na, None)?;
                Some(FeatureMap::new(ns, na, k, values)?)
            }
            None => None,
        };
        let expert = match self.expert {
            Some(rows) => {
                let pi = Policy::from_rows(&rows)?;
                pi.check_shape(ns, na)?;
                Some(pi)
            }
            None => None,
        };
        let w_true = self.w_true.map(RewardWeights::new).transpose()?;
        if let (Some(w), Some(phi)) = (&w_true, &phi) {
            Error::check_dim("w_true", phi.k(), w.dim())?;
        }
        Ok(LoadedMdp { mdp, phi, expert, w_true })
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn parse_mdp_toml(text: &str, path: &Path) -> Result<LoadedMdp> {
    let file: MdpFile = toml::from_str(text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    file.into_loaded()
}

pub fn load_mdp_file(path: &Path) -> Result<LoadedMdp> {
    parse_mdp_toml(&read_text(path)?, path)
}

pub fn write_mdp_file(path: &Path, bundle: &EnvironmentBundle) -> Result<()> {
    let text = toml::to_string(&MdpFile::from_bundle(bundle)).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    write_text(path, &text)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetHeader {
    n: usize,
    horizon: usize,
    seed: Option<u64>,
}

pub fn write_dataset<W: Write>(out: &mut W, d: &ExpertDataset) -> std::io::Result<()> {
    let header = DatasetHeader {
        n: d.n(),
        horizon: d.horizon,
        seed: d.seed,
    };
    writeln!(out, "{}", serde_json::to_string(&header)?)?;
    for traj in &d.trajectories {
        let pairs: Vec<[usize; 2]> = traj.iter().map(|&(s, a)| [s, a]).collect();
        writeln!(out, "{}", serde_json::to_string(&pairs)?)?;
    }
    Ok(())
}

pub fn save_dataset(path: &Path, d: &ExpertDataset) -> Result<()> {
    let mut buf = Vec::new();
    write_dataset(&mut buf, d).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    fs::write(path, buf).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_dataset(path: &Path) -> Result<ExpertDataset> {
    let file = fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        message: format!("line {line}: {message}"),
    };
    let mut lines = BufReader::new(file).lines().enumerate().filter(|(_, l)| {
        l.as_ref().map_or(true, |l| !l.trim().is_empty())
    });
    let header: DatasetHeader = match lines.next() {
        Some((i, line)) => {
            let line = line.map_err(|source| Error::Io {
                path: path.to_path_buf(),
                source,
            })?;
            serde_json::from_str(&line).map_err(|e| parse_err(i + 1, e.to_string()))?
        }
        None => return Err(parse_err(1, "missing header".into())),
    };
    let mut trajectories = Vec::with_capacity(header.n);
    for (i, line) in lines {
        let line = line.map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let pairs: Vec<[usize; 2]> = serde_json::from_str(&line).map_err(|e| parse_err(i + 1, e.to_string()))?;
        trajectories.push(pairs.into_iter().map(|[s, a]| (s, a)).collect());
    }
    if trajectories.len() != header.n {
        return Err(parse_err(
            0,
            format!("header announces {} trajectories, found {}", header.n, trajectories.len()),
        ));
    }
    ExpertDataset::new(trajectories, header.horizon, header.seed)
}
