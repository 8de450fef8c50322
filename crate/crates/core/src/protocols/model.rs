//! Learned weights held as shares, one share file per party.
//!
//! Share file:
//!
//! ```text
//! spn-shares v1
//! mode polynomial
//! party 2
//! parties 3
//! degree 1
//! prime 13558774610046711780701
//! scale 256
//! topology 5d41402abc4b2a76...
//! edge S1 X1 9384756120394857
//! ```
//!
//! `topology` fingerprints the public structure without its weights, so a
//! share file cannot be combined with a different network by accident.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::{CryptoRng, RngCore};
use sha2::{Digest, Sha256};

use crate::field::{FieldElement, FieldParams};
use crate::net::store::{DataStore, Stored};
use crate::sharing::{
    additive_share, lagrange_reconstruct, shamir_share, PartyId, PolynomialShare, SecretId,
    SharingParams,
};
use crate::spn::{write_structure, NodeId, SpnGraph};

use super::{weight_id, ProtocolError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShareMode {
    /// Shamir shares; usable for inference.
    Polynomial,
    /// Additive shares from the averaged-fraction learner.
    Additive,
}

impl ShareMode {
    fn name(self) -> &'static str {
        match self {
            ShareMode::Polynomial => "polynomial",
            ShareMode::Additive => "additive",
        }
    }
}

/// Hex SHA-256 of the structure with all weights zeroed.
pub fn topology_fingerprint(spn: &SpnGraph) -> String {
    let zeros = spn
        .weights()
        .into_iter()
        .map(|(i, w)| (i, vec![0; w.len()]))
        .collect();
    let text = write_structure(&spn.with_weights(&zeros));
    Sha256::digest(text.as_bytes())
        .iter()
        .fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

/// One party's view of the model.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartyShares {
    pub party: PartyId,
    pub mode: ShareMode,
    pub sharing: SharingParams,
    pub scale: u128,
    pub topology: String,
    /// Share of `d * w` per (sum node, child position).
    pub weights: BTreeMap<(NodeId, usize), FieldElement>,
}

fn model_err(line: usize, msg: impl std::fmt::Display) -> ProtocolError {
    ProtocolError::Model(format!("line {line}: {msg}"))
}

impl PartyShares {
    pub fn to_text(&self, spn: &SpnGraph) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "spn-shares v1");
        let _ = writeln!(out, "mode {}", self.mode.name());
        let _ = writeln!(out, "party {}", self.party.get());
        let _ = writeln!(out, "parties {}", self.sharing.parties());
        let _ = writeln!(out, "degree {}", self.sharing.degree());
        let _ = writeln!(out, "prime {}", self.sharing.field().modulus());
        let _ = writeln!(out, "scale {}", self.scale);
        let _ = writeln!(out, "topology {}", self.topology);
        for (&(i, j), share) in &self.weights {
            let child = spn.node(i).children()[j];
            let _ = writeln!(
                out,
                "edge {} {} {}",
                spn.node(i).name,
                spn.node(child).name,
                share.value()
            );
        }
        out
    }

    pub fn parse(text: &str, spn: &SpnGraph) -> Result<Self, ProtocolError> {
        let mut header: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
        let mut edges = Vec::new();
        let mut saw_magic = false;
        for (n, raw) in text.lines().enumerate() {
            let n = n + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if !saw_magic {
                if line != "spn-shares v1" {
                    return Err(model_err(
                        n,
                        format!("expected header \"spn-shares v1\", found {line:?}"),
                    ));
                }
                saw_magic = true;
                continue;
            }
            let words: Vec<&str> = line.split_whitespace().collect();
            match words.as_slice() {
                ["edge", sum, child, value] => edges.push((n, *sum, *child, *value)),
                [key, value] => {
                    header.insert(key, (n, value));
                }
                _ => return Err(model_err(n, format!("cannot parse {line:?}"))),
            }
        }
        if !saw_magic {
            return Err(ProtocolError::Model("empty share file".into()));
        }
        let get = |key: &str| -> Result<(usize, &str), ProtocolError> {
            header
                .get(key)
                .copied()
                .ok_or_else(|| ProtocolError::Model(format!("missing {key} line")))
        };
        fn num<T: std::str::FromStr>((n, v): (usize, &str)) -> Result<T, ProtocolError> {
            v.parse()
                .map_err(|_| model_err(n, format!("invalid number {v:?}")))
        }
        let mode = match get("mode")? {
            (_, "polynomial") => ShareMode::Polynomial,
            (_, "additive") => ShareMode::Additive,
            (n, other) => return Err(model_err(n, format!("unknown mode {other:?}"))),
        };
        let party_line = get("party")?;
        let party = PartyId::new(num(party_line)?).map_err(|e| model_err(party_line.0, e))?;
        let field = FieldParams::new(num(get("prime")?)?)
            .map_err(|e| ProtocolError::Model(e.to_string()))?;
        let sharing = SharingParams::new(num(get("parties")?)?, num(get("degree")?)?, field)
            .map_err(|e| ProtocolError::Model(e.to_string()))?;
        let scale: u128 = num(get("scale")?)?;
        let (tn, topology) = get("topology")?;
        if topology != topology_fingerprint(spn) {
            return Err(model_err(
                tn,
                "share file was produced for a different structure",
            ));
        }
        if scale != spn.scale() {
            return Err(ProtocolError::Model(format!(
                "share file scale {scale} differs from the structure's scale {}",
                spn.scale()
            )));
        }
        let mut weights = BTreeMap::new();
        for (n, sum, child, value) in edges {
            let i = spn
                .find(sum)
                .ok_or_else(|| model_err(n, format!("unknown node {sum:?}")))?;
            let c = spn
                .find(child)
                .ok_or_else(|| model_err(n, format!("unknown node {child:?}")))?;
            let j = spn
                .node(i)
                .children()
                .iter()
                .position(|&x| x == c)
                .ok_or_else(|| model_err(n, format!("{child} is not a child of {sum}")))?;
            let v = field
                .canonical(num((n, value))?)
                .map_err(|e| model_err(n, e))?;
            if weights.insert((i, j), v).is_some() {
                return Err(model_err(n, "edge listed twice"));
            }
        }
        let expected: usize = spn.sum_nodes().map(|(_, ch)| ch.len()).sum();
        if weights.len() != expected {
            return Err(ProtocolError::Model(format!(
                "{} edge shares, the structure has {expected} sum edges",
                weights.len()
            )));
        }
        Ok(Self {
            party,
            mode,
            sharing,
            scale,
            topology: topology.to_string(),
            weights,
        })
    }

    pub fn save(&self, spn: &SpnGraph, path: impl AsRef<Path>) -> Result<(), ProtocolError> {
        std::fs::write(path.as_ref(), self.to_text(spn))
            .map_err(|e| ProtocolError::Model(format!("{}: {e}", path.as_ref().display())))
    }

    pub fn load(spn: &SpnGraph, path: impl AsRef<Path>) -> Result<Self, ProtocolError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| ProtocolError::Model(format!("{}: {e}", path.as_ref().display())))?;
        Self::parse(&text, spn)
    }

    /// Initial member store for inference.
    pub fn to_store(&self) -> DataStore {
        let mut store = DataStore::new();
        for (&(i, j), v) in &self.weights {
            let stored = match self.mode {
                ShareMode::Polynomial => Stored::Shamir(*v),
                ShareMode::Additive => Stored::Additive(*v),
            };
            store.insert(weight_id(i, j), stored).expect("fresh store");
        }
        store
    }
}

/// Every party's shares of the learned weights.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SharedWeightModel {
    pub mode: ShareMode,
    pub sharing: SharingParams,
    pub scale: u128,
    pub parties: BTreeMap<PartyId, PartyShares>,
}

impl SharedWeightModel {
    pub fn from_stores(
        spn: &SpnGraph,
        stores: &BTreeMap<PartyId, DataStore>,
        mode: ShareMode,
        sharing: SharingParams,
    ) -> Result<Self, ProtocolError> {
        let topology = topology_fingerprint(spn);
        let mut parties = BTreeMap::new();
        for (&party, store) in stores {
            let mut weights = BTreeMap::new();
            for (i, children) in spn.sum_nodes() {
                for j in 0..children.len() {
                    let id = weight_id(i, j);
                    let v = match mode {
                        ShareMode::Polynomial => store.shamir(&id),
                        ShareMode::Additive => store.additive(&id),
                    }
                    .map_err(|e| ProtocolError::Model(e.to_string()))?;
                    weights.insert((i, j), v);
                }
            }
            parties.insert(
                party,
                PartyShares {
                    party,
                    mode,
                    sharing,
                    scale: spn.scale(),
                    topology: topology.clone(),
                    weights,
                },
            );
        }
        Ok(Self {
            mode,
            sharing,
            scale: spn.scale(),
            parties,
        })
    }

    /// Combines per-party files, checking they describe one model.
    pub fn from_parties(parts: Vec<PartyShares>) -> Result<Self, ProtocolError> {
        let first = parts
            .first()
            .ok_or_else(|| ProtocolError::Model("no share files".into()))?
            .clone();
        let mut parties = BTreeMap::new();
        for p in parts {
            if p.mode != first.mode
                || p.sharing != first.sharing
                || p.scale != first.scale
                || p.topology != first.topology
            {
                return Err(ProtocolError::Model(format!(
                    "share file of party {} does not match party {}",
                    p.party, first.party
                )));
            }
            if parties.insert(p.party, p).is_some() {
                return Err(ProtocolError::Model("two share files for one party".into()));
            }
        }
        Ok(Self {
            mode: first.mode,
            sharing: first.sharing,
            scale: first.scale,
            parties,
        })
    }

    /// A dealer shares known weights, e.g. to serve an existing model.
    pub fn deal<R: RngCore + CryptoRng + ?Sized>(
        spn: &SpnGraph,
        sharing: SharingParams,
        mode: ShareMode,
        rng: &mut R,
    ) -> Result<Self, ProtocolError> {
        let field = sharing.field();
        let mut per_party: BTreeMap<PartyId, BTreeMap<(NodeId, usize), FieldElement>> =
            sharing.party_ids().map(|p| (p, BTreeMap::new())).collect();
        for (i, children) in spn.sum_nodes() {
            for (j, (_, w)) in children.iter().enumerate() {
                let x = field.canonical(*w)?;
                let id = SecretId::new("");
                let shares: Vec<(PartyId, FieldElement)> = match mode {
                    ShareMode::Polynomial => shamir_share(x, &sharing, &id, rng)
                        .map_err(|e| ProtocolError::Model(e.to_string()))?
                        .into_iter()
                        .map(|s| (s.owner, s.value))
                        .collect(),
                    ShareMode::Additive => additive_share(x, sharing.parties(), &id, rng)
                        .map_err(|e| ProtocolError::Model(e.to_string()))?
                        .into_iter()
                        .map(|s| (s.owner, s.value))
                        .collect(),
                };
                for (p, v) in shares {
                    per_party
                        .get_mut(&p)
                        .expect("known party")
                        .insert((i, j), v);
                }
            }
        }
        let topology = topology_fingerprint(spn);
        let parties = per_party
            .into_iter()
            .map(|(party, weights)| {
                (
                    party,
                    PartyShares {
                        party,
                        mode,
                        sharing,
                        scale: spn.scale(),
                        topology: topology.clone(),
                        weights,
                    },
                )
            })
            .collect();
        Ok(Self {
            mode,
            sharing,
            scale: spn.scale(),
            parties,
        })
    }

    /// Opens every weight. Debug and test use only: this defeats the sharing.
    pub fn reconstruct(
        &self,
        spn: &SpnGraph,
    ) -> Result<BTreeMap<NodeId, Vec<u128>>, ProtocolError> {
        if self.parties.len() != self.sharing.parties() {
            return Err(ProtocolError::Model(format!(
                "{} of {} parties present",
                self.parties.len(),
                self.sharing.parties()
            )));
        }
        let mut out = BTreeMap::new();
        for (i, children) in spn.sum_nodes() {
            let mut ws = Vec::with_capacity(children.len());
            for j in 0..children.len() {
                let held: Vec<(PartyId, FieldElement)> = self
                    .parties
                    .values()
                    .map(|p| {
                        p.weights
                            .get(&(i, j))
                            .map(|v| (p.party, *v))
                            .ok_or_else(|| {
                                ProtocolError::Model(format!("missing share of edge {i}.{j}"))
                            })
                    })
                    .collect::<Result<_, _>>()?;
                let value = match self.mode {
                    ShareMode::Additive => held.iter().map(|(_, v)| *v).sum(),
                    ShareMode::Polynomial => {
                        let shares: Vec<PolynomialShare> = held
                            .iter()
                            .map(|(p, v)| PolynomialShare {
                                owner: *p,
                                value: *v,
                                secret_id: weight_id(i, j),
                            })
                            .collect();
                        lagrange_reconstruct(&shares, &self.sharing)
                            .map_err(|e| ProtocolError::Model(e.to_string()))?
                    }
                };
                ws.push(value.value());
            }
            out.insert(i, ws);
        }
        Ok(out)
    }

    /// One store per party in party order; parties without shares here get
    /// an empty store.
    pub fn stores(&self) -> Vec<DataStore> {
        self.sharing
            .party_ids()
            .map(|p| {
                self.parties
                    .get(&p)
                    .map(PartyShares::to_store)
                    .unwrap_or_default()
            })
            .collect()
    }
}
