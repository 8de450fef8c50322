//! Run parameters from flags and an optional TOML file.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::Args;
use serde::{Deserialize, Deserializer};

use crate::arith::FixedPointParams;
use crate::field::{FieldParams, DEFAULT_PRIME};
use crate::net::{Endpoint, RemoteParties, SessionConfig, TransportKind};
use crate::sharing::{PartyId, SharingParams};

use super::HarnessError;

/// Parameters shared by every command. Each value may come from a flag or
/// from the `--config` file; a flag wins over the file.
#[derive(Args, Clone, Debug, Default, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct RunConfig {
    /// Field modulus (decimal).
    #[arg(long)]
    #[serde(deserialize_with = "big_int")]
    pub prime: Option<u128>,
    /// Fixed-point scale d; defaults to the structure's scale.
    #[arg(long)]
    #[serde(deserialize_with = "big_int")]
    pub scale_d: Option<u128>,
    /// Reciprocal precision e (power of two).
    #[arg(long)]
    #[serde(deserialize_with = "big_int")]
    pub precision_e: Option<u128>,
    /// Statistical masking parameter in bits.
    #[arg(long)]
    pub rho: Option<u32>,
    /// Newton iterations of the warm-up phase.
    #[arg(long)]
    pub warmup_iters: Option<u32>,
    /// Newton iterations of the precision phase.
    #[arg(long)]
    pub precision_iters: Option<u32>,
    /// Precision parameter of the reciprocal error bound.
    #[arg(long)]
    pub t_prec: Option<u32>,
    /// Error constant of the reciprocal error bound.
    #[arg(long)]
    pub k_err: Option<u32>,
    /// Public bound on per-node instance totals used by the reciprocal.
    #[arg(long)]
    #[serde(deserialize_with = "big_int")]
    pub divisor_bound: Option<u128>,
    /// Number of members n.
    #[arg(long)]
    pub parties: Option<usize>,
    /// Polynomial degree t; defaults to floor((n - 1) / 2).
    #[arg(long)]
    pub threshold: Option<usize>,
    /// `in-process` or `socket`.
    #[arg(long)]
    pub transport: Option<String>,
    /// One-way delay added to every frame.
    #[arg(long)]
    pub latency_ms: Option<u64>,
    /// Abort after this long without progress.
    #[arg(long)]
    pub timeout_ms: Option<u64>,
    /// Seed of every random choice in the run.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Structure file.
    #[arg(long)]
    pub structure: Option<PathBuf>,
    /// Dataset partition of one party; repeat in party order.
    #[arg(long = "data")]
    pub data: Vec<PathBuf>,
    /// Output file or directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Combine the shares to check results (test builds only).
    #[arg(long)]
    pub debug_reconstruct: bool,
    /// Add-alpha smoothing of the plaintext learner.
    #[arg(long)]
    pub alpha: Option<u64>,
    /// Fixed endpoint addresses (`manager`, `client` or a party number),
    /// file only.
    #[arg(skip)]
    pub addresses: BTreeMap<String, String>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum BigInt {
    Int(i64),
    Text(String),
}

fn big_int<'de, D: Deserializer<'de>>(de: D) -> Result<Option<u128>, D::Error> {
    match Option::<BigInt>::deserialize(de)? {
        None => Ok(None),
        Some(BigInt::Int(v)) => u128::try_from(v)
            .map(Some)
            .map_err(|_| serde::de::Error::custom(format!("{v} is negative"))),
        Some(BigInt::Text(s)) => s
            .trim()
            .replace('_', "")
            .parse()
            .map(Some)
            .map_err(|_| serde::de::Error::custom(format!("invalid integer {s:?}"))),
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        toml::from_str(&text)
            .map_err(|e| HarnessError::Usage(format!("{}: {}", path.display(), e.message())))
    }

    /// Values set here win; unset ones fall back to `file`.
    pub fn over(self, file: RunConfig) -> RunConfig {
        RunConfig {
            prime: self.prime.or(file.prime),
            scale_d: self.scale_d.or(file.scale_d),
            precision_e: self.precision_e.or(file.precision_e),
            rho: self.rho.or(file.rho),
            warmup_iters: self.warmup_iters.or(file.warmup_iters),
            precision_iters: self.precision_iters.or(file.precision_iters),
            t_prec: self.t_prec.or(file.t_prec),
            k_err: self.k_err.or(file.k_err),
            divisor_bound: self.divisor_bound.or(file.divisor_bound),
            parties: self.parties.or(file.parties),
            threshold: self.threshold.or(file.threshold),
            transport: self.transport.or(file.transport),
            latency_ms: self.latency_ms.or(file.latency_ms),
            timeout_ms: self.timeout_ms.or(file.timeout_ms),
            seed: self.seed.or(file.seed),
            structure: self.structure.or(file.structure),
            data: if self.data.is_empty() {
                file.data
            } else {
                self.data
            },
            out: self.out.or(file.out),
            debug_reconstruct: self.debug_reconstruct || file.debug_reconstruct,
            alpha: self.alpha.or(file.alpha),
            addresses: if self.addresses.is_empty() {
                file.addresses
            } else {
                self.addresses
            },
        }
    }

    pub fn structure_path(&self) -> Result<&Path, HarnessError> {
        self.structure
            .as_deref()
            .ok_or_else(|| HarnessError::Usage("--structure is required".into()))
    }

    /// Resolves defaults. `scale` is the structure's scale, which `d` must
    /// match when given.
    pub fn resolve(&self, scale: u128) -> Result<Settings, HarnessError> {
        let invalid = |m: String| HarnessError::Validation(m);
        if let Some(d) = self.scale_d {
            if d != scale {
                return Err(invalid(format!(
                    "scale d = {d} differs from the structure's scale {scale}"
                )));
            }
        }
        let field = FieldParams::new(self.prime.unwrap_or(DEFAULT_PRIME))
            .map_err(|e| invalid(e.to_string()))?;
        let n = self.parties.unwrap_or(3);
        let sharing = match self.threshold {
            Some(t) => SharingParams::new(n, t, field),
            None => SharingParams::with_default_degree(n, field),
        }
        .map_err(|e| invalid(e.to_string()))?;
        let defaults = FixedPointParams::with_scale(scale);
        let fixed = FixedPointParams {
            scale,
            precision: self.precision_e.unwrap_or(defaults.precision),
            rho: self.rho.unwrap_or(defaults.rho),
            warmup_iters: self.warmup_iters.unwrap_or(defaults.warmup_iters),
            precision_iters: self.precision_iters.unwrap_or(defaults.precision_iters),
            t_prec: self.t_prec.unwrap_or(defaults.t_prec),
            k_err: self.k_err.unwrap_or(defaults.k_err),
            divisor_bound: self.divisor_bound.unwrap_or(scale),
        };
        let transport = match &self.transport {
            Some(t) => t.parse().map_err(HarnessError::Usage)?,
            None => TransportKind::InProcess,
        };
        let addresses = if self.addresses.is_empty() {
            None
        } else {
            Some(parse_addresses(&self.addresses, n)?)
        };
        Ok(Settings {
            field,
            sharing,
            fixed,
            transport,
            latency: Duration::from_millis(self.latency_ms.unwrap_or(0)),
            timeout: Duration::from_millis(self.timeout_ms.unwrap_or(10_000)),
            seed: self.seed.unwrap_or(0),
            divisor_bound_given: self.divisor_bound.is_some(),
            alpha: self.alpha.unwrap_or(0),
            addresses,
        })
    }
}

fn parse_addresses(
    raw: &BTreeMap<String, String>,
    n: usize,
) -> Result<BTreeMap<Endpoint, SocketAddr>, HarnessError> {
    let mut out = BTreeMap::new();
    for (key, value) in raw {
        let endpoint = match key.as_str() {
            "manager" => Endpoint::Manager,
            "client" => Endpoint::Client,
            k => {
                let id: u16 = k
                    .trim_start_matches("member")
                    .trim()
                    .parse()
                    .map_err(|_| HarnessError::Usage(format!("unknown endpoint {k:?}")))?;
                if id as usize > n {
                    return Err(HarnessError::Usage(format!(
                        "party {id} is outside 1..={n}"
                    )));
                }
                Endpoint::Member(PartyId::new(id).map_err(|e| HarnessError::Usage(e.to_string()))?)
            }
        };
        let addr = value
            .parse()
            .map_err(|_| HarnessError::Usage(format!("invalid address {value:?} for {key}")))?;
        out.insert(endpoint, addr);
    }
    Ok(out)
}

/// Fully resolved parameters.
#[derive(Clone, Debug)]
pub struct Settings {
    pub field: FieldParams,
    pub sharing: SharingParams,
    pub fixed: FixedPointParams,
    pub transport: TransportKind,
    pub latency: Duration,
    pub timeout: Duration,
    pub seed: u64,
    pub divisor_bound_given: bool,
    pub alpha: u64,
    pub addresses: Option<BTreeMap<Endpoint, SocketAddr>>,
}

impl Settings {
    /// Session running every endpoint in this process, or the manager and
    /// client only when fixed addresses are configured.
    pub fn session(&self) -> SessionConfig {
        let mut cfg = SessionConfig::new(self.sharing, self.fixed.rho);
        cfg.seed = self.seed;
        cfg.transport = self.transport;
        cfg.latency = self.latency;
        cfg.timeout = self.timeout;
        if let Some(addresses) = &self.addresses {
            cfg.transport = TransportKind::Tcp;
            cfg.remote = Some(RemoteParties {
                addresses: addresses.clone(),
                hosted: Default::default(),
            });
        }
        cfg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_values_and_flag_precedence() {
        let file: RunConfig = toml::from_str(
            r#"
            prime = "1048583"
            rho = 12
            parties = 5
            seed = 9
            [addresses]
            manager = "127.0.0.1:7000"
            1 = "127.0.0.1:7001"
            "#,
        )
        .unwrap();
        assert_eq!(file.prime, Some(1_048_583));
        let flags = RunConfig {
            parties: Some(3),
            ..RunConfig::default()
        };
        let merged = flags.over(file);
        assert_eq!(merged.parties, Some(3));
        assert_eq!(merged.seed, Some(9));
        let s = merged.resolve(16).unwrap();
        assert_eq!(s.sharing.degree(), 1);
        assert_eq!(s.fixed.rho, 12);
        assert_eq!(s.addresses.unwrap().len(), 2);
    }

    #[test]
    fn defaults_and_rejections() {
        let s = RunConfig::default().resolve(256).unwrap();
        assert_eq!(s.field.modulus(), DEFAULT_PRIME);
        assert_eq!(s.fixed.precision, 1 << 16);
        assert_eq!(s.sharing.parties(), 3);
        let bad = RunConfig {
            scale_d: Some(100),
            ..RunConfig::default()
        };
        assert!(matches!(bad.resolve(256), Err(HarnessError::Validation(_))));
        assert!(toml::from_str::<RunConfig>("colour = 1").is_err());
        assert!(toml::from_str::<RunConfig>("prime = -3").is_err());
    }
}
