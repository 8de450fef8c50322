//! Running a plan: one event loop per endpoint over a chosen transport.

use std::collections::{BTreeMap, BTreeSet};
use std::net::{SocketAddr, TcpListener};
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::field::FieldElement;
use crate::net::client::Client;
use crate::net::counters::TrafficCounters;
use crate::net::exercise::Exercise;
use crate::net::frame::Endpoint;
use crate::net::manager::{AbortReason, Dealer, Manager, ManagerConfig};
use crate::net::member::{Fault, Member, MemberConfig, Outgoing};
use crate::net::store::{DataStore, Stored};
use crate::net::transport::{bind_local, in_process_mesh, Delivery, Link, TcpLink, Trace};
use crate::sharing::{lagrange_reconstruct, PartyId, PolynomialShare, SecretId, SharingParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransportKind {
    InProcess,
    Tcp,
}

impl std::str::FromStr for TransportKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "in-process" | "inprocess" | "memory" => Ok(Self::InProcess),
            "tcp" | "socket" => Ok(Self::Tcp),
            other => Err(format!(
                "unknown transport {other:?} (in-process or socket)"
            )),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SessionConfig {
    pub session_id: u64,
    pub sharing: SharingParams,
    pub rho: u32,
    pub alice: PartyId,
    pub bob: PartyId,
    pub seed: u64,
    pub transport: TransportKind,
    /// One-way delay added to every frame.
    pub latency: Duration,
    /// The manager aborts after this long without progress.
    pub timeout: Duration,
    pub dealer: Dealer,
    /// Fault injection for one member.
    pub fault: Option<(PartyId, Fault)>,
    pub trace: Option<Trace>,
    /// Host only some members here and reach the rest over TCP.
    pub remote: Option<RemoteParties>,
}

/// Fixed endpoint addresses and the members this process runs itself.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RemoteParties {
    pub addresses: BTreeMap<Endpoint, SocketAddr>,
    pub hosted: BTreeSet<PartyId>,
}

impl SessionConfig {
    pub fn new(sharing: SharingParams, rho: u32) -> Self {
        Self {
            session_id: 1,
            sharing,
            rho,
            alice: PartyId::new(1).expect("non-zero"),
            bob: PartyId::new(2).expect("non-zero"),
            seed: 0,
            transport: TransportKind::InProcess,
            latency: Duration::ZERO,
            timeout: Duration::from_secs(10),
            dealer: Dealer::Random,
            fault: None,
            trace: None,
            remote: None,
        }
    }

    /// Whether this process runs member `party`.
    pub fn hosts(&self, party: PartyId) -> bool {
        self.remote
            .as_ref()
            .is_none_or(|r| r.hosted.contains(&party))
    }

    fn member_config(&self, id: PartyId) -> MemberConfig {
        MemberConfig {
            id,
            sharing: self.sharing,
            session_id: self.session_id,
            alice: self.alice,
            bob: self.bob,
            rho: self.rho,
            seed: self.seed,
            fault: self.fault.and_then(|(p, f)| (p == id).then_some(f)),
        }
    }

    fn manager_config(&self, with_client: bool) -> ManagerConfig {
        ManagerConfig {
            session_id: self.session_id,
            sharing: self.sharing,
            seed: self.seed,
            dealer: self.dealer.clone(),
            with_client,
        }
    }

    fn member_idle(&self) -> Duration {
        self.timeout * 4 + Duration::from_secs(1)
    }
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("invalid session: {0}")]
    Setup(String),
    #[error("scheduling error: {0}")]
    Scheduling(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("session aborted: {reason}")]
    Aborted {
        reason: AbortReason,
        /// Traffic observed before the abort.
        counters: Box<TrafficCounters>,
    },
}

impl SessionError {
    pub fn partial_counters(&self) -> Option<&TrafficCounters> {
        match self {
            SessionError::Aborted { counters, .. } => Some(counters),
            _ => None,
        }
    }
}

#[derive(Debug)]
pub struct SessionOutcome {
    /// Final stores of the members hosted by this process.
    pub stores: BTreeMap<PartyId, DataStore>,
    /// Values revealed to the client.
    pub client_outputs: BTreeMap<SecretId, FieldElement>,
    pub counters: TrafficCounters,
    pub wall_time: Duration,
    /// Reveals Bob observed outside `[d, 2^rho)`.
    pub leak_events: u64,
}

impl SessionOutcome {
    pub fn store(&self, party: u16) -> &DataStore {
        &self.stores[&PartyId::new(party).expect("non-zero")]
    }
}

/// Checks exercise ids are strictly increasing and results are never rebound.
pub fn check_plan(plan: &[Exercise]) -> Result<(), SessionError> {
    let mut last = 0;
    let mut produced = BTreeSet::new();
    for ex in plan {
        if ex.id <= last {
            return Err(SessionError::Scheduling(format!(
                "exercise id {} follows {last}",
                ex.id
            )));
        }
        last = ex.id;
        for out in ex.op.outputs() {
            if !produced.insert(out.clone()) {
                return Err(SessionError::Scheduling(format!(
                    "result id {out} is produced twice"
                )));
            }
        }
    }
    Ok(())
}

fn check_config(cfg: &SessionConfig) -> Result<(), SessionError> {
    let n = cfg.sharing.parties();
    for (role, p) in [("alice", cfg.alice), ("bob", cfg.bob)] {
        if p.get() as usize > n {
            return Err(SessionError::Setup(format!("{role} {p} is not a member")));
        }
    }
    if cfg.alice == cfg.bob {
        return Err(SessionError::Setup("alice and bob must differ".into()));
    }
    if cfg.rho == 0 || cfg.rho >= 127 || (1u128 << cfg.rho) >= cfg.sharing.field().modulus() {
        return Err(SessionError::Setup(format!(
            "rho = {} does not leave room in the field",
            cfg.rho
        )));
    }
    Ok(())
}

fn deliver(link: &mut dyn Link, out: Vec<Outgoing>) {
    for o in out {
        if let Err(e) = link.send(o.to, &o.frame) {
            tracing::debug!(from = %link.endpoint(), to = %o.to, %e, "send failed");
        }
    }
}

fn member_loop(mut member: Member, link: &mut dyn Link, idle: Duration) -> Member {
    while !member.is_done() {
        match link.recv(idle) {
            Ok(Some(Delivery::Frame(f))) => {
                let out = member.handle(f);
                deliver(link, out);
            }
            Ok(Some(Delivery::Disconnected(_))) => {}
            Ok(None) => {
                tracing::warn!(member = member.id().get(), "idle timeout, leaving");
                break;
            }
            Err(e) => {
                tracing::warn!(member = member.id().get(), %e, "transport error");
                break;
            }
        }
    }
    link.close();
    member
}

fn client_loop(mut client: Client, link: &mut dyn Link, idle: Duration) -> Client {
    let out = client.start();
    deliver(link, out);
    while !client.is_done() {
        match link.recv(idle) {
            Ok(Some(Delivery::Frame(f))) => {
                let out = client.handle(f);
                deliver(link, out);
            }
            Ok(Some(Delivery::Disconnected(_))) => {}
            Ok(None) | Err(_) => break,
        }
    }
    link.close();
    client
}

fn manager_loop(manager: &mut Manager, link: &mut dyn Link, timeout: Duration) {
    let out = manager.start();
    deliver(link, out);
    while !manager.is_done() {
        let out = match link.recv(timeout) {
            Ok(Some(Delivery::Frame(f))) => manager.handle(f),
            Ok(Some(Delivery::Disconnected(e))) => manager.on_disconnect(e),
            Ok(None) => manager.on_timeout(),
            Err(e) => {
                tracing::warn!(%e, "manager transport error");
                manager.on_timeout()
            }
        };
        deliver(link, out);
    }
    link.close();
}

/// Runs `plan` with every endpoint hosted in this process, or with the
/// members listed in `cfg.remote` when set.
///
/// `stores` holds the initial store of each member in party order; stores
/// of members hosted elsewhere are ignored.
pub fn run_session(
    cfg: &SessionConfig,
    plan: &[Exercise],
    stores: Vec<DataStore>,
    client_inputs: &BTreeMap<SecretId, u128>,
) -> Result<SessionOutcome, SessionError> {
    let n = cfg.sharing.parties();
    if stores.len() != n {
        return Err(SessionError::Setup(format!(
            "{} member stores for {n} members",
            stores.len()
        )));
    }
    let hosted: BTreeMap<PartyId, DataStore> = cfg
        .sharing
        .party_ids()
        .zip(stores)
        .filter(|(p, _)| cfg.hosts(*p))
        .collect();
    let addresses = cfg.remote.as_ref().map(|r| &r.addresses);
    run_hosted(cfg, plan, hosted, client_inputs, addresses)
}

/// Runs the manager, the client (if needed) and the `hosted` members over
/// TCP at fixed addresses; the other members join from elsewhere through
/// [`run_member_endpoint`].
pub fn run_session_distributed(
    cfg: &SessionConfig,
    plan: &[Exercise],
    hosted: BTreeMap<PartyId, DataStore>,
    client_inputs: &BTreeMap<SecretId, u128>,
    addresses: &BTreeMap<Endpoint, SocketAddr>,
) -> Result<SessionOutcome, SessionError> {
    run_hosted(cfg, plan, hosted, client_inputs, Some(addresses))
}

fn endpoints_of(n: usize, with_client: bool) -> Vec<Endpoint> {
    Endpoint::all(n)
        .filter(|e| with_client || *e != Endpoint::Client)
        .collect()
}

fn run_hosted(
    cfg: &SessionConfig,
    plan: &[Exercise],
    hosted: BTreeMap<PartyId, DataStore>,
    client_inputs: &BTreeMap<SecretId, u128>,
    fixed_addresses: Option<&BTreeMap<Endpoint, SocketAddr>>,
) -> Result<SessionOutcome, SessionError> {
    check_config(cfg)?;
    check_plan(plan)?;
    let n = cfg.sharing.parties();
    let with_client = Client::required(plan);
    let client = if with_client {
        Some(
            Client::new(cfg.session_id, cfg.sharing, cfg.seed, plan, client_inputs)
                .map_err(|e| SessionError::Setup(e.to_string()))?,
        )
    } else {
        None
    };
    let members = hosted
        .into_iter()
        .map(|(p, store)| {
            Member::new(cfg.member_config(p), store).map_err(|e| SessionError::Setup(e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut manager = Manager::new(cfg.manager_config(with_client), plan.to_vec());

    let mut local: Vec<Endpoint> = vec![Endpoint::Manager];
    local.extend(members.iter().map(|m| m.endpoint()));
    if with_client {
        local.push(Endpoint::Client);
    }
    let all = endpoints_of(n, with_client);

    let mut links: BTreeMap<Endpoint, Box<dyn Link>> = BTreeMap::new();
    let mut pending_tcp: Vec<(Endpoint, TcpListener)> = Vec::new();
    let mut addresses = BTreeMap::new();
    match (cfg.transport, fixed_addresses) {
        (TransportKind::InProcess, None) => {
            for l in in_process_mesh(&all, cfg.latency, cfg.trace.clone()) {
                links.insert(l.endpoint(), Box::new(l));
            }
        }
        (TransportKind::InProcess, Some(_)) => {
            return Err(SessionError::Setup(
                "remote members need the socket transport".into(),
            ))
        }
        (TransportKind::Tcp, None) => {
            let (listeners, addrs) =
                bind_local(&all).map_err(|e| SessionError::Transport(e.to_string()))?;
            pending_tcp = all.iter().copied().zip(listeners).collect();
            addresses = addrs;
        }
        (TransportKind::Tcp, Some(fixed)) => {
            for e in &all {
                if !fixed.contains_key(e) {
                    return Err(SessionError::Setup(format!("no address for {e}")));
                }
            }
            for &e in &local {
                let l = TcpListener::bind(fixed[&e])
                    .map_err(|err| SessionError::Transport(format!("bind {e}: {err}")))?;
                pending_tcp.push((e, l));
            }
            addresses = all.iter().map(|e| (*e, fixed[e])).collect();
        }
    }

    let connect_timeout = cfg.timeout.max(Duration::from_secs(2));
    let idle = cfg.member_idle();
    let started = Instant::now();

    let result = thread::scope(|scope| {
        let mut take_link =
            |e: Endpoint| -> Box<dyn FnOnce() -> Result<Box<dyn Link>, String> + Send> {
                if let Some(link) = links.remove(&e) {
                    return Box::new(move || Ok(link));
                }
                let idx = pending_tcp
                    .iter()
                    .position(|(ep, _)| *ep == e)
                    .expect("every local endpoint has a link");
                let (_, listener) = pending_tcp.swap_remove(idx);
                let addrs = addresses.clone();
                let trace = cfg.trace.clone();
                let latency = cfg.latency;
                Box::new(move || {
                    TcpLink::connect(e, listener, &addrs, latency, trace, connect_timeout)
                        .map(|l| Box::new(l) as Box<dyn Link>)
                        .map_err(|err| err.to_string())
                })
            };

        let member_handles: Vec<_> = members
            .into_iter()
            .map(|m| {
                let open = take_link(m.endpoint());
                scope.spawn(move || {
                    let mut link = open()?;
                    Ok::<Member, String>(member_loop(m, link.as_mut(), idle))
                })
            })
            .collect();
        let client_handle = client.map(|c| {
            let open = take_link(Endpoint::Client);
            scope.spawn(move || {
                let mut link = open()?;
                Ok::<Client, String>(client_loop(c, link.as_mut(), idle))
            })
        });
        let open_manager = take_link(Endpoint::Manager);
        let manager_result = open_manager().map(|mut link| {
            manager_loop(&mut manager, link.as_mut(), cfg.timeout);
        });

        let members: Vec<Result<Member, String>> = member_handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err("member thread panicked".into()))
            })
            .collect();
        let client = client_handle.map(|h| {
            h.join()
                .unwrap_or_else(|_| Err("client thread panicked".into()))
        });
        (manager_result, members, client)
    });
    let wall_time = started.elapsed();
    let (manager_result, members, client) = result;
    manager_result.map_err(SessionError::Transport)?;

    let counters = manager.counters();
    if let Some(reason) = manager.abort_reason() {
        return Err(SessionError::Aborted {
            reason: reason.clone(),
            counters: Box::new(counters),
        });
    }
    let mut stores = BTreeMap::new();
    for m in members {
        let m = m.map_err(SessionError::Transport)?;
        stores.insert(m.id(), m.into_store());
    }
    let client_outputs = match client {
        Some(c) => {
            let c = c.map_err(SessionError::Transport)?;
            let missing = c.missing_reveals();
            if !missing.is_empty() {
                return Err(SessionError::Transport(format!(
                    "client missed reveals: {missing:?}"
                )));
            }
            c.into_outputs()
        }
        None => BTreeMap::new(),
    };
    Ok(SessionOutcome {
        stores,
        client_outputs,
        counters,
        wall_time,
        leak_events: manager.leak_events(),
    })
}

/// Hosts a single member that joins a distributed session over TCP.
pub fn run_member_endpoint(
    cfg: &SessionConfig,
    party: PartyId,
    store: DataStore,
    with_client: bool,
    addresses: &BTreeMap<Endpoint, SocketAddr>,
) -> Result<DataStore, SessionError> {
    check_config(cfg)?;
    let me = Endpoint::Member(party);
    let all = endpoints_of(cfg.sharing.parties(), with_client);
    let mut peers = BTreeMap::new();
    for e in all {
        let addr = addresses
            .get(&e)
            .ok_or_else(|| SessionError::Setup(format!("no address for {e}")))?;
        peers.insert(e, *addr);
    }
    let listener = TcpListener::bind(peers[&me])
        .map_err(|e| SessionError::Transport(format!("bind {me}: {e}")))?;
    let member = Member::new(cfg.member_config(party), store)
        .map_err(|e| SessionError::Setup(e.to_string()))?;
    let mut link = TcpLink::connect(
        me,
        listener,
        &peers,
        cfg.latency,
        cfg.trace.clone(),
        cfg.timeout.max(Duration::from_secs(2)),
    )
    .map_err(|e| SessionError::Transport(e.to_string()))?;
    let member = member_loop(member, &mut link, cfg.member_idle());
    if !member.is_done() {
        return Err(SessionError::Transport(
            "member left before the session ended".into(),
        ));
    }
    Ok(member.into_store())
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReconstructError {
    #[error("no member holds {0}")]
    Missing(SecretId),
    #[error("members hold different kinds of value for {0}")]
    MixedKinds(SecretId),
    #[error("members disagree on the public value {0}")]
    Inconsistent(SecretId),
    #[error("cannot reconstruct {0}: {1}")]
    Shares(SecretId, String),
}

/// Debug helper: combines every member's view of `id`.
pub fn reconstruct(
    stores: &BTreeMap<PartyId, DataStore>,
    id: &SecretId,
    sharing: &SharingParams,
) -> Result<FieldElement, ReconstructError> {
    let held: Vec<(PartyId, Stored)> = stores
        .iter()
        .filter_map(|(p, s)| s.get(id).ok().map(|v| (*p, v)))
        .collect();
    let Some((_, first)) = held.first() else {
        return Err(ReconstructError::Missing(id.clone()));
    };
    if held.iter().any(|(_, v)| v.kind() != first.kind()) {
        return Err(ReconstructError::MixedKinds(id.clone()));
    }
    match first {
        Stored::Plain(v) => {
            if held.iter().any(|(_, x)| x.value() != *v) {
                return Err(ReconstructError::Inconsistent(id.clone()));
            }
            Ok(*v)
        }
        Stored::Additive(_) => {
            if held.len() != sharing.parties() {
                return Err(ReconstructError::Shares(
                    id.clone(),
                    format!("{} of {} additive shares", held.len(), sharing.parties()),
                ));
            }
            Ok(held.iter().map(|(_, v)| v.value()).sum())
        }
        Stored::Shamir(_) => {
            let shares: Vec<PolynomialShare> = held
                .iter()
                .map(|(p, v)| PolynomialShare {
                    owner: *p,
                    value: v.value(),
                    secret_id: id.clone(),
                })
                .collect();
            lagrange_reconstruct(&shares, sharing)
                .map_err(|e| ReconstructError::Shares(id.clone(), e.to_string()))
        }
    }
}
