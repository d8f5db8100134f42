//! Simulated service mesh: one pod per agent with a service, a proxy
//! sidecar, a policy sidecar and a capture sidecar, mTLS channels between
//! proxies, per-agent encrypted volumes and per-interface captures.

pub mod capture;
pub mod fault;
pub mod volume;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use capture::{
    read_capture_log, write_capture_log, CaptureEvent, CaptureLogError, CapturePoint,
    CaptureRecord, CaseMarker, HttpInfo, InterfaceKind, RunHeader, Transport,
};
pub use fault::{Fault, ParseFaultError};
pub use volume::{EncryptedVolume, KeyValueStore};

use crate::identity::crypto::encode_fields;
use crate::identity::{
    fingerprint, verify_possession, BootstrapError, CertificateRecord, ControlPlane, IdentityConfig,
    IdentityError, Node, ProxyIdentity, Tick, VerifyFailure, CA_AUDIENCE,
};
use crate::policy::{Method, PolicyDocument, PolicyStore, RequestContext, Resource};
use crate::workflow::{AgentId, WorkflowError, WorkflowGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnforcementPoint {
    #[default]
    Source,
    Destination,
    Both,
}

impl EnforcementPoint {
    pub fn at_source(self) -> bool {
        matches!(self, EnforcementPoint::Source | EnforcementPoint::Both)
    }

    pub fn at_destination(self) -> bool {
        matches!(self, EnforcementPoint::Destination | EnforcementPoint::Both)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EnforcementPoint::Source => "source",
            EnforcementPoint::Destination => "destination",
            EnforcementPoint::Both => "both",
        }
    }
}

impl fmt::Display for EnforcementPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnforcementPoint {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "source" => Ok(Self::Source),
            "destination" => Ok(Self::Destination),
            "both" => Ok(Self::Both),
            other => Err(format!("unknown enforcement point {other:?}")),
        }
    }
}

/// Normal distribution parameters, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gaussian {
    pub mean: f64,
    pub sd: f64,
}

impl Gaussian {
    pub const fn new(mean: f64, sd: f64) -> Self {
        Self { mean, sd }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.sd <= 0.0 {
            return self.mean;
        }
        Normal::new(self.mean, self.sd).map_or(self.mean, |n| n.sample(rng))
    }
}

/// Per-container init costs. Defaults put the pod without policy sidecar
/// at about 5.93 s (sd 0.88) and with it at about 7.87 s (sd 1.03).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StartupCosts {
    pub scheduling: Gaussian,
    pub proxy_init: Gaussian,
    pub policy_sidecar_init: Gaussian,
    pub capture_init: Gaussian,
}

impl Default for StartupCosts {
    fn default() -> Self {
        Self {
            scheduling: Gaussian::new(3.20, 0.60),
            proxy_init: Gaussian::new(2.73, 0.6437),
            policy_sidecar_init: Gaussian::new(1.94, 0.535),
            capture_init: Gaussian::new(0.0, 0.0),
        }
    }
}

/// Request round-trip cost model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RequestCosts {
    pub intra_region: Gaussian,
    pub inter_region: Gaussian,
    /// Proxy to policy sidecar query over the loopback.
    pub sidecar_query: Gaussian,
    /// Evaluation cost per allow rule.
    pub per_rule: f64,
    /// Relative spread of the evaluation cost.
    pub per_rule_jitter: f64,
}

impl Default for RequestCosts {
    fn default() -> Self {
        Self {
            intra_region: Gaussian::new(0.0049, 0.0010),
            inter_region: Gaussian::new(0.0650, 0.0110),
            sidecar_query: Gaussian::new(0.0012, 0.0003),
            per_rule: 7.4e-6,
            per_rule_jitter: 0.35,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub enforcement_point: EnforcementPoint,
    /// Pods are deployed without the policy sidecar and nothing is enforced.
    pub no_policy_sidecar: bool,
    /// The policy sidecar holds no rules and allows everything.
    pub allow_all: bool,
    /// Whether pods carry the capture sidecar.
    pub capture: bool,
    pub seed: u64,
    pub start_hour: u8,
    pub startup: StartupCosts,
    pub request: RequestCosts,
    pub identity: IdentityConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            enforcement_point: EnforcementPoint::Source,
            no_policy_sidecar: false,
            allow_all: false,
            capture: true,
            seed: 42,
            start_hour: 8,
            startup: StartupCosts::default(),
            request: RequestCosts::default(),
            identity: IdentityConfig::default(),
        }
    }
}

impl SimConfig {
    fn enforces(&self) -> bool {
        !self.no_policy_sidecar && !self.allow_all
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Container {
    Service,
    Proxy,
    PolicySidecar,
    Capture,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PodState {
    PodScheduled,
    Ready,
    Terminated,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VirtualInterface {
    pub kind: InterfaceKind,
    pub owner_pod: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Pod {
    pub agent: AgentId,
    pub containers: BTreeSet<Container>,
    pub state: PodState,
    pub volume_key_id: String,
    /// PodScheduled to Ready, seconds.
    pub startup_duration: f64,
    pub region: String,
}

impl Pod {
    pub fn name(&self) -> &str {
        self.agent.name()
    }

    pub fn is_ready(&self) -> bool {
        self.state == PodState::Ready
    }

    pub fn has(&self, c: Container) -> bool {
        self.containers.contains(&c)
    }

    pub fn interfaces(&self) -> [VirtualInterface; 2] {
        InterfaceKind::ALL.map(|kind| VirtualInterface { kind, owner_pod: self.name().to_owned() })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SecureChannel {
    /// Agent names of the initiating and responding proxies.
    pub endpoints: (String, String),
    pub session_id: String,
    pub peer_certificates: (CertificateRecord, CertificateRecord),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VirtualClock {
    pub tick: Tick,
    pub hour_of_day: u8,
}

impl VirtualClock {
    fn advance(&mut self) -> Tick {
        self.tick += 1;
        self.tick
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Response {
    pub status: u16,
    pub body: Vec<u8>,
    /// Simulated round-trip duration, seconds.
    pub latency_s: f64,
    pub rules_evaluated: usize,
}

#[derive(Debug, Error)]
pub enum DeployError {
    #[error(transparent)]
    Workflow(#[from] WorkflowError),
    #[error("policy has no identity for agents: {}", .0.join(","))]
    PolicyCoverage(Vec<String>),
    #[error("node {node} bootstrap failed: {source}")]
    Bootstrap { node: String, source: BootstrapError },
    #[error("identity issuance for {agent} failed: {source}")]
    Identity { agent: String, source: IdentityError },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChannelFailure {
    #[error("{0} has no workload identity")]
    NoIdentity(String),
    #[error("certificate of {agent} rejected: {failure}")]
    Verify { agent: String, failure: VerifyFailure },
    #[error("{0} failed proof of possession")]
    Possession(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SendError {
    #[error("a pod cannot send to itself ({0})")]
    SelfSend(String),
    #[error("unknown agent {0}")]
    UnknownAgent(String),
    #[error("source pod {0} is not ready")]
    SourceNotReady(String),
    #[error("transport error: {dst} is unreachable")]
    Transport { dst: String },
    #[error("channel error between {src} and {dst}: {failure}")]
    Channel { src: String, dst: String, failure: ChannelFailure },
    #[error("invalid request path {0:?}")]
    InvalidPath(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VolumeError {
    #[error("unknown agent {0}")]
    UnknownAgent(String),
    #[error("pod {0} is not ready")]
    PodNotReady(String),
    #[error("{requester} may not access the volume of {owner}")]
    Authorization { requester: String, owner: String },
    #[error("cannot decrypt {name:?} on the volume of {agent}")]
    Decryption { agent: String, name: String },
    #[error("no blob {name:?} on the volume of {agent}")]
    NotFound { agent: String, name: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MeshError {
    #[error("unknown agent {0}")]
    UnknownAgent(String),
    #[error("unknown fault target {0}")]
    UnknownFaultTarget(String),
    #[error("fault {0} names the same agent twice")]
    DegenerateFault(Fault),
    #[error(transparent)]
    Identity(#[from] IdentityError),
}

pub fn service_name(agent: &AgentId) -> String {
    format!("{}.{}.svc", agent.agent, agent.actor)
}

pub fn node_name(actor: &str) -> String {
    format!("{actor}-node")
}

pub fn volume_key_id(agent: &str) -> String {
    format!("pv-{agent}")
}

fn pair_key(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_owned(), b.to_owned())
    } else {
        (b.to_owned(), a.to_owned())
    }
}

/// Outcome of a sidecar authorization query.
struct Authz {
    allow: bool,
    rules: usize,
    cost: f64,
}

#[derive(Debug)]
pub struct Mesh {
    graph: WorkflowGraph,
    config: SimConfig,
    policy: PolicyStore,
    plane: ControlPlane,
    nodes: BTreeMap<String, Node>,
    pods: BTreeMap<String, Pod>,
    proxies: BTreeMap<String, ProxyIdentity>,
    kv: KeyValueStore,
    volumes: BTreeMap<String, EncryptedVolume>,
    channels: BTreeMap<(String, String), SecureChannel>,
    faults: Vec<Fault>,
    clock: VirtualClock,
    events: Vec<CaptureEvent>,
    rng: ChaCha8Rng,
}

impl Mesh {
    pub fn deploy(graph: &WorkflowGraph, policy: PolicyDocument, config: SimConfig) -> Result<Self, DeployError> {
        let plane = ControlPlane::new(config.identity, config.seed ^ 0x9e37_79b9_7f4a_7c15);
        Self::deploy_with_plane(graph, policy, config, plane)
    }

    /// Deploys against a caller-prepared control plane.
    pub fn deploy_with_plane(
        graph: &WorkflowGraph,
        policy: PolicyDocument,
        config: SimConfig,
        plane: ControlPlane,
    ) -> Result<Self, DeployError> {
        graph.validated()?;
        if config.enforces() {
            let known: BTreeSet<&str> = policy.identities().into_iter().map(|i| i.as_str()).collect();
            let missing: Vec<String> =
                graph.agent_names().into_iter().filter(|a| !known.contains(a.as_str())).collect();
            if !missing.is_empty() {
                return Err(DeployError::PolicyCoverage(missing));
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut mesh = Mesh {
            graph: graph.clone(),
            config,
            policy: PolicyStore::new(policy),
            plane,
            nodes: BTreeMap::new(),
            pods: BTreeMap::new(),
            proxies: BTreeMap::new(),
            kv: KeyValueStore::default(),
            volumes: BTreeMap::new(),
            channels: BTreeMap::new(),
            faults: Vec::new(),
            clock: VirtualClock { tick: 0, hour_of_day: config.start_hour % 24 },
            events: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(0),
        };

        let actors: BTreeSet<String> = graph.agents.iter().map(|a| a.actor.clone()).collect();
        for actor in actors {
            let name = node_name(&actor);
            let token = mesh.plane.issue_bootstrap_token(
                &format!("bootstrap-{actor}"),
                1,
                config.identity.node_cert_lifetime,
            );
            let mut node = Node::new(&name, mesh.plane.generate_keypair());
            mesh.plane
                .kubelet_bootstrap(&mut node, &token, mesh.clock.tick)
                .map_err(|source| DeployError::Bootstrap { node: name.clone(), source })?;
            mesh.nodes.insert(name, node);
        }

        for agent in &graph.agents {
            let name = agent.name().to_owned();
            let mut containers = BTreeSet::from([Container::Service, Container::Proxy]);
            if !config.no_policy_sidecar {
                containers.insert(Container::PolicySidecar);
            }
            if config.capture {
                containers.insert(Container::Capture);
            }
            let key_id = volume_key_id(&name);
            let mut key = [0u8; 32];
            rng.fill_bytes(&mut key);
            mesh.kv.insert(&key_id, key);
            mesh.volumes.insert(name.clone(), EncryptedVolume::new(&name, &key_id));

            mesh.plane.register_service(&name, &service_name(agent));
            let jwt = mesh.plane.issue_jwt(&name, CA_AUDIENCE, config.identity.cert_lifetime);
            let mut proxy = ProxyIdentity::new(&name);
            mesh.plane
                .proxy_identity_request(&mut proxy, &jwt, mesh.clock.tick)
                .map_err(|source| DeployError::Identity { agent: name.clone(), source })?;
            mesh.proxies.insert(name.clone(), proxy);

            let costs = config.startup;
            let mut startup = costs.scheduling.sample(&mut rng).max(0.0) + costs.proxy_init.sample(&mut rng).max(0.0);
            if containers.contains(&Container::PolicySidecar) {
                startup += costs.policy_sidecar_init.sample(&mut rng).max(0.0);
            }
            if containers.contains(&Container::Capture) {
                startup += costs.capture_init.sample(&mut rng).max(0.0);
            }
            mesh.pods.insert(
                name.clone(),
                Pod {
                    agent: agent.clone(),
                    containers,
                    state: PodState::Ready,
                    volume_key_id: key_id,
                    startup_duration: startup,
                    region: graph.region_of(&name).to_owned(),
                },
            );
        }
        mesh.rng = ChaCha8Rng::seed_from_u64(rng.next_u64());
        Ok(mesh)
    }

    pub fn graph(&self) -> &WorkflowGraph {
        &self.graph
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn policy(&self) -> Arc<PolicyDocument> {
        self.policy.current()
    }

    /// Pushes a new policy to every policy sidecar.
    pub fn update_policy(&self, policy: PolicyDocument) {
        self.policy.replace(policy);
    }

    pub fn plane(&self) -> &ControlPlane {
        &self.plane
    }

    pub fn nodes(&self) -> &BTreeMap<String, Node> {
        &self.nodes
    }

    pub fn pods(&self) -> &BTreeMap<String, Pod> {
        &self.pods
    }

    pub fn pod(&self, agent: &str) -> Option<&Pod> {
        self.pods.get(agent)
    }

    pub fn proxy(&self, agent: &str) -> Option<&ProxyIdentity> {
        self.proxies.get(agent)
    }

    pub fn key_store(&self) -> &KeyValueStore {
        &self.kv
    }

    pub fn volume(&self, agent: &str) -> Option<&EncryptedVolume> {
        self.volumes.get(agent)
    }

    pub fn channels(&self) -> impl Iterator<Item = &SecureChannel> {
        self.channels.values()
    }

    pub fn faults(&self) -> &[Fault] {
        &self.faults
    }

    pub fn clock(&self) -> VirtualClock {
        self.clock
    }

    pub fn set_hour(&mut self, hour: u8) {
        self.clock.hour_of_day = hour % 24;
    }

    pub fn certificate_count(&self) -> usize {
        self.proxies.values().filter(|p| p.certificate.is_some()).count()
    }

    /// All capture records, in virtual-time order.
    pub fn collect_captures(&self) -> Vec<CaptureRecord> {
        self.events
            .iter()
            .filter_map(|e| match e {
                CaptureEvent::Capture(r) => Some(r.clone()),
                _ => None,
            })
            .collect()
    }

    /// Records plus run header and case markers.
    pub fn capture_log(&self) -> &[CaptureEvent] {
        &self.events
    }

    pub fn mark_run(&mut self, methods: &[Method], path_template: &str) {
        let mut services = self.graph.agent_names();
        services.sort();
        self.events.push(CaptureEvent::Run {
            run: RunHeader {
                services,
                methods: methods.to_vec(),
                enforcement_point: self.config.enforcement_point,
                clock_hour: self.clock.hour_of_day,
                path_template: path_template.to_owned(),
                seed: self.config.seed,
            },
        });
    }

    pub fn mark_case(&mut self, index: usize, src: &str, dst: &str, method: Method) {
        self.events.push(CaptureEvent::Case {
            case: CaseMarker {
                index,
                src: src.to_owned(),
                dst: dst.to_owned(),
                method,
                virtual_time: self.clock.tick,
            },
        });
    }

    fn capture(
        &mut self,
        pod: &str,
        interface: InterfaceKind,
        (src, dst): (&str, &str),
        transport: Transport,
        http: Option<HttpInfo>,
    ) {
        let virtual_time = self.clock.advance();
        if !self.pods.get(pod).is_some_and(|p| p.has(Container::Capture)) {
            return;
        }
        let http = if transport == Transport::PlaintextHttp { http } else { None };
        self.events.push(CaptureEvent::Capture(CaptureRecord {
            point: CapturePoint { pod: pod.to_owned(), interface },
            src_identity: src.to_owned(),
            dst_identity: dst.to_owned(),
            transport,
            http,
            virtual_time,
        }));
    }

    fn sidecar_cost(&mut self, rules: usize) -> f64 {
        let c = self.config.request;
        let jitter = Gaussian::new(1.0, c.per_rule_jitter).sample(&mut self.rng).max(0.0);
        c.sidecar_query.sample(&mut self.rng).max(0.0) + rules as f64 * c.per_rule * jitter
    }

    /// Policy sidecar of `at` deciding on a request from `src` to `dst`.
    fn authorize(&mut self, at: &str, src: &str, dst: &str, ctx: &RequestContext) -> Authz {
        let pod = &self.pods[at];
        if !pod.has(Container::PolicySidecar) {
            return Authz { allow: true, rules: 0, cost: 0.0 };
        }
        let fail_open = self.faults.iter().any(|f| matches!(f, Fault::DisablePolicySidecar { agent } if agent == at));
        if fail_open {
            return Authz { allow: true, rules: 0, cost: 0.0 };
        }
        let (allow, rules) = if self.config.allow_all {
            (true, 0)
        } else {
            let d = self.policy.evaluate(ctx);
            (d.is_allow(), d.rules_evaluated)
        };
        let rogue = at == src
            && self.faults.iter().any(|f| matches!(f, Fault::RogueEdge { src: s, dst: d } if s == src && d == dst));
        let cost = self.sidecar_cost(rules);
        Authz { allow: allow || rogue, rules, cost }
    }

    fn handshake(&mut self, src: &str, dst: &str) -> Result<SecureChannel, ChannelFailure> {
        let now = self.clock.tick;
        let mut nonce = [0u8; 16];
        self.rng.fill_bytes(&mut nonce);
        let transcript = encode_fields(&[&nonce, src.as_bytes(), dst.as_bytes()]);
        // Initiator checks the responder first, then the responder checks the initiator.
        let mut certs = Vec::with_capacity(2);
        for (peer, role) in [(dst, b"responder".as_slice()), (src, b"initiator".as_slice())] {
            let proxy = &self.proxies[peer];
            let cert = proxy.certificate.clone().ok_or_else(|| ChannelFailure::NoIdentity(peer.to_owned()))?;
            let public_key = proxy.public_key().ok_or_else(|| ChannelFailure::NoIdentity(peer.to_owned()))?;
            let service = service_name(&self.pods[peer].agent);
            self.plane
                .verify_cert(&cert, now, Some(&service))
                .map_err(|failure| ChannelFailure::Verify { agent: peer.to_owned(), failure })?;
            let message = encode_fields(&[&transcript, role]);
            let proof = proxy.sign(&message).unwrap_or_default();
            if fingerprint(&public_key) != cert.public_key_fingerprint
                || !verify_possession(&public_key, &message, &proof)
            {
                return Err(ChannelFailure::Possession(peer.to_owned()));
            }
            certs.push(cert);
        }
        let responder = certs.remove(0);
        let initiator = certs.remove(0);
        Ok(SecureChannel {
            endpoints: (src.to_owned(), dst.to_owned()),
            session_id: nonce.iter().map(|b| format!("{b:02x}")).collect(),
            peer_certificates: (initiator, responder),
        })
    }

    fn ensure_channel(&mut self, src: &str, dst: &str) -> Result<(), ChannelFailure> {
        let key = pair_key(src, dst);
        if self.channels.contains_key(&key) {
            return Ok(());
        }
        let channel = self.handshake(src, dst)?;
        self.channels.insert(key, channel);
        Ok(())
    }

    /// Sends a request from service `src` to service `dst` along the proxy
    /// data path. A 403 is a normal response; transport and channel failures
    /// are errors.
    pub fn send(&mut self, src: &str, dst: &str, method: Method, path: &str, body: &[u8]) -> Result<Response, SendError> {
        if src == dst {
            return Err(SendError::SelfSend(src.to_owned()));
        }
        for a in [src, dst] {
            if !self.pods.contains_key(a) {
                return Err(SendError::UnknownAgent(a.to_owned()));
            }
        }
        if !self.pods[src].is_ready() {
            return Err(SendError::SourceNotReady(src.to_owned()));
        }
        let resource = Resource::new(path).map_err(|_| SendError::InvalidPath(path.to_owned()))?;
        let path = resource.as_str().to_owned();
        let ids = (src, dst);
        let request = Some(HttpInfo { method, path: path.clone(), status: None });
        let reply = |status: u16| Some(HttpInfo { method, path: path.clone(), status: Some(status) });
        let ctx = RequestContext::new(src, method, &path, self.clock.hour_of_day)
            .map_err(|_| SendError::InvalidPath(path.clone()))?;

        let enforcement = self.config.enforcement_point;
        let mut latency = 0.0;
        let mut rules_evaluated = 0;

        self.capture(src, InterfaceKind::Loopback, ids, Transport::PlaintextHttp, request.clone());
        if enforcement.at_source() {
            let authz = self.authorize(src, src, dst, &ctx);
            latency += authz.cost;
            rules_evaluated += authz.rules;
            if !authz.allow {
                self.capture(src, InterfaceKind::Loopback, ids, Transport::PlaintextHttp, reply(403));
                return Ok(Response { status: 403, body: b"forbidden".to_vec(), latency_s: latency, rules_evaluated });
            }
        }

        if !self.pods[dst].is_ready() {
            self.capture(src, InterfaceKind::Loopback, ids, Transport::PlaintextHttp, reply(503));
            return Err(SendError::Transport { dst: dst.to_owned() });
        }

        let plaintext = self.faults.iter().any(|f| f.is_plaintext_between(src, dst));
        let transport = if plaintext {
            Transport::PlaintextHttp
        } else {
            if let Err(failure) = self.ensure_channel(src, dst) {
                self.capture(src, InterfaceKind::External, ids, Transport::Mtls, None);
                self.capture(dst, InterfaceKind::External, ids, Transport::Mtls, None);
                self.capture(src, InterfaceKind::Loopback, ids, Transport::PlaintextHttp, reply(503));
                return Err(SendError::Channel { src: src.to_owned(), dst: dst.to_owned(), failure });
            }
            Transport::Mtls
        };
        self.capture(src, InterfaceKind::External, ids, transport, request.clone());
        self.capture(dst, InterfaceKind::External, ids, transport, request.clone());

        let base = if self.pods[src].region == self.pods[dst].region {
            self.config.request.intra_region
        } else {
            self.config.request.inter_region
        };
        latency += base.sample(&mut self.rng).max(1e-6);

        if enforcement.at_destination() {
            let authz = self.authorize(dst, src, dst, &ctx);
            latency += authz.cost;
            rules_evaluated += authz.rules;
            if !authz.allow {
                self.capture(dst, InterfaceKind::External, ids, transport, reply(403));
                self.capture(src, InterfaceKind::External, ids, transport, reply(403));
                self.capture(src, InterfaceKind::Loopback, ids, Transport::PlaintextHttp, reply(403));
                return Ok(Response { status: 403, body: b"forbidden".to_vec(), latency_s: latency, rules_evaluated });
            }
        }

        let status = method.success_status();
        self.capture(dst, InterfaceKind::Loopback, ids, Transport::PlaintextHttp, request);
        self.capture(dst, InterfaceKind::Loopback, ids, Transport::PlaintextHttp, reply(status));
        self.capture(dst, InterfaceKind::External, ids, transport, reply(status));
        self.capture(src, InterfaceKind::External, ids, transport, reply(status));
        self.capture(src, InterfaceKind::Loopback, ids, Transport::PlaintextHttp, reply(status));
        let body = format!("received {} bytes", body.len()).into_bytes();
        Ok(Response { status, body, latency_s: latency, rules_evaluated })
    }

    fn ready_pod(&self, agent: &str) -> Result<&Pod, VolumeError> {
        let pod = self.pods.get(agent).ok_or_else(|| VolumeError::UnknownAgent(agent.to_owned()))?;
        if !pod.is_ready() {
            return Err(VolumeError::PodNotReady(agent.to_owned()));
        }
        Ok(pod)
    }

    pub fn store_data(&mut self, agent: &str, name: &str, plaintext: &[u8]) -> Result<(), VolumeError> {
        let key_id = self.ready_pod(agent)?.volume_key_id.clone();
        let key = *self
            .kv
            .get(&key_id)
            .ok_or_else(|| VolumeError::Decryption { agent: agent.to_owned(), name: name.to_owned() })?;
        self.volumes.get_mut(agent).expect("one volume per pod").seal(&key, name, plaintext);
        Ok(())
    }

    pub fn load_data(&self, agent: &str, name: &str) -> Result<Vec<u8>, VolumeError> {
        self.load_from(agent, agent, name)
    }

    /// `requester` reading the volume of `owner`; only the owner may.
    pub fn load_from(&self, requester: &str, owner: &str, name: &str) -> Result<Vec<u8>, VolumeError> {
        for a in [requester, owner] {
            if !self.pods.contains_key(a) {
                return Err(VolumeError::UnknownAgent(a.to_owned()));
            }
        }
        if requester != owner {
            return Err(VolumeError::Authorization { requester: requester.to_owned(), owner: owner.to_owned() });
        }
        let decryption = || VolumeError::Decryption { agent: owner.to_owned(), name: name.to_owned() };
        let pod = &self.pods[owner];
        let key = self.kv.get(&pod.volume_key_id).ok_or_else(decryption)?;
        self.ready_pod(owner)?;
        match self.volumes[owner].open(key, name) {
            None => Err(VolumeError::NotFound { agent: owner.to_owned(), name: name.to_owned() }),
            Some(Ok(plain)) => Ok(plain),
            Some(Err(_)) => Err(decryption()),
        }
    }

    /// Stored ciphertext as it sits on disk.
    pub fn raw_blob(&self, agent: &str, name: &str) -> Option<&[u8]> {
        self.volumes.get(agent)?.blobs.get(name).map(Vec::as_slice)
    }

    /// Flips one ciphertext byte at rest. Returns false if the blob is absent.
    pub fn tamper_blob(&mut self, agent: &str, name: &str) -> bool {
        let Some(blob) = self.volumes.get_mut(agent).and_then(|v| v.blobs.get_mut(name)) else {
            return false;
        };
        if let Some(b) = blob.last_mut() {
            *b ^= 0x01;
        }
        true
    }

    /// Terminates the pod, revokes its volume key and closes its channels.
    /// Destroying a terminated pod is a no-op.
    pub fn destroy_pod(&mut self, agent: &str) -> Result<(), MeshError> {
        let pod = self.pods.get_mut(agent).ok_or_else(|| MeshError::UnknownAgent(agent.to_owned()))?;
        pod.state = PodState::Terminated;
        let key_id = pod.volume_key_id.clone();
        self.kv.revoke(&key_id);
        self.channels.retain(|(a, b), _| a != agent && b != agent);
        Ok(())
    }

    pub fn inject_fault(&mut self, fault: Fault) -> Result<(), MeshError> {
        for t in fault.targets() {
            if !self.pods.contains_key(t) {
                return Err(MeshError::UnknownFaultTarget(t.to_owned()));
            }
        }
        let targets = fault.targets();
        if targets.len() == 2 && targets[0] == targets[1] {
            return Err(MeshError::DegenerateFault(fault));
        }
        if self.faults.contains(&fault) {
            return Ok(());
        }
        if let Fault::TamperCertificate { agent } = &fault {
            let proxy = self.proxies.get_mut(agent).expect("proxy per pod");
            if let Some(b) = proxy.certificate.as_mut().and_then(|c| c.signature.first_mut()) {
                *b ^= 0xff;
            }
            let agent = agent.clone();
            self.channels.retain(|(a, b), _| *a != agent && *b != agent);
        }
        self.faults.push(fault);
        Ok(())
    }

    /// Rotates the agent's workload certificate. The old one is revoked, so
    /// channels pinned to it are closed and the next send re-handshakes.
    pub fn rotate_identity(&mut self, agent: &str) -> Result<CertificateRecord, MeshError> {
        let proxy = self.proxies.get_mut(agent).ok_or_else(|| MeshError::UnknownAgent(agent.to_owned()))?;
        let now = self.clock.tick;
        let jwt = self.plane.issue_jwt(agent, CA_AUDIENCE, now + self.config.identity.cert_lifetime);
        let cert = self.plane.rotate(proxy, &jwt, now)?;
        self.channels.retain(|(a, b), _| a != agent && b != agent);
        // A fresh certificate replaces a tampered one.
        self.faults.retain(|f| !matches!(f, Fault::TamperCertificate { agent: a } if a == agent));
        Ok(cert)
    }
}
