//! Identity bootstrap for nodes and proxies.
//!
//! Trust is layered: a node (kubelet) first trades a limited-use bootstrap
//! token for a certificate, then proxies obtain workload certificates from
//! the CA through their node agent, authenticated with a signed token. The
//! CA is a serialized decision point; all state lives behind one lock.

pub(crate) mod crypto;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Mutex;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crypto::{fingerprint, verify_possession, HmacScheme, KeyPair, SignatureScheme};
use crypto::encode_fields;

pub type Tick = u64;

/// Audience accepted by the CA on identity requests.
pub const CA_AUDIENCE: &str = "identity-ca";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootstrapToken {
    pub token_id: String,
    pub secret: Vec<u8>,
    pub usage_budget: u32,
    pub expiry: Tick,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CertificateSigningRequest {
    pub subject: String,
    pub public_key: Vec<u8>,
    pub public_key_fingerprint: Vec<u8>,
    pub nonce: Vec<u8>,
    /// Signature over the other fields with the requester's private key.
    pub proof: Vec<u8>,
}

impl CertificateSigningRequest {
    pub fn new(subject: &str, key: &KeyPair, nonce: Vec<u8>) -> Self {
        let public_key = key.public_key().to_vec();
        let public_key_fingerprint = key.fingerprint();
        let proof = key.sign(&Self::signed_bytes(subject, &public_key_fingerprint, &nonce));
        Self { subject: subject.to_owned(), public_key, public_key_fingerprint, nonce, proof }
    }

    fn signed_bytes(subject: &str, fp: &[u8], nonce: &[u8]) -> Vec<u8> {
        encode_fields(&[b"csr", subject.as_bytes(), fp, nonce])
    }

    /// Fingerprint matches the enclosed key and the proof was made with it.
    pub fn is_well_formed(&self) -> bool {
        !self.subject.is_empty()
            && fingerprint(&self.public_key) == self.public_key_fingerprint
            && verify_possession(
                &self.public_key,
                &Self::signed_bytes(&self.subject, &self.public_key_fingerprint, &self.nonce),
                &self.proof,
            )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CertificateRecord {
    pub subject: String,
    pub issuer: String,
    pub serial: u64,
    pub not_before: Tick,
    pub not_after: Tick,
    pub public_key_fingerprint: Vec<u8>,
    pub signature: Vec<u8>,
}

impl CertificateRecord {
    fn tbs(&self) -> Vec<u8> {
        encode_fields(&[
            b"cert",
            self.subject.as_bytes(),
            self.issuer.as_bytes(),
            &self.serial.to_be_bytes(),
            &self.not_before.to_be_bytes(),
            &self.not_after.to_be_bytes(),
            &self.public_key_fingerprint,
        ])
    }
}

/// Signed bearer token presented by a proxy with its identity request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthToken {
    pub subject: String,
    pub audience: String,
    pub expiry: Tick,
    pub signature: Vec<u8>,
}

impl AuthToken {
    fn signed_bytes(&self) -> Vec<u8> {
        encode_fields(&[
            b"jwt",
            self.subject.as_bytes(),
            self.audience.as_bytes(),
            &self.expiry.to_be_bytes(),
        ])
    }
}

/// Identity → service mapping pushed to every proxy.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecureNaming {
    pub entries: BTreeMap<String, String>,
}

impl SecureNaming {
    pub fn service_of(&self, identity: &str) -> Option<&str> {
        self.entries.get(identity).map(String::as_str)
    }

    /// Identity allowed to run `service`.
    pub fn identity_for(&self, service: &str) -> Option<&str> {
        self.entries.iter().find(|(_, s)| *s == service).map(|(i, _)| i.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditKind {
    Bootstrap,
    Issue,
    Rotate,
    VerifyFail,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEvent {
    pub event: AuditKind,
    pub subject: String,
    pub serial: Option<u64>,
    pub tick: Tick,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifyFailure {
    #[error("signature does not verify")]
    BadSignature,
    #[error("certificate not yet valid")]
    NotYetValid,
    #[error("certificate expired")]
    Expired,
    #[error("certificate revoked")]
    Revoked,
    #[error("issuer is not this CA")]
    UnknownIssuer,
    #[error("secure naming does not map {identity} to {service}")]
    NamingMismatch { identity: String, service: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BootstrapError {
    #[error("step 1: unknown bootstrap token")]
    UnknownToken,
    #[error("step 1: bootstrap token secret mismatch")]
    BadSecret,
    #[error("step 1: bootstrap token expired")]
    TokenExpired,
    #[error("step 1: bootstrap token exhausted")]
    TokenExhausted,
    #[error("approval: CSR subject {csr} does not match credential {credential}")]
    SubjectMismatch { csr: String, credential: String },
    #[error("approval: CSR key fingerprint or proof does not match the requester keypair")]
    KeyMismatch,
    #[error("approval: rejected by approver")]
    Rejected,
    #[error("bootstrap step out of order: {0}")]
    OutOfOrder(&'static str),
    #[error(transparent)]
    Ca(#[from] IdentityError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IdentityError {
    #[error("CA unavailable; retry later")]
    CaUnavailable,
    #[error("token signature invalid")]
    BadToken,
    #[error("token expired")]
    TokenExpired,
    #[error("token audience {0} not accepted")]
    WrongAudience(String),
    #[error("token subject {token} does not match requested identity {requested}")]
    SubjectMismatch { token: String, requested: String },
    #[error("malformed CSR")]
    MalformedCsr,
    #[error("proxy has no identity to rotate")]
    NoIdentity,
}

impl IdentityError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, IdentityError::CaUnavailable)
    }
}

/// CSR approval: automatic, or an external decision hook.
pub enum Approval {
    Auto,
    Hook(Box<dyn Fn(&CertificateSigningRequest) -> bool + Send>),
}

impl std::fmt::Debug for Approval {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Approval::Auto => f.write_str("Auto"),
            Approval::Hook(_) => f.write_str("Hook(..)"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentityConfig {
    pub cert_lifetime: Tick,
    pub node_cert_lifetime: Tick,
}

impl Default for IdentityConfig {
    fn default() -> Self {
        Self { cert_lifetime: 1_000_000, node_cert_lifetime: 10_000_000 }
    }
}

#[derive(Debug)]
struct TokenRecord {
    secret: Vec<u8>,
    remaining: u32,
    expiry: Tick,
}

#[derive(Debug)]
struct PlaneState {
    rng: ChaCha8Rng,
    ca_available: bool,
    next_serial: u64,
    revoked: BTreeSet<u64>,
    tokens: BTreeMap<String, TokenRecord>,
    naming: SecureNaming,
    approval: Approval,
    audit: Vec<AuditEvent>,
}

/// Owner-controlled control plane: node controller, CA and token issuer.
#[derive(Debug)]
pub struct ControlPlane {
    name: String,
    config: IdentityConfig,
    ca_scheme: Box<dyn SignatureScheme>,
    token_scheme: Box<dyn SignatureScheme>,
    state: Mutex<PlaneState>,
}

impl ControlPlane {
    /// Control plane with keyed-MAC signatures derived from `seed`.
    pub fn new(config: IdentityConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ca_key = [0u8; 32];
        let mut token_key = [0u8; 32];
        rng.fill_bytes(&mut ca_key);
        rng.fill_bytes(&mut token_key);
        Self::with_schemes(
            config,
            rng,
            Box::new(HmacScheme::new(ca_key)),
            Box::new(HmacScheme::new(token_key)),
        )
    }

    pub fn with_schemes(
        config: IdentityConfig,
        rng: ChaCha8Rng,
        ca_scheme: Box<dyn SignatureScheme>,
        token_scheme: Box<dyn SignatureScheme>,
    ) -> Self {
        Self {
            name: "mesh-ca".into(),
            config,
            ca_scheme,
            token_scheme,
            state: Mutex::new(PlaneState {
                rng,
                ca_available: true,
                next_serial: 1,
                revoked: BTreeSet::new(),
                tokens: BTreeMap::new(),
                naming: SecureNaming::default(),
                approval: Approval::Auto,
                audit: Vec::new(),
            }),
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, PlaneState> {
        self.state.lock().expect("control plane lock")
    }

    pub fn issuer(&self) -> &str {
        &self.name
    }

    pub fn config(&self) -> IdentityConfig {
        self.config
    }

    /// Fresh keypair from the plane's deterministic generator.
    pub fn generate_keypair(&self) -> KeyPair {
        let mut seed = [0u8; 32];
        self.lock().rng.fill_bytes(&mut seed);
        KeyPair::from_seed(seed)
    }

    fn nonce(&self) -> Vec<u8> {
        let mut n = vec![0u8; 16];
        self.lock().rng.fill_bytes(&mut n);
        n
    }

    pub fn issue_bootstrap_token(&self, token_id: &str, usage_budget: u32, expiry: Tick) -> BootstrapToken {
        let mut st = self.lock();
        let mut secret = vec![0u8; 16];
        st.rng.fill_bytes(&mut secret);
        st.tokens.insert(
            token_id.to_owned(),
            TokenRecord { secret: secret.clone(), remaining: usage_budget, expiry },
        );
        BootstrapToken { token_id: token_id.to_owned(), secret, usage_budget, expiry }
    }

    pub fn remaining_budget(&self, token_id: &str) -> Option<u32> {
        self.lock().tokens.get(token_id).map(|t| t.remaining)
    }

    pub fn issue_jwt(&self, subject: &str, audience: &str, expiry: Tick) -> AuthToken {
        let mut t = AuthToken {
            subject: subject.to_owned(),
            audience: audience.to_owned(),
            expiry,
            signature: Vec::new(),
        };
        t.signature = self.token_scheme.sign(&t.signed_bytes());
        t
    }

    /// Records that `identity` runs `service` in the orchestrator's state.
    pub fn register_service(&self, identity: &str, service: &str) {
        self.lock().naming.entries.insert(identity.to_owned(), service.to_owned());
    }

    pub fn secure_naming(&self) -> SecureNaming {
        self.lock().naming.clone()
    }

    pub fn set_ca_available(&self, available: bool) {
        self.lock().ca_available = available;
    }

    pub fn set_approval(&self, approval: Approval) {
        self.lock().approval = approval;
    }

    pub fn revoke(&self, serial: u64) {
        self.lock().revoked.insert(serial);
    }

    pub fn audit_log(&self) -> Vec<AuditEvent> {
        self.lock().audit.clone()
    }

    pub fn audit_jsonl(&self) -> String {
        self.audit_log()
            .iter()
            .map(|e| serde_json::to_string(e).expect("audit event serializes") + "\n")
            .collect()
    }

    fn sign_certificate(
        &self,
        st: &mut PlaneState,
        subject: &str,
        fp: Vec<u8>,
        not_before: Tick,
        lifetime: Tick,
    ) -> Result<CertificateRecord, IdentityError> {
        if !st.ca_available {
            return Err(IdentityError::CaUnavailable);
        }
        let serial = st.next_serial;
        st.next_serial += 1;
        let mut cert = CertificateRecord {
            subject: subject.to_owned(),
            issuer: self.name.clone(),
            serial,
            not_before,
            not_after: not_before + lifetime.max(1),
            public_key_fingerprint: fp,
            signature: Vec::new(),
        };
        cert.signature = self.ca_scheme.sign(&cert.tbs());
        Ok(cert)
    }

    /// Signature, validity window, revocation and, when a service is
    /// claimed, secure-naming consistency.
    pub fn verify_cert(
        &self,
        cert: &CertificateRecord,
        now: Tick,
        claimed_service: Option<&str>,
    ) -> Result<(), VerifyFailure> {
        let result = self.check_cert(cert, now, claimed_service);
        if result.is_err() {
            self.lock().audit.push(AuditEvent {
                event: AuditKind::VerifyFail,
                subject: cert.subject.clone(),
                serial: Some(cert.serial),
                tick: now,
            });
        }
        result
    }

    fn check_cert(
        &self,
        cert: &CertificateRecord,
        now: Tick,
        claimed_service: Option<&str>,
    ) -> Result<(), VerifyFailure> {
        if cert.issuer != self.name {
            return Err(VerifyFailure::UnknownIssuer);
        }
        if !self.ca_scheme.verify(&cert.tbs(), &cert.signature) {
            return Err(VerifyFailure::BadSignature);
        }
        if now < cert.not_before {
            return Err(VerifyFailure::NotYetValid);
        }
        if now >= cert.not_after {
            return Err(VerifyFailure::Expired);
        }
        let st = self.lock();
        if st.revoked.contains(&cert.serial) {
            return Err(VerifyFailure::Revoked);
        }
        if let Some(service) = claimed_service {
            if st.naming.service_of(&cert.subject) != Some(service) {
                return Err(VerifyFailure::NamingMismatch {
                    identity: cert.subject.clone(),
                    service: service.to_owned(),
                });
            }
        }
        Ok(())
    }

    /// Runs the four bootstrap steps for `node`.
    pub fn kubelet_bootstrap(
        &self,
        node: &mut Node,
        token: &BootstrapToken,
        now: Tick,
    ) -> Result<CertificateRecord, BootstrapError> {
        let mut session = BootstrapSession::new(self, &node.name);
        session.authenticate(token, now)?;
        let csr = node.create_csr(self.nonce());
        session.submit_csr(csr)?;
        let cert = session.approve_and_issue(now)?;
        node.certificate = Some(cert.clone());
        node.state = NodeState::Operational;
        Ok(cert)
    }

    /// Steps A to C: the proxy sends its token to the node agent, the node
    /// agent generates the keypair and CSR, the CA authenticates and signs,
    /// and the node agent hands keypair and certificate to the proxy.
    pub fn proxy_identity_request(
        &self,
        proxy: &mut ProxyIdentity,
        jwt: &AuthToken,
        now: Tick,
    ) -> Result<CertificateRecord, IdentityError> {
        let key = self.generate_keypair();
        let csr = CertificateSigningRequest::new(&proxy.subject, &key, self.nonce());
        let cert = self.sign_csr_with_jwt(&csr, jwt, now, None)?;
        proxy.install(key, cert.clone());
        Ok(cert)
    }

    fn authenticate_jwt(&self, jwt: &AuthToken, now: Tick) -> Result<(), IdentityError> {
        if !self.token_scheme.verify(&jwt.signed_bytes(), &jwt.signature) {
            return Err(IdentityError::BadToken);
        }
        if now >= jwt.expiry {
            return Err(IdentityError::TokenExpired);
        }
        if jwt.audience != CA_AUDIENCE {
            return Err(IdentityError::WrongAudience(jwt.audience.clone()));
        }
        Ok(())
    }

    /// CA side of step B.
    pub fn sign_csr_with_jwt(
        &self,
        csr: &CertificateSigningRequest,
        jwt: &AuthToken,
        now: Tick,
        previous: Option<&CertificateRecord>,
    ) -> Result<CertificateRecord, IdentityError> {
        if !self.lock().ca_available {
            return Err(IdentityError::CaUnavailable);
        }
        self.authenticate_jwt(jwt, now)?;
        if jwt.subject != csr.subject {
            return Err(IdentityError::SubjectMismatch {
                token: jwt.subject.clone(),
                requested: csr.subject.clone(),
            });
        }
        if !csr.is_well_formed() {
            return Err(IdentityError::MalformedCsr);
        }
        let not_before = previous.map_or(now, |old| now.max(old.not_before + 1));
        let mut st = self.lock();
        let cert = self.sign_certificate(
            &mut st,
            &csr.subject,
            csr.public_key_fingerprint.clone(),
            not_before,
            self.config.cert_lifetime,
        )?;
        let kind = if let Some(old) = previous {
            st.revoked.insert(old.serial);
            AuditKind::Rotate
        } else {
            AuditKind::Issue
        };
        st.audit.push(AuditEvent { event: kind, subject: cert.subject.clone(), serial: Some(cert.serial), tick: now });
        Ok(cert)
    }

    /// New keypair and certificate; the old certificate is revoked for new
    /// handshakes. On failure the proxy keeps its current identity.
    pub fn rotate(
        &self,
        proxy: &mut ProxyIdentity,
        jwt: &AuthToken,
        now: Tick,
    ) -> Result<CertificateRecord, IdentityError> {
        let old = proxy.certificate.clone().ok_or(IdentityError::NoIdentity)?;
        let key = self.generate_keypair();
        let csr = CertificateSigningRequest::new(&proxy.subject, &key, self.nonce());
        let cert = self.sign_csr_with_jwt(&csr, jwt, now, Some(&old))?;
        proxy.install(key, cert.clone());
        Ok(cert)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BootstrapStep {
    /// Waiting for the token (step 1).
    Unauthenticated,
    /// Holding CSR-only credentials (step 2).
    LimitedCredentials,
    /// CSR sent to the controller manager (step 3).
    CsrSubmitted,
    /// Certificate delivered (step 4).
    Issued,
}

/// Kubelet TLS bootstrap as an explicit state machine.
#[derive(Debug)]
pub struct BootstrapSession<'a> {
    plane: &'a ControlPlane,
    node: String,
    step: BootstrapStep,
    csr: Option<CertificateSigningRequest>,
}

impl<'a> BootstrapSession<'a> {
    pub fn new(plane: &'a ControlPlane, node: &str) -> Self {
        Self { plane, node: node.to_owned(), step: BootstrapStep::Unauthenticated, csr: None }
    }

    pub fn step(&self) -> BootstrapStep {
        self.step
    }

    /// Node identity the limited credentials are bound to.
    pub fn credential_subject(&self) -> String {
        node_subject(&self.node)
    }

    /// Step 1 and 2: the token is checked and one use is consumed atomically.
    pub fn authenticate(&mut self, token: &BootstrapToken, now: Tick) -> Result<(), BootstrapError> {
        if self.step != BootstrapStep::Unauthenticated {
            return Err(BootstrapError::OutOfOrder("already authenticated"));
        }
        let mut st = self.plane.lock();
        let rec = st.tokens.get_mut(&token.token_id).ok_or(BootstrapError::UnknownToken)?;
        if rec.secret != token.secret {
            return Err(BootstrapError::BadSecret);
        }
        if now >= rec.expiry {
            return Err(BootstrapError::TokenExpired);
        }
        if rec.remaining == 0 {
            return Err(BootstrapError::TokenExhausted);
        }
        rec.remaining -= 1;
        self.step = BootstrapStep::LimitedCredentials;
        Ok(())
    }

    /// Step 3.
    pub fn submit_csr(&mut self, csr: CertificateSigningRequest) -> Result<(), BootstrapError> {
        if self.step != BootstrapStep::LimitedCredentials {
            return Err(BootstrapError::OutOfOrder("CSR requires limited credentials"));
        }
        self.csr = Some(csr);
        self.step = BootstrapStep::CsrSubmitted;
        Ok(())
    }

    /// Approval and step 4.
    pub fn approve_and_issue(&mut self, now: Tick) -> Result<CertificateRecord, BootstrapError> {
        if self.step != BootstrapStep::CsrSubmitted {
            return Err(BootstrapError::OutOfOrder("no CSR submitted"));
        }
        let csr = self.csr.take().expect("CSR present after submission");
        let credential = self.credential_subject();
        if csr.subject != credential {
            return Err(BootstrapError::SubjectMismatch { csr: csr.subject, credential });
        }
        if !csr.is_well_formed() {
            return Err(BootstrapError::KeyMismatch);
        }
        let mut st = self.plane.lock();
        let approved = match &st.approval {
            Approval::Auto => true,
            Approval::Hook(f) => f(&csr),
        };
        if !approved {
            return Err(BootstrapError::Rejected);
        }
        let lifetime = self.plane.config.node_cert_lifetime;
        let cert = self.plane.sign_certificate(&mut st, &csr.subject, csr.public_key_fingerprint, now, lifetime)?;
        st.audit.push(AuditEvent {
            event: AuditKind::Bootstrap,
            subject: cert.subject.clone(),
            serial: Some(cert.serial),
            tick: now,
        });
        self.step = BootstrapStep::Issued;
        Ok(cert)
    }
}

pub fn node_subject(node: &str) -> String {
    format!("system:node:{node}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeState {
    Bootstrapping,
    Operational,
}

/// A worker machine running a kubelet and a node agent.
#[derive(Debug, Clone)]
pub struct Node {
    pub name: String,
    pub state: NodeState,
    keypair: KeyPair,
    pub certificate: Option<CertificateRecord>,
}

impl Node {
    pub fn new(name: &str, keypair: KeyPair) -> Self {
        Self { name: name.to_owned(), state: NodeState::Bootstrapping, keypair, certificate: None }
    }

    pub fn create_csr(&self, nonce: Vec<u8>) -> CertificateSigningRequest {
        CertificateSigningRequest::new(&node_subject(&self.name), &self.keypair, nonce)
    }

    pub fn is_operational(&self) -> bool {
        self.state == NodeState::Operational
    }
}

/// Workload identity held by a proxy.
#[derive(Debug, Clone)]
pub struct ProxyIdentity {
    pub subject: String,
    keypair: Option<KeyPair>,
    pub certificate: Option<CertificateRecord>,
}

impl ProxyIdentity {
    pub fn new(subject: &str) -> Self {
        Self { subject: subject.to_owned(), keypair: None, certificate: None }
    }

    fn install(&mut self, key: KeyPair, cert: CertificateRecord) {
        self.keypair = Some(key);
        self.certificate = Some(cert);
    }

    pub fn has_identity(&self) -> bool {
        self.keypair.is_some() && self.certificate.is_some()
    }

    pub fn public_key(&self) -> Option<[u8; 32]> {
        self.keypair.as_ref().map(KeyPair::public_key)
    }

    /// Proof of possession over a handshake transcript.
    pub fn sign(&self, message: &[u8]) -> Option<Vec<u8>> {
        self.keypair.as_ref().map(|k| k.sign(message))
    }
}
