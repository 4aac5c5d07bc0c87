//! The rule engine: user portfolio, role definitions, measure policies and
//! the access history.
//!
//! Reads take a snapshot of the current state and never block each other.
//! Administrative writes are serialized, validated against a copy of the
//! state, persisted (write-temp-then-rename) and only then swapped in.

mod audit;
mod model;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

pub use audit::{AuditAction, AuditEntry, AuditError, AuditFilter, AuditLog, AuditRecord, Outcome};
pub use model::{api_key_digest, PolicySet, Portfolio, ResolvedSpec, RoleDef, UserProfile};

use crate::policy::{
    seeded_offset, validate_policy, MeasurePolicy, OffsetMode, PolicyRules, PrivilegeLevel, SeedInput,
};

#[derive(Debug, thiserror::Error)]
pub enum RuleError {
    #[error("unknown user {0:?}")]
    UnknownUser(String),
    #[error("unknown measure {0:?}")]
    UnknownMeasure(String),
    #[error("unknown role {0:?}")]
    UnknownRole(String),
    #[error("user {0:?} is inactive")]
    InactiveUser(String),
    #[error("access denied: {0}")]
    AccessDenied(String),
    #[error("identifier column {0:?} requires a role that may see identifiers")]
    IdentifierForbidden(String),
    #[error("administrator credentials required")]
    NotAdministrator,
    #[error("validation failed: {}", .0.join("; "))]
    ValidationFailed(Vec<String>),
    #[error(transparent)]
    Audit(#[from] AuditError),
    #[error("{path}: {message}")]
    Store { path: PathBuf, message: String },
}

/// Who is asking for an administrative operation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Actor {
    Admin,
    User(String),
}

impl Actor {
    fn audit_name(&self) -> &str {
        match self {
            Actor::Admin => "admin",
            Actor::User(id) => id,
        }
    }
}

/// Configurable governance floors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GovernanceRules {
    pub policy: PolicyRules,
    /// Lowest privilege whose roles may be granted identifier columns.
    pub identifier_floor: PrivilegeLevel,
}

impl Default for GovernanceRules {
    fn default() -> Self {
        GovernanceRules { policy: PolicyRules::default(), identifier_floor: PrivilegeLevel::High }
    }
}

/// One access decision to make: a measure plus the other columns the
/// request touches.
#[derive(Debug, Clone, Default)]
pub struct AccessRequest {
    pub user_id: String,
    pub measure_id: String,
    pub dimensions: Vec<String>,
    pub identifiers: Vec<String>,
    pub query_digest: String,
}

#[derive(Debug, Clone)]
pub struct StorePaths {
    pub policies: PathBuf,
    pub portfolio: PathBuf,
}

impl StorePaths {
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        StorePaths { policies: dir.join("policies.json"), portfolio: dir.join("portfolio.json") }
    }
}

#[derive(Debug, Clone, Default)]
struct State {
    roles: BTreeMap<String, RoleDef>,
    users: BTreeMap<String, UserProfile>,
    policies: BTreeMap<String, MeasurePolicy>,
    salt: Vec<u8>,
}

impl State {
    fn build(portfolio: Portfolio, policies: PolicySet, rules: &GovernanceRules) -> Result<Self, RuleError> {
        let mut problems = Vec::new();
        let salt =
            hex::decode(&policies.salt_hex).map_err(|e| RuleError::ValidationFailed(vec![format!("salt_hex: {e}")]))?;
        let mut state = State { salt, ..Default::default() };
        for role in portfolio.roles {
            problems.extend(check_role(&role, rules));
            if state.roles.insert(role.role_id.clone(), role).is_some() {
                problems.push("duplicate role_id".to_string());
            }
        }
        for user in portfolio.users {
            if !state.roles.contains_key(&user.role_id) {
                problems.push(format!("user {:?} references unknown role {:?}", user.user_id, user.role_id));
            }
            let id = user.user_id.clone();
            if state.users.insert(id.clone(), user).is_some() {
                problems.push(format!("duplicate user_id {id:?}"));
            }
        }
        for policy in policies.measures {
            problems.extend(
                validate_policy(&policy, &rules.policy).into_iter().map(|v| format!("{}: {v}", policy.measure_id)),
            );
            let id = policy.measure_id.clone();
            if state.policies.insert(id.clone(), policy).is_some() {
                problems.push(format!("duplicate measure_id {id:?}"));
            }
        }
        if problems.is_empty() {
            Ok(state)
        } else {
            Err(RuleError::ValidationFailed(problems))
        }
    }

    fn portfolio(&self) -> Portfolio {
        Portfolio { roles: self.roles.values().cloned().collect(), users: self.users.values().cloned().collect() }
    }

    fn policy_set(&self) -> PolicySet {
        PolicySet { salt_hex: hex::encode(&self.salt), measures: self.policies.values().cloned().collect() }
    }
}

fn check_role(role: &RoleDef, rules: &GovernanceRules) -> Vec<String> {
    let mut out = Vec::new();
    if role.role_id.is_empty() {
        out.push("role_id must not be empty".to_string());
    }
    if role.may_see_identifiers && role.privilege < rules.identifier_floor {
        out.push(format!("role {:?}: identifiers require privilege {} or above", role.role_id, rules.identifier_floor));
    }
    out
}

pub struct RuleEngine {
    state: RwLock<Arc<State>>,
    writer: Mutex<()>,
    audit: AuditLog,
    store: Option<StorePaths>,
    rules: GovernanceRules,
}

impl RuleEngine {
    /// An engine that keeps everything in memory.
    pub fn new(
        portfolio: Portfolio,
        policies: PolicySet,
        audit: AuditLog,
        rules: GovernanceRules,
    ) -> Result<Self, RuleError> {
        let state = State::build(portfolio, policies, &rules)?;
        Ok(RuleEngine { state: RwLock::new(Arc::new(state)), writer: Mutex::new(()), audit, store: None, rules })
    }

    /// Loads `policies.json` and `portfolio.json`; missing files start empty
    /// (with a fresh random salt) and are written on first change.
    pub fn open(paths: StorePaths, audit: AuditLog, rules: GovernanceRules) -> Result<Self, RuleError> {
        let portfolio: Portfolio = read_json(&paths.portfolio)?.unwrap_or_default();
        let policies: PolicySet = match read_json(&paths.policies)? {
            Some(p) => p,
            None => PolicySet { salt_hex: hex::encode(rand::random::<[u8; 16]>()), measures: Vec::new() },
        };
        let state = State::build(portfolio, policies, &rules)?;
        if !paths.policies.exists() {
            write_json_atomic(&paths.policies, &state.policy_set())?;
        }
        Ok(RuleEngine { state: RwLock::new(Arc::new(state)), writer: Mutex::new(()), audit, store: Some(paths), rules })
    }

    fn snapshot(&self) -> Arc<State> {
        self.state.read().clone()
    }

    pub fn rules(&self) -> &GovernanceRules {
        &self.rules
    }

    pub fn user(&self, user_id: &str) -> Option<UserProfile> {
        self.snapshot().users.get(user_id).cloned()
    }

    pub fn role(&self, role_id: &str) -> Option<RoleDef> {
        self.snapshot().roles.get(role_id).cloned()
    }

    /// Role currently bound to `user_id`.
    pub fn role_of(&self, user_id: &str) -> Option<RoleDef> {
        let state = self.snapshot();
        state.users.get(user_id).and_then(|u| state.roles.get(&u.role_id)).cloned()
    }

    pub fn policy(&self, measure_id: &str) -> Option<MeasurePolicy> {
        self.snapshot().policies.get(measure_id).cloned()
    }

    pub fn portfolio(&self) -> Portfolio {
        self.snapshot().portfolio()
    }

    pub fn policy_set(&self) -> PolicySet {
        self.snapshot().policy_set()
    }

    /// Finds the user whose `api_key_digest` matches `token`.
    pub fn authenticate(&self, token: &str) -> Option<UserProfile> {
        let digest = api_key_digest(token);
        self.snapshot().users.values().find(|u| u.api_key_digest == digest).cloned()
    }

    /// Resolves the range spec for `(user, measure)` and records the decision.
    pub fn resolve(&self, user_id: &str, measure_id: &str) -> Result<ResolvedSpec, RuleError> {
        self.authorize(&AccessRequest {
            user_id: user_id.to_string(),
            measure_id: measure_id.to_string(),
            query_digest: crate::digest_hex(format!("{user_id}\n{measure_id}").as_bytes()),
            ..Default::default()
        })
    }

    /// Full access decision for a request. Appends exactly one audit entry
    /// whenever the user exists.
    pub fn authorize(&self, req: &AccessRequest) -> Result<ResolvedSpec, RuleError> {
        let state = self.snapshot();
        let user = state.users.get(&req.user_id).ok_or_else(|| RuleError::UnknownUser(req.user_id.clone()))?;
        let decision = decide(&state, user, req);
        let (outcome, action, detail) = match &decision {
            Ok(spec) => {
                (Outcome::Allow, AuditAction::Query, format!("role {} privilege {}", spec.role_id, spec.privilege))
            }
            Err(e) => (Outcome::Deny, AuditAction::Denied, e.to_string()),
        };
        self.audit.append(AuditRecord {
            user_id: req.user_id.clone(),
            action,
            measure_ids: vec![req.measure_id.clone()],
            query_digest: req.query_digest.clone(),
            outcome,
            detail,
        })?;
        decision
    }

    /// Records a refused request that never reached [`RuleEngine::authorize`].
    pub fn record_denied(
        &self,
        who: &str,
        measure_ids: Vec<String>,
        query_digest: String,
        detail: String,
    ) -> Result<(), RuleError> {
        self.audit.append(AuditRecord {
            user_id: who.to_string(),
            action: AuditAction::Denied,
            measure_ids,
            query_digest,
            outcome: Outcome::Deny,
            detail,
        })?;
        Ok(())
    }

    pub fn upsert_user(&self, actor: &Actor, profile: UserProfile) -> Result<(), RuleError> {
        let detail = format!("upsert user {}", profile.user_id);
        self.mutate(actor, detail, |state| {
            if profile.user_id.is_empty() {
                return Err(RuleError::ValidationFailed(vec!["user_id must not be empty".into()]));
            }
            if !state.roles.contains_key(&profile.role_id) {
                return Err(RuleError::UnknownRole(profile.role_id.clone()));
            }
            if !is_hex_digest(&profile.api_key_digest) {
                return Err(RuleError::ValidationFailed(vec![
                    "api_key_digest must be 64 lowercase hex characters".into()
                ]));
            }
            let clash = state
                .users
                .values()
                .any(|u| u.user_id != profile.user_id && u.api_key_digest == profile.api_key_digest);
            if clash {
                return Err(RuleError::ValidationFailed(vec!["api key already in use".into()]));
            }
            state.users.insert(profile.user_id.clone(), profile);
            Ok(Persist::Portfolio)
        })
    }

    pub fn set_role(&self, actor: &Actor, user_id: &str, role_id: &str) -> Result<(), RuleError> {
        self.mutate(actor, format!("set role of {user_id} to {role_id}"), |state| {
            if !state.roles.contains_key(role_id) {
                return Err(RuleError::UnknownRole(role_id.to_string()));
            }
            let user = state.users.get_mut(user_id).ok_or_else(|| RuleError::UnknownUser(user_id.to_string()))?;
            user.role_id = role_id.to_string();
            Ok(Persist::Portfolio)
        })
    }

    pub fn upsert_role(&self, actor: &Actor, role: RoleDef) -> Result<(), RuleError> {
        let rules = self.rules;
        self.mutate(actor, format!("upsert role {}", role.role_id), |state| {
            let problems = check_role(&role, &rules);
            if !problems.is_empty() {
                return Err(RuleError::ValidationFailed(problems));
            }
            state.roles.insert(role.role_id.clone(), role);
            Ok(Persist::Portfolio)
        })
    }

    pub fn upsert_policy(&self, actor: &Actor, policy: MeasurePolicy) -> Result<(), RuleError> {
        let rules = self.rules;
        self.mutate(actor, format!("upsert policy {}", policy.measure_id), |state| {
            let violations = validate_policy(&policy, &rules.policy);
            if !violations.is_empty() {
                return Err(RuleError::ValidationFailed(violations.iter().map(|v| v.to_string()).collect()));
            }
            state.policies.insert(policy.measure_id.clone(), policy);
            Ok(Persist::Policies)
        })
    }

    pub fn list_audit(&self, actor: &Actor, filter: &AuditFilter) -> Result<Vec<AuditEntry>, RuleError> {
        if *actor != Actor::Admin {
            return Err(RuleError::NotAdministrator);
        }
        Ok(self.audit.list(filter))
    }

    pub fn audit_log(&self) -> &AuditLog {
        &self.audit
    }

    fn mutate(
        &self,
        actor: &Actor,
        detail: String,
        change: impl FnOnce(&mut State) -> Result<Persist, RuleError>,
    ) -> Result<(), RuleError> {
        if *actor != Actor::Admin {
            self.record_denied(actor.audit_name(), Vec::new(), String::new(), format!("not administrator: {detail}"))?;
            return Err(RuleError::NotAdministrator);
        }
        let _guard = self.writer.lock();
        let mut next = (*self.snapshot()).clone();
        let what = change(&mut next)?;
        if let Some(paths) = &self.store {
            match what {
                Persist::Portfolio => write_json_atomic(&paths.portfolio, &next.portfolio())?,
                Persist::Policies => write_json_atomic(&paths.policies, &next.policy_set())?,
            }
        }
        *self.state.write() = Arc::new(next);
        self.audit.append(AuditRecord {
            user_id: actor.audit_name().to_string(),
            action: AuditAction::AdminChange,
            measure_ids: Vec::new(),
            query_digest: String::new(),
            outcome: Outcome::Allow,
            detail,
        })?;
        Ok(())
    }
}

enum Persist {
    Portfolio,
    Policies,
}

fn decide(state: &State, user: &UserProfile, req: &AccessRequest) -> Result<ResolvedSpec, RuleError> {
    if !user.active {
        return Err(RuleError::InactiveUser(user.user_id.clone()));
    }
    let role = state.roles.get(&user.role_id).ok_or_else(|| RuleError::UnknownRole(user.role_id.clone()))?;
    let policy =
        state.policies.get(&req.measure_id).ok_or_else(|| RuleError::UnknownMeasure(req.measure_id.clone()))?;
    if !role.allowed_measures.contains(&req.measure_id) {
        return Err(RuleError::AccessDenied(format!(
            "role {:?} may not read measure {:?}",
            role.role_id, req.measure_id
        )));
    }
    if let Some(dim) = req.dimensions.iter().find(|d| !role.allowed_dimensions.contains(*d)) {
        return Err(RuleError::AccessDenied(format!("role {:?} may not use dimension {dim:?}", role.role_id)));
    }
    if let Some(id) = req.identifiers.first() {
        if !role.may_see_identifiers {
            return Err(RuleError::IdentifierForbidden(id.clone()));
        }
    }
    let spec = policy.spec_for(role.privilege).ok_or_else(|| RuleError::UnknownMeasure(req.measure_id.clone()))?;
    let offset = match spec.offset_mode {
        OffsetMode::Fixed(offset) => offset,
        OffsetMode::UserSeeded => seeded_offset(
            SeedInput {
                user_id: &user.user_id,
                role_id: &role.role_id,
                privilege: role.privilege,
                measure_id: &policy.measure_id,
                salt: &state.salt,
            },
            spec.width,
            policy.granularity,
        )
        .map_err(|e| RuleError::ValidationFailed(vec![e.to_string()]))?,
    };
    Ok(ResolvedSpec {
        measure_id: req.measure_id.clone(),
        width: spec.width,
        offset,
        privilege: role.privilege,
        role_id: role.role_id.clone(),
        resolved_for: user.user_id.clone(),
    })
}

fn is_hex_digest(s: &str) -> bool {
    s.len() == 64 && s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Option<T>, RuleError> {
    let store = |message: String| RuleError::Store { path: path.to_path_buf(), message };
    match std::fs::read(path) {
        Ok(bytes) => serde_json::from_slice(&bytes).map(Some).map_err(|e| store(e.to_string())),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(store(e.to_string())),
    }
}

/// Writes `value` as pretty JSON next to `path` and renames it into place.
/// Writes pretty JSON to a temp file beside `path`, syncs, then renames.
pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<(), RuleError> {
    let store = |message: String| RuleError::Store { path: path.to_path_buf(), message };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir).map_err(|e| store(e.to_string()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| store(e.to_string()))?;
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| store(e.to_string()))?;
    bytes.push(b'\n');
    std::io::Write::write_all(&mut tmp, &bytes).map_err(|e| store(e.to_string()))?;
    tmp.as_file().sync_all().map_err(|e| store(e.to_string()))?;
    tmp.persist(path).map_err(|e| store(e.to_string()))?;
    Ok(())
}
