//! Deterministic, scripted multi-node harness.
//!
//! Every stakeholder in the roster runs a node holding its own ledger copy.
//! Events execute one at a time in tick order; broadcast is lossless and
//! instant. All randomness (device entropy, sealed-box ephemeral keys,
//! validator draws, pass nonces) comes from one seeded stream drawn in a fixed
//! order, so a config and script always produce byte-identical reports.
//!
//! Individuals are simulated as devices keyed by phone number. The phone
//! number only ever feeds identity derivation; the harness keeps the
//! resulting key pair, never writes the number anywhere else.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use chrono::{NaiveDate, NaiveDateTime, TimeDelta};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::blockpipe::{genesis, BlockMiner, BlockThreshold, PipelineError};
use crate::crypto::{decode_hex, hash, Digest, KeyPair, PrivateKey, PublicKey};
use crate::geoalert::{classify, GeoPoint, DEFAULT_NEAR_MARGIN_M};
use crate::identity::init_identity;
use crate::ledger::NodeLedger;
use crate::roles::{Role, RoleRegistry};
use crate::txmodel::{
    make_individual_tx, make_location_tx, CovidStatus, EpidRecord, IndividualTx, LocationTx,
    RecordTime, Transaction, TxError, ZoneType,
};
use crate::verifypass::{check_response, decide_access, issue_challenge, respond};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("script error at event {index}: {msg}")]
    Script { index: usize, msg: String },
    #[error("script line {line}: {msg}")]
    ScriptLine { line: usize, msg: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RosterEntry {
    pub name: String,
    pub role: Role,
    pub identity_seed: [u8; 32],
}

impl RosterEntry {
    /// Identity seed derived from the node name.
    pub fn named(name: &str, role: Role) -> Self {
        RosterEntry {
            name: name.to_owned(),
            role,
            identity_seed: *hash(format!("covidchain/node/{name}").as_bytes()).as_bytes(),
        }
    }

    pub fn keys(&self) -> KeyPair {
        KeyPair::from_private(PrivateKey::from_bytes(self.identity_seed))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub seed: u64,
    pub roster: Vec<RosterEntry>,
    pub block_threshold: BlockThreshold,
    pub near_margin: f64,
}

impl SimConfig {
    /// Eight nodes: miner, three validators, testing centre, hospital,
    /// law-enforcement agency and the Central Authority.
    pub fn default_roster() -> Vec<RosterEntry> {
        [
            ("miner", Role::Miner),
            ("val1", Role::Validator),
            ("val2", Role::Validator),
            ("val3", Role::Validator),
            ("tc1", Role::TestingCenter),
            ("hosp1", Role::Hospital),
            ("lea1", Role::LawEnforcement),
            ("ca", Role::CentralAuthority),
        ]
        .into_iter()
        .map(|(n, r)| RosterEntry::named(n, r))
        .collect()
    }

    pub fn with_seed(seed: u64) -> Self {
        SimConfig {
            seed,
            roster: SimConfig::default_roster(),
            block_threshold: BlockThreshold::default(),
            near_margin: DEFAULT_NEAR_MARGIN_M,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let count = |role| self.roster.iter().filter(|e| e.role == role).count();
        if count(Role::Miner) != 1 {
            return Err(SimError::Config("roster needs exactly one miner".into()));
        }
        if count(Role::Validator) < 2 {
            return Err(SimError::Config("roster needs at least two validators".into()));
        }
        if count(Role::CentralAuthority) > 1 {
            return Err(SimError::Config("at most one central authority".into()));
        }
        let mut names: Vec<&str> = self.roster.iter().map(|e| e.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(SimError::Config("node names must be unique".into()));
        }
        if self.near_margin.is_nan() || self.near_margin < 0.0 {
            return Err(SimError::Config("near margin must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    SubmitTest {
        center: String,
        subject: String,
        status: CovidStatus,
        epid: EpidRecord,
        at: Option<RecordTime>,
    },
    SubmitZone {
        authority: String,
        lat: f64,
        lon: f64,
        radius_m: i64,
        zone_type: ZoneType,
        at: Option<RecordTime>,
    },
    /// The verifier reads `node`'s ledger; `forge` attaches a foreign public
    /// key to the subject's response.
    VerifyPass { node: String, subject: String, forge: bool },
    QueryStatus { node: String, subject: String },
    GeoQuery { node: String, lat: f64, lon: f64, margin: Option<f64> },
    /// Alters one byte of block `height` in `node`'s stored copy.
    Tamper { node: String, height: u64 },
}

impl Action {
    pub fn name(&self) -> &'static str {
        match self {
            Action::SubmitTest { .. } => "SUBMIT_TEST",
            Action::SubmitZone { .. } => "SUBMIT_ZONE",
            Action::VerifyPass { .. } => "VERIFY_PASS",
            Action::QueryStatus { .. } => "QUERY_STATUS",
            Action::GeoQuery { .. } => "GEO_QUERY",
            Action::Tamper { .. } => "TAMPER",
        }
    }

    /// The script-line form of this action's parameters.
    fn params(&self) -> Vec<(&'static str, String)> {
        let at = |at: &Option<RecordTime>| {
            at.map(|t| vec![("date", t.date_token()), ("time", t.time_token())]).unwrap_or_default()
        };
        match self {
            Action::SubmitTest { center, subject, status, epid, at: t } => {
                let mut p = vec![
                    ("center", center.clone()),
                    ("subject", subject.clone()),
                    ("status", status.token().to_owned()),
                    ("epid", epid.canonical()),
                ];
                p.extend(at(t));
                p
            }
            Action::SubmitZone { authority, lat, lon, radius_m, zone_type, at: t } => {
                let mut p = vec![
                    ("authority", authority.clone()),
                    ("lat", lat.to_string()),
                    ("lon", lon.to_string()),
                    ("radius", radius_m.to_string()),
                    ("type", zone_type.token().to_owned()),
                ];
                p.extend(at(t));
                p
            }
            Action::VerifyPass { node, subject, forge } => {
                let mut p = vec![("node", node.clone()), ("subject", subject.clone())];
                if *forge {
                    p.push(("forge", "1".into()));
                }
                p
            }
            Action::QueryStatus { node, subject } => {
                vec![("node", node.clone()), ("subject", subject.clone())]
            }
            Action::GeoQuery { node, lat, lon, margin } => {
                let mut p = vec![("node", node.clone()), ("lat", lat.to_string()), ("lon", lon.to_string())];
                if let Some(m) = margin {
                    p.push(("margin", m.to_string()));
                }
                p
            }
            Action::Tamper { node, height } => {
                vec![("node", node.clone()), ("height", height.to_string())]
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioEvent {
    pub at: u64,
    pub action: Action,
}

impl ScenarioEvent {
    pub fn new(at: u64, action: Action) -> Self {
        ScenarioEvent { at, action }
    }

    /// `tick|ACTION|k=v|k=v...`
    pub fn to_line(&self) -> String {
        let mut out = format!("{}|{}", self.at, self.action.name());
        for (k, v) in self.action.params() {
            let _ = write!(out, "|{k}={v}");
        }
        out
    }
}

/// A parsed script file: optional roster/config directives plus events.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Scenario {
    pub roster: Vec<RosterEntry>,
    pub block_threshold: Option<BlockThreshold>,
    pub near_margin: Option<f64>,
    pub events: Vec<ScenarioEvent>,
}

impl Scenario {
    /// Builds the run configuration: the script's roster if it declares one,
    /// the default roster otherwise.
    pub fn config(&self, seed: u64) -> SimConfig {
        let mut cfg = SimConfig::with_seed(seed);
        if !self.roster.is_empty() {
            cfg.roster = self.roster.clone();
        }
        if let Some(t) = self.block_threshold {
            cfg.block_threshold = t;
        }
        if let Some(m) = self.near_margin {
            cfg.near_margin = m;
        }
        cfg
    }

    /// Line-oriented script: `tick|ACTION|k=v|...` events, plus optional
    /// `@node|name=<n>|role=<role>[|seed=<hex>]` and
    /// `@config|threshold=<count:N|bytes:N>|margin=<m>` directives. Blank
    /// lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self, SimError> {
        let mut sc = Scenario::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let index = sc.events.len();
            let lerr = |msg: String| SimError::ScriptLine { line: i + 1, msg };
            let mut fields = line.split('|');
            let head = fields.next().unwrap_or_default();
            let kv = parse_kv(fields).map_err(lerr)?;
            match head {
                "@node" => {
                    let name = kv.req("name").map_err(lerr)?.to_owned();
                    let role: Role = kv.req("role").map_err(lerr)?.parse().map_err(|e: crate::roles::RoleError| lerr(e.to_string()))?;
                    let mut entry = RosterEntry::named(&name, role);
                    if let Some(s) = kv.get("seed") {
                        let bytes = decode_hex(s).map_err(|e| lerr(e.to_string()))?;
                        entry.identity_seed =
                            bytes.try_into().map_err(|_| lerr("seed must be 32 bytes".into()))?;
                    }
                    sc.roster.push(entry);
                }
                "@config" => {
                    if let Some(t) = kv.get("threshold") {
                        sc.block_threshold = Some(parse_threshold(t).map_err(lerr)?);
                    }
                    if let Some(m) = kv.get("margin") {
                        sc.near_margin = Some(m.parse().map_err(|_| lerr(format!("margin {m:?}")))?);
                    }
                }
                tick => {
                    let serr = |msg: String| SimError::Script { index, msg };
                    let at: u64 = tick.parse().map_err(|_| serr(format!("bad tick {tick:?}")))?;
                    let name = line.split('|').nth(1).unwrap_or_default();
                    let action = parse_action(name, &kv).map_err(serr)?;
                    sc.events.push(ScenarioEvent { at, action });
                }
            }
        }
        Ok(sc)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.roster {
            let _ = writeln!(
                out,
                "@node|name={}|role={}|seed={}",
                e.name,
                e.role,
                hex::encode(e.identity_seed)
            );
        }
        if self.block_threshold.is_some() || self.near_margin.is_some() {
            out.push_str("@config");
            match self.block_threshold {
                Some(BlockThreshold::Count(n)) => {
                    let _ = write!(out, "|threshold=count:{n}");
                }
                Some(BlockThreshold::Bytes(n)) => {
                    let _ = write!(out, "|threshold=bytes:{n}");
                }
                None => {}
            }
            if let Some(m) = self.near_margin {
                let _ = write!(out, "|margin={m}");
            }
            out.push('\n');
        }
        for e in &self.events {
            out.push_str(&e.to_line());
            out.push('\n');
        }
        out
    }
}

struct Params<'a>(Vec<(&'a str, &'a str)>);

impl<'a> Params<'a> {
    fn get(&self, key: &str) -> Option<&'a str> {
        self.0.iter().find(|(k, _)| *k == key).map(|(_, v)| *v)
    }

    fn req(&self, key: &str) -> Result<&'a str, String> {
        self.get(key).ok_or_else(|| format!("missing parameter {key}"))
    }

    fn num<T: std::str::FromStr>(&self, key: &str) -> Result<T, String> {
        let v = self.req(key)?;
        v.parse().map_err(|_| format!("parameter {key}={v:?} is not a number"))
    }

    fn opt_num<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, String> {
        self.get(key).map(|_| self.num(key)).transpose()
    }

    fn at(&self) -> Result<Option<RecordTime>, String> {
        match (self.get("date"), self.get("time")) {
            (None, None) => Ok(None),
            (Some(d), Some(t)) => RecordTime::parse(d, t).map(Some).map_err(|e| e.to_string()),
            _ => Err("date and time must be given together".into()),
        }
    }
}

fn parse_kv<'a>(fields: impl Iterator<Item = &'a str>) -> Result<Params<'a>, String> {
    let mut out = Vec::new();
    for f in fields {
        if !f.contains('=') {
            // the action name
            if out.is_empty() && f.chars().all(|c| c.is_ascii_uppercase() || c == '_') {
                continue;
            }
            return Err(format!("expected k=v, got {f:?}"));
        }
        let (k, v) = f.split_once('=').expect("checked");
        out.push((k, v));
    }
    Ok(Params(out))
}

fn parse_threshold(s: &str) -> Result<BlockThreshold, String> {
    let bad = || format!("threshold {s:?}: expected count:N or bytes:N");
    let (mode, n) = s.split_once(':').ok_or_else(bad)?;
    let n: usize = n.parse().map_err(|_| bad())?;
    match mode {
        "count" if n > 0 => Ok(BlockThreshold::Count(n)),
        "bytes" if n > 0 => Ok(BlockThreshold::Bytes(n)),
        _ => Err(bad()),
    }
}

fn parse_action(name: &str, p: &Params<'_>) -> Result<Action, String> {
    let txt = |e: TxError| e.to_string();
    Ok(match name {
        "SUBMIT_TEST" => Action::SubmitTest {
            center: p.req("center")?.to_owned(),
            subject: p.req("subject")?.to_owned(),
            status: p.req("status")?.parse().map_err(txt)?,
            epid: EpidRecord::parse(p.req("epid")?).map_err(txt)?,
            at: p.at()?,
        },
        "SUBMIT_ZONE" => Action::SubmitZone {
            authority: p.req("authority")?.to_owned(),
            lat: p.num("lat")?,
            lon: p.num("lon")?,
            radius_m: p.num("radius")?,
            zone_type: p.req("type")?.parse().map_err(txt)?,
            at: p.at()?,
        },
        "VERIFY_PASS" => Action::VerifyPass {
            node: p.req("node")?.to_owned(),
            subject: p.req("subject")?.to_owned(),
            forge: p.get("forge").is_some_and(|v| v == "1" || v == "true"),
        },
        "QUERY_STATUS" => Action::QueryStatus {
            node: p.req("node")?.to_owned(),
            subject: p.req("subject")?.to_owned(),
        },
        "GEO_QUERY" => Action::GeoQuery {
            node: p.req("node")?.to_owned(),
            lat: p.num("lat")?,
            lon: p.num("lon")?,
            margin: p.opt_num("margin")?,
        },
        "TAMPER" => Action::Tamper { node: p.req("node")?.to_owned(), height: p.num("height")? },
        other => return Err(format!("unknown action {other:?}")),
    })
}

/// Authoring capability. Only constructible for roles that issue
/// transactions, so read-only nodes have no way to build one.
#[derive(Debug, Clone)]
pub struct Issuer {
    keys: KeyPair,
}

impl Issuer {
    pub fn for_role(role: Role, keys: KeyPair) -> Option<Self> {
        (role.may_author_individual() || role.may_author_location()).then_some(Issuer { keys })
    }

    pub fn public(&self) -> &PublicKey {
        self.keys.public()
    }

    pub fn issue_status(
        &self,
        subject_pub: &PublicKey,
        status: CovidStatus,
        at: RecordTime,
        epid: &EpidRecord,
        ca_pub: &PublicKey,
        rng: &mut ChaCha20Rng,
    ) -> Result<IndividualTx, TxError> {
        make_individual_tx(subject_pub, status, at, epid, ca_pub, &self.keys, rng)
    }

    pub fn declare_zone(
        &self,
        lat: f64,
        lon: f64,
        radius_m: i64,
        at: RecordTime,
        zone_type: ZoneType,
    ) -> Result<LocationTx, TxError> {
        make_location_tx(lat, lon, radius_m, at, zone_type, &self.keys)
    }
}

#[derive(Debug, Clone)]
pub struct Node {
    pub name: String,
    pub role: Role,
    pub public: PublicKey,
    pub ledger: NodeLedger,
    issuer: Option<Issuer>,
}

impl Node {
    pub fn issuer(&self) -> Option<&Issuer> {
        self.issuer.as_ref()
    }
}

/// Hash of a node's canonical ledger serialization.
pub fn node_digest(node: &Node) -> Digest {
    node.ledger.digest()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeSummary {
    pub name: String,
    pub digest: Digest,
    pub height: u64,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventOutcome {
    pub index: usize,
    pub tick: u64,
    pub action: &'static str,
    pub outcome: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimReport {
    pub nodes: Vec<NodeSummary>,
    pub outcomes: Vec<EventOutcome>,
    pub divergence: bool,
}

impl SimReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for o in &self.outcomes {
            let _ = writeln!(out, "event={} tick={} action={} {}", o.index, o.tick, o.action, o.outcome);
        }
        for n in &self.nodes {
            let _ = writeln!(out, "node={} digest={}", n.name, n.digest.to_hex());
        }
        for n in &self.nodes {
            let _ = writeln!(out, "chain node={} height={} valid={}", n.name, n.height, n.valid);
        }
        let _ = writeln!(out, "divergence={}", self.divergence);
        out
    }
}

fn sim_epoch() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2020, 6, 1).expect("valid date").and_hms_opt(0, 0, 0).expect("valid time")
}

/// Logical clock: one tick is one minute after the simulation epoch.
pub fn tick_time(tick: u64) -> RecordTime {
    let dt = sim_epoch() + TimeDelta::minutes(tick.min(i64::MAX as u64 / 60_000) as i64);
    RecordTime::new(dt.date(), dt.time())
}

pub struct Simulation {
    config: SimConfig,
    nodes: Vec<Node>,
    miner: BlockMiner,
    miner_node: usize,
    validators: Vec<KeyPair>,
    ca_pub: Option<PublicKey>,
    devices: BTreeMap<String, KeyPair>,
    rng: ChaCha20Rng,
    last_tick: u64,
    events_run: usize,
}

impl Simulation {
    pub fn new(config: SimConfig) -> Result<Self, SimError> {
        config.validate()?;
        let keys: Vec<KeyPair> = config.roster.iter().map(RosterEntry::keys).collect();
        let mut roles = RoleRegistry::new();
        for (e, k) in config.roster.iter().zip(&keys) {
            roles.insert(e.role, *k.public());
        }
        let miner_node =
            config.roster.iter().position(|e| e.role == Role::Miner).expect("validated");
        let validators: Vec<KeyPair> = config
            .roster
            .iter()
            .zip(&keys)
            .filter(|(e, _)| e.role == Role::Validator)
            .map(|(_, k)| k.clone())
            .collect();
        let ca_pub = config
            .roster
            .iter()
            .zip(&keys)
            .find(|(e, _)| e.role == Role::CentralAuthority)
            .map(|(_, k)| *k.public());
        let g = genesis(tick_time(0), &keys[miner_node], &validators[0], &validators[1]);
        let ledger = NodeLedger::new(g).map_err(|e| SimError::Config(e.to_string()))?;
        let nodes = config
            .roster
            .iter()
            .zip(&keys)
            .map(|(e, k)| Node {
                name: e.name.clone(),
                role: e.role,
                public: *k.public(),
                ledger: ledger.clone(),
                issuer: Issuer::for_role(e.role, k.clone()),
            })
            .collect();
        let miner = BlockMiner::new(keys[miner_node].clone(), roles, config.block_threshold);
        let rng = ChaCha20Rng::seed_from_u64(config.seed);
        Ok(Simulation {
            config,
            nodes,
            miner,
            miner_node,
            validators,
            ca_pub,
            devices: BTreeMap::new(),
            rng,
            last_tick: 0,
            events_run: 0,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, name: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.name == name)
    }

    pub fn miner(&self) -> &BlockMiner {
        &self.miner
    }

    /// Public key of the device registered under `phone`, if one exists.
    pub fn device_public(&self, phone: &str) -> Option<&PublicKey> {
        self.devices.get(phone).map(KeyPair::public)
    }

    pub fn device_phones(&self) -> impl Iterator<Item = &str> {
        self.devices.keys().map(String::as_str)
    }

    fn node_index(&self, name: &str, index: usize) -> Result<usize, SimError> {
        self.nodes
            .iter()
            .position(|n| n.name == name)
            .ok_or_else(|| SimError::Script { index, msg: format!("unknown node {name:?}") })
    }

    fn device(&mut self, phone: &str) -> KeyPair {
        if let Some(k) = self.devices.get(phone) {
            return k.clone();
        }
        let mut entropy = [0u8; 32];
        self.rng.fill_bytes(&mut entropy);
        let k = init_identity(phone.to_owned(), &entropy);
        self.devices.insert(phone.to_owned(), k.clone());
        k
    }

    /// Runs `events` after any already run. Ticks must not decrease.
    pub fn run(&mut self, events: &[ScenarioEvent]) -> Result<SimReport, SimError> {
        let mut outcomes = Vec::with_capacity(events.len());
        for ev in events {
            let index = self.events_run;
            if ev.at < self.last_tick {
                return Err(SimError::Script { index, msg: "ticks must be non-decreasing".into() });
            }
            self.last_tick = ev.at;
            let outcome = self.step(index, ev)?;
            outcomes.push(EventOutcome { index, tick: ev.at, action: ev.action.name(), outcome });
            self.events_run += 1;
        }
        Ok(self.report(outcomes))
    }

    pub fn report(&self, outcomes: Vec<EventOutcome>) -> SimReport {
        let nodes: Vec<NodeSummary> = self
            .nodes
            .iter()
            .map(|n| NodeSummary {
                name: n.name.clone(),
                digest: node_digest(n),
                height: n.ledger.height(),
                valid: n.ledger.is_valid(),
            })
            .collect();
        let divergence = nodes.windows(2).any(|w| w[0].digest != w[1].digest);
        SimReport { nodes, outcomes, divergence }
    }

    fn step(&mut self, index: usize, ev: &ScenarioEvent) -> Result<String, SimError> {
        match &ev.action {
            Action::SubmitTest { center, subject, status, epid, at } => {
                let ni = self.node_index(center, index)?;
                let Some(ca_pub) = self.ca_pub else {
                    return Ok("rejected=no-central-authority".into());
                };
                let Some(issuer) = self.nodes[ni].issuer.clone() else {
                    return Ok("rejected=read-only-node".into());
                };
                let subject_pub = *self.device(subject).public();
                let at = at.unwrap_or_else(|| tick_time(ev.at));
                let tx = issuer
                    .issue_status(&subject_pub, *status, at, epid, &ca_pub, &mut self.rng)
                    .map_err(|e| SimError::Script { index, msg: e.to_string() })?;
                Ok(self.submit(tx.into(), ev.at))
            }
            Action::SubmitZone { authority, lat, lon, radius_m, zone_type, at } => {
                let ni = self.node_index(authority, index)?;
                let Some(issuer) = self.nodes[ni].issuer.clone() else {
                    return Ok("rejected=read-only-node".into());
                };
                let at = at.unwrap_or_else(|| tick_time(ev.at));
                match issuer.declare_zone(*lat, *lon, *radius_m, at, *zone_type) {
                    Ok(tx) => Ok(self.submit(tx.into(), ev.at)),
                    Err(e) => Ok(format!("rejected=invalid-zone ({e})")),
                }
            }
            Action::VerifyPass { node, subject, forge } => {
                let ni = self.node_index(node, index)?;
                let bob = self.device(subject);
                let now = {
                    let t = tick_time(ev.at);
                    t.date.and_time(t.time)
                };
                let challenge = issue_challenge(&mut self.rng, now);
                let mut resp = respond(challenge.rand(), &bob);
                if *forge {
                    let mut seed = [0u8; 32];
                    self.rng.fill_bytes(&mut seed);
                    resp.subject_pub = KeyPair::from_private(PrivateKey::from_bytes(seed)).public().to_owned();
                }
                let authenticated = check_response(&challenge, &resp).unwrap_or(false);
                let decision = decide_access(&self.nodes[ni].ledger, &resp, authenticated);
                Ok(decision.frame().to_string())
            }
            Action::QueryStatus { node, subject } => {
                let ni = self.node_index(node, index)?;
                let Some(key) = self.devices.get(subject).map(|k| *k.public()) else {
                    return Ok("no-record".into());
                };
                let r = self.nodes[ni].ledger.query_status(&key);
                Ok(r.to_line(&key.fingerprint()))
            }
            Action::GeoQuery { node, lat, lon, margin } => {
                let ni = self.node_index(node, index)?;
                let Some(pos) = GeoPoint::new(*lat, *lon) else {
                    return Ok("error=invalid-position".into());
                };
                let zones = self.nodes[ni].ledger.active_zones();
                let alerts = classify(pos, &zones, margin.unwrap_or(self.config.near_margin));
                let lines: Vec<String> = alerts.iter().map(|a| a.to_line()).collect();
                Ok(format!("alerts={} [{}]", alerts.len(), lines.join(", ")))
            }
            Action::Tamper { node, height } => {
                let ni = self.node_index(node, index)?;
                Ok(tamper(&mut self.nodes[ni].ledger, *height))
            }
        }
    }

    fn submit(&mut self, tx: Transaction, tick: u64) -> String {
        let tid = tx.tid().to_hex();
        if let Err(e) = self.miner.submit(tx) {
            let why = match e {
                PipelineError::UnauthorizedSigner(_) => "unauthorized-signer",
                PipelineError::Duplicate(_) => "duplicate",
                _ => "invalid",
            };
            return format!("rejected={why} tid={}", &tid[..8]);
        }
        let mut out = format!("accepted tid={}", &tid[..8]);
        let Some(txs) = self.miner.cut() else {
            return out;
        };
        let tip = self.nodes[self.miner_node].ledger.tip();
        let sealed = self
            .miner
            .mine(txs, tip, tick_time(tick))
            .and_then(|m| self.miner.seal_with(m, &self.validators, &mut self.rng));
        match sealed {
            Ok(block) => {
                let _ = write!(out, " sealed={}", block.height());
                for n in &mut self.nodes {
                    if let Err(e) = n.ledger.append_block(block.clone()) {
                        let _ = write!(out, " append-failed={}({e})", n.name);
                    }
                }
            }
            Err(e) => {
                let _ = write!(out, " dropped=({e})");
            }
        }
        out
    }
}

/// Changes one hex digit of block `height` in `ledger`: the last digit of the
/// first transaction's signature, or of the Merkle root for an empty block.
fn tamper(ledger: &mut NodeLedger, height: u64) -> String {
    let Some(block) = ledger.chain().get(height as usize) else {
        return format!("error=no-block-at-height-{height}");
    };
    let record = block.to_record();
    let mut lines: Vec<String> =
        record.lines().filter(|l| !l.is_empty()).map(str::to_owned).collect();
    let (line_idx, pos) = if block.txs.is_empty() {
        // header field 3 is the merkle root
        let end: usize = lines[0].split('|').take(4).map(|f| f.len() + 1).sum::<usize>() - 2;
        (0, end)
    } else {
        (1, lines[1].len() - 1)
    };
    let bytes = bump_hex_digit(&lines[line_idx], pos);
    lines[line_idx] = bytes;
    let mut text = lines.join("\n");
    text.push_str("\n\n");
    match crate::ledger::parse_blocks(&text) {
        Ok(mut blocks) if blocks.len() == 1 => {
            ledger.replace_block_unchecked(height as usize, blocks.remove(0));
            format!("tampered height={height}")
        }
        _ => "error=tamper-unparseable".into(),
    }
}

fn bump_hex_digit(line: &str, pos: usize) -> String {
    let mut chars: Vec<char> = line.chars().collect();
    let v = chars[pos].to_digit(16).expect("hex digit");
    chars[pos] = std::char::from_digit((v + 1) % 16, 16).expect("hex digit");
    chars.into_iter().collect()
}

/// Runs a fresh simulation over `script`.
pub fn run_scenario(config: SimConfig, script: &[ScenarioEvent]) -> Result<SimReport, SimError> {
    Simulation::new(config)?.run(script)
}
