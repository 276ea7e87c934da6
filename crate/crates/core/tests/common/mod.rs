//! Fixtures and independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use covidchain::blockpipe::{genesis, BlockMiner, BlockThreshold};
use covidchain::crypto::{generate_keypair, Digest, KeyPair, PublicKey};
use covidchain::ledger::NodeLedger;
use covidchain::roles::{Role, RoleRegistry};
use covidchain::simnet::{Action, ScenarioEvent};
use covidchain::txmodel::{
    make_individual_tx, make_location_tx, CovidStatus, EpidRecord, RecordTime, Transaction, ZoneType,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest as _, Sha256};

pub fn kp(b: u8) -> KeyPair {
    generate_keypair(&[b; 32]).unwrap()
}

pub fn at(day: u32, h: u32, m: u32) -> RecordTime {
    RecordTime::from_ymd_hms(2020, 6, day, h, m, 0).unwrap()
}

pub fn epid(age: u32) -> EpidRecord {
    EpidRecord::new(age, "F", "O+", "Assam", vec!["asthma".into()]).unwrap()
}

pub const STATUSES: [CovidStatus; 4] =
    [CovidStatus::Positive, CovidStatus::Negative, CovidStatus::InQuarantine, CovidStatus::OutOfQuarantine];

/// Keys for a small permissioned network.
pub struct Network {
    pub miner: KeyPair,
    pub validators: Vec<KeyPair>,
    pub center: KeyPair,
    pub lea: KeyPair,
    pub ca: KeyPair,
}

impl Network {
    pub fn new() -> Self {
        Network {
            miner: kp(1),
            validators: vec![kp(2), kp(3), kp(4)],
            center: kp(10),
            lea: kp(11),
            ca: kp(12),
        }
    }

    pub fn registry(&self) -> RoleRegistry {
        let mut r = RoleRegistry::new();
        r.insert(Role::Miner, *self.miner.public());
        for v in &self.validators {
            r.insert(Role::Validator, *v.public());
        }
        r.insert(Role::TestingCenter, *self.center.public());
        r.insert(Role::LawEnforcement, *self.lea.public());
        r.insert(Role::CentralAuthority, *self.ca.public());
        r
    }

    pub fn block_miner(&self) -> BlockMiner {
        BlockMiner::new(self.miner.clone(), self.registry(), BlockThreshold::Count(usize::MAX))
    }

    pub fn genesis_ledger(&self) -> NodeLedger {
        let g = genesis(at(1, 0, 0), &self.miner, &self.validators[0], &self.validators[1]);
        NodeLedger::new(g).unwrap()
    }

    pub fn status_tx(&self, subject: &PublicKey, status: CovidStatus, t: RecordTime, rng: &mut ChaCha20Rng) -> Transaction {
        make_individual_tx(subject, status, t, &epid(40), self.ca.public(), &self.center, rng).unwrap().into()
    }

    pub fn zone_tx(&self, lat: f64, lon: f64, r: i64, t: RecordTime, zt: ZoneType) -> Transaction {
        make_location_tx(lat, lon, r, t, zt, &self.lea).unwrap().into()
    }

    /// Mines and seals `txs` on top of `ledger`.
    pub fn seal(&self, ledger: &mut NodeLedger, txs: Vec<Transaction>, t: RecordTime, rng: &mut ChaCha20Rng) {
        let miner = self.block_miner();
        let mined = miner.mine(txs, ledger.tip(), t).unwrap();
        let block = miner.seal_with(mined, &self.validators, rng).unwrap();
        ledger.append_block(block).unwrap();
    }
}

/// Genesis plus four sealed blocks of mixed transactions.
pub fn five_block_chain(seed: u64) -> NodeLedger {
    let net = Network::new();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut ledger = net.genesis_ledger();
    for b in 0..4u32 {
        let mut txs = Vec::new();
        for i in 0..3u32 {
            let subject = kp(100 + (b * 3 + i) as u8);
            let status = STATUSES[((b + i) % 4) as usize];
            txs.push(net.status_tx(subject.public(), status, at(2 + b, i, 0), &mut rng));
        }
        txs.push(net.zone_tx(26.1 + f64::from(b) / 100.0, 91.7, 300, at(2 + b, 5, 0), ZoneType::Red));
        net.seal(&mut ledger, txs, at(2 + b, 6, 0), &mut rng);
    }
    ledger
}

pub fn phone(i: usize) -> String {
    format!("+91-98{i:08}")
}

/// Random mixed script over the default eight-node roster. Ticks rise by one
/// per event. With `backdate`, status records carry random explicit times
/// so record time and submission order disagree.
pub fn mixed_script(seed: u64, events: usize, subjects: usize, backdate: bool) -> Vec<ScenarioEvent> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let issuers = ["tc1", "hosp1", "lea1"];
    let readers = ["miner", "val1", "val2", "val3", "tc1", "hosp1", "lea1", "ca"];
    (0..events)
        .map(|i| {
            let tick = i as u64 + 1;
            let subject = phone(rng.gen_range(0..subjects));
            let action = match rng.gen_range(0..10) {
                0..=4 => Action::SubmitTest {
                    center: issuers[rng.gen_range(0..3)].into(),
                    subject,
                    status: STATUSES[rng.gen_range(0..4)],
                    epid: epid(rng.gen_range(1..95)),
                    at: backdate.then(|| at(rng.gen_range(1..28), rng.gen_range(0..24), rng.gen_range(0..60))),
                },
                5 => Action::SubmitZone {
                    authority: "lea1".into(),
                    lat: 26.0 + f64::from(rng.gen_range(0..1000)) / 1000.0,
                    lon: 91.0 + f64::from(rng.gen_range(0..1000)) / 1000.0,
                    radius_m: rng.gen_range(50..2000),
                    zone_type: [ZoneType::Red, ZoneType::Orange, ZoneType::Green][rng.gen_range(0..3)],
                    at: None,
                },
                6 => Action::VerifyPass {
                    node: readers[rng.gen_range(0..8)].into(),
                    subject,
                    forge: rng.gen_bool(0.2),
                },
                7 | 8 => Action::QueryStatus { node: readers[rng.gen_range(0..8)].into(), subject },
                _ => Action::GeoQuery {
                    node: readers[rng.gen_range(0..8)].into(),
                    lat: 26.0 + rng.gen::<f64>(),
                    lon: 91.0 + rng.gen::<f64>(),
                    margin: None,
                },
            };
            ScenarioEvent::new(tick, action)
        })
        .collect()
}

/// Effective statuses by brute-force replay of every block in order, with no
/// use of the ledger's index.
pub fn replay_statuses(ledger: &NodeLedger) -> BTreeMap<Digest, CovidStatus> {
    let mut best: BTreeMap<Digest, (String, String, CovidStatus)> = BTreeMap::new();
    for block in ledger.chain() {
        for tx in &block.txs {
            let Some(t) = tx.as_individual() else { continue };
            let when = format!("{}T{}", t.at.date_token(), t.at.time_token());
            let tid = t.tid.to_hex();
            let newer = match best.get(&t.subject) {
                None => true,
                Some((w, id, _)) => when > *w || (when == *w && tid > *id),
            };
            if newer {
                best.insert(t.subject, (when, tid, t.status));
            }
        }
    }
    best.into_iter().map(|(k, (_, _, s))| (k, s)).collect()
}

fn sha256(parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    h.finalize().into()
}

/// Recursive Merkle root: split the padded level list in halves.
pub fn oracle_merkle(leaves: &[[u8; 32]]) -> [u8; 32] {
    fn level_up(level: &[[u8; 32]]) -> Vec<[u8; 32]> {
        let mut padded = level.to_vec();
        if padded.len() % 2 == 1 {
            padded.push(*padded.last().unwrap());
        }
        let mut out = Vec::new();
        let mut i = 0;
        while i < padded.len() {
            out.push(sha256(&[&padded[i], &padded[i + 1]]));
            i += 2;
        }
        out
    }
    if leaves.len() == 1 {
        leaves[0]
    } else {
        oracle_merkle(&level_up(leaves))
    }
}

pub fn oracle_leaf(line: &str) -> [u8; 32] {
    sha256(&[line.as_bytes()])
}

/// Great-circle distance via the 3-D chord between unit vectors.
pub fn oracle_distance_m(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let v = |lat: f64, lon: f64| {
        let (p, l) = (lat.to_radians(), lon.to_radians());
        [p.cos() * l.cos(), p.cos() * l.sin(), p.sin()]
    };
    let (a, b) = (v(lat1, lon1), v(lat2, lon2));
    let chord = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
    2.0 * 6_371_000.0 * (chord / 2.0).min(1.0).asin()
}

/// Destination after travelling `dist_m` from a start point on `bearing_deg`.
pub fn destination(lat: f64, lon: f64, bearing_deg: f64, dist_m: f64) -> (f64, f64) {
    let d = dist_m / 6_371_000.0;
    let (p1, l1, th) = (lat.to_radians(), lon.to_radians(), bearing_deg.to_radians());
    let p2 = (p1.sin() * d.cos() + p1.cos() * d.sin() * th.cos()).asin();
    let l2 = l1 + (th.sin() * d.sin() * p1.cos()).atan2(d.cos() - p1.sin() * p2.sin());
    let lon2 = (l2.to_degrees() + 540.0).rem_euclid(360.0) - 180.0;
    (p2.to_degrees(), lon2)
}

pub fn oracle_level(d: f64, r: f64, margin: f64) -> &'static str {
    if d <= r {
        "INSIDE"
    } else if d <= r + margin {
        "NEAR"
    } else {
        "CLEAR"
    }
}

/// The 20-case fixture grid: (zone lat, zone lon, radius, query lat, query lon, margin).
pub const GEO_GRID: [(f64, f64, i64, f64, f64, f64); 20] = [
    (26.144600, 91.736200, 500, 26.144600, 91.736200, 100.0),
    (26.144600, 91.736200, 500, 26.147000, 91.736200, 100.0),
    (26.144600, 91.736200, 500, 26.150000, 91.736200, 100.0),
    (26.144600, 91.736200, 500, 26.144600, 91.742000, 100.0),
    (26.144600, 91.736200, 500, 26.160000, 91.760000, 100.0),
    (0.000000, 0.000000, 1000, 0.008000, 0.000000, 200.0),
    (0.000000, 0.000000, 1000, 0.009500, 0.000000, 200.0),
    (0.000000, 0.000000, 1000, 0.012000, 0.000000, 200.0),
    (51.507400, -0.127800, 250, 51.509000, -0.127800, 50.0),
    (51.507400, -0.127800, 250, 51.509500, -0.127800, 50.0),
    (51.507400, -0.127800, 250, 51.507400, -0.124000, 50.0),
    (-33.868800, 151.209300, 2000, -33.880000, 151.209300, 500.0),
    (-33.868800, 151.209300, 2000, -33.890000, 151.209300, 500.0),
    (-33.868800, 151.209300, 2000, -33.900000, 151.209300, 500.0),
    (0.000000, 179.999000, 300, 0.000000, -179.998000, 100.0),
    (0.000000, 179.999000, 300, 0.000000, -179.996000, 100.0),
    (89.990000, 0.000000, 1500, 89.990000, 180.000000, 500.0),
    (89.990000, 0.000000, 1500, 89.999000, 90.000000, 500.0),
    (-45.000000, -70.000000, 100, -45.000500, -70.000500, 0.0),
    (-45.000000, -70.000000, 100, -45.002000, -70.000000, 0.0),
];
