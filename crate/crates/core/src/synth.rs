//! Synthetic stand-in for the five MQTT-IoT-IDS2020 packet CSVs.
//!
//! Rows follow the default schema. Each capture file mixes normal broker
//! traffic with the attack pattern of its scenario; a share of attack rows is
//! drawn from normal-looking archetypes (and a few normal rows look like
//! attacks), so the classes overlap and perfect accuracy is out of reach.
//! About 1% of cells are left empty.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Schema, DEFAULT_SCHEMA};
use crate::error::{Error, Result};

/// `(file stem, normal rows, attack rows)` of the original captures.
pub const CAPTURE_COUNTS: [(&str, usize, usize); 5] = [
    ("scan_A", 70_768, 40_624),
    ("scan_sU", 210_819, 22_436),
    ("sparta", 947_177, 19_728_963),
    ("mqtt_bruteforce", 32_164, 10_013_152),
    ("normal", 1_056_230, 0),
];

/// Share of attack rows generated from a normal archetype.
const ATTACK_CAMOUFLAGE: f64 = 0.15;
/// Share of normal rows generated from an attack archetype.
const NORMAL_ANOMALY: f64 = 0.04;
const MISSING_RATE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scenario {
    AggressiveScan,
    UdpScan,
    SshBruteForce,
    MqttBruteForce,
}

const SCENARIOS: [Scenario; 4] = [
    Scenario::AggressiveScan,
    Scenario::UdpScan,
    Scenario::SshBruteForce,
    Scenario::MqttBruteForce,
];

#[derive(Debug, Clone, Default)]
struct Packet {
    protocol: &'static str,
    ttl: u32,
    ip_len: u32,
    df: u8,
    ack: u8,
    push: u8,
    reset: u8,
    syn: u8,
    fin: u8,
    mqtt_type: u8,
    mqtt_len: u32,
    uname: u8,
    passwd: u8,
    retain: u8,
    qos: u8,
    clean: u8,
}

impl Packet {
    fn tcp(rng: &mut ChaCha8Rng, ttl: u32, payload: u32) -> Self {
        Self {
            protocol: "TCP",
            ttl,
            ip_len: 52 + payload,
            df: u8::from(rng.gen_bool(0.9)),
            ack: 1,
            ..Self::default()
        }
    }

    fn cells(&self, label: u8) -> Vec<String> {
        let n = |v: u32| v.to_string();
        let b = |v: u8| v.to_string();
        vec![
            self.protocol.to_string(),
            n(self.ttl),
            n(self.ip_len),
            b(self.df),
            b(0),
            b(0),
            b(0),
            b(0),
            b(0),
            b(0),
            b(0),
            b(self.ack),
            b(self.push),
            b(self.reset),
            b(self.syn),
            b(self.fin),
            b(self.mqtt_type),
            n(self.mqtt_len),
            b(self.uname),
            b(self.passwd),
            b(self.retain),
            b(self.qos),
            b(0),
            b(self.clean),
            b(0),
            b(label),
        ]
    }
}

fn normal_packet(rng: &mut ChaCha8Rng) -> Packet {
    let ttl = if rng.gen_bool(0.8) { 64 } else { 128 };
    match rng.gen_range(0..10) {
        // sensor publish
        0..=4 => {
            let len = rng.gen_range(12..180);
            Packet {
                protocol: "MQTT",
                push: 1,
                mqtt_type: 3,
                mqtt_len: len,
                qos: if rng.gen_bool(0.3) { 1 } else { 0 },
                retain: u8::from(rng.gen_bool(0.05)),
                ..Packet::tcp(rng, ttl, len + 2)
            }
        }
        // bare acknowledgements
        5..=7 => {
            let payload = if rng.gen_bool(0.5) { 0 } else { 12 };
            Packet::tcp(rng, ttl, payload)
        }
        // keep-alive and acknowledgement control packets
        _ => {
            let kind = *[4u8, 12, 13].choose(rng).expect("non-empty");
            Packet {
                protocol: "MQTT",
                push: 1,
                mqtt_type: kind,
                mqtt_len: if kind == 4 { 2 } else { 0 },
                ..Packet::tcp(rng, ttl, if kind == 4 { 4 } else { 2 })
            }
        }
    }
}

fn attack_packet(rng: &mut ChaCha8Rng, scenario: Scenario) -> Packet {
    match scenario {
        Scenario::AggressiveScan => {
            let ttl = rng.gen_range(37..60);
            let payload = if rng.gen_bool(0.5) { 0 } else { 8 };
            let mut p = Packet::tcp(rng, ttl, payload);
            p.ip_len -= 8;
            p.df = 0;
            if rng.gen_bool(0.7) {
                p.syn = 1;
                p.ack = 0;
            } else {
                p.reset = 1;
            }
            p
        }
        Scenario::UdpScan => Packet {
            protocol: "UDP",
            ttl: rng.gen_range(37..60),
            ip_len: rng.gen_range(28..80),
            ..Packet::default()
        },
        Scenario::SshBruteForce => {
            let payload = rng.gen_range(20..700);
            Packet {
                push: 1,
                fin: u8::from(rng.gen_bool(0.05)),
                ..Packet::tcp(rng, 64, payload)
            }
        }
        Scenario::MqttBruteForce => {
            let connect = rng.gen_bool(0.6);
            let len = if connect { rng.gen_range(30..70) } else { 2 };
            Packet {
                protocol: "MQTT",
                push: 1,
                mqtt_type: if connect { 1 } else { 2 },
                mqtt_len: len,
                uname: u8::from(connect),
                passwd: u8::from(connect),
                clean: u8::from(connect),
                ..Packet::tcp(rng, 64, len + 2)
            }
        }
    }
}

fn row(rng: &mut ChaCha8Rng, label: u8, scenario: Scenario) -> Vec<String> {
    let packet = if label == 1 {
        if rng.gen_bool(ATTACK_CAMOUFLAGE) {
            normal_packet(rng)
        } else {
            attack_packet(rng, scenario)
        }
    } else if rng.gen_bool(NORMAL_ANOMALY) {
        attack_packet(rng, scenario)
    } else {
        normal_packet(rng)
    };
    let mut cells = packet.cells(label);
    let last = cells.len() - 1;
    for cell in &mut cells[..last] {
        if rng.gen_bool(MISSING_RATE) {
            cell.clear();
        }
    }
    cells
}

/// Row counts of the surrogate files at `scale` (rounded, at least one row of
/// every class a capture contains).
pub fn scaled_counts(scale: f64) -> Vec<(&'static str, usize, usize)> {
    let s = |n: usize| {
        if n == 0 {
            0
        } else {
            ((n as f64 * scale).round() as usize).max(1)
        }
    };
    CAPTURE_COUNTS.iter().map(|&(name, n, a)| (name, s(n), s(a))).collect()
}

/// Writes the five surrogate CSVs into `dir` and returns their paths in
/// capture order.
pub fn generate_surrogate(dir: impl AsRef<Path>, scale: f64, seed: u64) -> Result<Vec<PathBuf>> {
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(Error::Config(format!("surrogate scale must be in (0, 1], got {scale}")));
    }
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let schema = Schema::parse(DEFAULT_SCHEMA)?;
    let header: Vec<&str> = schema.columns().iter().map(|c| c.name.as_str()).collect();

    let mut paths = Vec::new();
    for (i, (name, normal, attack)) in scaled_counts(scale).into_iter().enumerate() {
        let path = dir.join(format!("{name}.csv"));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let scenario = SCENARIOS[i.min(3)];
        let mut labels: Vec<u8> = std::iter::repeat_n(0, normal)
            .chain(std::iter::repeat_n(1, attack))
            .collect();
        labels.shuffle(&mut rng);

        let csv_err = |source| Error::Csv {
            path: path.clone(),
            source,
        };
        let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
        w.write_record(&header).map_err(csv_err)?;
        for label in labels {
            w.write_record(row(&mut rng, label, scenario)).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}
