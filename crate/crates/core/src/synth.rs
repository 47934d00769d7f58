//! Seeded synthetic flows in the UNSW-NB15 schema.
//!
//! Each record is built so that, under the default thresholds and a rarity
//! table fitted on the generated training split, exactly the intended flags
//! fire. Flags fire independently with a label-dependent probability, which
//! makes the mock backend's scores informative but imperfect.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{ExtraNumeric, FlowRecord, Label, UNSW_EXTRA_NUMERIC};
use crate::flags::FlagSet;

/// Training services and states. Both lists have four entries and are
/// assigned round-robin, so the smallest pooled frequency is always tied and
/// nothing known is rare under the default quantile.
const SERVICES: [&str; 4] = ["http", "dns", "-", "ftp"];
const STATES: [&str; 4] = ["FIN", "INT", "CON", "REQ"];
/// Never present in training, hence always rare.
const RARE_SERVICES: [&str; 4] = ["irc", "snmp", "radius", "pop3"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub attack_fraction: f64,
    pub p_flag_attack: f64,
    pub p_flag_benign: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_train: 2000,
            n_test: 2000,
            attack_fraction: 0.5,
            p_flag_attack: 0.6,
            p_flag_benign: 0.1,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub train: Vec<FlowRecord>,
    pub test: Vec<FlowRecord>,
    /// Intended flags of `test`, index-aligned.
    pub test_flags: Vec<FlagSet>,
}

pub fn generate(config: &SynthConfig) -> SynthData {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let names: Arc<[String]> = UNSW_EXTRA_NUMERIC.iter().map(|s| s.to_string()).collect();
    let draw = |rng: &mut ChaCha8Rng, i: usize, train: bool| {
        let label = if rng.gen_bool(config.attack_fraction) {
            Label::Attack
        } else {
            Label::Benign
        };
        let p = if label.is_attack() {
            config.p_flag_attack
        } else {
            config.p_flag_benign
        };
        let mut f: [bool; 6] = std::array::from_fn(|_| rng.gen_bool(p));
        if train {
            f[4] = false;
        }
        let flags = FlagSet::from_array(f);
        let rec = synth_record(rng, i as u64 + 1, label, flags, i % SERVICES.len(), names.clone());
        (rec, flags)
    };
    let train = (0..config.n_train).map(|i| draw(&mut rng, i, true).0).collect();
    let (test, test_flags) = (0..config.n_test).map(|i| draw(&mut rng, i, false)).unzip();
    SynthData { train, test, test_flags }
}

/// One flow whose derived flags equal `flags`. `slot` picks the common
/// service/state pair used when the rarity flag is off.
pub fn synth_record<R: Rng>(
    rng: &mut R,
    id: u64,
    label: Label,
    flags: FlagSet,
    slot: usize,
    extra_names: Arc<[String]>,
) -> FlowRecord {
    let burst = flags.short_burst;
    let fast = flags.pkt_rate_high;
    let (spkts, dpkts) = if burst {
        (rng.gen_range(10..=20), rng.gen_range(10..=20))
    } else {
        (rng.gen_range(2..=8), rng.gen_range(2..=8))
    };
    let dur = match (burst, fast) {
        (true, true) => rng.gen_range(0.004..0.0095),
        (true, false) => rng.gen_range(0.05..0.1),
        (false, true) => rng.gen_range(0.0005..0.0015),
        (false, false) => rng.gen_range(0.2..5.0),
    };
    let dbytes: u64 = rng.gen_range(200..=4000);
    let sbytes = if flags.asymmetry_high {
        dbytes * rng.gen_range(150..=400)
    } else {
        dbytes * rng.gen_range(1..=4) / 2 + rng.gen_range(40..=400)
    };
    let (sttl, dttl) = if flags.ttl_anomaly {
        (rng.gen_range(1..=29), rng.gen_range(31..=64))
    } else {
        (rng.gen_range(31..=64), rng.gen_range(31..=64))
    };
    let (tcprtt, synack, ackdat) = if flags.tcp_timer_anomaly {
        let rtt = rng.gen_range(1e-5..9e-5);
        (rtt, rtt * 0.4, rtt * 0.5)
    } else {
        let rtt: f64 = rng.gen_range(0.002..0.2);
        let split = rng.gen_range(0.3..0.7);
        (rtt, rtt * split, rtt * (1.0 - split) * 0.9)
    };
    let (service, state) = if flags.rare_service_state {
        (RARE_SERVICES[rng.gen_range(0..RARE_SERVICES.len())], STATES[slot % STATES.len()])
    } else {
        (SERVICES[slot % SERVICES.len()], STATES[slot % STATES.len()])
    };
    let proto = if rng.gen_bool(0.8) { "tcp" } else { "udp" };
    let ct_state_ttl = if label.is_attack() { rng.gen_range(0..=6) } else { rng.gen_range(0..=2) };

    let pkts = (spkts + dpkts) as f64;
    let values = extra_names
        .iter()
        .map(|name| match name.as_str() {
            "rate" => pkts / dur,
            "sload" => sbytes as f64 * 8.0 / dur,
            "dload" => dbytes as f64 * 8.0 / dur,
            "sinpkt" => dur * 1e3 / spkts as f64,
            "dinpkt" => dur * 1e3 / dpkts as f64,
            "smean" => (sbytes / spkts) as f64,
            "dmean" => (dbytes / dpkts) as f64,
            "swin" | "dwin" => {
                if proto == "tcp" {
                    255.0
                } else {
                    0.0
                }
            }
            "stcpb" | "dtcpb" => f64::from(rng.gen_range(0..u32::MAX)),
            "is_ftp_login" | "is_sm_ips_ports" => f64::from(rng.gen_bool(0.05) as u8),
            _ => f64::from(rng.gen_range(0..20u32)),
        })
        .collect();

    FlowRecord {
        id,
        dur,
        proto: proto.to_string(),
        service: service.to_string(),
        state: state.to_string(),
        spkts,
        dpkts,
        sbytes,
        dbytes,
        sttl,
        dttl,
        tcprtt,
        synack,
        ackdat,
        ct_state_ttl,
        extra_numeric: ExtraNumeric::new(extra_names, values),
        label,
    }
}
