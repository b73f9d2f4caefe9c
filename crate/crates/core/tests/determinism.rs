//! Cross-process and cross-run determinism checks.

use fedadapt_core::data::{encode_dataset, generate_domain, DomainConfig};
use fedadapt_core::model::{embed, ModelConfig, ModelParams};
use fedadapt_core::numerics::Rng;
use std::process::Command;

fn fixed_embedding_bits() -> Vec<u64> {
    let cfg = ModelConfig {
        input_dim: 8,
        hidden: vec![6],
        embedding_dim: 4,
        class_count: 3,
        init_std: 0.1,
        bn_momentum: 0.1,
        bn_epsilon: 1e-5,
    };
    let params = ModelParams::init(&cfg, &mut Rng::new(0xfeedbeef)).unwrap();
    let input: Vec<f64> = (0..8).map(|i| (i as f64) / 7.0).collect();
    embed(&params, &input)
        .unwrap()
        .iter()
        .map(|v| v.to_bits())
        .collect()
}

/// Golden value recorded once from this implementation, then pinned.
const GOLDEN_EMBEDDING_BITS: [u64; 4] = [
    13804936709074297235,
    13810860631642573113,
    13813989401361656605,
    4586661453696420293,
];

#[test]
fn fixed_embedding_is_bit_stable() {
    assert_eq!(fixed_embedding_bits(), GOLDEN_EMBEDDING_BITS);
    assert_eq!(fixed_embedding_bits(), GOLDEN_EMBEDDING_BITS);
}

/// Helper target for the cross-process check: prints draws when the env
/// var is set, otherwise does nothing.
#[test]
fn rng_dump_helper() {
    if let Ok(seed) = std::env::var("RNG_DUMP_SEED") {
        let mut rng = Rng::new(seed.parse().unwrap());
        let draws: Vec<String> = (0..64).map(|_| rng.next_u64().to_string()).collect();
        println!("RNG_DUMP:{}", draws.join(","));
    }
}

#[test]
fn rng_sequences_identical_across_processes() {
    let exe = std::env::current_exe().unwrap();
    let dump = |seed: u64| -> String {
        let out = Command::new(&exe)
            .args(["rng_dump_helper", "--exact", "--nocapture"])
            .env("RNG_DUMP_SEED", seed.to_string())
            .output()
            .expect("spawn self");
        String::from_utf8_lossy(&out.stdout)
            .lines()
            .find(|l| l.starts_with("RNG_DUMP:"))
            .expect("dump line")
            .to_string()
    };
    // Two separate processes, byte-identical output.
    let a = dump(0x5eed);
    let b = dump(0x5eed);
    assert_eq!(a, b);
    // And both match the in-process sequence.
    let mut rng = Rng::new(0x5eed);
    let expect: Vec<String> = (0..64).map(|_| rng.next_u64().to_string()).collect();
    assert_eq!(a, format!("RNG_DUMP:{}", expect.join(",")));
    // A different seed diverges.
    assert_ne!(dump(0x5eee), a);
}

#[test]
fn dataset_generation_is_byte_identical_across_calls() {
    let cfg = DomainConfig {
        brightness_shift: -0.1,
        contrast_scale: 0.7,
        noise_std: 0.08,
        rotation_deg: 25.0,
        seed: 1234,
    };
    let a = generate_domain(6, &cfg, 10, 12, 12, "d").unwrap();
    let b = generate_domain(6, &cfg, 10, 12, 12, "d").unwrap();
    assert_eq!(encode_dataset(&a), encode_dataset(&b));
}
