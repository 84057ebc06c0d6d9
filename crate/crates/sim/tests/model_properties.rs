use mant_sim::*;
use proptest::prelude::*;

fn cost() -> CostModel {
    CostModel::default()
}

fn gemm(m: u64, k: u64, n: u64, cfg: &ArrayConfig) -> SimReport {
    simulate_gemm("g", GemmShape { m, k, n }, cfg, &cost()).unwrap()
}

fn with_bits(weight_bits: u32, kv_bits: u32) -> ArrayConfig {
    ArrayConfig {
        name: format!("w{weight_bits}kv{kv_bits}"),
        weight_bits,
        kv_bits,
        ..Default::default()
    }
}

#[test]
fn llm_scale_gemm_quantization_share() {
    let r = gemm(2048, 4096, 4096, &ArrayConfig::default());
    let share = r.quant_overhead();
    assert!((0.002..=0.004).contains(&share), "share {share}");
    assert_eq!(r.quant_residual_cycles, 0);
}

#[test]
fn short_final_block_can_expose_residual() {
    let cfg = ArrayConfig::default();
    let r = gemm(464, 12 * 64, 65, &cfg);
    assert!(r.quant_residual_cycles > 0);
}

#[test]
fn decode_kv_width_speedup() {
    let shape = AttentionShape {
        seq_len: 4096,
        heads: 32,
        head_dim: 128,
    };
    let r4 = simulate_attention("a", shape, &with_bits(4, 4), &cost()).unwrap();
    let r8 = simulate_attention("a", shape, &with_bits(4, 8), &cost()).unwrap();
    assert!(r4.cycles.memory_stall > 0 && r8.cycles.memory_stall > 0);
    let speedup = r8.total_cycles as f64 / r4.total_cycles as f64;
    assert!((1.7..=2.0).contains(&speedup), "{speedup}");
    assert!(speedup < 2.0);
}

#[test]
fn doubling_bandwidth_halves_the_floor() {
    let shape = AttentionShape {
        seq_len: 4096,
        heads: 32,
        head_dim: 128,
    };
    let slow = ArrayConfig::default();
    let fast = ArrayConfig {
        dram_bandwidth: 16.0,
        ..Default::default()
    };
    let a = simulate_attention("a", shape, &slow, &cost()).unwrap();
    let b = simulate_attention("a", shape, &fast, &cost()).unwrap();
    assert_eq!(a.total_bytes, b.total_bytes);
    assert_eq!(a.total_bytes % 16, 0);
    assert_eq!(a.dram_floor_cycles, 2 * b.dram_floor_cycles);
}

#[test]
fn temporal_rqu_adds_energy_not_cycles() {
    let shape = AttentionShape {
        seq_len: 256,
        heads: 4,
        head_dim: 64,
    };
    let base = simulate_attention("a", shape, &ArrayConfig::default(), &cost()).unwrap();
    let pricier = CostModel {
        rqu_accumulate: 10.0,
        ..cost()
    };
    let more = simulate_attention("a", shape, &ArrayConfig::default(), &pricier).unwrap();
    assert_eq!(base.total_cycles, more.total_cycles);
    assert!(more.energy.core > base.energy.core);
}

#[test]
fn identical_configs_give_unit_ratios() {
    let w = Workload::decoder_step(4096, 11008, 32, 2048);
    let c = compare_configs(&w, &[ArrayConfig::default(), ArrayConfig::default()], &cost()).unwrap();
    for r in &c.ratios {
        assert_eq!(r.speedup, 1.0);
        assert_eq!(r.energy_ratio, 1.0);
    }
}

#[test]
fn four_bit_weights_double_compute_throughput() {
    let w = Workload {
        name: "prefill".into(),
        layers: vec![Layer::Gemm {
            name: "ffn".into(),
            m: 2048,
            k: 4096,
            n: 4096,
        }],
    };
    let c = compare_configs(&w, &[with_bits(8, 8), with_bits(4, 8)], &cost()).unwrap();
    let s = c.ratios[1].speedup;
    assert!((1.9..=2.05).contains(&s), "{s}");
}

#[test]
fn workload_totals_are_additive() {
    let w = Workload::decoder_step(2048, 5504, 16, 1024);
    let r = run_workload(&w, &ArrayConfig::default(), &cost()).unwrap();
    let cycles: u64 = r.layers.iter().map(|l| l.total_cycles).sum();
    let bytes: u64 = r.layers.iter().map(|l| l.total_bytes).sum();
    let quant: u64 = r.layers.iter().map(|l| l.cycles.nonoverlapped_quant).sum();
    let energy: f64 = r.layers.iter().map(|l| l.total_energy).sum();
    assert_eq!(r.total.total_cycles, cycles);
    assert_eq!(r.total.cycles.total(), cycles);
    assert_eq!(r.total.total_bytes, bytes);
    assert_eq!(r.total.cycles.nonoverlapped_quant, quant);
    assert_eq!(r.total.total_energy, energy);
}

#[test]
fn linear_share_vanishes_with_context_length() {
    let share = |seq| {
        run_workload(&Workload::decoder_step(4096, 11008, 32, seq), &ArrayConfig::default(), &cost())
            .unwrap()
            .linear_share()
    };
    let shares: Vec<f64> = [1 << 10, 1 << 14, 1 << 18, 1 << 22].into_iter().map(share).collect();
    assert!(shares.windows(2).all(|w| w[1] < w[0]), "{shares:?}");
    assert!(shares[3] < 0.01, "{shares:?}");
}

#[test]
fn reports_are_deterministic() {
    let w = Workload::decoder_step(1024, 4096, 8, 512);
    let a = serde_json::to_string(&run_workload(&w, &ArrayConfig::default(), &cost()).unwrap()).unwrap();
    let b = serde_json::to_string(&run_workload(&w, &ArrayConfig::default(), &cost()).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn workload_json_round_trip() {
    let w = Workload::decoder_step(1024, 4096, 8, 512);
    assert_eq!(Workload::from_json(&w.to_json().unwrap()).unwrap(), w);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn cycles_are_monotone(m in 1u64..600, k in 1u64..3000, n in 1u64..3000, bits in prop::sample::select(vec![2u32, 4, 8]), axis in 0usize..3, step in 1u64..300) {
        let cfg = with_bits(bits, bits);
        let base = gemm(m, k, n, &cfg);
        let bigger = match axis {
            0 => gemm(m + step, k, n, &cfg),
            1 => gemm(m, k + step, n, &cfg),
            _ => gemm(m, k, n + step, &cfg),
        };
        prop_assert!(bigger.total_cycles >= base.total_cycles);
    }

    #[test]
    fn breakdowns_sum_to_totals(m in 1u64..300, k in 1u64..2000, n in 1u64..2000, seq in 1u64..5000) {
        let cfg = ArrayConfig::default();
        let g = gemm(m, k, n, &cfg);
        let a = simulate_attention("a", AttentionShape { seq_len: seq, heads: 2, head_dim: 64 }, &cfg, &cost()).unwrap();
        for r in [g, a] {
            prop_assert_eq!(r.cycles.total(), r.total_cycles);
            prop_assert_eq!(r.bytes.total(), r.total_bytes);
            prop_assert!((r.energy.total() - r.total_energy).abs() <= 1e-12 * r.total_energy.max(1.0));
            prop_assert!(r.total_cycles >= r.dram_floor_cycles);
        }
    }

    #[test]
    fn enough_k_iterations_hide_quantization(m in 1u64..2048, k_tiles in 12u64..80, groups in 1u64..64) {
        let cfg = ArrayConfig::default();
        let r = gemm(m, k_tiles * cfg.logical_rows(cfg.weight_bits), groups * cfg.group_size, &cfg);
        prop_assert_eq!(r.quant_residual_cycles, 0);
    }
}
