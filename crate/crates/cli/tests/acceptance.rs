//! Acceptance suite: one line per criterion, non-zero exit if any fails.
//!
//! Run with `cargo test -p burstlab-cli --test acceptance`.

use std::time::Instant;

use burstlab::fit::{fit_gmm2_em, fit_vr_model, EmConfig, FitOptions, TraceGroup};
use burstlab::model::{derive_frame_size_model, VrModel, VrModelConstants, VrStreamParams};
use burstlab::rv::{gmm2_sample, gmm2_sample_labeled, Component, Gmm2Params, RngStream};
use burstlab::sim::{run_scenario, ScenarioConfig, SourceSpec};
use burstlab::wire::{
    decode_header, fragment_burst, BurstReassembler, FragmentHeader, ReassemblyEvent, HEADER_LEN,
};
use burstlab_cli::{generate_trace, simulate_json, Cli, Command};
use clap::Parser;

type Check = Result<String, String>;

fn rel_err(value: f64, target: f64) -> f64 {
    (value - target).abs() / target.abs()
}

fn within(label: &str, value: f64, target: f64, tol: f64) -> Check {
    let e = rel_err(value, target);
    let line = format!("{label} = {value:.6} (target {target:.6}, rel err {e:.4} <= {tol})");
    if e <= tol {
        Ok(line)
    } else {
        Err(line)
    }
}

fn all(parts: Vec<Check>) -> Check {
    let failed = parts.iter().any(|p| p.is_err());
    let text = parts
        .into_iter()
        .map(|p| p.unwrap_or_else(|e| format!("FAILED {e}")))
        .collect::<Vec<_>>()
        .join("; ");
    if failed {
        Err(text)
    } else {
        Ok(text)
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

fn vr(rate_mbps: f64, fps: f64) -> VrModel {
    VrModel::new(
        VrStreamParams::from_mbps(rate_mbps, fps).unwrap(),
        VrModelConstants::default(),
    )
    .unwrap()
}

fn ifi_samples(fps: f64, seed: u64) -> Vec<f64> {
    let model = vr(50.0, fps);
    let mut rng = RngStream::new(seed, 0);
    (0..1_000_000).map(|_| model.sample_ifi(&mut rng)).collect()
}

fn c1_ifi_mean() -> Check {
    let (m30, _) = mean_std(&ifi_samples(30.0, 101));
    let (m60, _) = mean_std(&ifi_samples(60.0, 102));
    all(vec![
        within("30 FPS mean IFI [ms]", m30 * 1e3, 1e3 / 30.0, 0.005),
        within("60 FPS mean IFI [ms]", m60 * 1e3, 1e3 / 60.0, 0.005),
    ])
}

fn c2_ifi_std() -> Check {
    let (_, s30) = mean_std(&ifi_samples(30.0, 201));
    let (_, s60) = mean_std(&ifi_samples(60.0, 202));
    all(vec![
        within("30 FPS IFI std [ms]", s30 * 1e3, 0.0827 / 30.0 * 1e3, 0.02),
        within("60 FPS IFI std [ms]", s60 * 1e3, 0.0827 / 60.0 * 1e3, 0.02),
    ])
}

fn c3_frame_size_mean() -> Check {
    let model = vr(50.0, 60.0);
    let mut rng = RngStream::new(301, 0);
    let n = 1_000_000;
    let mean = (0..n)
        .map(|_| model.sample_frame(&mut rng).unwrap() as f64)
        .sum::<f64>()
        / n as f64;
    let mut parts = vec![within("mean frame size [B]", mean, 50e6 / 480.0, 0.01)];
    let mut pick = RngStream::new(302, 0);
    let k = VrModelConstants::default();
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let r = 1e6 + pick.uniform() * 199e6;
        let f = 15.0 + pick.uniform() * 105.0;
        let p = VrStreamParams::new(r, f).unwrap();
        let g = derive_frame_size_model(&p, &k).unwrap();
        worst = worst.max(rel_err(g.mean(), p.mean_frame_size()));
    }
    let line = format!("E[V]=S over 5 random (R,F): worst rel err {worst:.2e} <= 1e-12");
    parts.push(if worst <= 1e-12 { Ok(line) } else { Err(line) });
    all(parts)
}

fn c4_mixture_weight() -> Check {
    let model = vr(50.0, 60.0);
    let mut rng = RngStream::new(401, 0);
    let n = 1_000_000;
    let hi = (0..n)
        .filter(|_| gmm2_sample_labeled(&model.frame_size, &mut rng).1 == Component::Hi)
        .count();
    let freq = hi as f64 / n as f64;
    let line = format!("I-component frequency = {freq:.4} (target 0.360 +/- 0.01)");
    if (freq - 0.36).abs() <= 0.01 {
        Ok(line)
    } else {
        Err(line)
    }
}

fn c5_power_law_units() -> Check {
    let p = VrStreamParams::new(8.0 * 60.0 * 22_836.0, 60.0).unwrap();
    let g = derive_frame_size_model(&p, &VrModelConstants::default()).unwrap();
    let line = format!(
        "S=22836 B: sigma_P = {:.1} B in [4750, 4850], sigma_I = {:.1} B in [8200, 8300]",
        g.sigma_lo, g.sigma_hi
    );
    if (4750.0..=4850.0).contains(&g.sigma_lo) && (8200.0..=8300.0).contains(&g.sigma_hi) {
        Ok(line)
    } else {
        Err(line)
    }
}

fn c6_codec() -> Check {
    let mut rng = RngStream::new(601, 0);
    let mut bad = 0;
    for _ in 0..100_000 {
        let count = (rng.next_u64() % u16::MAX as u64) as u16 + 1;
        let h = FragmentHeader {
            burst_seq: rng.next_u64() as u32,
            frag_index: (rng.next_u64() % count as u64) as u16,
            frag_count: count,
            burst_size: rng.next_u64(),
            timestamp_ns: rng.next_u64(),
        };
        let bytes = h.encode();
        if bytes.len() != HEADER_LEN
            || decode_header(&bytes).ok() != Some(h)
            || decode_header(&bytes).unwrap().encode() != bytes
        {
            bad += 1;
        }
    }
    let line = format!("100000 random headers, 24-byte encoding, {bad} round-trip failures");
    if bad == 0 {
        Ok(line)
    } else {
        Err(line)
    }
}

fn outcomes(events: impl IntoIterator<Item = ReassemblyEvent>) -> (Vec<u32>, Vec<u32>) {
    let (mut rx, mut disc) = (Vec::new(), Vec::new());
    for e in events {
        match e {
            ReassemblyEvent::BurstReceived(b) => rx.push(b.burst_seq),
            ReassemblyEvent::BurstDiscarded(d) => disc.push(d.burst_seq),
            _ => {}
        }
    }
    (rx, disc)
}

fn c7_reassembly() -> Check {
    let model = vr(50.0, 60.0);
    let mut rng = RngStream::new(701, 0);
    let sizes: Vec<u64> = (0..200)
        .map(|_| model.sample_frame(&mut rng).unwrap())
        .collect();
    let bursts: Vec<_> = sizes
        .iter()
        .enumerate()
        .map(|(i, &s)| fragment_burst(i as u32, s, 0, 1278).unwrap())
        .collect();

    // (a) lossless, ordered
    let mut r = BurstReassembler::new();
    let ev: Vec<_> = bursts
        .iter()
        .flatten()
        .flat_map(|f| r.on_fragment(&f.header, f.payload_len, 1))
        .collect();
    let (rx, disc) = outcomes(ev);
    let a_ok = rx.len() == 200 && disc.is_empty();

    // (b) drop fragment 1 of burst 57
    let mut r = BurstReassembler::new();
    let ev: Vec<_> = bursts
        .iter()
        .flatten()
        .filter(|f| !(f.header.burst_seq == 57 && f.header.frag_index == 1))
        .flat_map(|f| r.on_fragment(&f.header, f.payload_len, 1))
        .collect();
    let (rx_b, disc_b) = outcomes(ev);
    let b_ok = disc_b == vec![57] && rx_b.len() == 199 && !rx_b.contains(&57);

    // (c) reversed order within every burst
    let mut r = BurstReassembler::new();
    let ev: Vec<_> = bursts
        .iter()
        .flat_map(|b| b.iter().rev())
        .flat_map(|f| r.on_fragment(&f.header, f.payload_len, 1))
        .collect();
    let (rx_c, disc_c) = outcomes(ev);
    let c_ok = rx_c.len() == 200 && disc_c.is_empty();

    let line = format!(
        "(a) ordered: {}/200 received, {} discarded; (b) drop one of burst 57: discarded {:?}, {} received; (c) reversed: {}/200 received",
        rx.len(),
        disc.len(),
        disc_b,
        rx_b.len(),
        rx_c.len()
    );
    if a_ok && b_ok && c_ok {
        Ok(line)
    } else {
        Err(line)
    }
}

fn c8_fragmentation() -> Check {
    let f = fragment_burst(0, 3000, 0, 1278).unwrap();
    let payloads: Vec<usize> = f.iter().map(|f| f.payload_len).collect();
    let sum: usize = payloads.iter().sum();
    let line = format!("3000 B at 1278: payloads {payloads:?}, sum {sum}");
    if payloads == [1254, 1254, 492] && sum == 3000 {
        Ok(line)
    } else {
        Err(line)
    }
}

fn c9_em_oracle() -> Check {
    let truth = Gmm2Params::new(0.36, 100_000.0, 8000.0, 50_000.0, 5000.0).unwrap();
    let mut rng = RngStream::new(901, 0);
    let xs: Vec<f64> = (0..50_000).map(|_| gmm2_sample(&truth, &mut rng)).collect();
    let cfg = EmConfig::default();
    let fit = fit_gmm2_em(&xs, &cfg, &mut RngStream::new(901, 1)).unwrap();
    let p = fit.params;
    let mut decreases = 0;
    for h in &fit.restart_histories {
        for w in h.windows(2) {
            if w[1] < w[0] - 1e-12 * w[0].abs().max(1.0) {
                decreases += 1;
            }
        }
    }
    let mut parts = vec![
        within("mu_I", p.mu_hi, 100_000.0, 0.02),
        within("mu_P", p.mu_lo, 50_000.0, 0.02),
    ];
    let w_line = format!("w_I = {:.4} (0.36 +/- 0.02)", p.w_hi);
    parts.push(if (p.w_hi - 0.36).abs() <= 0.02 {
        Ok(w_line)
    } else {
        Err(w_line)
    });
    let r_line = format!(
        "{} restarts, best #{}, {} log-likelihood decreases",
        fit.restart_histories.len(),
        fit.best_restart,
        decreases
    );
    parts.push(if fit.restart_histories.len() == 50 && decreases == 0 {
        Ok(r_line)
    } else {
        Err(r_line)
    });
    all(parts)
}

fn c10_fit_closed_loop() -> Check {
    let grid = [10.0, 20.0, 30.0, 40.0, 50.0];
    let mut groups = Vec::new();
    let pairs = grid.iter().flat_map(|&r| [30.0, 60.0].map(move |f| (r, f)));
    for (i, (r, f)) in pairs.enumerate() {
        let model = vr(r, f);
        let mut rng = RngStream::new(1001, i as u64);
        let n = 50_000;
        let mut g = TraceGroup {
            frame_rate: f,
            target_rate_bps: Some(r * 1e6),
            sizes: Vec::with_capacity(n),
            periods_s: Vec::with_capacity(n),
        };
        for _ in 0..n {
            g.sizes.push(model.sample_frame(&mut rng).unwrap() as f64);
            g.periods_s.push(model.sample_ifi(&mut rng));
        }
        groups.push(g);
    }
    let opts = FitOptions {
        em: EmConfig {
            restarts: 3,
            ..Default::default()
        },
        seed: 1002,
        ..Default::default()
    };
    let k = fit_vr_model(&groups, &opts).unwrap().constants;
    let d = VrModelConstants::default();
    all(vec![
        within("s_I", k.s_i, d.s_i, 0.03),
        within("s_P", k.s_p, d.s_p, 0.03),
        within("c", k.c, d.c, 0.03),
        within("b_I", k.b_i, d.b_i, 0.10),
        within("b_P", k.b_p, d.b_p, 0.10),
    ])
}

fn single_station(fps: f64) -> f64 {
    let cfg = ScenarioConfig::uniform(1, SourceSpec::vr(50.0, fps), 866_000_000, 20.0, 1101);
    run_scenario(&cfg).unwrap().burst.mean_delay_ns.unwrap()
}

fn c11_fps_scaling() -> Check {
    let (d30, d60) = (single_station(30.0), single_station(60.0));
    let ratio = d30 / d60;
    let line = format!(
        "mean burst delay 30 FPS {:.1} us / 60 FPS {:.1} us = {ratio:.3} in [1.8, 2.2]",
        d30 / 1e3,
        d60 / 1e3
    );
    if (1.8..=2.2).contains(&ratio) {
        Ok(line)
    } else {
        Err(line)
    }
}

fn c12_station_trends() -> Check {
    let mut means = Vec::new();
    let mut p95s = Vec::new();
    let mut optimistic = true;
    for n in 1..=8 {
        let cfg = ScenarioConfig::uniform(n, SourceSpec::vr(50.0, 60.0), 866_700_000, 10.0, 1201);
        let r = run_scenario(&cfg).unwrap();
        let burst = r.burst.mean_delay_ns.unwrap();
        optimistic &= r.fragment.mean_delay_ns.unwrap() <= burst;
        means.push(burst);
        p95s.push(r.burst.p95_delay_ns.unwrap());
    }
    let mono_mean = means.windows(2).all(|w| w[1] >= w[0]);
    let mono_p95 = p95s.windows(2).all(|w| w[1] >= w[0]);
    let line = format!(
        "mean [us] {:?}; p95 [us] {:?}; fragment mean <= burst mean on every run: {optimistic}",
        means.iter().map(|m| (m / 1e3).round()).collect::<Vec<_>>(),
        p95s.iter().map(|p| p / 1000).collect::<Vec<_>>()
    );
    if mono_mean && mono_p95 && optimistic {
        Ok(line)
    } else {
        Err(line)
    }
}

fn c13_determinism() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let gen = |name: &str| {
        let out = dir.path().join(name);
        let cli = Cli::try_parse_from([
            "burstlab",
            "generate",
            "--rate-mbps",
            "30",
            "--fps",
            "60",
            "--duration-s",
            "20",
            "--seed",
            "1301",
            "--out",
            out.to_str().unwrap(),
        ])
        .unwrap();
        burstlab_cli::run(cli).unwrap();
        std::fs::read(out).unwrap()
    };
    let (a, b) = (gen("a.csv"), gen("b.csv"));
    let sim = || {
        let cli = Cli::try_parse_from([
            "burstlab",
            "simulate",
            "--stations",
            "1..3",
            "--duration-s",
            "3",
            "--loss",
            "0.01",
            "--seed",
            "1302",
        ])
        .unwrap();
        let Command::Simulate(args) = cli.command else {
            unreachable!()
        };
        simulate_json(&args).unwrap()
    };
    let (s1, s2) = (sim(), sim());
    let gen_args = match Cli::try_parse_from([
        "burstlab",
        "generate",
        "--seed",
        "1303",
        "--duration-s",
        "2",
    ])
    .unwrap()
    .command
    {
        Command::Generate(a) => a,
        _ => unreachable!(),
    };
    let t1 = generate_trace(&gen_args).unwrap().to_csv_string();
    let t2 = generate_trace(&gen_args).unwrap().to_csv_string();
    let line = format!(
        "generate files identical: {} ({} B); simulate sweep identical: {} ({} B); in-process generate identical: {}",
        a == b,
        a.len(),
        s1 == s2,
        s1.len(),
        t1 == t2
    );
    if a == b && s1 == s2 && t1 == t2 && !a.is_empty() {
        Ok(line)
    } else {
        Err(line)
    }
}

fn main() {
    let criteria: [(&str, fn() -> Check); 13] = [
        ("1  IFI mean", c1_ifi_mean),
        ("2  IFI std", c2_ifi_std),
        ("3  frame-size mean", c3_frame_size_mean),
        ("4  mixture weight", c4_mixture_weight),
        ("5  power-law units", c5_power_law_units),
        ("6  header codec", c6_codec),
        ("7  reassembly semantics", c7_reassembly),
        ("8  fragmentation", c8_fragmentation),
        ("9  EM oracle", c9_em_oracle),
        ("10 fit closed loop", c10_fit_closed_loop),
        ("11 FPS delay scaling", c11_fps_scaling),
        ("12 station trends", c12_station_trends),
        ("13 determinism", c13_determinism),
    ];
    let mut failures = 0;
    for (name, check) in criteria {
        let t = Instant::now();
        let result = check();
        let secs = t.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS [{name}] ({secs:.1}s) {detail}"),
            Err(detail) => {
                failures += 1;
                println!("FAIL [{name}] ({secs:.1}s) {detail}");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failures} failed",
        criteria.len() - failures
    );
    if failures > 0 {
        std::process::exit(1);
    }
}
