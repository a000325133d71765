//! Acceptance criteria, one PASS/FAIL line each. Exits non-zero if any fail.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use dtn_core::harness::{self, preset, run, Outcome, RunOutput, Scenario, PRESET_NAMES};
use dtn_core::integrity::{attach_integrity, crc32, Coverage, SuiteId};
use dtn_core::model::{Bundle, EndpointId, ExtensionBlock};
use dtn_core::wire::{
    decode_bundle, decode_sdnv, encode_bundle, encode_sdnv, DecodeError, SdnvError,
};
use num_bigint::BigUint;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Binomial, DiscreteCDF};

type Verdict = Result<String, String>;

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn oracle_sdnv(v: u64) -> Vec<u8> {
    let mut digits = BigUint::from(v).to_radix_be(128);
    let last = digits.len() - 1;
    for d in &mut digits[..last] {
        *d |= 0x80;
    }
    digits
}

fn codec_soundness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let random: Vec<u64> = (0..10_000)
        .map(|_| rng.random::<u64>() >> rng.random_range(0..64))
        .collect();
    let mut mismatches = 0;
    let mut checked = 0;
    for v in (0..1u64 << 21).chain(random) {
        let enc = encode_sdnv(v);
        if enc != oracle_sdnv(v) || decode_sdnv(&enc) != Ok((v, enc.len())) {
            mismatches += 1;
        }
        checked += 1;
    }
    check(
        mismatches == 0,
        format!("{checked} values, {mismatches} mismatches against base-128 oracle"),
    )
}

fn random_eid(rng: &mut ChaCha8Rng) -> EndpointId {
    if rng.random_bool(0.1) {
        return EndpointId::null();
    }
    let printable = |rng: &mut ChaCha8Rng, n: usize, slash: bool| -> String {
        (0..n)
            .map(|_| loop {
                let c = rng.random_range(0x20u8..=0x7e);
                if slash || c != b'/' {
                    break c as char;
                }
            })
            .collect()
    };
    let (node_len, app_len) = (rng.random_range(1..8), rng.random_range(1..12));
    let node = printable(rng, node_len, false);
    let app = printable(rng, app_len, true);
    EndpointId::parse(&format!("dtn:{node}/{app}")).expect("generated endpoint is valid")
}

fn random_bundle(rng: &mut ChaCha8Rng) -> Bundle {
    let wide = |rng: &mut ChaCha8Rng| rng.random::<u64>() >> rng.random_range(0..64);
    let payload_len = rng.random_range(0..600);
    let mut payload = vec![0u8; payload_len];
    rng.fill_bytes(&mut payload);
    let mut b = Bundle::new_unchecked(
        random_eid(rng),
        random_eid(rng),
        wide(rng),
        wide(rng),
        wide(rng).max(1),
        payload,
    );
    b.processing_flags = wide(rng);
    if rng.random_bool(0.5) {
        b.age_ms = Some(wide(rng));
    }
    for _ in 0..rng.random_range(0..3) {
        let block_type = loop {
            let t: u8 = rng.random();
            if ![1, 10, 13].contains(&t) {
                break t;
            }
        };
        let body = (0..rng.random_range(0..20)).map(|_| rng.random()).collect();
        b.extensions.push(ExtensionBlock {
            block_type,
            flags: wide(rng) & !1,
            body,
        });
    }
    match rng.random_range(0..3) {
        0 => b,
        n => {
            let suite = if n == 1 {
                SuiteId::Crc32ReliabilityOnly
            } else {
                SuiteId::HmacSha256
            };
            let coverage = Coverage::from_bits(rng.random_range(1..=3)).unwrap();
            attach_integrity(&b, suite, coverage, Some(b"acceptance")).unwrap()
        }
    }
}

fn listed(e: &DecodeError) -> bool {
    matches!(
        e,
        DecodeError::BadVersion(_)
            | DecodeError::Truncated
            | DecodeError::TrailingGarbage(_)
            | DecodeError::MissingPayload
            | DecodeError::DuplicateSingletonBlock(_)
            | DecodeError::Sdnv(SdnvError::Overflow | SdnvError::NonMinimal)
            | DecodeError::InvalidEndpoint
            | DecodeError::ZeroLifetime
            | DecodeError::MalformedBlock(_)
    )
}

fn bundle_round_trip() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = 0;
    let mut images = Vec::with_capacity(10_000);
    for _ in 0..10_000 {
        let b = random_bundle(&mut rng);
        let image = encode_bundle(&b);
        if decode_bundle(&image).as_ref() != Ok(&b) {
            mismatches += 1;
        }
        images.push(image);
    }

    // half noise, half edited valid images
    let mut unlisted = 0;
    let mut accepted = 0;
    for i in 0..100_000 {
        let input = if i % 2 == 0 {
            let mut buf = vec![0u8; rng.random_range(0..128)];
            rng.fill_bytes(&mut buf);
            if !buf.is_empty() && rng.random_bool(0.5) {
                buf[0] = 0x06;
            }
            buf
        } else {
            let mut img = images[rng.random_range(0..images.len())].clone();
            match rng.random_range(0..3) {
                0 => {
                    let at = rng.random_range(0..img.len());
                    img[at] = rng.random();
                }
                1 => img.truncate(rng.random_range(0..img.len())),
                _ => img.push(rng.random()),
            }
            img
        };
        match std::panic::catch_unwind(|| decode_bundle(&input)) {
            Ok(Ok(_)) => accepted += 1,
            Ok(Err(e)) if listed(&e) => {}
            _ => unlisted += 1,
        }
    }
    check(
        mismatches == 0 && unlisted == 0,
        format!(
            "10000 random bundles, {mismatches} round-trip mismatches; 100000 fuzz inputs, {unlisted} crashes or unlisted errors ({accepted} parsed)"
        ),
    )
}

fn crc32_bitwise(data: &[u8]) -> u32 {
    let mut reg = 0xFFFF_FFFFu32;
    for &byte in data {
        let byte = byte.reverse_bits();
        for i in (0..8).rev() {
            let top = reg >> 31;
            reg <<= 1;
            if top ^ u32::from((byte >> i) & 1) == 1 {
                reg ^= 0x04C1_1DB7;
            }
        }
    }
    reg.reverse_bits() ^ 0xFFFF_FFFF
}

fn crc_vectors() -> Verdict {
    let oracle_ok = crc32_bitwise(b"") == 0 && crc32_bitwise(b"123456789") == 0xCBF4_3926;
    let impl_ok = crc32(b"") == 0 && crc32(b"123456789") == 0xCBF4_3926;
    let mut data = vec![0u8; 1024];
    ChaCha8Rng::seed_from_u64(3).fill_bytes(&mut data);
    let clean = crc32(&data);
    let mut detected = 0;
    for bit in 0..data.len() * 8 {
        data[bit / 8] ^= 1 << (bit % 8);
        if crc32(&data) != clean {
            detected += 1;
        }
        data[bit / 8] ^= 1 << (bit % 8);
    }
    check(
        oracle_ok && impl_ok && detected == 8192,
        format!(
            "oracle vectors {oracle_ok}, implementation vectors {impl_ok}, single-bit flips detected {detected}/8192 on 1 KiB"
        ),
    )
}

struct Runs {
    silent: RunOutput,
    fixed: RunOutput,
}

fn silent_corruption(runs: &Runs) -> Verdict {
    let s = preset("silent_corruption").unwrap();
    let bits = (s.traffic[0].size * 8) as f64;
    let n = u64::from(s.traffic[0].count);
    let p = 1.0 - (1.0 - s.faults[0].transit_ber).powf(bits);
    let dist = Binomial::new(p, n).unwrap();
    let (lo, hi) = (dist.inverse_cdf(0.005), dist.inverse_cdf(0.995));
    let m = &runs.silent.metrics;
    let got = m.delivered_corrupt_undetected;
    let detected_by_protocol = m.dropped_integrity;
    let all_skipped = runs
        .silent
        .trace
        .records()
        .iter()
        .filter(|r| r.event == "delivered_corrupt_undetected")
        .all(|r| r.detail.contains("verdict=skipped"));
    check(
        (lo..=hi).contains(&got) && detected_by_protocol == 0 && all_skipped,
        format!(
            "delivered_corrupt_undetected {got}, expected {:.1}, 99% interval [{lo}, {hi}]; protocol detections {detected_by_protocol}",
            p * n as f64
        ),
    )
}

fn remedy(runs: &Runs) -> Verdict {
    // bundles whose payload (the covered region) was corrupted when their
    // journey ended in run A, whether delivered or dropped
    let covered_hits = runs
        .silent
        .outcomes
        .iter()
        .filter(|(tag, o)| {
            **o != Outcome::DroppedDecodeError
                && runs.silent.payload_corrupted.get(tag) == Some(&true)
        })
        .count() as i64;
    let m = &runs.fixed.metrics;
    let diff = m.dropped_integrity as i64 - covered_hits;
    check(
        m.delivered_corrupt_undetected == 0 && diff.abs() <= 1,
        format!(
            "delivered_corrupt_undetected {}, dropped_integrity {} vs {covered_hits} covered corruptions in the unprotected run",
            m.delivered_corrupt_undetected, m.dropped_integrity
        ),
    )
}

fn node_count(run: &RunOutput, node: &str, f: impl Fn(&harness::Metrics) -> u64) -> u64 {
    run.nodes
        .iter()
        .find(|n| n.node == node)
        .map_or(0, |n| f(&n.counts))
}

fn clock_skew(all: &mut Vec<RunOutput>) -> Verdict {
    let skew = run(&preset("clock_skew").unwrap());
    let fixed = run(&preset("age_fix").unwrap());
    let at_relay = node_count(&skew, "b", |m| m.dropped_expired);
    let ok =
        at_relay == skew.metrics.created && fixed.metrics.delivered_clean == fixed.metrics.created;
    let detail = format!(
        "clock_skew: {at_relay}/{} dropped_expired at relay; age_fix: {}/{} delivered_clean",
        skew.metrics.created, fixed.metrics.delivered_clean, fixed.metrics.created
    );
    all.push(skew);
    all.push(fixed);
    check(ok, detail)
}

fn with_coverage(mut s: Scenario, coverage: Coverage) -> Scenario {
    for t in &mut s.traffic {
        t.coverage = coverage;
    }
    s
}

fn tamper(all: &mut Vec<RunOutput>) -> Verdict {
    let base = preset("tamper_relay").unwrap();
    let payload_only = run(&base);
    let primary = run(&with_coverage(base.clone(), Coverage::PRIMARY));
    let both = run(&with_coverage(base, Coverage::BOTH));
    let n = payload_only.metrics.created;
    let downstream_expired = node_count(&payload_only, "c", |m| m.dropped_expired);
    let ok = downstream_expired == n
        && payload_only.metrics.dropped_integrity == 0
        && node_count(&primary, "c", |m| m.dropped_integrity) == n
        && node_count(&both, "c", |m| m.dropped_integrity) == n;
    let detail = format!(
        "payload coverage: {downstream_expired}/{n} expired downstream, {} integrity drops; primary coverage: {}/{n} and both: {}/{n} dropped_integrity at next verifying node",
        payload_only.metrics.dropped_integrity,
        node_count(&primary, "c", |m| m.dropped_integrity),
        node_count(&both, "c", |m| m.dropped_integrity)
    );
    all.extend([payload_only, primary, both]);
    check(ok, detail)
}

fn determinism(all: &[RunOutput]) -> Verdict {
    let mut differing = Vec::new();
    let mut runs = 0;
    for name in PRESET_NAMES {
        let s = preset(name).unwrap();
        let a = run(&s);
        let b = run(&s);
        runs += 2;
        if a.trace.to_jsonl() != b.trace.to_jsonl() || a.metrics != b.metrics {
            differing.push(name);
        }
        if !a.metrics.conservation_holds() || !b.metrics.conservation_holds() {
            differing.push(name);
        }
    }
    let unbalanced = all
        .iter()
        .filter(|r| !r.metrics.conservation_holds())
        .count();
    check(
        differing.is_empty() && unbalanced == 0,
        format!(
            "{} presets run twice, differing or unbalanced: {differing:?}; conservation violations across {} suite runs: {unbalanced}",
            PRESET_NAMES.len(),
            runs + all.len()
        ),
    )
}

struct Proc {
    child: Child,
}

impl Drop for Proc {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Starts a binary and waits for "listening on <addr>" on its stderr.
fn spawn_listening(
    bin: &str,
    args: &[&str],
) -> Result<(Proc, String, mpsc::Receiver<String>), String> {
    let mut child = Command::new(bin)
        .args(args)
        .env("RUST_LOG", "info")
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| format!("spawning {bin}: {e}"))?;
    let stderr = child.stderr.take().unwrap();
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for line in BufReader::new(stderr).lines().map_while(Result::ok) {
            if tx.send(line).is_err() {
                break;
            }
        }
    });
    let proc = Proc { child };
    let deadline = Instant::now() + Duration::from_secs(10);
    while Instant::now() < deadline {
        match rx.recv_timeout(Duration::from_millis(100)) {
            Ok(line) => {
                if let Some(i) = line.find("listening on ") {
                    let addr = line[i + "listening on ".len()..].trim().to_string();
                    return Ok((proc, addr, rx));
                }
            }
            Err(mpsc::RecvTimeoutError::Timeout) => {}
            Err(mpsc::RecvTimeoutError::Disconnected) => break,
        }
    }
    Err(format!("{bin} never reported its listen address"))
}

fn live_transport() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out_dir = dir.path().join("out");
    let mut payload = vec![0u8; 1 << 20];
    ChaCha8Rng::seed_from_u64(9).fill_bytes(&mut payload);
    let payload_path = dir.path().join("payload.bin");
    fs::write(&payload_path, &payload).map_err(|e| e.to_string())?;

    let (recv, recv_addr, _recv_log) = spawn_listening(
        env!("CARGO_BIN_EXE_bp-recv"),
        &[
            "--node",
            "127.0.0.1:0",
            "--count",
            "1",
            "--policy",
            "reliability",
            "--out",
            out_dir.to_str().unwrap(),
        ],
    )?;

    let config = format!(
        r#"{{"node_id": "relay", "policy": {{"mode": "reliability"}}, "routes": {{"dst": "dst"}}, "peers": {{"dst": "{recv_addr}"}}}}"#
    );
    let config_path = dir.path().join("relay.json");
    fs::write(&config_path, config).map_err(|e| e.to_string())?;
    let (_relay, relay_addr, relay_log) = spawn_listening(
        env!("CARGO_BIN_EXE_bp-node"),
        &[
            "--config",
            config_path.to_str().unwrap(),
            "--listen",
            "127.0.0.1:0",
        ],
    )?;

    let send = Command::new(env!("CARGO_BIN_EXE_bp-send"))
        .args([
            "--to",
            "dtn:dst/sink",
            "--node",
            &relay_addr,
            "--lifetime",
            "600",
            "--suite",
            "1",
        ])
        .arg(&payload_path)
        .output()
        .map_err(|e| e.to_string())?;
    if !send.status.success() {
        return Err(format!(
            "bp-send failed: {}",
            String::from_utf8_lossy(&send.stderr)
        ));
    }

    let recv_out = wait_with_timeout(recv, Duration::from_secs(30))?;
    let relay_lines: Vec<String> = relay_log.try_iter().collect();
    let relay_passed = relay_lines
        .iter()
        .any(|l| l.contains("queued") && l.contains("Pass"));
    let files: Vec<_> = fs::read_dir(&out_dir)
        .map_err(|e| e.to_string())?
        .filter_map(Result::ok)
        .collect();
    let identical =
        files.len() == 1 && fs::read(files[0].path()).map_err(|e| e.to_string())? == payload;
    let stdout = String::from_utf8_lossy(&recv_out.0).to_string();
    check(
        recv_out.1 && identical && relay_passed && stdout.contains("verdict=Pass"),
        format!(
            "1 MiB payload byte-identical {identical}, relay verification pass {relay_passed}, receiver: {}",
            stdout.trim()
        ),
    )
}

fn wait_with_timeout(mut proc: Proc, limit: Duration) -> Result<(Vec<u8>, bool), String> {
    let deadline = Instant::now() + limit;
    loop {
        if let Some(status) = proc.child.try_wait().map_err(|e| e.to_string())? {
            let mut out = Vec::new();
            if let Some(mut s) = proc.child.stdout.take() {
                std::io::Read::read_to_end(&mut s, &mut out).map_err(|e| e.to_string())?;
            }
            return Ok((out, status.success()));
        }
        if Instant::now() > deadline {
            return Err("bp-recv did not finish".into());
        }
        thread::sleep(Duration::from_millis(50));
    }
}

fn main() {
    let mut results: Vec<(u32, &str, Verdict, Duration)> = Vec::new();
    let mut timed = |n: u32, name: &'static str, f: &mut dyn FnMut() -> Verdict| {
        let start = Instant::now();
        let v = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f)).unwrap_or_else(|e| {
            Err(format!(
                "panicked: {:?}",
                e.downcast_ref::<String>().cloned().unwrap_or_default()
            ))
        });
        let elapsed = start.elapsed();
        let (tag, detail) = match &v {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!(
            "{tag} criterion {n} ({name}, {:.1}s): {detail}",
            elapsed.as_secs_f64()
        );
        results.push((n, name, v, elapsed));
    };

    let mut all_runs: Vec<RunOutput> = Vec::new();
    timed(1, "codec soundness", &mut codec_soundness);
    timed(2, "bundle round-trip and fuzz", &mut bundle_round_trip);
    timed(3, "crc vectors and single-bit detection", &mut crc_vectors);
    let runs = Runs {
        silent: run(&preset("silent_corruption").unwrap()),
        fixed: run(&preset("reliability_fix").unwrap()),
    };
    timed(4, "silent corruption", &mut || silent_corruption(&runs));
    timed(5, "reliability remedy", &mut || remedy(&runs));
    all_runs.push(runs.silent);
    all_runs.push(runs.fixed);
    timed(6, "clock skew and age remedy", &mut || {
        clock_skew(&mut all_runs)
    });
    timed(7, "tampering relay", &mut || tamper(&mut all_runs));
    timed(8, "determinism and conservation", &mut || {
        determinism(&all_runs)
    });
    timed(9, "live transport", &mut live_transport);

    let failed: BTreeMap<u32, &str> = results
        .iter()
        .filter(|r| r.2.is_err())
        .map(|r| (r.0, r.1))
        .collect();
    println!(
        "acceptance: {} passed, {} failed",
        results.len() - failed.len(),
        failed.len()
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
