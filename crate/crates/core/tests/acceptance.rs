//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::HashSet;
use std::time::{Duration, Instant};

use bepac_core::attack::{
    self, ambiguity_probability, count_ambiguous, normalize_triple, FeistelOracle, Triple,
};
use bepac_core::ledger::{CrashPoint, LedgerState, DIGEST_LEN, HEADER_LEN};
use bepac_core::randcheck::{code_stream, code_word_width, monobit, serial_pairs};
use bepac_core::{
    plan_scheme, Alphabet, Codebook, FeistelInstance, KeySet, Ledger, LedgerError, MasterKey,
    RedeemOutcome, SchemeConfig, SchemeParams, VerifyOutcome,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn pinned_master() -> MasterKey {
    MasterKey::new(b"bepac-test-key-0".to_vec()).unwrap()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// (A, desired N, desired P, N, P, code length l) per table row.
const REFERENCE_SCHEMES: [(u32, u64, u64, u64, u64, u16); 27] = [
    (8, 10, 1000, 10, 26_214, 6),
    (8, 100, 1000, 100, 20_968, 7),
    (8, 1_000, 1000, 1_000, 16_777, 8),
    (8, 10_000, 1000, 10_004, 13_416, 9),
    (8, 100_000, 1000, 100_003, 10_737, 10),
    (8, 1_000_000, 1000, 1_000_006, 68_719, 12),
    (8, 10_000_000, 1000, 10_001_379, 54_968, 13),
    (8, 100_000_000, 1000, 100_001_057, 43_980, 14),
    (8, 1_000_000_000, 1000, 1_000_010_575, 35_184, 15),
    (20, 10, 1000, 10, 16_000, 4),
    (20, 100, 1000, 100, 32_000, 5),
    (20, 1_000, 1000, 1_000, 64_000, 6),
    (20, 10_000, 1000, 10_000, 128_000, 7),
    (20, 100_000, 1000, 100_000, 12_800, 7),
    (20, 1_000_000, 1000, 1_000_000, 25_600, 8),
    (20, 10_000_000, 1000, 10_000_000, 51_200, 9),
    (20, 100_000_000, 1000, 100_000_000, 102_400, 10),
    (20, 1_000_000_000, 1000, 1_000_000_000, 10_240, 10),
    (31, 10, 1000, 10, 92_352, 4),
    (31, 100, 1000, 100, 286_285, 5),
    (31, 1_000, 1000, 1_000, 28_613, 5),
    (31, 10_000, 1000, 10_000, 88_750, 6),
    (31, 100_000, 1000, 100_000, 275_125, 7),
    (31, 1_000_000, 1000, 1_000_567, 27_497, 7),
    (31, 10_000_000, 1000, 10_000_012, 85_289, 8),
    (31, 100_000_000, 1000, 100_010_675, 264_368, 9),
    (31, 1_000_000_000, 1000, 1_001_045_818, 26_412, 9),
];

fn table_row(row: &(u32, u64, u64, u64, u64, u16)) -> SchemeParams {
    let (a, _, _, n, p, l) = *row;
    let omega = (l % 2) as u8;
    SchemeParams::new(a, n, p, l - u16::from(omega), omega)
}

fn criterion_1() -> Outcome {
    for row in &REFERENCE_SCHEMES {
        let params = table_row(row);
        ensure(params.is_valid(), || format!("row {params} rejected"))?;
        ensure(row.3 >= row.1 && row.4 >= row.2, || {
            format!("row {params} below desired values")
        })?;
    }
    Ok(format!("{} rows valid", REFERENCE_SCHEMES.len()))
}

fn criterion_2() -> Outcome {
    let mut count = 0;
    for a in [8u32, 10, 20, 31] {
        for e in 1..=6 {
            let n = 10u64.pow(e);
            for p in [1_000u64, 10_000] {
                let out = plan_scheme(a, n, p).map_err(|e| e.to_string())?;
                ensure(out.is_valid(), || {
                    format!("plan({a},{n},{p}) = {out} invalid")
                })?;
                ensure(out.num_codes >= n && out.guess >= p, || {
                    format!("plan({a},{n},{p}) = {out} under target")
                })?;
                count += 1;
            }
        }
    }
    Ok(format!("{count} plans valid"))
}

fn criterion_3() -> Outcome {
    let keys = KeySet::derive(&pinned_master(), 6).unwrap();
    let configs = [
        (
            SchemeParams::new(8, 10_004, 13_416, 8, 1),
            "01234567".to_string(),
        ),
        (
            SchemeParams::new(31, 10_000, 88_750, 6, 0),
            bepac_core::scheme::CONSONANT_ALPHABET.to_string(),
        ),
        (
            plan_scheme(20, 1_000_000, 1000).unwrap(),
            "0123456789ABCDEFGHJK".to_string(),
        ),
    ];
    let mut total = 0;
    for (params, chars) in configs {
        let cfg = SchemeConfig::new(params, Alphabet::new(&chars).unwrap(), 6)
            .map_err(|e| e.to_string())?;
        let book = Codebook::from_config(&cfg, &keys).map_err(|e| e.to_string())?;
        let limit = params.num_codes.min(10_000);
        let mut seen = HashSet::new();
        for i in 0..limit {
            let code = book.generate(i).map_err(|e| e.to_string())?;
            let back = book.verify_str(code.text()).map_err(|e| e.to_string())?;
            ensure(back == VerifyOutcome::Valid(i), || {
                format!("{params}: index {i} verified as {back:?}")
            })?;
            ensure(seen.insert(code.text().to_string()), || {
                format!("{params}: duplicate code at {i}")
            })?;
        }
        total += limit;
    }
    Ok(format!("{total} codes round-tripped, all distinct"))
}

fn criterion_4() -> Outcome {
    let keys = KeySet::derive(&pinned_master(), 6).unwrap();
    let schemes = [
        (SchemeParams::new(4, 4, 16, 2, 1), "ACGT"),
        (SchemeParams::new(4, 100, 160, 6, 1), "ACGT"),
        (SchemeParams::new(16, 200, 300, 4, 0), "0123456789ABCDEF"),
    ];
    let mut report = Vec::new();
    for (params, chars) in schemes {
        let space = params.code_space().unwrap();
        ensure(space <= 1 << 16, || {
            format!("{params}: space {space} too large")
        })?;
        let cfg = SchemeConfig::new(params, Alphabet::new(chars).unwrap(), 6)
            .map_err(|e| e.to_string())?;
        let book = Codebook::from_config(&cfg, &keys).map_err(|e| e.to_string())?;
        let valid = (0..space)
            .filter(|&a| book.verify_value(a).is_valid())
            .count() as u64;
        ensure(valid == params.num_codes, || {
            format!("{params}: {valid} valid strings, expected N")
        })?;
        // N / A^(λ+ω) ≤ 1/P  ⇔  N·P ≤ A^(λ+ω)
        ensure(
            u128::from(valid) * u128::from(params.guess) <= space,
            || format!("{params}: guess bound violated"),
        )?;
        report.push(format!("{valid}/{space}"));
    }
    Ok(format!("valid strings {}", report.join(", ")))
}

fn criterion_5() -> Outcome {
    let keys = [
        KeySet::derive(&pinned_master(), 6).unwrap(),
        KeySet::derive(&pinned_master(), 7).unwrap(),
    ];
    for k in [8u64, 16, 32, 64] {
        for keyset in &keys {
            let f = FeistelInstance::from_keys(k, keyset).map_err(|e| e.to_string())?;
            let domain = f.domain();
            let mut seen = vec![false; domain as usize];
            for m in 0..domain {
                let c = f.encrypt(m).map_err(|e| e.to_string())?;
                ensure(!seen[c as usize], || {
                    format!("k={k} r={}: collision at {m}", f.rounds())
                })?;
                seen[c as usize] = true;
                ensure(f.decrypt(c) == Ok(m), || {
                    format!("k={k} r={}: decrypt mismatch at {m}", f.rounds())
                })?;
                ensure(f.encrypt(f.decrypt(m).unwrap()) == Ok(m), || {
                    format!("k={k}: encrypt∘decrypt at {m}")
                })?;
            }
        }
    }
    Ok("k in {8,16,32,64}, r in {6,7}: permutation with exact inverse".into())
}

fn criterion_6() -> Outcome {
    let mut worst = Vec::new();
    for k in [8u64, 16, 32, 64] {
        let mut max_q = 0;
        let mut done = 0;
        let mut seed = k * 1000;
        while done < 20 {
            let hidden = Triple::random(k, &mut ChaCha8Rng::seed_from_u64(seed));
            seed += 1;
            let mut oracle = FeistelOracle::new(hidden.clone());
            let report = attack::recover(&mut oracle, attack::DEFAULT_M_MAX)
                .map_err(|e| format!("k={k} seed={}: {e}", seed - 1))?;
            ensure(report.queries_used <= 4 * k, || {
                format!("k={k}: {} queries > 4k", report.queries_used)
            })?;
            for l in 0..k {
                for r in 0..k {
                    ensure(
                        report.triple.predict(l, r).unwrap() == hidden.eval(l, r).unwrap(),
                        || format!("k={k}: prediction differs at ({l},{r})"),
                    )?;
                }
            }
            ensure(report.triple == normalize_triple(&hidden), || {
                format!("k={k}: not the normalized triple")
            })?;
            max_q = max_q.max(report.queries_used);
            done += 1;
        }
        worst.push(format!("k={k} max_queries={max_q}/{}", 4 * k));
    }
    Ok(worst.join(" "))
}

/// Smallest c with P[Binomial(n, p) ≤ c] ≥ q.
fn binomial_quantile(n: u64, p: f64, q: f64) -> u64 {
    let mut pmf = (1.0 - p).powf(n as f64);
    let mut cdf = pmf;
    let mut c = 0;
    while cdf < q && c < n {
        pmf *= (n - c) as f64 / (c + 1) as f64 * p / (1.0 - p);
        c += 1;
        cdf += pmf;
    }
    c
}

fn criterion_7() -> Outcome {
    for k in 2u64..=1024 {
        for m in 0..=4u32 {
            let p = ambiguity_probability(k, m);
            ensure(p < 1.0 / (k as f64).powi(m as i32), || {
                format!("p({k},{m}) = {p} not below 1/k^m")
            })?;
        }
    }
    let k = 256;
    let trials = 10_000;
    let hits = count_ambiguous(k, 1, trials, &mut ChaCha8Rng::seed_from_u64(0x5EED));
    let limit = binomial_quantile(trials, 1.0 / k as f64, 0.99);
    let observed = hits as f64 / trials as f64;
    ensure(hits <= limit, || {
        format!("{hits} ambiguous of {trials}, 99% limit {limit}")
    })?;
    Ok(format!(
        "predicted={:.5} observed={observed:.5} ({hits}/{trials}) limit={limit}",
        ambiguity_probability(k, 1)
    ))
}

fn criterion_8() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let keys = KeySet::derive(&pinned_master(), 6).unwrap();

    // Size at the deployment scale: 10^6 codes.
    let big = SchemeConfig::new(
        SchemeParams::new(20, 1_000_000, 25_600, 8, 0),
        Alphabet::new("0123456789ABCDEFGHJK").unwrap(),
        6,
    )
    .unwrap();
    let big_path = dir.path().join("big.ledger");
    drop(Ledger::create(&big_path, &big, &keys).map_err(|e| e.to_string())?);
    let size = std::fs::metadata(&big_path)
        .map_err(|e| e.to_string())?
        .len();
    ensure((125_000..=125_100).contains(&size), || {
        format!("file size {size}")
    })?;
    ensure(size as usize == HEADER_LEN + 125_000 + DIGEST_LEN, || {
        format!("file size {size}")
    })?;

    // Scripted issue / redeem / crash / reopen.
    let cfg = SchemeConfig::new(
        plan_scheme(10, 50, 1000).unwrap(),
        Alphabet::default_for(10).unwrap(),
        6,
    )
    .unwrap();
    let book = Codebook::from_config(&cfg, &keys).unwrap();
    let path = dir.path().join("small.ledger");
    let err = |e: LedgerError| e.to_string();
    let mut ledger = Ledger::create(&path, &cfg, &keys).map_err(err)?;
    let mut codes = Vec::new();
    for _ in 0..6 {
        codes.push(ledger.issue_next(&book).map_err(err)?.1);
    }
    let mut redeemed = HashSet::new();
    fn note(seen: &mut HashSet<u64>, o: RedeemOutcome) -> Result<(), String> {
        match o {
            RedeemOutcome::Redeemed(i) => {
                ensure(seen.insert(i), || format!("index {i} redeemed twice"))
            }
            other => Err(format!("expected a fresh redemption, got {other:?}")),
        }
    }
    note(
        &mut redeemed,
        ledger.redeem(&book, codes[0].text()).map_err(err)?,
    )?;
    note(
        &mut redeemed,
        ledger.redeem(&book, codes[1].text()).map_err(err)?,
    )?;

    // Crash before the rename: redemption of code 2 is lost and can be retried.
    ledger.inject_crash(CrashPoint::BeforeRename);
    ensure(ledger.redeem(&book, codes[2].text()).is_err(), || {
        "crash not reported".into()
    })?;
    drop(ledger);
    let mut ledger = Ledger::open(&path, &cfg, &keys).map_err(err)?;
    ensure(!ledger.state().is_redeemed(2), || {
        "lost write became visible".into()
    })?;
    note(
        &mut redeemed,
        ledger.redeem(&book, codes[2].text()).map_err(err)?,
    )?;

    // Crash after the rename: the redemption of code 3 is durable.
    ledger.inject_crash(CrashPoint::AfterRename);
    ensure(ledger.redeem(&book, codes[3].text()).is_err(), || {
        "crash not reported".into()
    })?;
    drop(ledger);
    let mut ledger = Ledger::open(&path, &cfg, &keys).map_err(err)?;
    ensure(ledger.state().is_redeemed(3), || {
        "durable write lost".into()
    })?;
    redeemed.insert(3);

    // Torn temp file: state unchanged.
    ledger.inject_crash(CrashPoint::MidTempWrite);
    ensure(ledger.issue_next(&book).is_err(), || {
        "crash not reported".into()
    })?;
    drop(ledger);
    let mut ledger = Ledger::open(&path, &cfg, &keys).map_err(err)?;
    ensure(ledger.stats().issued == 6, || {
        format!("issued {}", ledger.stats().issued)
    })?;

    // Replays of everything all come back AlreadyUsed.
    for (i, code) in codes.iter().enumerate().take(4) {
        let out = ledger.redeem(&book, code.text()).map_err(err)?;
        ensure(out == RedeemOutcome::AlreadyUsed(i as u64), || {
            format!("replay of {i}: {out:?}")
        })?;
    }
    note(
        &mut redeemed,
        ledger.redeem(&book, codes[4].text()).map_err(err)?,
    )?;
    drop(ledger);
    let snapshot = LedgerState::read(&path).map_err(err)?;
    let stats = snapshot.stats();
    ensure(stats.redeemed == 5 && stats.issued == 6, || {
        format!("{stats:?}")
    })?;
    ensure(redeemed.len() == 5, || format!("redeemed {redeemed:?}"))?;
    Ok(format!(
        "size={size} bytes, exactly-once over crash script ({stats:?})"
    ))
}

fn criterion_9() -> Outcome {
    let params = SchemeParams::new(8, 10_004, 13_416, 8, 1);
    let cfg = SchemeConfig::new(params, Alphabet::new("01234567").unwrap(), 6).unwrap();
    let keys = KeySet::derive(&pinned_master(), 6).unwrap();
    let book = Codebook::from_config(&cfg, &keys).unwrap();
    let stream = code_stream(&book, 10_000).map_err(|e| e.to_string())?;
    ensure(
        stream.len() == 10_000 * code_word_width(&params) as usize,
        || format!("{} bits", stream.len()),
    )?;
    let mono = monobit(&stream).map_err(|e| e.to_string())?;
    let serial = serial_pairs(&stream).map_err(|e| e.to_string())?;
    ensure(mono.pass, || format!("monobit p={}", mono.p_value))?;
    ensure(serial.pass, || format!("serial p={}", serial.p_value))?;
    Ok(format!(
        "{} bits, monobit p={:.4}, serial p={:.4}",
        stream.len(),
        mono.p_value,
        serial.p_value
    ))
}

fn main() {
    let criteria = [
        Criterion {
            id: 1,
            name: "reference scheme validity",
            budget: Duration::from_secs(1),
            run: criterion_1,
        },
        Criterion {
            id: 2,
            name: "planner soundness",
            budget: Duration::from_secs(1),
            run: criterion_2,
        },
        Criterion {
            id: 3,
            name: "round-trip and injectivity",
            budget: Duration::from_secs(30),
            run: criterion_3,
        },
        Criterion {
            id: 4,
            name: "guess bound",
            budget: Duration::from_secs(10),
            run: criterion_4,
        },
        Criterion {
            id: 5,
            name: "feistel bijectivity and inverse",
            budget: Duration::from_secs(10),
            run: criterion_5,
        },
        Criterion {
            id: 6,
            name: "attack equivalence",
            budget: Duration::from_secs(60),
            run: criterion_6,
        },
        Criterion {
            id: 7,
            name: "ambiguity probability",
            budget: Duration::from_secs(120),
            run: criterion_7,
        },
        Criterion {
            id: 8,
            name: "ledger size and exactly-once",
            budget: Duration::from_secs(10),
            run: criterion_8,
        },
        Criterion {
            id: 9,
            name: "randomness smoke",
            budget: Duration::from_secs(30),
            run: criterion_9,
        },
    ];
    let mut failed = 0;
    for Criterion {
        id,
        name,
        budget,
        run,
    } in criteria
    {
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > budget => {
                Err(format!("{detail}; took {elapsed:?} > {budget:?}"))
            }
            other => other,
        };
        match outcome {
            Ok(detail) => println!("criterion {id:>2} PASS  {name}: {detail} [{elapsed:.2?}]"),
            Err(why) => {
                failed += 1;
                println!("criterion {id:>2} FAIL  {name}: {why} [{elapsed:.2?}]");
            }
        }
    }
    println!(
        "criterion 10 N/A   full NIST suite and cited security margins: documented, not tested"
    );
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
