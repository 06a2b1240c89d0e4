//! Adaptive chosen-plaintext recovery of a 3-round balanced Feistel network
//! over `Z_k` with additive combiner.
//!
//! For input blocks `(L, R)` the network outputs
//!
//! ```text
//! R'  = f2(f1(R) + L) + R
//! L'' = f3(R') + f1(R) + L
//! ```
//!
//! Many triples induce the same permutation; shifting by `f1(0)` gives one
//! with `f1(0) = 0` (see [`normalize_triple`]). [`recover`] finds exactly that
//! normalized triple with at most `4k` queries:
//!
//! 1. `f2(i)` from the queries `(i, 0)`.
//! 2. `f1(j)` from `(0, j)`: the candidates `x` with `f2(x) = R' − j`, narrowed
//!    with further queries `(m, j)` against `f2(x + m)` until one is left.
//! 3. `f3(z)` from one query per `z` that steers `R'` onto `z`.
//!
//! The attacker only ever sees [`ChosenPlaintextOracle::query`].

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::feistel::{FeistelInstance, RoundFunctions};

pub const DEFAULT_M_MAX: u64 = 8;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AttackError {
    #[error("block ({l}, {r}) outside Z_{k}")]
    Domain { l: u64, r: u64, k: u64 },
    #[error("f1({j}) still has {candidates} candidates after {m_max} extra queries")]
    Ambiguity {
        j: u64,
        candidates: usize,
        m_max: u64,
    },
    #[error("recovered triple disagrees with the oracle on input ({l}, {r})")]
    SelfCheck { l: u64, r: u64 },
    #[error("oracle answers are not consistent with any 3-round Feistel network (at {stage})")]
    Inconsistent { stage: &'static str },
    #[error("modulus must be at least 2, got {0}")]
    Modulus(u64),
    #[error("table has {len} entries, expected {k}")]
    TableSize { len: usize, k: u64 },
}

/// Something that answers `(L, R) ↦ (L'', R')` for a fixed hidden network.
pub trait ChosenPlaintextOracle {
    fn modulus(&self) -> u64;

    fn query(&mut self, l: u64, r: u64) -> Result<(u64, u64), AttackError>;

    fn query_count(&self) -> u64;
}

#[inline]
fn add(a: u64, b: u64, k: u64) -> u64 {
    ((u128::from(a) + u128::from(b)) % u128::from(k)) as u64
}

#[inline]
fn sub(a: u64, b: u64, k: u64) -> u64 {
    if a >= b {
        a - b
    } else {
        k - (b - a)
    }
}

fn eval(
    k: u64,
    f1: &[u64],
    f2: &[u64],
    f3: &[u64],
    l: u64,
    r: u64,
) -> Result<(u64, u64), AttackError> {
    if l >= k || r >= k {
        return Err(AttackError::Domain { l, r, k });
    }
    let a = add(f1[r as usize], l, k);
    let r_out = add(f2[a as usize], r, k);
    let l_out = add(add(f3[r_out as usize], f1[r as usize], k), l, k);
    Ok((l_out, r_out))
}

/// Three round-function tables over `Z_k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Triple {
    k: u64,
    pub f1: Vec<u64>,
    pub f2: Vec<u64>,
    pub f3: Vec<u64>,
}

impl Triple {
    pub fn new(k: u64, f1: Vec<u64>, f2: Vec<u64>, f3: Vec<u64>) -> Result<Self, AttackError> {
        if k < 2 {
            return Err(AttackError::Modulus(k));
        }
        for t in [&f1, &f2, &f3] {
            if t.len() as u64 != k {
                return Err(AttackError::TableSize { len: t.len(), k });
            }
        }
        let reduce = |t: Vec<u64>| t.into_iter().map(|v| v % k).collect();
        Ok(Self {
            k,
            f1: reduce(f1),
            f2: reduce(f2),
            f3: reduce(f3),
        })
    }

    /// Uniformly random tables.
    pub fn random<R: Rng + ?Sized>(k: u64, rng: &mut R) -> Self {
        let mut table = || (0..k).map(|_| rng.gen_range(0..k)).collect::<Vec<_>>();
        let f1 = table();
        let f2 = table();
        let f3 = table();
        Self::new(k, f1, f2, f3).expect("k >= 2")
    }

    pub fn k(&self) -> u64 {
        self.k
    }

    /// `(L'', R')` for input `(L, R)`.
    pub fn eval(&self, l: u64, r: u64) -> Result<(u64, u64), AttackError> {
        eval(self.k, &self.f1, &self.f2, &self.f3, l, r)
    }

    /// The same network as a [`FeistelInstance`]; its `encrypt(R·k + L)`
    /// equals `R'·k + L''`.
    pub fn to_feistel(&self) -> FeistelInstance<crate::feistel::TableRounds> {
        FeistelInstance::from_tables(
            self.k,
            vec![self.f1.clone(), self.f2.clone(), self.f3.clone()],
        )
        .expect("tables sized k")
    }
}

/// Round-function tables with `g1(0) = 0`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecoveredTriple {
    k: u64,
    g1: Vec<u64>,
    g2: Vec<u64>,
    g3: Vec<u64>,
}

impl RecoveredTriple {
    pub fn k(&self) -> u64 {
        self.k
    }

    pub fn g1(&self) -> &[u64] {
        &self.g1
    }

    pub fn g2(&self) -> &[u64] {
        &self.g2
    }

    pub fn g3(&self) -> &[u64] {
        &self.g3
    }

    /// Same map as [`ChosenPlaintextOracle::query`], computed locally.
    pub fn predict(&self, l: u64, r: u64) -> Result<(u64, u64), AttackError> {
        eval(self.k, &self.g1, &self.g2, &self.g3, l, r)
    }
}

/// `g1(x) = f1(x) − f1(0)`, `g2(x) = f2(x + f1(0))`, `g3(x) = f3(x) + f1(0)`.
pub fn normalize_triple(triple: &Triple) -> RecoveredTriple {
    let k = triple.k;
    let shift = triple.f1[0];
    RecoveredTriple {
        k,
        g1: triple.f1.iter().map(|&v| sub(v, shift, k)).collect(),
        g2: (0..k)
            .map(|x| triple.f2[add(x, shift, k) as usize])
            .collect(),
        g3: triple.f3.iter().map(|&v| add(v, shift, k)).collect(),
    }
}

/// A hidden random (or chosen) 3-round network that counts queries.
#[derive(Debug, Clone)]
pub struct FeistelOracle {
    hidden: Triple,
    queries: u64,
}

impl FeistelOracle {
    pub fn new(hidden: Triple) -> Self {
        Self { hidden, queries: 0 }
    }

    pub fn random<R: Rng + ?Sized>(k: u64, rng: &mut R) -> Self {
        Self::new(Triple::random(k, rng))
    }
}

impl ChosenPlaintextOracle for FeistelOracle {
    fn modulus(&self) -> u64 {
        self.hidden.k
    }

    fn query(&mut self, l: u64, r: u64) -> Result<(u64, u64), AttackError> {
        let out = self.hidden.eval(l, r)?;
        self.queries += 1;
        Ok(out)
    }

    fn query_count(&self) -> u64 {
        self.queries
    }
}

/// Wraps any 3-round [`FeistelInstance`] as an oracle through `encrypt`.
#[derive(Debug, Clone)]
pub struct EncryptionOracle<F> {
    feistel: FeistelInstance<F>,
    queries: u64,
}

impl<F: RoundFunctions> EncryptionOracle<F> {
    pub fn new(feistel: FeistelInstance<F>) -> Self {
        assert_eq!(
            feistel.rounds(),
            3,
            "the attack targets exactly three rounds"
        );
        Self {
            feistel,
            queries: 0,
        }
    }
}

impl<F: RoundFunctions> ChosenPlaintextOracle for EncryptionOracle<F> {
    fn modulus(&self) -> u64 {
        self.feistel.k()
    }

    fn query(&mut self, l: u64, r: u64) -> Result<(u64, u64), AttackError> {
        let k = self.feistel.k();
        if l >= k || r >= k {
            return Err(AttackError::Domain { l, r, k });
        }
        let m = u128::from(r) * u128::from(k) + u128::from(l);
        let c = self.feistel.encrypt(m).expect("in domain");
        self.queries += 1;
        Ok(((c % u128::from(k)) as u64, (c / u128::from(k)) as u64))
    }

    fn query_count(&self) -> u64 {
        self.queries
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttackReport {
    pub triple: RecoveredTriple,
    pub queries_used: u64,
    /// `retry_histogram[e]` counts the `j` for which `f1(j)` was pinned down
    /// after `e` extra queries.
    pub retry_histogram: Vec<u64>,
}

/// Memoizing front end so repeated inputs cost nothing.
struct Transcript<'a, O> {
    oracle: &'a mut O,
    answers: HashMap<(u64, u64), (u64, u64)>,
}

impl<O: ChosenPlaintextOracle> Transcript<'_, O> {
    fn ask(&mut self, l: u64, r: u64) -> Result<(u64, u64), AttackError> {
        if let Some(a) = self.answers.get(&(l, r)) {
            return Ok(*a);
        }
        let a = self.oracle.query(l, r)?;
        self.answers.insert((l, r), a);
        Ok(a)
    }

    fn known(&self, l: u64, r: u64) -> bool {
        self.answers.contains_key(&(l, r))
    }
}

/// Recovers the normalized round functions of a 3-round network.
pub fn recover<O: ChosenPlaintextOracle>(
    oracle: &mut O,
    m_max: u64,
) -> Result<AttackReport, AttackError> {
    let k = oracle.modulus();
    if k < 2 {
        return Err(AttackError::Modulus(k));
    }
    let start = oracle.query_count();
    let ku = k as usize;
    let mut t = Transcript {
        oracle,
        answers: HashMap::new(),
    };

    // Phase 1: g2(i) = R'(i, 0).
    let mut g2 = vec![0u64; ku];
    for i in 0..k {
        g2[i as usize] = t.ask(i, 0)?.1;
    }
    let mut preimages: Vec<Vec<u64>> = vec![Vec::new(); ku];
    for (x, &y) in g2.iter().enumerate() {
        preimages[y as usize].push(x as u64);
    }

    // Phase 2: g1(j) is the x with g2(x + m) = R'(m, j) − j for m = 0, 1, ...
    let mut g1 = vec![0u64; ku];
    let mut histogram = vec![0u64; m_max as usize + 1];
    for j in 1..k {
        let (_, r_out) = t.ask(0, j)?;
        let mut candidates = preimages[sub(r_out, j, k) as usize].clone();
        let mut extra = 0u64;
        while candidates.len() > 1 {
            extra += 1;
            if extra > m_max || extra >= k {
                return Err(AttackError::Ambiguity {
                    j,
                    candidates: candidates.len(),
                    m_max,
                });
            }
            let (_, r_m) = t.ask(extra, j)?;
            let target = sub(r_m, j, k);
            candidates.retain(|&x| g2[add(x, extra, k) as usize] == target);
        }
        match candidates.first() {
            Some(&x) => g1[j as usize] = x,
            None => return Err(AttackError::Inconsistent { stage: "f1" }),
        }
        histogram[extra as usize] += 1;
    }

    // Phase 3: for each z pick (x, j) with g2(x) = z − j, query
    // (x − g1(j), j) and read off g3(z). Inputs already in the transcript are
    // preferred.
    let mut g3 = vec![0u64; ku];
    for z in 0..k {
        let mut fallback = None;
        let mut chosen = None;
        'scan: for j in 0..k {
            for &x in &preimages[sub(z, j, k) as usize] {
                let l = sub(x, g1[j as usize], k);
                if t.known(l, j) {
                    chosen = Some((l, j));
                    break 'scan;
                }
                fallback.get_or_insert((l, j));
            }
        }
        let (l, j) = chosen
            .or(fallback)
            .ok_or(AttackError::Inconsistent { stage: "f3" })?;
        let (l_out, r_out) = t.ask(l, j)?;
        if r_out != z {
            return Err(AttackError::Inconsistent { stage: "f3" });
        }
        g3[z as usize] = sub(sub(l_out, g1[j as usize], k), l, k);
    }

    let triple = RecoveredTriple { k, g1, g2, g3 };
    for (&(l, r), &answer) in &t.answers {
        if triple.predict(l, r)? != answer {
            return Err(AttackError::SelfCheck { l, r });
        }
    }
    let queries_used = t.oracle.query_count() - start;
    Ok(AttackReport {
        triple,
        queries_used,
        retry_histogram: histogram,
    })
}

/// Probability that `m` follow-up comparisons leave a preselected `x`
/// ambiguous: `k^−m · (1 − ((k−1)/k)^(k−1))`.
pub fn ambiguity_probability(k: u64, m: u32) -> f64 {
    let kf = k as f64;
    let collision = 1.0 - ((kf - 1.0) / kf).powf(kf - 1.0);
    collision / kf.powi(m as i32)
}

/// Whether some `x' ≠ x` matches `f2` at `x, x+1, …, x+m`.
pub fn is_ambiguous(f2: &[u64], x: u64, m: u64) -> bool {
    let k = f2.len() as u64;
    (0..k)
        .filter(|&x2| x2 != x)
        .any(|x2| (0..=m).all(|i| f2[add(x, i, k) as usize] == f2[add(x2, i, k) as usize]))
}

/// Monte-Carlo estimate behind [`ambiguity_probability`]: draws `trials`
/// random `f2` tables and a random `x` each, returns how many stay
/// ambiguous after `m` comparisons.
pub fn count_ambiguous<R: Rng + ?Sized>(k: u64, m: u64, trials: u64, rng: &mut R) -> u64 {
    let mut f2 = vec![0u64; k as usize];
    let mut hits = 0;
    for _ in 0..trials {
        for v in f2.iter_mut() {
            *v = rng.gen_range(0..k);
        }
        let x = rng.gen_range(0..k);
        if is_ambiguous(&f2, x, m) {
            hits += 1;
        }
    }
    hits
}

/// Whether `recovered` and `hidden` induce the same permutation on all `k²` inputs.
pub fn equivalent(recovered: &RecoveredTriple, hidden: &Triple) -> bool {
    recovered.k == hidden.k
        && (0..hidden.k)
            .all(|l| (0..hidden.k).all(|r| recovered.predict(l, r).ok() == hidden.eval(l, r).ok()))
}

/// One seeded end-to-end run: random hidden network, recovery, exhaustive
/// check, and a Monte-Carlo ambiguity estimate at `m = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoReport {
    pub k: u64,
    pub queries_used: u64,
    pub bound: u64,
    pub equivalent: bool,
    pub retry_histogram: Vec<u64>,
    pub predicted_ambiguity: f64,
    pub observed_ambiguity: f64,
    pub trials: u64,
}

pub fn run_demo(k: u64, seed: u64, trials: u64) -> Result<DemoReport, AttackError> {
    if k < 2 {
        return Err(AttackError::Modulus(k));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hidden = Triple::random(k, &mut rng);
    let mut oracle = FeistelOracle::new(hidden.clone());
    let report = recover(&mut oracle, DEFAULT_M_MAX)?;
    let hits = count_ambiguous(k, 1, trials, &mut rng);
    Ok(DemoReport {
        k,
        queries_used: report.queries_used,
        bound: 4 * k,
        equivalent: equivalent(&report.triple, &hidden),
        retry_histogram: report.retry_histogram,
        predicted_ambiguity: ambiguity_probability(k, 1),
        observed_ambiguity: if trials == 0 {
            0.0
        } else {
            hits as f64 / trials as f64
        },
        trials,
    })
}
