//! Regular LDPC codes with column weight 3.
//!
//! The parity-check matrix is built column by column, each column joining
//! three distinct checks with the most spare capacity and avoiding length-4
//! cycles whenever possible. Columns are then reordered so that codewords
//! read `[payload | parity]`. Decoding is flooding sum-product in the LLR
//! domain with `L = ln P(0) / P(1)`.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use lpcft::{Error, Result};

pub const DEFAULT_N: usize = 1024;
pub const DEFAULT_MAX_ITERS: usize = 50;
const COLUMN_WEIGHT: usize = 3;
const LLR_CLAMP: f64 = 40.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CodeRate {
    Half,
    ThreeQuarters,
}

impl CodeRate {
    pub fn value(self) -> f64 {
        match self {
            CodeRate::Half => 0.5,
            CodeRate::ThreeQuarters => 0.75,
        }
    }

    fn row_weight(self) -> usize {
        match self {
            CodeRate::Half => 6,
            CodeRate::ThreeQuarters => 12,
        }
    }
}

impl FromStr for CodeRate {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1/2" => Ok(CodeRate::Half),
            "3/4" => Ok(CodeRate::ThreeQuarters),
            _ => Err(Error::InvalidArgument(format!("code rate must be 1/2 or 3/4, got '{s}'"))),
        }
    }
}

impl fmt::Display for CodeRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CodeRate::Half => "1/2",
            CodeRate::ThreeQuarters => "3/4",
        })
    }
}

/// Dense GF(2) row as 64-bit words.
#[derive(Clone, Debug, PartialEq)]
struct BitRow(Vec<u64>);

impl BitRow {
    fn zeros(n: usize) -> Self {
        BitRow(vec![0; n.div_ceil(64)])
    }
    fn get(&self, i: usize) -> bool {
        self.0[i / 64] >> (i % 64) & 1 == 1
    }
    fn set(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }
    fn xor(&mut self, other: &BitRow) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a ^= b;
        }
    }
    fn dot(&self, other: &BitRow) -> u8 {
        let ones: u32 = self.0.iter().zip(&other.0).map(|(a, b)| (a & b).count_ones()).sum();
        (ones & 1) as u8
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LdpcCode {
    pub n: usize,
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
    /// Variables of each check.
    checks: Vec<Vec<usize>>,
    /// Per parity bit, its dependence on the payload.
    generator: Vec<BitRow>,
}

/// Result of decoding one block.
#[derive(Clone, Debug, PartialEq)]
pub struct LdpcDecodeOutput {
    pub payload: Vec<u8>,
    pub converged: bool,
    pub iterations: usize,
}

fn build_columns(n: usize, m: usize, row_weight: usize, rng: &mut ChaCha8Rng) -> Option<Vec<Vec<usize>>> {
    let mut capacity = vec![row_weight; m];
    let mut rows: Vec<Vec<usize>> = vec![Vec::with_capacity(row_weight); m];
    let mut mark = vec![usize::MAX; n];
    let mut order: Vec<usize> = (0..m).collect();
    for j in 0..n {
        let mut chosen: Vec<usize> = Vec::with_capacity(COLUMN_WEIGHT);
        for _ in 0..COLUMN_WEIGHT {
            for &r in &chosen {
                for &c in &rows[r] {
                    mark[c] = j;
                }
            }
            order.shuffle(rng);
            let open = |r: &usize| capacity[*r] > 0 && !chosen.contains(r);
            let clean = |r: &usize| rows[*r].iter().all(|&c| mark[c] != j);
            let pick = |pool: &mut dyn Iterator<Item = usize>| pool.max_by_key(|&r| capacity[r]);
            let r = pick(&mut order.iter().copied().filter(|r| open(r) && clean(r)))
                .or_else(|| pick(&mut order.iter().copied().filter(open)))?;
            capacity[r] -= 1;
            chosen.push(r);
        }
        for &r in &chosen {
            rows[r].push(j);
        }
    }
    Some(rows)
}

/// Reduces `h` right to left. Returns the pivot columns (ascending) and, per
/// pivot row, the reduced row, or `None` when `h` is rank deficient.
fn eliminate(h: &[Vec<usize>], n: usize) -> Option<(Vec<usize>, Vec<BitRow>)> {
    let m = h.len();
    let mut dense: Vec<BitRow> = h
        .iter()
        .map(|cols| {
            let mut r = BitRow::zeros(n);
            for &c in cols {
                r.set(c);
            }
            r
        })
        .collect();
    let mut pivots: Vec<(usize, usize)> = Vec::with_capacity(m);
    let mut next_row = 0;
    for col in (0..n).rev() {
        if next_row == m {
            break;
        }
        let Some(p) = (next_row..m).find(|&r| dense[r].get(col)) else {
            continue;
        };
        dense.swap(next_row, p);
        let pivot_row = dense[next_row].clone();
        for (r, row) in dense.iter_mut().enumerate() {
            if r != next_row && row.get(col) {
                row.xor(&pivot_row);
            }
        }
        pivots.push((col, next_row));
        next_row += 1;
    }
    if pivots.len() < m {
        return None;
    }
    pivots.sort();
    let cols = pivots.iter().map(|&(c, _)| c).collect();
    let reduced = pivots.iter().map(|&(_, r)| dense[r].clone()).collect();
    Some((cols, reduced))
}

impl LdpcCode {
    /// Deterministic construction for `(n, rate, seed)`; `3 n` must be a
    /// multiple of the row weight.
    pub fn new(n: usize, rate: CodeRate, seed: u64) -> Result<Self> {
        let wr = rate.row_weight();
        if n == 0 || (n * COLUMN_WEIGHT) % wr != 0 {
            return Err(Error::InvalidArgument(format!("block length {n} does not fit row weight {wr}")));
        }
        let m = n * COLUMN_WEIGHT / wr;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..64 {
            let Some(rows) = build_columns(n, m, wr, &mut rng) else {
                continue;
            };
            let Some((pivots, _)) = eliminate(&rows, n) else {
                continue;
            };
            // Payload columns first, pivot columns last.
            let mut is_pivot = vec![false; n];
            for &p in &pivots {
                is_pivot[p] = true;
            }
            let perm: Vec<usize> = (0..n).filter(|&c| !is_pivot[c]).chain(pivots).collect();
            let mut new_index = vec![0; n];
            for (new, &old) in perm.iter().enumerate() {
                new_index[old] = new;
            }
            let checks = rows
                .iter()
                .map(|r| {
                    let mut v: Vec<usize> = r.iter().map(|&c| new_index[c]).collect();
                    v.sort_unstable();
                    v
                })
                .collect();
            return Self::from_checks(n, n - m, seed, checks);
        }
        Err(Error::InvalidArgument(format!("no full-rank code found for n={n}, rate {rate}")))
    }

    fn from_checks(n: usize, k: usize, seed: u64, checks: Vec<Vec<usize>>) -> Result<Self> {
        let (pivots, reduced) = eliminate(&checks, n)
            .ok_or_else(|| Error::InvalidArgument("parity-check matrix is rank deficient".into()))?;
        if pivots != (k..n).collect::<Vec<_>>() {
            return Err(Error::InvalidArgument("parity columns must be the last n-k columns".into()));
        }
        let generator = reduced
            .iter()
            .map(|row| {
                let mut g = BitRow::zeros(k);
                for j in (0..k).filter(|&j| row.get(j)) {
                    g.set(j);
                }
                g
            })
            .collect();
        Ok(LdpcCode {
            n,
            k,
            seed,
            max_iters: DEFAULT_MAX_ITERS,
            checks,
            generator,
        })
    }

    pub fn rate(&self) -> f64 {
        self.k as f64 / self.n as f64
    }

    pub fn checks(&self) -> &[Vec<usize>] {
        &self.checks
    }

    /// Number of ones per column.
    pub fn column_weights(&self) -> Vec<usize> {
        let mut w = vec![0; self.n];
        for row in &self.checks {
            for &c in row {
                w[c] += 1;
            }
        }
        w
    }

    /// Systematic codeword `[payload | parity]`.
    pub fn encode(&self, payload: &[u8]) -> Result<Vec<u8>> {
        if payload.len() != self.k {
            return Err(Error::InvalidArgument(format!("payload must be {} bits, got {}", self.k, payload.len())));
        }
        let mut u = BitRow::zeros(self.k);
        for (i, &b) in payload.iter().enumerate() {
            if b & 1 == 1 {
                u.set(i);
            }
        }
        let mut c = payload.to_vec();
        c.extend(self.generator.iter().map(|g| g.dot(&u)));
        Ok(c)
    }

    pub fn syndrome_ok(&self, c: &[u8]) -> bool {
        self.checks
            .iter()
            .all(|row| row.iter().fold(0u8, |acc, &j| acc ^ c[j]) == 0)
    }

    /// Sum-product decoding with early exit once every check is satisfied.
    pub fn decode(&self, llr: &[f64]) -> Result<LdpcDecodeOutput> {
        if llr.len() != self.n {
            return Err(Error::InvalidArgument(format!("expected {} LLRs, got {}", self.n, llr.len())));
        }
        let llr: Vec<f64> = llr.iter().map(|v| v.clamp(-LLR_CLAMP, LLR_CLAMP)).collect();
        let edges: usize = self.checks.iter().map(Vec::len).sum();
        let mut v2c = Vec::with_capacity(edges);
        for row in &self.checks {
            v2c.extend(row.iter().map(|&j| llr[j]));
        }
        let mut c2v = vec![0.0; edges];
        let mut hard = vec![0u8; self.n];
        let mut t = Vec::new();
        let mut suffix = Vec::new();
        for it in 1..=self.max_iters {
            let mut e0 = 0;
            for row in &self.checks {
                let w = row.len();
                t.clear();
                t.extend(v2c[e0..e0 + w].iter().map(|m: &f64| (m / 2.0).tanh()));
                suffix.clear();
                suffix.resize(w + 1, 1.0);
                for i in (0..w).rev() {
                    suffix[i] = suffix[i + 1] * t[i];
                }
                let mut prefix = 1.0;
                for i in 0..w {
                    let p = (prefix * suffix[i + 1]).clamp(-1.0 + 1e-15, 1.0 - 1e-15);
                    c2v[e0 + i] = 2.0 * p.atanh();
                    prefix *= t[i];
                }
                e0 += w;
            }
            let mut total = llr.clone();
            let mut e = 0;
            for row in &self.checks {
                for &j in row {
                    total[j] += c2v[e];
                    e += 1;
                }
            }
            for (h, t) in hard.iter_mut().zip(&total) {
                *h = (*t < 0.0) as u8;
            }
            if self.syndrome_ok(&hard) {
                return Ok(LdpcDecodeOutput {
                    payload: hard[..self.k].to_vec(),
                    converged: true,
                    iterations: it,
                });
            }
            let mut e = 0;
            for row in &self.checks {
                for &j in row {
                    v2c[e] = (total[j] - c2v[e]).clamp(-LLR_CLAMP, LLR_CLAMP);
                    e += 1;
                }
            }
        }
        Ok(LdpcDecodeOutput {
            payload: hard[..self.k].to_vec(),
            converged: false,
            iterations: self.max_iters,
        })
    }

    /// Header `n k seed`, then one `row col` line per nonzero entry.
    pub fn to_text(&self) -> String {
        let mut s = format!("{} {} {}\n", self.n, self.k, self.seed);
        for (r, row) in self.checks.iter().enumerate() {
            for c in row {
                s += &format!("{r} {c}\n");
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, m: &str| Error::Parse {
            offset: line as u64,
            message: m.to_string(),
        };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| bad(0, "empty LDPC file"))?;
        let h: Vec<u64> = header
            .split_whitespace()
            .map(|v| v.parse().map_err(|_| bad(0, "bad header")))
            .collect::<Result<_>>()?;
        let [n, k, seed] = h[..] else {
            return Err(bad(0, "header must be 'n k seed'"));
        };
        let (n, k) = (n as usize, k as usize);
        if k >= n {
            return Err(bad(0, "k must be below n"));
        }
        let mut checks = vec![Vec::new(); n - k];
        for (i, line) in lines {
            let v: Vec<usize> = line
                .split_whitespace()
                .map(|x| x.parse().map_err(|_| bad(i, "bad coordinate")))
                .collect::<Result<_>>()?;
            let [r, c] = v[..] else {
                return Err(bad(i, "expected 'row col'"));
            };
            if r >= n - k || c >= n {
                return Err(bad(i, "coordinate out of range"));
            }
            checks[r].push(c);
        }
        for row in &mut checks {
            row.sort_unstable();
        }
        Self::from_checks(n, k, seed, checks)
    }
}
