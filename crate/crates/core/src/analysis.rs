//! Bell-scenario analysis of two-party, two-setting, two-outcome data.
//!
//! Outcome index 0 stands for `+1` and index 1 for `-1`. Frequencies are stored as
//! `p[i][j][o1][o2]` for settings `a_i`, `b_j`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::detection::TrialRecord;
use crate::error::{Error, Result};
use crate::montecarlo::map_trials;
use crate::random_field::RandomSeed;

/// Normalization tolerance for outcome frequencies.
pub const FREQUENCY_TOL: f64 = 1e-9;
/// Feasibility and CHSH tolerance for exact tables.
pub const EXACT_TOL: f64 = 1e-9;
/// Tolerance in standard errors for tables estimated from counts.
pub const SIGMA_TOL: f64 = 5.0;
pub const DEFAULT_FLAT_SUM: f64 = std::f64::consts::PI;
pub const TRIANGLE_TOL: f64 = 1e-9;

pub type OutcomeTable = [[f64; 2]; 2];

fn sign_of(index: usize) -> f64 {
    if index == 0 {
        1.0
    } else {
        -1.0
    }
}

/// `E = p(++) + p(--) - p(+-) - p(-+)`.
pub fn correlation_of(p: &OutcomeTable) -> f64 {
    p[0][0] + p[1][1] - p[0][1] - p[1][0]
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationEntry {
    pub correlation: f64,
    pub standard_error: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequencies: Option<OutcomeTable>,
    /// Number of events behind an estimated entry; absent for exact tables.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<u64>,
}

impl CorrelationEntry {
    pub fn exact(correlation: f64) -> Self {
        CorrelationEntry { correlation, standard_error: 0.0, frequencies: None, count: None }
    }

    pub fn from_frequencies(p: OutcomeTable, count: Option<u64>) -> Self {
        let e = correlation_of(&p);
        let standard_error = count.map_or(0.0, |n| ((1.0 - e * e).max(0.0) / n as f64).sqrt());
        CorrelationEntry { correlation: e, standard_error, frequencies: Some(p), count }
    }

    pub fn from_counts(counts: [[u64; 2]; 2]) -> Result<Self> {
        let n: u64 = counts.iter().flatten().sum();
        if n == 0 {
            return Err(Error::NoCoincidences);
        }
        let p = counts.map(|row| row.map(|c| c as f64 / n as f64));
        Ok(Self::from_frequencies(p, Some(n)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTable")]
pub struct CorrelationTable {
    pub settings1: [f64; 2],
    pub settings2: [f64; 2],
    pub entries: [[Option<CorrelationEntry>; 2]; 2],
}

#[derive(Deserialize)]
struct RawTable {
    settings1: [f64; 2],
    settings2: [f64; 2],
    entries: [[Option<CorrelationEntry>; 2]; 2],
}

impl TryFrom<RawTable> for CorrelationTable {
    type Error = Error;

    fn try_from(raw: RawTable) -> Result<Self> {
        let table = CorrelationTable { settings1: raw.settings1, settings2: raw.settings2, entries: raw.entries };
        table.validate()?;
        Ok(table)
    }
}

impl CorrelationTable {
    pub fn empty(settings1: [f64; 2], settings2: [f64; 2]) -> Self {
        CorrelationTable { settings1, settings2, entries: [[None; 2]; 2] }
    }

    pub fn from_correlations(
        settings1: [f64; 2],
        settings2: [f64; 2],
        e: [[f64; 2]; 2],
        se: [[f64; 2]; 2],
    ) -> Result<Self> {
        let mut table = Self::empty(settings1, settings2);
        for i in 0..2 {
            for j in 0..2 {
                table.entries[i][j] = Some(CorrelationEntry {
                    correlation: e[i][j],
                    standard_error: se[i][j],
                    frequencies: None,
                    count: None,
                });
            }
        }
        table.validate()?;
        Ok(table)
    }

    pub fn from_frequencies(
        settings1: [f64; 2],
        settings2: [f64; 2],
        p: [[OutcomeTable; 2]; 2],
        counts: Option<[[u64; 2]; 2]>,
    ) -> Result<Self> {
        let mut table = Self::empty(settings1, settings2);
        for i in 0..2 {
            for j in 0..2 {
                table.entries[i][j] = Some(CorrelationEntry::from_frequencies(p[i][j], counts.map(|c| c[i][j])));
            }
        }
        table.validate()?;
        Ok(table)
    }

    /// Groups trials by their two settings, which must take exactly two values per party,
    /// ordered by first appearance. Entries are built from accepted single-click coincidences.
    pub fn from_trials(records: &[TrialRecord]) -> Result<Self> {
        let distinct = |f: fn(&TrialRecord) -> f64| -> Result<[f64; 2]> {
            let mut seen: Vec<f64> = Vec::new();
            for r in records {
                if !seen.iter().any(|s| s.to_bits() == f(r).to_bits()) {
                    seen.push(f(r));
                }
            }
            match seen.as_slice() {
                [a, b] => Ok([*a, *b]),
                other => Err(Error::InvalidArgument(format!("expected two settings per party, found {}", other.len()))),
            }
        };
        let settings1 = distinct(|r| r.theta1)?;
        let settings2 = distinct(|r| r.theta2)?;
        let mut counts = [[[[0u64; 2]; 2]; 2]; 2];
        for r in records.iter().filter(|r| r.accepted) {
            if let (Some(a), Some(b)) = (r.outcome1(), r.outcome2()) {
                let i = usize::from(r.theta1.to_bits() != settings1[0].to_bits());
                let j = usize::from(r.theta2.to_bits() != settings2[0].to_bits());
                counts[i][j][usize::from(a < 0)][usize::from(b < 0)] += 1;
            }
        }
        let mut table = Self::empty(settings1, settings2);
        for i in 0..2 {
            for j in 0..2 {
                table.entries[i][j] =
                    Some(CorrelationEntry::from_counts(counts[i][j]).map_err(|_| Error::MissingEntry(i, j))?);
            }
        }
        Ok(table)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, row) in self.entries.iter().enumerate() {
            for (j, entry) in row.iter().enumerate() {
                let Some(entry) = entry else { continue };
                if !entry.correlation.is_finite() || entry.correlation.abs() > 1.0 + FREQUENCY_TOL {
                    return Err(Error::InvalidArgument(format!(
                        "entry ({i},{j}): |E| = {} exceeds 1",
                        entry.correlation
                    )));
                }
                if !(entry.standard_error >= 0.0) {
                    return Err(Error::InvalidArgument(format!("entry ({i},{j}): negative standard error")));
                }
                if let Some(p) = entry.frequencies {
                    if p.iter().flatten().any(|&x| !(x >= 0.0)) {
                        return Err(Error::InvalidArgument(format!("entry ({i},{j}): negative frequency")));
                    }
                    let total: f64 = p.iter().flatten().sum();
                    if (total - 1.0).abs() > FREQUENCY_TOL {
                        return Err(Error::InvalidArgument(format!("entry ({i},{j}): frequencies sum to {total}")));
                    }
                    if (correlation_of(&p) - entry.correlation).abs() > FREQUENCY_TOL {
                        return Err(Error::InvalidArgument(format!(
                            "entry ({i},{j}): correlation disagrees with frequencies"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn entry(&self, i: usize, j: usize) -> Result<&CorrelationEntry> {
        self.entries[i][j].as_ref().ok_or(Error::MissingEntry(i, j))
    }

    /// Outcome tables; an entry given only as a correlation `E` is completed with unbiased
    /// marginals, `p(a, b) = (1 + a b E) / 4`. Flipping every outcome of a joint model at once
    /// keeps its correlations and unbiases its marginals, so the completion does not change
    /// feasibility.
    pub fn frequencies(&self) -> Result<[[OutcomeTable; 2]; 2]> {
        let mut p = [[[[0.0; 2]; 2]; 2]; 2];
        for (i, row) in p.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                let entry = self.entry(i, j)?;
                *cell = entry.frequencies.unwrap_or_else(|| {
                    let e = entry.correlation.clamp(-1.0, 1.0);
                    [[(1.0 + e) / 4.0, (1.0 - e) / 4.0], [(1.0 - e) / 4.0, (1.0 + e) / 4.0]]
                });
            }
        }
        Ok(p)
    }

    fn counts(&self) -> Option<[[u64; 2]; 2]> {
        let mut c = [[0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                c[i][j] = self.entries[i][j].as_ref()?.count?;
            }
        }
        Some(c)
    }

    /// Flips the outcome labels of party 1's setting `i` (`party == 0`) or party 2's setting `i`.
    pub fn relabeled(&self, party: usize, i: usize) -> Self {
        let mut out = self.clone();
        for a in 0..2 {
            for b in 0..2 {
                if (party == 0 && a == i) || (party == 1 && b == i) {
                    if let Some(entry) = out.entries[a][b].as_mut() {
                        entry.correlation = -entry.correlation;
                        if let Some(p) = entry.frequencies.as_mut() {
                            *p = if party == 0 { [p[1], p[0]] } else { [[p[0][1], p[0][0]], [p[1][1], p[1][0]]] };
                        }
                    }
                }
            }
        }
        out
    }
}

/// Correlations `-cos 2(theta_1 - theta_2)` of the singlet with outcome frequencies
/// `(1 + o_1 o_2 E) / 4`.
pub fn singlet_table(settings1: [f64; 2], settings2: [f64; 2]) -> CorrelationTable {
    let mut p = [[[[0.0; 2]; 2]; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            let e = -(2.0 * (settings1[i] - settings2[j])).cos();
            for o1 in 0..2 {
                for o2 in 0..2 {
                    p[i][j][o1][o2] = 0.25 * (1.0 + sign_of(o1) * sign_of(o2) * e);
                }
            }
        }
    }
    CorrelationTable::from_frequencies(settings1, settings2, p, None).expect("valid by construction")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChshValue {
    pub s: f64,
    pub standard_error: f64,
}

/// CHSH value with the minus sign on entry `minus = (i, j)`.
pub fn chsh_variant(table: &CorrelationTable, minus: (usize, usize)) -> Result<ChshValue> {
    let mut s = 0.0;
    let mut var = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            let entry = table.entry(i, j)?;
            let sign = if (i, j) == minus { -1.0 } else { 1.0 };
            s += sign * entry.correlation;
            var += entry.standard_error * entry.standard_error;
        }
    }
    Ok(ChshValue { s, standard_error: var.sqrt() })
}

/// `S = E(a1,b1) + E(a1,b2) + E(a2,b1) - E(a2,b2)` with quadrature error.
pub fn chsh(table: &CorrelationTable) -> Result<ChshValue> {
    chsh_variant(table, (1, 1))
}

pub const MINUS_POSITIONS: [(usize, usize); 4] = [(0, 0), (0, 1), (1, 0), (1, 1)];

/// The four CHSH combinations, one per placement of the minus sign.
pub fn chsh_variants(table: &CorrelationTable) -> Result<[ChshValue; 4]> {
    let mut out = [ChshValue { s: 0.0, standard_error: 0.0 }; 4];
    for (k, &minus) in MINUS_POSITIONS.iter().enumerate() {
        out[k] = chsh_variant(table, minus)?;
    }
    Ok(out)
}

/// The CHSH combination of largest magnitude, with its minus-sign position.
pub fn chsh_max(table: &CorrelationTable) -> Result<(ChshValue, (usize, usize))> {
    let variants = chsh_variants(table)?;
    let k = (0..4).fold(0, |best, k| if variants[k].s.abs() > variants[best].s.abs() { k } else { best });
    Ok((variants[k], MINUS_POSITIONS[k]))
}

/// Value of `(A_1, A_2, B_1, B_2)` under deterministic assignment `lambda` in `0..16`.
pub fn assignment(lambda: usize) -> [i8; 4] {
    std::array::from_fn(|k| if lambda >> k & 1 == 0 { 1 } else { -1 })
}

fn constraint_matrix() -> [[f64; 16]; 16] {
    let mut a = [[0.0; 16]; 16];
    for i in 0..2 {
        for j in 0..2 {
            for o1 in 0..2 {
                for o2 in 0..2 {
                    let row = ((i * 2 + j) * 2 + o1) * 2 + o2;
                    for (lambda, col) in a[row].iter_mut().enumerate() {
                        let v = assignment(lambda);
                        if f64::from(v[i]) == sign_of(o1) && f64::from(v[2 + j]) == sign_of(o2) {
                            *col = 1.0;
                        }
                    }
                }
            }
        }
    }
    a
}

fn flatten(p: &[[OutcomeTable; 2]; 2]) -> [f64; 16] {
    let mut b = [0.0; 16];
    for i in 0..2 {
        for j in 0..2 {
            for o1 in 0..2 {
                for o2 in 0..2 {
                    b[((i * 2 + j) * 2 + o1) * 2 + o2] = p[i][j][o1][o2];
                }
            }
        }
    }
    b
}

/// Minimizes `sum |A w - b|` over `w >= 0` by the simplex method with Bland's rule.
/// Returns the optimal residual and `w`.
fn min_l1_residual(a: &[[f64; 16]; 16], b: &[f64; 16]) -> (f64, [f64; 16]) {
    const M: usize = 16;
    const N: usize = 48;
    const PIVOT_TOL: f64 = 1e-12;
    let mut t = vec![[0.0f64; N + 1]; M];
    let mut basis = [0usize; M];
    for r in 0..M {
        let s = if b[r] >= 0.0 { 1.0 } else { -1.0 };
        for c in 0..16 {
            t[r][c] = s * a[r][c];
        }
        t[r][16 + r] = s;
        t[r][32 + r] = -s;
        t[r][N] = s * b[r];
        basis[r] = if s > 0.0 { 16 + r } else { 32 + r };
    }
    let cost = |c: usize| if c >= 16 { 1.0 } else { 0.0 };
    for _ in 0..10_000 {
        let entering = (0..N).find(|&c| {
            let reduced = cost(c) - (0..M).map(|r| cost(basis[r]) * t[r][c]).sum::<f64>();
            reduced < -PIVOT_TOL
        });
        let Some(e) = entering else { break };
        let mut leave: Option<usize> = None;
        for r in 0..M {
            if t[r][e] > PIVOT_TOL {
                let ratio = t[r][N] / t[r][e];
                leave = match leave {
                    None => Some(r),
                    Some(l) => {
                        let best = t[l][N] / t[l][e];
                        if ratio < best - PIVOT_TOL || (ratio <= best + PIVOT_TOL && basis[r] < basis[l]) {
                            Some(r)
                        } else {
                            Some(l)
                        }
                    }
                };
            }
        }
        let l = leave.expect("objective is bounded below");
        let pivot = t[l][e];
        for v in t[l].iter_mut() {
            *v /= pivot;
        }
        let pivot_row = t[l];
        for (r, row) in t.iter_mut().enumerate() {
            if r != l && row[e] != 0.0 {
                let f = row[e];
                for (v, p) in row.iter_mut().zip(pivot_row.iter()) {
                    *v -= f * p;
                }
            }
        }
        basis[l] = e;
    }
    let mut w = [0.0; 16];
    let mut residual = 0.0;
    for r in 0..M {
        let value = t[r][N].max(0.0);
        if basis[r] < 16 {
            w[basis[r]] = value;
        } else {
            residual += value;
        }
    }
    (residual, w)
}

/// Maximum-entropy joint distribution with the given pair marginals, by iterative
/// proportional fitting from the uniform distribution.
fn proportional_fit(p: &[[OutcomeTable; 2]; 2], sweeps: usize, tol: f64) -> Option<[f64; 16]> {
    let mut w = [1.0 / 16.0; 16];
    for _ in 0..sweeps {
        let mut worst: f64 = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                let mut marginal = [[0.0; 2]; 2];
                for (lambda, &x) in w.iter().enumerate() {
                    let v = assignment(lambda);
                    marginal[usize::from(v[i] < 0)][usize::from(v[2 + j] < 0)] += x;
                }
                for (lambda, x) in w.iter_mut().enumerate() {
                    let v = assignment(lambda);
                    let (o1, o2) = (usize::from(v[i] < 0), usize::from(v[2 + j] < 0));
                    worst = worst.max((marginal[o1][o2] - p[i][j][o1][o2]).abs());
                    *x = if marginal[o1][o2] > 0.0 { *x * p[i][j][o1][o2] / marginal[o1][o2] } else { 0.0 };
                }
            }
        }
        if worst <= tol {
            return Some(w);
        }
    }
    None
}

fn marginal_error(w: &[f64; 16], p: &[[OutcomeTable; 2]; 2]) -> f64 {
    let a = constraint_matrix();
    let b = flatten(p);
    (0..16).map(|r| ((0..16).map(|c| a[r][c] * w[c]).sum::<f64>() - b[r]).abs()).fold(0.0, f64::max)
}

/// One CHSH inequality `|S_k| <= 2` per minus-sign position.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FineCheck {
    pub chsh_values: [f64; 4],
    pub standard_errors: [f64; 4],
    pub tolerance: [f64; 4],
    pub violated: Vec<(usize, usize)>,
}

impl FineCheck {
    pub fn satisfied(&self) -> bool {
        self.violated.is_empty()
    }
}

/// The eight CHSH inequalities; estimated tables get a `5 SE` allowance.
pub fn fine_check(table: &CorrelationTable) -> Result<FineCheck> {
    let variants = chsh_variants(table)?;
    let mut check = FineCheck {
        chsh_values: variants.map(|v| v.s),
        standard_errors: variants.map(|v| v.standard_error),
        tolerance: variants.map(|v| (SIGMA_TOL * v.standard_error).max(EXACT_TOL)),
        violated: Vec::new(),
    };
    for k in 0..4 {
        if check.chsh_values[k].abs() > 2.0 + check.tolerance[k] {
            check.violated.push(MINUS_POSITIONS[k]);
        }
    }
    Ok(check)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FeasibilityVerdict {
    pub feasible: bool,
    /// Smallest L1 distance between the data and a table with a joint distribution.
    pub residual: f64,
    pub tolerance: f64,
    /// Weights over the 16 deterministic assignments, see [`assignment`].
    pub witness: Option<[f64; 16]>,
    pub fine: FineCheck,
}

impl FeasibilityVerdict {
    /// Violated CHSH inequalities, an infeasibility certificate.
    pub fn certificate(&self) -> &[(usize, usize)] {
        &self.fine.violated
    }

    pub fn agrees_with_fine(&self) -> bool {
        self.feasible == self.fine.satisfied()
    }
}

/// Rejects tables whose single-party marginals depend on the other party's setting.
pub fn check_no_signalling(table: &CorrelationTable) -> Result<()> {
    let p = table.frequencies()?;
    let counts = table.counts();
    let tolerance = |pa: f64, pb: f64, na: Option<u64>, nb: Option<u64>| match (na, nb) {
        (Some(na), Some(nb)) if na > 0 && nb > 0 => {
            let q = 0.5 * (pa + pb);
            (SIGMA_TOL * (q * (1.0 - q) * (1.0 / na as f64 + 1.0 / nb as f64)).sqrt()).max(EXACT_TOL)
        }
        _ => EXACT_TOL,
    };
    for i in 0..2 {
        let first: Vec<f64> = (0..2).map(|j| p[i][j][0][0] + p[i][j][0][1]).collect();
        let n = |a: usize, b: usize| counts.map(|c| c[a][b]);
        if (first[0] - first[1]).abs() > tolerance(first[0], first[1], n(i, 0), n(i, 1)) {
            return Err(Error::Signalling(format!(
                "party 1 marginal P(+|a{}) changes with party 2's setting: {} vs {}",
                i + 1,
                first[0],
                first[1]
            )));
        }
        let second: Vec<f64> = (0..2).map(|k| p[k][i][0][0] + p[k][i][1][0]).collect();
        if (second[0] - second[1]).abs() > tolerance(second[0], second[1], n(0, i), n(1, i)) {
            return Err(Error::Signalling(format!(
                "party 2 marginal P(+|b{}) changes with party 1's setting: {} vs {}",
                i + 1,
                second[0],
                second[1]
            )));
        }
    }
    Ok(())
}

/// Decides whether one joint distribution over `(A_1, A_2, B_1, B_2)` reproduces all four
/// outcome tables. For estimated tables the residual is compared with `5 sigma` of its
/// sampling noise.
pub fn kolmogorov_feasible(table: &CorrelationTable) -> Result<FeasibilityVerdict> {
    table.validate()?;
    let p = table.frequencies()?;
    check_no_signalling(table)?;
    let (residual, vertex) = min_l1_residual(&constraint_matrix(), &flatten(&p));
    let tolerance = match table.counts() {
        Some(counts) => {
            let mut var = 0.0;
            for i in 0..2 {
                for j in 0..2 {
                    let n = counts[i][j].max(1) as f64;
                    var += p[i][j].iter().flatten().map(|q| q * (1.0 - q) / n).sum::<f64>();
                }
            }
            (SIGMA_TOL * var.sqrt()).max(EXACT_TOL)
        }
        None => EXACT_TOL,
    };
    let feasible = residual <= tolerance;
    let witness = feasible.then(|| match proportional_fit(&p, 10_000, 1e-12) {
        Some(w) if marginal_error(&w, &p) <= 1e-10 => w,
        _ => {
            let total: f64 = vertex.iter().sum();
            vertex.map(|x| x / total)
        }
    });
    Ok(FeasibilityVerdict { feasible, residual, tolerance, witness, fine: fine_check(table)? })
}

/// The eight extremal nonlocal no-signalling boxes: `a xor b = x y xor alpha x xor beta y xor gamma`.
pub fn pr_box(k: usize) -> [[OutcomeTable; 2]; 2] {
    let (alpha, beta, gamma) = (k & 1, k >> 1 & 1, k >> 2 & 1);
    let mut p = [[[[0.0; 2]; 2]; 2]; 2];
    for x in 0..2 {
        for y in 0..2 {
            let parity = (x * y) ^ (alpha * x) ^ (beta * y) ^ gamma;
            for a in 0..2 {
                for b in 0..2 {
                    if a ^ b == parity {
                        p[x][y][a][b] = 0.5;
                    }
                }
            }
        }
    }
    p
}

/// Outcome tables of deterministic assignment `lambda`.
pub fn deterministic_box(lambda: usize) -> [[OutcomeTable; 2]; 2] {
    let v = assignment(lambda);
    let mut p = [[[[0.0; 2]; 2]; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            p[i][j][usize::from(v[i] < 0)][usize::from(v[2 + j] < 0)] = 1.0;
        }
    }
    p
}

/// Random no-signalling table: one of the 8 PR boxes, chosen uniformly, with weight uniform in
/// `[0, 1]`, mixed with a flat-Dirichlet mixture of the 16 local vertices.
pub fn random_no_signalling_table<R: Rng + ?Sized>(rng: &mut R) -> CorrelationTable {
    let mut dirichlet = |k: usize| -> Vec<f64> {
        let g: Vec<f64> = (0..k).map(|_| -rng.random::<f64>().max(f64::MIN_POSITIVE).ln()).collect();
        let total: f64 = g.iter().sum();
        g.into_iter().map(|x| x / total).collect()
    };
    let local = dirichlet(16);
    let nonlocal_weight: f64 = rng.random();
    let pr = rng.random_range(0..8);
    let mut p = [[[[0.0; 2]; 2]; 2]; 2];
    let mut add = |q: [[OutcomeTable; 2]; 2], w: f64| {
        for i in 0..2 {
            for j in 0..2 {
                for a in 0..2 {
                    for b in 0..2 {
                        p[i][j][a][b] += w * q[i][j][a][b];
                    }
                }
            }
        }
    };
    for (lambda, w) in local.iter().enumerate() {
        add(deterministic_box(lambda), (1.0 - nonlocal_weight) * w);
    }
    add(pr_box(pr), nonlocal_weight);
    for cell in p.iter_mut().flatten() {
        let total: f64 = cell.iter().flatten().sum();
        for x in cell.iter_mut().flatten() {
            *x /= total;
        }
    }
    CorrelationTable::from_frequencies([0.0, 1.0], [0.0, 1.0], p, None).expect("mixture is a valid table")
}

/// Local hidden-variable model: a shared `lambda` uniform in `[0, 1)` and deterministic
/// responses `A(theta, lambda)`, `B(theta, lambda)` in `{+1, -1}`.
pub struct LhvSimulator<A, B> {
    response1: A,
    response2: B,
}

impl<A, B> LhvSimulator<A, B>
where
    A: Fn(f64, f64) -> i8 + Sync,
    B: Fn(f64, f64) -> i8 + Sync,
{
    pub fn new(response1: A, response2: B) -> Self {
        LhvSimulator { response1, response2 }
    }

    /// `n_per_pair` trials for each of the four setting pairs, trial `k` of pair `(i, j)` using
    /// stream `4k + 2i + j`.
    pub fn table(
        &self,
        settings1: [f64; 2],
        settings2: [f64; 2],
        n_per_pair: u64,
        seed: RandomSeed,
    ) -> Result<CorrelationTable> {
        if n_per_pair == 0 {
            return Err(Error::InsufficientSamples { needed: 1, found: 0 });
        }
        let outcomes = map_trials(4 * n_per_pair, seed, |trial, rng| {
            let pair = (trial % 4) as usize;
            let (i, j) = (pair / 2, pair % 2);
            let lambda: f64 = rng.random();
            let a = (self.response1)(settings1[i], lambda);
            let b = (self.response2)(settings2[j], lambda);
            (pair, usize::from(a < 0), usize::from(b < 0))
        });
        let mut counts = [[[[0u64; 2]; 2]; 2]; 2];
        for (pair, a, b) in outcomes {
            counts[pair / 2][pair % 2][a][b] += 1;
        }
        let mut table = CorrelationTable::empty(settings1, settings2);
        for i in 0..2 {
            for j in 0..2 {
                table.entries[i][j] = Some(CorrelationEntry::from_counts(counts[i][j])?);
            }
        }
        Ok(table)
    }
}

/// Polarization model: `lambda` is a hidden polarization angle `pi lambda`; party 1 answers
/// `sign cos 2(theta - angle)` and party 2 the opposite.
pub fn polarization_lhv() -> LhvSimulator<impl Fn(f64, f64) -> i8 + Sync, impl Fn(f64, f64) -> i8 + Sync> {
    let response = |theta: f64, lambda: f64| -> i8 {
        if (2.0 * (theta - std::f64::consts::PI * lambda)).cos() >= 0.0 {
            1
        } else {
            -1
        }
    };
    LhvSimulator::new(response, move |theta, lambda| -response(theta, lambda))
}

/// Hidden variable selects a deterministic assignment with the given weights, ignoring the
/// setting values (only their index matters).
pub fn assignment_lhv(
    weights: [f64; 16],
    settings1: [f64; 2],
    settings2: [f64; 2],
) -> LhvSimulator<impl Fn(f64, f64) -> i8 + Sync, impl Fn(f64, f64) -> i8 + Sync> {
    let total: f64 = weights.iter().sum();
    let cumulative: Vec<f64> = weights
        .iter()
        .scan(0.0, |acc, w| {
            *acc += w / total;
            Some(*acc)
        })
        .collect();
    let cumulative2 = cumulative.clone();
    let pick = |cumulative: &[f64], lambda: f64| cumulative.iter().position(|&c| lambda < c).unwrap_or(15);
    let index = |settings: [f64; 2], theta: f64| usize::from(theta.to_bits() == settings[1].to_bits());
    LhvSimulator::new(
        move |theta, lambda| assignment(pick(&cumulative, lambda))[index(settings1, theta)],
        move |theta, lambda| assignment(pick(&cumulative2, lambda))[2 + index(settings2, theta)],
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TriangleClass {
    Flat,
    Deficit,
    Excess,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriangleReport {
    pub angle_sum: f64,
    pub flat_sum: f64,
    pub class: TriangleClass,
}

/// Compares `a_12 + a_23 + a_13` with `flat_sum`.
pub fn triangle_angle_test(angles: [f64; 3], flat_sum: f64) -> Result<TriangleReport> {
    if !(flat_sum > 0.0) || !flat_sum.is_finite() {
        return Err(Error::InvalidArgument(format!("flat_sum must be positive, got {flat_sum}")));
    }
    if let Some(bad) = angles.iter().find(|&&a| !(a > 0.0 && a < flat_sum)) {
        return Err(Error::InvalidArgument(format!("angle {bad} outside (0, {flat_sum})")));
    }
    let angle_sum: f64 = angles.iter().sum();
    let gap = angle_sum - flat_sum;
    let class = if gap.abs() <= TRIANGLE_TOL * flat_sum.max(1.0) {
        TriangleClass::Flat
    } else if gap < 0.0 {
        TriangleClass::Deficit
    } else {
        TriangleClass::Excess
    };
    Ok(TriangleReport { angle_sum, flat_sum, class })
}
