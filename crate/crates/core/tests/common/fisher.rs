//! Hypergeometric enumeration references for Fisher's exact test.

pub fn binom(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut r: u128 = 1;
    for i in 0..k {
        r = r * (n - i) as u128 / (i + 1) as u128;
    }
    r
}

/// Two-sided p by exact enumeration: tables with the observed margins whose
/// probability does not exceed the observed one, compared as integers.
pub fn fisher_oracle(t: [[u64; 2]; 2]) -> f64 {
    let (r1, r2) = (t[0][0] + t[0][1], t[1][0] + t[1][1]);
    let c1 = t[0][0] + t[1][0];
    let n = r1 + r2;
    let weight = |a: u64| binom(r1, a) * binom(r2, c1 - a);
    let observed = weight(t[0][0]);
    let lo = c1.saturating_sub(r2);
    let hi = c1.min(r1);
    let tail: u128 = (lo..=hi).map(weight).filter(|&w| w <= observed).sum();
    tail as f64 / binom(n, c1) as f64
}

/// Same enumeration with f64 log-binomials, for tables past u128 range.
pub fn fisher_oracle_large(t: [[u64; 2]; 2]) -> f64 {
    let lf = |n: u64| (1..=n).map(|k| (k as f64).ln()).sum::<f64>();
    let (r1, r2) = (t[0][0] + t[0][1], t[1][0] + t[1][1]);
    let c1 = t[0][0] + t[1][0];
    let c2 = r1 + r2 - c1;
    let n = r1 + r2;
    let logp = |a: u64| {
        let (b, c) = (r1 - a, c1 - a);
        let d = c2 - b;
        lf(r1) + lf(r2) + lf(c1) + lf(c2) - lf(n) - lf(a) - lf(b) - lf(c) - lf(d)
    };
    let obs = logp(t[0][0]);
    let lo = c1.saturating_sub(r2);
    let hi = c1.min(r1);
    (lo..=hi).map(logp).filter(|&l| l <= obs + 1e-7).map(f64::exp).sum()
}
