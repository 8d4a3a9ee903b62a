//! Certified intervals for truncated sums over infinite edge stars.
//!
//! Sums of the form `sum_{|y| > R} w(y)` cannot be enumerated; every
//! truncated sum in this crate carries an interval `[lo, hi]` that is
//! guaranteed to contain the neglected tail.

/// A closed interval guaranteed to contain a quantity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const ZERO: Interval = Interval { lo: 0.0, hi: 0.0 };

    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi);
        Interval { lo, hi }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn add(&self, other: &Interval) -> Interval {
        Interval::new(self.lo + other.lo, self.hi + other.hi)
    }

    pub fn scale(&self, c: f64) -> Interval {
        debug_assert!(c >= 0.0);
        Interval::new(self.lo * c, self.hi * c)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

/// A truncated sum together with a certified interval for its tail.
/// The full sum lies in `[value + tail.lo, value + tail.hi]`.
#[derive(Debug, Clone, Copy)]
pub struct Summed {
    pub value: f64,
    pub tail: Interval,
}

impl Summed {
    pub fn exact(value: f64) -> Self {
        Summed { value, tail: Interval::ZERO }
    }

    /// Interval containing the full (untruncated) sum.
    pub fn enclosure(&self) -> Interval {
        Interval::new(self.value + self.tail.lo, self.value + self.tail.hi)
    }

    /// Upper bound on the full sum.
    pub fn upper(&self) -> f64 {
        self.value + self.tail.hi
    }
}

/// Certified bounds for `sum_{r = R+1}^{infinity} r^p` with `p < -1`,
/// by comparison with the integral of `t^p`:
/// the sum lies in `[(R+1)^{p+1}/(-p-1), R^{p+1}/(-p-1)]`.
pub fn power_tail(r: f64, p: f64) -> Interval {
    assert!(p < -1.0, "power tail diverges for p >= -1");
    assert!(r >= 1.0);
    let q = -(p + 1.0);
    Interval::new((r + 1.0).powf(-q) / q, r.powf(-q) / q)
}

/// Certified bounds for `sum_{r = R+1}^{infinity} (1+r)^p` with `p < -1`.
pub fn shifted_power_tail(r: f64, p: f64) -> Interval {
    power_tail(r + 1.0, p)
}

/// Number of cells on the sup-norm shell `{ mu : |mu|_inf = r }` in Z^d,
/// i.e. `(2r+1)^d - (2r-1)^d`.
pub fn shell_count(d: u32, r: i64) -> i64 {
    if r == 0 {
        return 1;
    }
    (2 * r + 1).pow(d) - (2 * r - 1).pow(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_tail_encloses_zeta_tail() {
        // sum_{r>10} r^{-4} = zeta(4) - sum_{r<=10} r^{-4}
        let zeta4 = std::f64::consts::PI.powi(4) / 90.0;
        let partial: f64 = (1..=10).map(|r| (r as f64).powi(-4)).sum();
        let tail = zeta4 - partial;
        let bound = power_tail(10.0, -4.0);
        assert!(bound.contains(tail), "{bound:?} vs {tail}");
    }

    #[test]
    fn shell_counts_match_direct_enumeration() {
        for d in 1..=3u32 {
            for r in 1..=6i64 {
                let mut count = 0i64;
                let mut mu = vec![-r; d as usize];
                loop {
                    if mu.iter().map(|x| x.abs()).max().unwrap() == r {
                        count += 1;
                    }
                    let mut axis = 0;
                    loop {
                        if axis == d as usize {
                            break;
                        }
                        mu[axis] += 1;
                        if mu[axis] > r {
                            mu[axis] = -r;
                            axis += 1;
                        } else {
                            break;
                        }
                    }
                    if axis == d as usize {
                        break;
                    }
                }
                assert_eq!(count, shell_count(d, r));
            }
        }
    }
}
