//! Bessel functions of the first kind for integer order.
//!
//! Small arguments use the ascending power series. Otherwise all orders up to
//! the requested one come from Miller's downward recurrence, normalized with
//! `J_0 + 2 Σ J_{2k} = 1`.

use crate::{Error, Result};

pub const MAX_BESSEL_ORDER: u32 = 64;

const MAX_ARGUMENT: f64 = 1e4;
const SERIES_CUTOFF: f64 = 0.1;
const RESCALE_ABOVE: f64 = 1e250;

pub fn bessel_j(order: u32, x: f64) -> Result<f64> {
    Ok(bessel_j_range(order, x)?[order as usize])
}

/// `[J_0(x), J_1(x), ..., J_max_order(x)]`.
pub fn bessel_j_range(max_order: u32, x: f64) -> Result<Vec<f64>> {
    if max_order > MAX_BESSEL_ORDER {
        return Err(Error::UnsupportedOrder {
            order: max_order,
            max: MAX_BESSEL_ORDER,
        });
    }
    if !x.is_finite() || x.abs() > MAX_ARGUMENT {
        return Err(Error::Domain(format!(
            "Bessel argument {x} outside [-{MAX_ARGUMENT}, {MAX_ARGUMENT}]"
        )));
    }
    let n = max_order as usize;
    let ax = x.abs();
    let mut out = if ax <= SERIES_CUTOFF {
        (0..=n).map(|k| power_series(k, ax)).collect()
    } else {
        miller(n, ax)
    };
    if x < 0.0 {
        // J_k(-x) = (-1)^k J_k(x)
        out.iter_mut().skip(1).step_by(2).for_each(|v| *v = -*v);
    }
    Ok(out)
}

fn power_series(order: usize, x: f64) -> f64 {
    if x == 0.0 {
        return if order == 0 { 1.0 } else { 0.0 };
    }
    let half = 0.5 * x;
    let mut term = 1.0;
    for i in 1..=order {
        term *= half / i as f64;
    }
    let q = -half * half;
    let mut sum = term;
    let mut m = 0usize;
    loop {
        m += 1;
        term *= q / (m * (m + order)) as f64;
        sum += term;
        if term.abs() <= 1e-17 * sum.abs() {
            return sum;
        }
    }
}

fn miller(n: usize, x: f64) -> Vec<f64> {
    let top = n.max(x.ceil() as usize) as f64;
    // even start index well above both the order and the turning point
    let mut start = (top + 16.0 + (40.0 * top).sqrt()) as usize;
    start += start % 2;

    let mut out = vec![0.0; n + 1];
    let two_over_x = 2.0 / x;
    let mut next = 0.0; // j_{k+1}
    let mut cur = 1e-30; // j_k
    let mut norm = 0.0;
    for k in (1..=start).rev() {
        if k <= n {
            out[k] = cur;
        }
        if k % 2 == 0 {
            norm += 2.0 * cur;
        }
        let prev = k as f64 * two_over_x * cur - next;
        next = cur;
        cur = prev;
        if cur.abs() > RESCALE_ABOVE {
            let s = 1.0 / RESCALE_ABOVE;
            cur *= s;
            next *= s;
            norm *= s;
            out.iter_mut().for_each(|v| *v *= s);
        }
    }
    out[0] = cur;
    norm += cur;
    out.iter_mut().for_each(|v| *v /= norm);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Double-double arithmetic, enough to sum the ascending series without
    /// cancellation loss for |x| ≤ 20.
    #[derive(Clone, Copy)]
    struct Dd(f64, f64);

    fn quick_two_sum(a: f64, b: f64) -> Dd {
        let s = a + b;
        Dd(s, b - (s - a))
    }

    fn two_sum(a: f64, b: f64) -> (f64, f64) {
        let s = a + b;
        let bb = s - a;
        (s, (a - (s - bb)) + (b - bb))
    }

    impl Dd {
        fn add(self, o: Dd) -> Dd {
            let (s, e) = two_sum(self.0, o.0);
            quick_two_sum(s, e + self.1 + o.1)
        }
        fn mul(self, o: Dd) -> Dd {
            let p = self.0 * o.0;
            let e = self.0.mul_add(o.0, -p) + self.0 * o.1 + self.1 * o.0;
            quick_two_sum(p, e)
        }
        fn div_f(self, d: f64) -> Dd {
            let q1 = self.0 / d;
            let p = q1 * d;
            let e = q1.mul_add(d, -p);
            let r = ((self.0 - p) - e) + self.1;
            quick_two_sum(q1, r / d)
        }
    }

    fn series_oracle(k: usize, x: f64) -> f64 {
        let half = Dd(0.5 * x, 0.0);
        let mut term = Dd(1.0, 0.0);
        for i in 1..=k {
            term = term.mul(half).div_f(i as f64);
        }
        let q = half.mul(half);
        let q = Dd(-q.0, -q.1);
        let mut sum = term;
        for m in 1..200 {
            term = term.mul(q).div_f((m * (m + k)) as f64);
            sum = sum.add(term);
            if term.0.abs() < 1e-34 {
                break;
            }
        }
        sum.0 + sum.1
    }

    #[test]
    fn known_values() {
        assert_eq!(bessel_j(0, 0.0).unwrap(), 1.0);
        assert_eq!(bessel_j(1, 0.0).unwrap(), 0.0);
        // oracle: power series summed until the term drops below 1e-14
        let mut sum = 0.0;
        let mut term: f64 = 1.0;
        let mut m = 0.0;
        while term.abs() >= 1e-14 {
            sum += term;
            m += 1.0;
            term *= -0.25 / (m * m);
        }
        assert!((sum - 0.7651976866).abs() < 1e-10);
        assert!((bessel_j(0, 1.0).unwrap() - sum).abs() < 1e-10);
    }

    #[test]
    fn order_above_cap_is_rejected() {
        assert!(matches!(
            bessel_j(65, 1.0),
            Err(Error::UnsupportedOrder { order: 65, .. })
        ));
    }

    #[test]
    fn negative_argument_parity() {
        for k in 0..10u32 {
            let a = bessel_j(k, 3.7).unwrap();
            let b = bessel_j(k, -3.7).unwrap();
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            assert_eq!(b, sign * a);
        }
    }

    #[test]
    fn matches_double_double_series_on_grid() {
        for k in 0..=16usize {
            for i in 0..=400 {
                let x = i as f64 * 0.05;
                let got = bessel_j(k as u32, x).unwrap();
                let want = series_oracle(k, x);
                assert!(
                    (got - want).abs() <= 1e-10,
                    "J_{k}({x}) = {got}, oracle {want}"
                );
            }
        }
    }

    #[test]
    fn large_argument_satisfies_three_term_recurrence() {
        for &x in &[250.0, 1234.5, 9999.0] {
            let j = bessel_j_range(64, x).unwrap();
            for k in 1..64 {
                let lhs = j[k - 1] + j[k + 1];
                let rhs = 2.0 * k as f64 / x * j[k];
                assert!((lhs - rhs).abs() < 1e-12);
            }
            // asymptotic form J_0(x) ~ sqrt(2/(pi x)) cos(x - pi/4)
            let asym = (2.0 / (std::f64::consts::PI * x)).sqrt()
                * (x - std::f64::consts::FRAC_PI_4).cos();
            assert!((j[0] - asym).abs() < 1e-3 / x.sqrt());
        }
    }

    proptest! {
        #[test]
        fn agrees_with_series_oracle(k in 0usize..=16, x in 0.0f64..20.0) {
            let got = bessel_j(k as u32, x).unwrap();
            prop_assert!((got - series_oracle(k, x)).abs() <= 1e-10);
        }
    }
}
