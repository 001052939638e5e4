//! Log-domain reductions shared by the kernel operators.

/// `log(sum(exp(x)))` over an iterator, computed with a running maximum so
/// a single pass suffices. Returns `-inf` for an empty input.
#[inline]
pub fn logsumexp<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut max = f64::NEG_INFINITY;
    let mut acc = 0.0;
    for v in values {
        if v == f64::NEG_INFINITY {
            continue;
        }
        if v.is_nan() {
            return f64::NAN;
        }
        if v <= max {
            acc += (v - max).exp();
        } else {
            // rescale the running sum to the new maximum
            acc = acc * (max - v).exp() + 1.0;
            max = v;
        }
    }
    if max == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        max + acc.ln()
    }
}

/// `log(exp(a) + exp(b))`.
#[inline]
pub fn logaddexp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Maximum of a slice ignoring NaN; `-inf` when empty.
#[inline]
pub(crate) fn max_finite(values: &[f64]) -> f64 {
    values
        .iter()
        .copied()
        .filter(|v| !v.is_nan())
        .fold(f64::NEG_INFINITY, f64::max)
}
