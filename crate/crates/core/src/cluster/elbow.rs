use crate::error::{MarlError, Result};

/// Smallest and largest `k` the elbow rule may pick.
pub const ELBOW_RANGE: (usize, usize) = (2, 5);

/// `k` with the largest discrete second difference of WCSS,
/// `W(k−1) − 2W(k) + W(k+1)`, over `ELBOW_RANGE`; ties go to the smaller `k`.
/// An explicit `override_k` wins.
pub fn elbow_select(curve: &[(usize, f64)], override_k: Option<usize>) -> Result<usize> {
    if let Some(k) = override_k {
        if k == 0 {
            return Err(MarlError::Parameter("k override must be positive".into()));
        }
        return Ok(k);
    }
    let w = |k: usize| {
        curve
            .iter()
            .find(|(kk, _)| *kk == k)
            .map(|(_, v)| *v)
            .ok_or_else(|| MarlError::Parameter(format!("wcss curve is missing k = {k}")))
    };
    let mut best: Option<(usize, f64)> = None;
    for k in ELBOW_RANGE.0..=ELBOW_RANGE.1 {
        let second = w(k - 1)? - 2.0 * w(k)? + w(k + 1)?;
        if best.map_or(true, |(_, b)| second > b) {
            best = Some((k, second));
        }
    }
    Ok(best.expect("non-empty range").0)
}
