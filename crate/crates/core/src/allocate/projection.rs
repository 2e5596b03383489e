//! Euclidean projection onto the capped simplex `{w : 0 <= w_i <= 1, sum w = 1}`.

use nalgebra::DVector;

/// Projects `y` onto the capped simplex in `O(N log N)`.
///
/// The projection is `w_i = clamp(y_i - theta, 0, 1)` for the unique shift
/// `theta` making the weights sum to one. `g(theta) = sum w_i` is piecewise
/// linear and non-increasing with breakpoints at `y_i - 1` (weight leaves the
/// upper cap) and `y_i` (weight hits zero); sweeping the sorted breakpoints
/// finds the segment containing the root.
///
/// # Panics
///
/// Panics if `y` is empty or contains non-finite values.
pub fn project_capped_simplex(y: &DVector<f64>) -> DVector<f64> {
    let n = y.len();
    assert!(n > 0, "cannot project onto an empty simplex");
    assert!(y.iter().all(|v| v.is_finite()), "projection input must be finite");
    if n == 1 {
        return DVector::from_element(1, 1.0);
    }

    #[derive(Clone, Copy)]
    enum Event {
        LeaveCap(usize),
        HitZero(usize),
    }
    let mut events: Vec<(f64, Event)> = Vec::with_capacity(2 * n);
    for (i, &v) in y.iter().enumerate() {
        events.push((v - 1.0, Event::LeaveCap(i)));
        events.push((v, Event::HitZero(i)));
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0));

    let target = 1.0;
    let mut capped = n as f64;
    let mut free_sum = 0.0;
    let mut free_count = 0usize;
    let mut theta = events[events.len() - 1].0;
    for &(at, event) in &events {
        let g = capped + free_sum - free_count as f64 * at;
        if g <= target {
            theta = if free_count == 0 {
                at
            } else {
                (capped + free_sum - target) / free_count as f64
            };
            break;
        }
        match event {
            Event::LeaveCap(i) => {
                capped -= 1.0;
                free_sum += y[i];
                free_count += 1;
            }
            Event::HitZero(i) => {
                free_sum -= y[i];
                free_count -= 1;
            }
        }
    }
    y.map(|v| (v - theta).clamp(0.0, 1.0))
}
