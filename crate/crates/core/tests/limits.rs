//! Where ProReg's small-alpha limit actually goes.
//!
//! With `w` frozen, `(1 - w) CE + alpha w KL` tends to `(1 - w) CE`, a
//! per-sample reweighted cross-entropy, as `alpha -> 0`. Its logit gradient
//! approaches `(1 - w)(f - y)`, not the FT gradient `f - y`.

use proreg::losses::{grad_ce_logits, grad_total_logits, proreg_weight};
use proreg::prob::{clamp_to_simplex, OneHot};
use proreg::LossMode;

#[test]
fn small_alpha_gradient_is_reweighted_cross_entropy() {
    let f = clamp_to_simplex(vec![0.6, 0.3, 0.1]).unwrap();
    let zs = clamp_to_simplex(vec![0.2, 0.5, 0.3]).unwrap();
    let y = OneHot::new(0, 3).unwrap();
    let w = proreg_weight(&f, &y, &zs).unwrap();
    assert!((w - 0.75).abs() < 1e-12);
    let g = grad_total_logits(&LossMode::ProReg { alpha: 1e-6 }, &f, &y, Some(&zs)).unwrap();
    let ce = grad_ce_logits(&f, &y).unwrap();
    for (gi, ci) in g.values().iter().zip(ce.values()) {
        assert!((gi - (1.0 - w) * ci).abs() < 1e-6);
        // A quarter of the FT gradient, not the FT gradient.
        assert!((gi - ci).abs() > 0.01);
    }
}
