use log::warn;

use serde::{Deserialize, Serialize};

use super::{apply_i_pm, GridSpec};
use crate::error::{Error, Result};
use crate::geometry::{principal_symbol_b2, Branch, Mollifier, PhasePoint};
use crate::grid::{Lattice, ScalarField};

/// A sampled, normalized wave packet and the fraction of its mass cut off by the lattice.
#[derive(Clone, Debug)]
pub struct WavePacket {
    pub field: ScalarField,
    pub leaked_mass: f64,
}

// Leakage above this fraction of the squared mass triggers a warning.
const LEAK_TOLERANCE: f64 = 1e-8;

fn profile(p: &PhasePoint, width: f64, k: f64, x: &[f64]) -> f64 {
    let n = p.eta_norm();
    let mut phase = 0.0;
    let mut r2 = 0.0;
    for ((xi, yi), ei) in x.iter().zip(&p.y).zip(&p.eta) {
        phase += ei / n * (xi - yi);
        r2 += (xi - yi) * (xi - yi);
    }
    (k * phase).cos() * (-r2 / (2.0 * width * width)).exp()
}

/// `cos(k eta_hat . (x - y)) exp(-|x - y|^2 / (2 w^2))` on `lattice`, normalized to unit weighted L2 norm.
pub fn wave_packet(p: &PhasePoint, width: f64, k: f64, lattice: &Lattice) -> Result<WavePacket> {
    if !(width > 0.0) || !(k >= 0.0) {
        return Err(Error::Input(format!("wave packet needs w > 0 and k >= 0 (got {width}, {k})")));
    }
    if lattice.dim() != p.dim() {
        return Err(Error::Input("packet and lattice dimensions differ".into()));
    }
    let mut field = ScalarField::from_fn(lattice.clone(), |x| profile(p, width, k, x));
    let inside = field.values.iter().map(|v| v * v).sum::<f64>();
    if inside == 0.0 {
        return Err(Error::Input("wave packet vanishes on the lattice".into()));
    }

    // Mass on a lattice wide enough to hold the whole Gaussian.
    let h = lattice.h;
    let reach = (10.0 * width / h).ceil() as i64;
    let lo: Vec<i64> = p.y.iter().map(|&c| (c / h).round() as i64 - reach).collect();
    let shape = vec![(2 * reach + 1) as usize; p.dim()];
    let wide = Lattice::new(h, lo, shape)?;
    let total: f64 = (0..wide.len())
        .map(|i| profile(p, width, k, &wide.coords(i)).powi(2))
        .sum();
    let leaked_mass = (1.0 - inside / total).max(0.0);
    if leaked_mass > LEAK_TOLERANCE {
        warn!("wave packet at {:?} leaks {leaked_mass:.3e} of its mass outside the lattice", p.y);
    }

    let scale = 1.0 / field.norm();
    field.values.iter_mut().for_each(|v| *v *= scale);
    Ok(WavePacket { field, leaked_mass })
}

/// Quadratic forms of the one-sided propagators on one packet.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymbolCheck {
    pub k: f64,
    pub width: f64,
    /// `|I+ v|^2 + |I- v|^2`.
    pub quadratic_form: f64,
    /// `b2(y, k eta_hat) / 4`.
    pub predicted: f64,
    pub relative_error: f64,
    /// `|<I+ v, I- v>| / (|I+ v| |I- v|)`.
    pub cross_ratio: f64,
    pub leaked_mass: f64,
}

/// Compare `<(I+* I+ + I-* I-) v, v>` for the packet at `p` with the principal symbol.
pub fn symbol_check(
    p: &PhasePoint,
    width: f64,
    k: f64,
    chi: &Mollifier,
    lattice: &Lattice,
    grid: &GridSpec,
) -> Result<SymbolCheck> {
    let packet = wave_packet(p, width, k, lattice)?;
    let plus = apply_i_pm(&packet.field, Branch::Plus, Some(chi), grid)?;
    let minus = apply_i_pm(&packet.field, Branch::Minus, Some(chi), grid)?;
    let (np, nm) = (plus.norm_sqr(), minus.norm_sqr());
    let quadratic_form = np + nm;
    let scale = k / p.eta_norm();
    let at_k = PhasePoint::new(p.y.clone(), p.eta.iter().map(|e| e * scale).collect())?;
    let predicted = principal_symbol_b2(&at_k, chi) / 4.0;
    let cross_ratio = if np > 0.0 && nm > 0.0 { plus.inner(&minus).norm() / (np * nm).sqrt() } else { 0.0 };
    Ok(SymbolCheck {
        k,
        width,
        quadratic_form,
        predicted,
        relative_error: (quadratic_form - predicted).abs() / predicted,
        cross_ratio,
        leaked_mass: packet.leaked_mass,
    })
}
