//! Zero-forcing beam directions.

use num_complex::Complex64;

use crate::channel::{ChannelSet, Scene};
use crate::error::{invalid, IsacError, Result};
use crate::geometry::{CMatrix, CVector};

/// Unit-norm directions `u[m][k]` orthogonal to the channels from BS `m` to
/// every other CU in the network.
///
/// The channels to suppress are stacked as rows `h^H` of an `N_t×N_t`
/// matrix (zero-padded); the right singular vectors with vanishing singular
/// values span their orthogonal complement, and `u` is the normalized
/// projection of the served channel onto that complement.
pub fn zf_beamformers(ch: &ChannelSet, scene: &Scene) -> Result<Vec<Vec<CVector>>> {
    let cells = ch.num_cells();
    let users = ch.users_per_cell();
    let n = ch.arrays.n_tx;
    if scene.num_cells() != cells || scene.users_per_cell() != users {
        return invalid("scene and channel set disagree in size");
    }
    if n < cells * users {
        return invalid(format!("zero-forcing {} users needs at least {} transmit antennas, got {n}", cells * users, cells * users));
    }
    let mut out = Vec::with_capacity(cells);
    for m in 0..cells {
        let mut row = Vec::with_capacity(users);
        for k in 0..users {
            let mut stack = CMatrix::zeros(n, n);
            let mut r = 0;
            for mp in 0..cells {
                for kp in 0..users {
                    if (mp, kp) != (m, k) {
                        stack.row_mut(r).copy_from(&ch.h(m, mp, kp).adjoint());
                        r += 1;
                    }
                }
            }
            let h = ch.h(m, m, k);
            let svd = stack.svd(false, true);
            let v_t = svd.v_t.as_ref().expect("right singular vectors requested");
            let s_max = svd.singular_values.max();
            let cutoff = n as f64 * f64::EPSILON * s_max.max(f64::MIN_POSITIVE);
            let mut proj = CVector::zeros(n);
            for (j, &s) in svd.singular_values.iter().enumerate() {
                if s <= cutoff {
                    let v = v_t.row(j).adjoint();
                    let c: Complex64 = v.dotc(h);
                    proj += v * c;
                }
            }
            let norm = proj.norm();
            if norm <= 1e-12 * h.norm() {
                return Err(IsacError::DegenerateDirection { bs: m, user: k, norm });
            }
            row.push(proj / Complex64::new(norm, 0.0));
        }
        out.push(row);
    }
    Ok(out)
}
