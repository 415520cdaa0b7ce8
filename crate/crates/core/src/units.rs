//! Unit conventions. Energies and rates are carried in cm⁻¹, times in fs.

/// Angular frequency of 1 fs⁻¹ expressed in cm⁻¹ (2πc in cm/fs, inverted).
pub const CM_PER_FS_INV: f64 = 5308.837458877;

/// Boltzmann constant in cm⁻¹/K.
pub const KB_CM_PER_K: f64 = 0.695_034_800;

/// Convert a rate or energy in cm⁻¹ to an angular rate in fs⁻¹.
#[inline]
pub fn cm_to_fs_inv(x: f64) -> f64 {
    x / CM_PER_FS_INV
}

/// Inverse thermal energy β in cm.
pub fn beta_cm(temperature: f64) -> f64 {
    1.0 / (KB_CM_PER_K * temperature)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conversion_matches_speed_of_light() {
        // 2π · 2.99792458e-5 cm/fs
        let two_pi_c = 2.0 * std::f64::consts::PI * 2.997_924_58e-5;
        assert!((1.0 / two_pi_c - CM_PER_FS_INV).abs() < 1e-6);
    }

    #[test]
    fn room_temperature_beta() {
        let b = beta_cm(300.0);
        assert!((1.0 / b - 208.510_44).abs() < 1e-3);
    }
}
