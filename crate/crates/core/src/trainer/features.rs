use ndarray::{Array1, Array2, ArrayView2};

use crate::actor_critic::LyapunovNet;
use crate::car_env::{pos_index, vel_index, EnvConfig, NUM_CARS, STATE_DIM};
use crate::safety_constraints::LyapunovCandidate;

/// Fixed affine map from raw states to the network inputs: inter-car gaps
/// and speeds, centred and scaled. Positions grow without bound along the
/// road, so the networks never see them directly.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationMap {
    matrix: Array2<f64>,
    offset: Array1<f64>,
}

impl ObservationMap {
    pub fn for_env(cfg: &EnvConfig) -> Self {
        let dim = 2 * NUM_CARS - 1;
        let mut matrix = Array2::zeros((dim, STATE_DIM));
        let mut offset = Array1::zeros(dim);
        let gap_scale = 1.0 / 5.0;
        for car in 1..NUM_CARS {
            let row = car - 1;
            matrix[[row, pos_index(car)]] = gap_scale;
            matrix[[row, pos_index(car + 1)]] = -gap_scale;
            offset[row] = -cfg.d_desired * gap_scale;
        }
        let speed_scale = 1.0 / cfg.v_s.max(1.0);
        for car in 1..=NUM_CARS {
            let row = NUM_CARS - 1 + car - 1;
            matrix[[row, vel_index(car)]] = speed_scale;
            offset[row] = -1.0;
        }
        Self { matrix, offset }
    }

    pub fn output_dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.matrix.t()) + &self.offset
    }

    pub fn apply_row(&self, x: &[f64]) -> Vec<f64> {
        let v = ArrayView2::from_shape((1, x.len()), x).expect("row");
        self.apply(v).into_raw_vec_and_offset().0
    }

    /// Pulls a gradient on the features back to the raw state.
    pub fn pullback(&self, dz: ArrayView2<f64>) -> Array2<f64> {
        dz.dot(&self.matrix)
    }
}

/// The Lyapunov network seen through the observation map.
pub struct FeatureLyapunov<'a> {
    pub net: &'a LyapunovNet,
    pub map: &'a ObservationMap,
}

impl LyapunovCandidate for FeatureLyapunov<'_> {
    fn values(&self, x: ArrayView2<f64>) -> Array1<f64> {
        self.net.values(self.map.apply(x).view())
    }

    fn values_and_input_grad(&self, x: ArrayView2<f64>) -> (Array1<f64>, Array2<f64>) {
        let (v, dz) = self.net.values_and_input_grad(self.map.apply(x).view());
        (v, self.map.pullback(dz.view()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::car_env::reset;

    #[test]
    fn translation_invariant() {
        let cfg = EnvConfig::default();
        let map = ObservationMap::for_env(&cfg);
        let x = reset(&cfg, 3);
        let mut shifted = x.0;
        for car in 1..=NUM_CARS {
            shifted[pos_index(car)] += 123.0;
        }
        let a = map.apply_row(x.as_slice());
        let b = map.apply_row(&shifted);
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-12);
        }
        assert_eq!(a.len(), 9);
    }

    #[test]
    fn desired_gap_maps_to_zero() {
        let cfg = EnvConfig::default();
        let map = ObservationMap::for_env(&cfg);
        let mut x = [0.0; STATE_DIM];
        x[pos_index(3)] = 9.5;
        x[vel_index(4)] = cfg.v_s;
        let z = map.apply_row(&x);
        assert!(z[2].abs() < 1e-15);
        assert!(z[NUM_CARS - 1 + 3].abs() < 1e-15);
    }
}
