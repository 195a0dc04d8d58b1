use crate::tensor::{BoundParams, ParamId, ParamStore, Tape, Tensor, Var};

use super::DgnnError;

/// `φ(Δt) = cos(ω Δt / scale + b)` with learnable frequencies `ω` and phases `b`.
#[derive(Clone, Debug)]
pub struct TimeEncoder {
    pub frequencies: ParamId,
    pub phases: ParamId,
    pub dim: usize,
    pub scale: f64,
}

impl TimeEncoder {
    /// Frequencies start geometrically spaced from 1 down to 1e-9, phases at 0.
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, scale: f64) -> Self {
        let freq: Vec<f64> = (0..dim)
            .map(|k| {
                let exponent = if dim > 1 { 9.0 * k as f64 / (dim - 1) as f64 } else { 0.0 };
                10f64.powf(-exponent)
            })
            .collect();
        Self {
            frequencies: store.add(format!("{name}.frequencies"), Tensor::row(freq)),
            phases: store.add_zeros(format!("{name}.phases"), 1, dim),
            dim,
            scale,
        }
    }

    /// One encoded row per elapsed time.
    pub fn encode(&self, tape: &mut Tape, p: &BoundParams, dts: &[f64]) -> Result<Var, DgnnError> {
        if let Some(&dt) = dts.iter().find(|dt| !(**dt >= 0.0) || !dt.is_finite()) {
            return Err(DgnnError::NegativeTimeDelta(dt));
        }
        let column = tape.constant(Tensor::column(dts.iter().map(|dt| dt / self.scale).collect()));
        let angles = tape.matmul(column, p[self.frequencies])?;
        let angles = tape.add_row(angles, p[self.phases])?;
        Ok(tape.cos(angles)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;

    fn encoder(dim: usize) -> (ParamStore, TimeEncoder) {
        let mut store = ParamStore::new();
        let enc = TimeEncoder::new(&mut store, "time", dim, 1.0);
        (store, enc)
    }

    #[test]
    fn zero_elapsed_time_is_all_ones() {
        let (store, enc) = encoder(6);
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let v = enc.encode(&mut tape, &p, &[0.0]).unwrap();
        assert!(tape.value(v).data().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn bounded_output() {
        let (store, enc) = encoder(8);
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let v = enc.encode(&mut tape, &p, &[0.3, 17.0, 1e6, 123_456.789]).unwrap();
        assert_eq!(tape.shape(v), [4, 8]);
        assert!(tape.value(v).data().iter().all(|x| x.abs() <= 1.0));
    }

    #[test]
    fn negative_elapsed_time_is_rejected() {
        let (store, enc) = encoder(2);
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        assert!(matches!(enc.encode(&mut tape, &p, &[1.0, -0.5]), Err(DgnnError::NegativeTimeDelta(_))));
    }

    #[test]
    fn frequency_gradient_matches_finite_differences() {
        let (mut store, enc) = encoder(4);
        store.get_mut(enc.phases).data_mut().copy_from_slice(&[0.1, -0.3, 0.7, 0.2]);
        let report = grad_check(
            |tape, p| {
                let v = enc.encode(tape, p, &[0.5, 2.0, 3.7])?;
                Ok::<_, DgnnError>(tape.sum(v)?)
            },
            &store,
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
    }
}
