use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;

/// Flat access to every trainable scalar of a model.
///
/// Gradients are stored in a value of the same type, so `param_slices` of a
/// model and of its gradient line up slice by slice.
pub trait Params {
    fn param_slices(&self) -> Vec<&[f64]>;
    fn param_slices_mut(&mut self) -> Vec<&mut [f64]>;

    fn parameter_count(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    fn flat_params(&self) -> Vec<f64> {
        self.param_slices().concat()
    }

    fn set_flat_params(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for slice in self.param_slices_mut() {
            let n = slice.len();
            slice.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        assert_eq!(offset, flat.len(), "flat parameter length mismatch");
    }

    fn all_finite(&self) -> bool {
        self.param_slices()
            .iter()
            .all(|s| s.iter().all(|x| x.is_finite()))
    }

    /// Hash of the exact bit patterns of all parameters.
    fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for slice in self.param_slices() {
            h.write_usize(slice.len());
            for x in slice {
                h.write_u64(x.to_bits());
            }
        }
        h.finish()
    }
}

impl Params for Vec<f64> {
    fn param_slices(&self) -> Vec<&[f64]> {
        vec![self.as_slice()]
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.as_mut_slice()]
    }
}
