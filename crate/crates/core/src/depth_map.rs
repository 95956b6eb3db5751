use crate::error::{Error, Result};

/// Dense depth grid with a validity mask. Row-major, `values[j * width + i]`.
///
/// Invalid pixels always carry the value `0.0`, so two maps with the same
/// valid content compare equal.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl DepthMap {
    /// Every pixel valid. Values must be positive and finite.
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        let valid = vec![true; values.len()];
        Self::with_mask(width, height, values, valid)
    }

    pub fn with_mask(width: usize, height: usize, mut values: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!("depth map size {width}x{height}")));
        }
        if values.len() != width * height || valid.len() != width * height {
            return Err(Error::Shape(format!(
                "depth map {width}x{height} given {} values and {} mask entries",
                values.len(),
                valid.len()
            )));
        }
        for (v, &ok) in values.iter_mut().zip(&valid) {
            if !ok {
                *v = 0.0;
            } else if !(v.is_finite() && *v > 0.0) {
                return Err(Error::InvalidDepth(*v));
            }
        }
        Ok(Self {
            width,
            height,
            values,
            valid,
        })
    }

    /// Builds a map from raw values, marking non-positive and non-finite
    /// entries invalid.
    pub fn from_raw(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        let valid = values.iter().map(|v| v.is_finite() && *v > 0.0).collect();
        Self::with_mask(width, height, values, valid)
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(width * height);
        for j in 0..height {
            for i in 0..width {
                values.push(f(i, j));
            }
        }
        Self::new(width, height, values)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let idx = j * self.width + i;
        self.valid[idx].then(|| self.values[idx])
    }

    pub fn num_valid(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn all_valid(&self) -> bool {
        self.valid.iter().all(|&v| v)
    }

    /// Values of valid pixels in raster order.
    pub fn valid_values(&self) -> Vec<f64> {
        self.values
            .iter()
            .zip(&self.valid)
            .filter_map(|(&v, &ok)| ok.then_some(v))
            .collect()
    }

    pub(crate) fn check_same_shape(&self, other: &DepthMap) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::Shape(format!(
                "depth maps differ in size: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invalid_pixels_are_canonical() {
        let a = DepthMap::with_mask(2, 1, vec![1.0, 7.0], vec![true, false]).unwrap();
        let b = DepthMap::with_mask(2, 1, vec![1.0, -3.0], vec![true, false]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.get(1, 0), None);
        assert_eq!(a.valid_values(), vec![1.0]);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(DepthMap::new(2, 1, vec![1.0, 0.0]).is_err());
        assert!(DepthMap::new(2, 1, vec![1.0, f64::NAN]).is_err());
        assert!(DepthMap::new(2, 2, vec![1.0]).is_err());
        let raw = DepthMap::from_raw(3, 1, vec![1.0, -1.0, f64::INFINITY]).unwrap();
        assert_eq!(raw.num_valid(), 1);
    }
}
