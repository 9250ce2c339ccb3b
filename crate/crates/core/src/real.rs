use core::fmt::Debug;

/// Storage scalar for [`DenseMatrix`](crate::DenseMatrix). Arithmetic is always
/// carried out in `f64`; values are widened on load and narrowed on store.
pub trait Real: Copy + Debug + Default + PartialOrd + Send + Sync + 'static {
    const BYTES: usize;
    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;
}

impl Real for f32 {
    const BYTES: usize = 4;
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

impl Real for f64 {
    const BYTES: usize = 8;
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v
    }
}
