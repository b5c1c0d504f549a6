//! Data-parallel execution of the per-plane compute loops.
//!
//! Every kernel below writes each output plane from exactly one task with a
//! fixed sequential summation order inside, so results are bit-identical with
//! and without the `parallel` feature and for any thread count.

#[cfg(feature = "parallel")]
pub(crate) fn for_each_plane<F>(data: &mut [f64], plane_len: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    use rayon::prelude::*;
    data.par_chunks_mut(plane_len)
        .enumerate()
        .for_each(|(i, chunk)| f(i, chunk));
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn for_each_plane<F>(data: &mut [f64], plane_len: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    for (i, chunk) in data.chunks_mut(plane_len).enumerate() {
        f(i, chunk);
    }
}
