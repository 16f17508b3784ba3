//! Preselected gradient vectors and the rank-wise clamping encoder.
//!
//! A codeword is stored as its magnitudes sorted in descending order; the
//! remaining `dim - len` coordinates are implicit zeros. Encoding sorts the
//! gradient by magnitude, picks the codeword closest in cosine distance to
//! the sorted magnitudes, and clamps the coordinate of rank `t` to
//! `±magnitudes[t]`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Magnitudes below this are replaced by zero.
pub const MAGNITUDE_FLOOR: f64 = 1e-5;

const FILE_MAGIC: &[u8; 8] = b"ENCDPCB\0";
const FILE_VERSION: u32 = 1;

/// Role of a gradient vector within one training iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stage {
    Raw,
    Encoded,
    Aggregated,
    Privatized,
    Denoised,
}

/// A dense model-dimension vector tagged with its pipeline stage.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector {
    values: Vec<f64>,
    stage: Stage,
}

impl GradientVector {
    pub fn new(values: Vec<f64>, stage: Stage) -> Self {
        GradientVector { values, stage }
    }

    pub fn zeros(dim: usize, stage: Stage) -> Self {
        GradientVector { values: vec![0.0; dim], stage }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn with_stage(mut self, stage: Stage) -> Self {
        self.stage = stage;
        self
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.values)
    }
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// One sparse preselected vector: nonnegative magnitudes, descending.
#[derive(Debug, Clone, PartialEq)]
pub struct Codeword {
    magnitudes: Vec<f64>,
    norm: f64,
    /// Single-precision copy used to screen candidates during encoding.
    coarse: Vec<f32>,
}

impl Codeword {
    /// Sorts `magnitudes` descending and drops zeros. Negative or
    /// non-finite entries are rejected.
    pub fn from_magnitudes(mut magnitudes: Vec<f64>) -> Result<Self> {
        if let Some(bad) = magnitudes.iter().find(|m| !(**m >= 0.0) || !m.is_finite()) {
            return Err(Error::InvalidArgument(format!("codeword magnitude {bad} is not a finite nonnegative number")));
        }
        magnitudes.sort_by(|a, b| b.total_cmp(a));
        while magnitudes.last() == Some(&0.0) {
            magnitudes.pop();
        }
        let norm = l2_norm(&magnitudes);
        let coarse = magnitudes.iter().map(|m| *m as f32).collect();
        Ok(Codeword { magnitudes, norm, coarse })
    }

    pub fn magnitudes(&self) -> &[f64] {
        &self.magnitudes
    }

    /// Magnitude assigned to rank `t`; zero past the stored length.
    pub fn bound(&self, t: usize) -> f64 {
        self.magnitudes.get(t).copied().unwrap_or(0.0)
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    dim: usize,
    seed: u64,
    codewords: Vec<Codeword>,
}

impl Codebook {
    pub fn new(dim: usize, seed: u64, codewords: Vec<Codeword>) -> Result<Self> {
        if dim == 0 || codewords.is_empty() {
            return Err(Error::InvalidArgument("codebook needs dim >= 1 and at least one codeword".into()));
        }
        if let Some(c) = codewords.iter().find(|c| c.magnitudes.len() > dim) {
            return Err(Error::DimensionMismatch { expected: dim, actual: c.magnitudes.len() });
        }
        Ok(Codebook { dim, seed, codewords })
    }

    /// Convenience constructor from raw magnitude lists.
    pub fn from_magnitudes(dim: usize, seed: u64, vectors: Vec<Vec<f64>>) -> Result<Self> {
        let codewords = vectors.into_iter().map(Codeword::from_magnitudes).collect::<Result<Vec<_>>>()?;
        Self::new(dim, seed, codewords)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.codewords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codewords.is_empty()
    }

    pub fn codewords(&self) -> &[Codeword] {
        &self.codewords
    }

    pub fn codeword(&self, i: usize) -> &Codeword {
        &self.codewords[i]
    }

    /// Writes the binary codebook format (little-endian).
    ///
    /// Layout: magic `ENCDPCB\0`, `u32` version, `u64` n, `u64` dim,
    /// `u64` seed, then per codeword a `u64` length followed by that many
    /// `f64` magnitudes.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(FILE_MAGIC)?;
        w.write_all(&FILE_VERSION.to_le_bytes())?;
        w.write_all(&(self.codewords.len() as u64).to_le_bytes())?;
        w.write_all(&(self.dim as u64).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        for c in &self.codewords {
            w.write_all(&(c.magnitudes.len() as u64).to_le_bytes())?;
            for m in &c.magnitudes {
                w.write_all(&m.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != FILE_MAGIC {
            return Err(format_err("bad magic"));
        }
        let mut b4 = [0u8; 4];
        read_exact(&mut r, &mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != FILE_VERSION {
            return Err(format_err(&format!("unsupported version {version}")));
        }
        let n = read_u64(&mut r)? as usize;
        let dim = read_u64(&mut r)? as usize;
        let seed = read_u64(&mut r)?;
        let mut codewords = Vec::with_capacity(n.min(1 << 20));
        for i in 0..n {
            let len = read_u64(&mut r)? as usize;
            if len > dim {
                return Err(format_err(&format!("codeword {i} has {len} entries for dim {dim}")));
            }
            let mut magnitudes = Vec::with_capacity(len);
            let mut b8 = [0u8; 8];
            for _ in 0..len {
                read_exact(&mut r, &mut b8)?;
                magnitudes.push(f64::from_le_bytes(b8));
            }
            let ordered = magnitudes.windows(2).all(|w| w[0] >= w[1]);
            let valid = magnitudes.iter().all(|m| m.is_finite() && *m > 0.0);
            if !ordered || !valid {
                return Err(format_err(&format!("codeword {i} is not a descending positive list")));
            }
            codewords.push(Codeword::from_magnitudes(magnitudes)?);
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(format_err("trailing bytes after last codeword"));
        }
        Codebook::new(dim, seed, codewords).map_err(|e| format_err(&e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

fn format_err(reason: &str) -> Error {
    Error::Format { kind: "codebook", reason: reason.to_string() }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => format_err("truncated file"),
        _ => Error::Io(e),
    })
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Draws `n` unit-norm codewords from i.i.d. standard Gaussian coordinates.
///
/// Magnitudes under [`MAGNITUDE_FLOOR`] are zeroed before and after
/// normalization, and the survivors renormalized, so every stored magnitude
/// is at least the floor and each codeword has unit norm.
pub fn generate_codebook(n: usize, dim: usize, seed: u64) -> Result<Codebook> {
    if n == 0 || dim == 0 {
        return Err(Error::InvalidArgument(format!("codebook needs n >= 1 and dim >= 1, got n={n}, dim={dim}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut codewords = Vec::with_capacity(n);
    let mut buf = Vec::with_capacity(dim);
    while codewords.len() < n {
        buf.clear();
        buf.extend((0..dim).map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z.abs()
        }));
        buf.retain(|m| *m >= MAGNITUDE_FLOOR);
        let norm = l2_norm(&buf);
        if norm == 0.0 {
            continue;
        }
        buf.iter_mut().for_each(|m| *m /= norm);
        buf.retain(|m| *m >= MAGNITUDE_FLOOR);
        let norm = l2_norm(&buf);
        buf.iter_mut().for_each(|m| *m /= norm);
        let cw = Codeword::from_magnitudes(buf.clone())?;
        codewords.push(cw);
    }
    Codebook::new(dim, seed, codewords)
}

/// `1 - a·b / (|a| |b|)` with the shorter input zero-padded.
///
/// A zero-norm input has no direction; the distance is then defined as 1.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let na = l2_norm(a);
    let nb = l2_norm(b);
    if na == 0.0 || nb == 0.0 {
        warn!("cosine distance with a zero-norm input; using 1");
        return 1.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    1.0 - dot / (na * nb)
}

/// Coordinate indices ordered by descending magnitude, ties by index.
pub fn magnitude_order(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_unstable_by(|&i, &j| values[j].abs().total_cmp(&values[i].abs()).then(i.cmp(&j)));
    order
}

/// Dot product over the common prefix, with eight independent partial sums
/// so the loop vectorizes. The summation order is fixed.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Index of the codeword nearest (cosine distance) to the descending
/// magnitude list `sorted`. Ties resolve to the lowest index.
pub fn select_codeword(sorted: &[f64], codebook: &Codebook) -> usize {
    let ns = l2_norm(sorted);
    let mut best = 0;
    let mut best_dist = f64::INFINITY;
    for (i, cw) in codebook.codewords.iter().enumerate() {
        let dist = if ns == 0.0 || cw.norm == 0.0 {
            1.0
        } else {
            1.0 - dot(&cw.magnitudes, sorted) / (ns * cw.norm)
        };
        if dist < best_dist {
            best_dist = dist;
            best = i;
        }
    }
    best
}

/// Result of encoding one gradient.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub gradient: GradientVector,
    /// Selected codeword, `None` for an all-zero gradient.
    pub codeword: Option<usize>,
}

/// Encodes a raw gradient onto `codebook`.
pub fn encode(gradient: &GradientVector, codebook: &Codebook) -> Result<GradientVector> {
    encode_detailed(gradient, codebook).map(|e| e.gradient)
}

pub fn encode_detailed(gradient: &GradientVector, codebook: &Codebook) -> Result<Encoded> {
    let mut out = encode_batch(std::slice::from_ref(gradient), codebook)?;
    Ok(out.pop().expect("one input, one output"))
}

/// Nonzero coordinates of `g` by descending magnitude (ties by index), with
/// the sorted magnitudes. Zero coordinates sort last and clamp to zero under
/// any bound, so they never need ranking.
fn rank_nonzero(g: &[f64]) -> (Vec<usize>, Vec<f64>) {
    let mut order: Vec<usize> = (0..g.len()).filter(|&i| g[i] != 0.0).collect();
    order.sort_unstable_by(|&i, &j| g[j].abs().total_cmp(&g[i].abs()).then(i.cmp(&j)));
    let sorted = order.iter().map(|&i| g[i].abs()).collect();
    (order, sorted)
}

fn dot_f32(a: &[f32], b: &[f32]) -> f32 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f32; 16];
    let mut ca = a.chunks_exact(16);
    let mut cb = b.chunks_exact(16);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..16 {
            acc[l] += x[l] * y[l];
        }
    }
    let tail: f32 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    acc.iter().sum::<f32>() + tail
}

/// A gradient prepared for codeword search.
struct Ranked {
    order: Vec<usize>,
    sorted: Vec<f64>,
    norm: f64,
    /// `sorted / sorted[0]` in single precision.
    coarse: Vec<f32>,
    /// Relative error bound of the single-precision screen.
    rel: f64,
}

impl Ranked {
    fn new(g: &[f64]) -> Self {
        let (order, sorted) = rank_nonzero(g);
        let norm = l2_norm(&sorted);
        let top = sorted.first().copied().unwrap_or(1.0);
        let coarse = sorted.iter().map(|v| (v / top) as f32).collect();
        // Nonnegative terms: rounding the inputs and the products, plus the
        // longest accumulation chain, bounds the relative error. The same
        // count in double precision covers the exact-path rounding.
        let chain = (sorted.len() / 16 + 40) as f64;
        let rel = chain * (f32::EPSILON as f64) + chain * f64::EPSILON;
        Ranked { order, sorted, norm, coarse, rel }
    }

    fn exact_distance(&self, cw: &Codeword) -> f64 {
        if self.norm == 0.0 || cw.norm == 0.0 {
            1.0
        } else {
            1.0 - dot(&cw.magnitudes, &self.sorted) / (self.norm * cw.norm)
        }
    }

    /// Interval containing the cosine similarity that the exact path computes.
    fn similarity_bounds(&self, cw: &Codeword) -> (f64, f64) {
        if self.norm == 0.0 || cw.norm == 0.0 {
            return (0.0, 0.0);
        }
        let d = dot_f32(&cw.coarse, &self.coarse) as f64;
        // products may fall into the subnormal range; each loses at most this
        let underflow = self.coarse.len().min(cw.coarse.len()) as f64 * f32::MIN_POSITIVE as f64;
        let scale = self.sorted[0] / (self.norm * cw.norm);
        let lo = ((d * (1.0 - self.rel) - underflow) * scale).max(0.0);
        let hi = (d * (1.0 + self.rel) + underflow) * scale;
        (lo, hi)
    }
}

/// Distances closer than this are resolved by the exact path.
const SCREEN_SLACK: f64 = 1e-14;

/// Encodes several gradients at once. Each result equals
/// [`encode_detailed`] on that gradient alone.
///
/// Codewords are first screened in single precision with a rigorous error
/// bound; only those that could still be nearest are rescored exactly, so
/// the choice matches a full double-precision scan (ties included).
pub fn encode_batch(gradients: &[GradientVector], codebook: &Codebook) -> Result<Vec<Encoded>> {
    for g in gradients {
        if g.len() != codebook.dim {
            return Err(Error::DimensionMismatch { expected: codebook.dim, actual: g.len() });
        }
    }
    let ranked: Vec<Ranked> = gradients.iter().map(|g| Ranked::new(g.values())).collect();
    let n = codebook.codewords.len();
    // bounds[c * batch + j]
    let mut bounds = vec![(0.0, 0.0); n * ranked.len()];
    for (c, cw) in codebook.codewords.iter().enumerate() {
        for (j, r) in ranked.iter().enumerate() {
            if !r.sorted.is_empty() {
                bounds[c * ranked.len() + j] = r.similarity_bounds(cw);
            }
        }
    }
    let mut out = Vec::with_capacity(gradients.len());
    for (j, (gradient, r)) in gradients.iter().zip(&ranked).enumerate() {
        if r.order.is_empty() {
            out.push(Encoded { gradient: gradient.clone().with_stage(Stage::Encoded), codeword: None });
            continue;
        }
        let best_lo = (0..n).map(|c| bounds[c * ranked.len() + j].0).fold(f64::NEG_INFINITY, f64::max);
        let mut chosen = 0;
        let mut best = f64::INFINITY;
        for (c, cw) in codebook.codewords.iter().enumerate() {
            if bounds[c * ranked.len() + j].1 + SCREEN_SLACK < best_lo {
                continue;
            }
            let dist = r.exact_distance(cw);
            if dist < best {
                best = dist;
                chosen = c;
            }
        }
        let g = gradient.values();
        let psi = &codebook.codewords[chosen];
        let mut encoded = vec![0.0; g.len()];
        for (t, &i) in r.order.iter().enumerate() {
            let bound = psi.bound(t);
            encoded[i] = g[i].max(-bound).min(bound);
        }
        out.push(Encoded { gradient: GradientVector::new(encoded, Stage::Encoded), codeword: Some(chosen) });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn screened_search_matches_full_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let dim = 3000;
        let base = generate_codebook(60, dim, 4).unwrap();
        // duplicates create exact ties that must resolve to the first copy
        let mut words = base.codewords().to_vec();
        words.extend_from_slice(&base.codewords()[10..20]);
        let cb = Codebook::new(dim, 4, words).unwrap();
        for (trial, scale) in [1.0, 1e-30, 1e25, 3e-9].iter().cycle().take(40).enumerate() {
            let nnz = 1 + trial * 70;
            let mut g = vec![0.0; dim];
            for v in g.iter_mut().take(nnz) {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = scale * z * z * z;
            }
            let sorted: Vec<f64> = {
                let mut m: Vec<f64> = g.iter().filter(|v| **v != 0.0).map(|v| v.abs()).collect();
                m.sort_by(|a, b| b.total_cmp(a));
                m
            };
            let e = encode_detailed(&GradientVector::new(g, Stage::Raw), &cb).unwrap();
            assert_eq!(e.codeword, Some(select_codeword(&sorted, &cb)), "trial {trial}");
        }
    }

    #[test]
    fn single_small_codeword_is_unit_norm() {
        for seed in 0..20 {
            let cb = generate_codebook(1, 3, seed).unwrap();
            assert!((cb.codeword(0).norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn desk_sized_codebook_respects_floor_and_norm() {
        let cb = generate_codebook(1000, 25450, 11).unwrap();
        assert_eq!(cb.len(), 1000);
        for cw in cb.codewords() {
            assert!((cw.norm() - 1.0).abs() < 1e-9);
            assert!(cw.magnitudes().iter().all(|m| *m >= MAGNITUDE_FLOOR));
            assert!(cw.magnitudes().windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_codebook(5, 100, 42).unwrap();
        let b = generate_codebook(5, 100, 42).unwrap();
        let c = generate_codebook(5, 100, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn cosine_distance_examples() {
        assert!(cosine_distance(&[0.3, 0.2], &[0.3, 0.2]).abs() < 1e-15);
        assert!((cosine_distance(&[1.0, 0.0], &[0.0, 1.0]) - 1.0).abs() < 1e-15);
        assert!((cosine_distance(&[0.8, 0.6], &[0.6, 0.8]) - 0.04).abs() < 1e-12);
        assert_eq!(cosine_distance(&[0.0, 0.0], &[0.0]), 1.0);
        // zero padding of the shorter input
        assert!((cosine_distance(&[1.0], &[1.0, 0.0, 0.0]).abs()) < 1e-15);
    }

    #[test]
    fn hand_traced_clamp() {
        let cb = Codebook::from_magnitudes(3, 0, vec![vec![0.9, 0.4, 0.1]]).unwrap();
        let g = GradientVector::new(vec![0.05, -1.2, 0.3], Stage::Raw);
        assert_eq!(magnitude_order(g.values()), vec![1, 2, 0]);
        let e = encode(&g, &cb).unwrap();
        assert_eq!(e.values(), &[0.05, -0.9, 0.3]);
        assert_eq!(e.stage(), Stage::Encoded);
    }

    #[test]
    fn clamp_is_identity_inside_bounds() {
        let cb = Codebook::from_magnitudes(4, 0, vec![vec![0.7, 0.5, 0.4, 0.3]]).unwrap();
        let g = GradientVector::new(vec![-0.2, 0.6, 0.1, -0.35], Stage::Raw);
        assert_eq!(encode(&g, &cb).unwrap().values(), g.values());
    }

    #[test]
    fn ranks_past_sparse_length_clamp_to_zero() {
        let cb = Codebook::from_magnitudes(4, 0, vec![vec![1.0]]).unwrap();
        let g = GradientVector::new(vec![0.1, -3.0, 0.2, 0.0], Stage::Raw);
        assert_eq!(encode(&g, &cb).unwrap().values(), &[0.0, -1.0, 0.0, 0.0]);
    }

    #[test]
    fn selects_nearest_codeword() {
        let cb = Codebook::from_magnitudes(2, 0, vec![vec![1.0], vec![0.71, 0.7]]).unwrap();
        let g = GradientVector::new(vec![0.5, -0.5], Stage::Raw);
        let e = encode_detailed(&g, &cb).unwrap();
        assert_eq!(e.codeword, Some(1));
        let g = GradientVector::new(vec![0.0, 2.0], Stage::Raw);
        assert_eq!(encode_detailed(&g, &cb).unwrap().codeword, Some(0));
    }

    #[test]
    fn ties_pick_lowest_index() {
        let cb = Codebook::from_magnitudes(2, 0, vec![vec![1.0], vec![0.8, 0.6], vec![0.8, 0.6]]).unwrap();
        let g = GradientVector::new(vec![0.8, 0.6], Stage::Raw);
        assert_eq!(encode_detailed(&g, &cb).unwrap().codeword, Some(1));
        // equal magnitudes rank by ascending index
        assert_eq!(magnitude_order(&[0.5, -0.5, 0.5]), vec![0, 1, 2]);
    }

    #[test]
    fn zero_gradient_unchanged_and_dim_checked() {
        let cb = generate_codebook(3, 4, 1).unwrap();
        let z = GradientVector::zeros(4, Stage::Raw);
        let e = encode_detailed(&z, &cb).unwrap();
        assert_eq!(e.codeword, None);
        assert!(e.gradient.values().iter().all(|v| *v == 0.0));
        let bad = GradientVector::zeros(5, Stage::Raw);
        assert!(matches!(encode(&bad, &cb), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn file_round_trip_is_bit_exact() {
        let cb = generate_codebook(7, 50, 5).unwrap();
        let mut bytes = Vec::new();
        cb.write_to(&mut bytes).unwrap();
        let back = Codebook::read_from(bytes.as_slice()).unwrap();
        assert_eq!(cb, back);
        let mut again = Vec::new();
        back.write_to(&mut again).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn corrupt_files_rejected() {
        let cb = generate_codebook(2, 10, 5).unwrap();
        let mut bytes = Vec::new();
        cb.write_to(&mut bytes).unwrap();
        assert!(Codebook::read_from(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Codebook::read_from(bad.as_slice()).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Codebook::read_from(extra.as_slice()).is_err());
    }
}
