//! Exact latent codec: an invertible orthonormal patch transform standing in
//! for a trained VAE.
//!
//! Each non-overlapping p x p x C patch is flattened and multiplied by a
//! fixed orthonormal matrix Q; decoding applies Q^T and reassembles. The
//! round trip is exact to float tolerance, frames never mix, and the whole
//! thing is deterministic from a seed, which makes pixel-space metrics exact
//! downstream.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::derive_rng;
use crate::tensor::Tensor;

pub const CHANNELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MediaKind {
    Image,
    Video,
}

/// Frames of [0,1] RGB pixels; an image is a single-frame video.
#[derive(Debug, Clone)]
pub struct Media {
    pub kind: MediaKind,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Row-major [F, H, W, C], clamped to [0,1] on construction.
    data: Vec<f32>,
}

impl Media {
    pub fn new(
        kind: MediaKind,
        frames: usize,
        height: usize,
        width: usize,
        mut data: Vec<f32>,
    ) -> Result<Self> {
        if kind == MediaKind::Image && frames != 1 {
            return Err(Error::Contract(format!(
                "image media must have exactly 1 frame, got {frames}"
            )));
        }
        if data.len() != frames * height * width * CHANNELS {
            return Err(Error::Dimension(format!(
                "media data length {} does not match {}x{}x{}x{}",
                data.len(),
                frames,
                height,
                width,
                CHANNELS
            )));
        }
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        Ok(Media {
            kind,
            frames,
            height,
            width,
            data,
        })
    }

    pub fn uniform(kind: MediaKind, frames: usize, height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(frames * height * width * CHANNELS);
        for _ in 0..frames * height * width {
            data.extend_from_slice(&rgb);
        }
        Media::new(kind, frames, height, width, data).expect("uniform media")
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn pixel(&self, f: usize, y: usize, x: usize) -> [f32; 3] {
        let i = ((f * self.height + y) * self.width + x) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, f: usize, y: usize, x: usize, rgb: [f32; 3]) {
        let i = ((f * self.height + y) * self.width + x) * CHANNELS;
        self.data[i] = rgb[0].clamp(0.0, 1.0);
        self.data[i + 1] = rgb[1].clamp(0.0, 1.0);
        self.data[i + 2] = rgb[2].clamp(0.0, 1.0);
    }

    /// View of one frame as a standalone image.
    pub fn frame(&self, f: usize) -> Media {
        let px = self.height * self.width * CHANNELS;
        Media {
            kind: MediaKind::Image,
            frames: 1,
            height: self.height,
            width: self.width,
            data: self.data[f * px..(f + 1) * px].to_vec(),
        }
    }

    /// New video media from selected frame indices.
    pub fn select_frames(&self, indices: &[usize]) -> Media {
        let px = self.height * self.width * CHANNELS;
        let mut data = Vec::with_capacity(indices.len() * px);
        for &f in indices {
            data.extend_from_slice(&self.data[f * px..(f + 1) * px]);
        }
        Media {
            kind: self.kind,
            frames: indices.len(),
            height: self.height,
            width: self.width,
            data,
        }
    }

    pub fn bit_eq(&self, other: &Media) -> bool {
        self.kind == other.kind
            && self.frames == other.frames
            && self.height == other.height
            && self.width == other.width
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Deterministic orthonormal basis for the patch transform.
#[derive(Debug, Clone)]
pub struct OrthonormalBasis {
    pub seed: u64,
    pub d_lat: usize,
    /// Q, row-major d_lat x d_lat; rows are orthonormal.
    q: Vec<f32>,
}

impl OrthonormalBasis {
    pub fn id(&self) -> u64 {
        // Basis identity is (seed, d_lat); decode checks this.
        self.seed ^ ((self.d_lat as u64) << 48)
    }

    pub fn q(&self) -> &[f32] {
        &self.q
    }
}

/// Orthonormalize a seeded Gaussian matrix by modified Gram-Schmidt (f64
/// internally so Q^T Q stays within 1e-6 of identity in f32).
pub fn make_basis(seed: u64, d_lat: usize) -> OrthonormalBasis {
    let mut rng: ChaCha8Rng = derive_rng(seed, "codec/basis");
    let mut rows: Vec<Vec<f64>> = (0..d_lat)
        .map(|_| {
            (0..d_lat)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect()
        })
        .collect();
    for i in 0..d_lat {
        for j in 0..i {
            let dot: f64 = rows[i].iter().zip(rows[j].iter()).map(|(a, b)| a * b).sum();
            for c in 0..d_lat {
                rows[i][c] -= dot * rows[j][c];
            }
        }
        let norm: f64 = rows[i].iter().map(|x| x * x).sum::<f64>().sqrt();
        // A seeded Gaussian matrix is almost surely full rank; if a row
        // degenerates, fall back to a unit vector to stay well-defined.
        if norm < 1e-12 {
            for c in 0..d_lat {
                rows[i][c] = if c == i { 1.0 } else { 0.0 };
            }
        } else {
            for c in 0..d_lat {
                rows[i][c] /= norm;
            }
        }
    }
    let q: Vec<f32> = rows.into_iter().flatten().map(|x| x as f32).collect();
    OrthonormalBasis { seed, d_lat, q }
}

/// Identity basis, handy for tests where latent tokens should equal raw
/// patch values.
pub fn identity_basis(d_lat: usize) -> OrthonormalBasis {
    let mut q = vec![0.0f32; d_lat * d_lat];
    for i in 0..d_lat {
        q[i * d_lat + i] = 1.0;
    }
    OrthonormalBasis {
        seed: u64::MAX,
        d_lat,
        q,
    }
}

/// Latent token grid: [F, H/p, W/p, d_lat].
#[derive(Debug, Clone)]
pub struct LatentGrid {
    pub kind: MediaKind,
    pub frames: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub d_lat: usize,
    pub patch: usize,
    pub basis_id: u64,
    pub tokens: Tensor<f32>,
}

impl LatentGrid {
    pub fn token_count(&self) -> usize {
        self.frames * self.grid_h * self.grid_w
    }

    pub fn zeros_like(&self) -> LatentGrid {
        LatentGrid {
            tokens: Tensor::zeros(self.tokens.shape()),
            ..self.clone()
        }
    }

    pub fn same_grid(&self, other: &LatentGrid) -> bool {
        self.frames == other.frames
            && self.grid_h == other.grid_h
            && self.grid_w == other.grid_w
            && self.d_lat == other.d_lat
    }
}

/// Flatten one p x p x C patch in (y, x, c) order.
fn gather_patch(media: &Media, f: usize, gy: usize, gx: usize, p: usize, out: &mut [f32]) {
    let mut k = 0;
    for dy in 0..p {
        for dx in 0..p {
            let px = media.pixel(f, gy * p + dy, gx * p + dx);
            out[k] = px[0];
            out[k + 1] = px[1];
            out[k + 2] = px[2];
            k += 3;
        }
    }
}

fn scatter_patch(media: &mut Media, f: usize, gy: usize, gx: usize, p: usize, vals: &[f32]) {
    let mut k = 0;
    for dy in 0..p {
        for dx in 0..p {
            media.set_pixel(f, gy * p + dy, gx * p + dx, [vals[k], vals[k + 1], vals[k + 2]]);
            k += 3;
        }
    }
}

/// Encode media to a latent token grid: per frame, per patch, token = Q v.
pub fn encode(media: &Media, basis: &OrthonormalBasis, patch: usize) -> Result<LatentGrid> {
    if media.height % patch != 0 || media.width % patch != 0 {
        return Err(Error::Dimension(format!(
            "media {}x{} not divisible by patch size {}",
            media.height, media.width, patch
        )));
    }
    let d_lat = patch * patch * CHANNELS;
    if basis.d_lat != d_lat {
        return Err(Error::Dimension(format!(
            "basis dimension {} does not match patch size {} (needs {})",
            basis.d_lat, patch, d_lat
        )));
    }
    let grid_h = media.height / patch;
    let grid_w = media.width / patch;
    let mut tokens = vec![0.0f32; media.frames * grid_h * grid_w * d_lat];
    let mut buf = vec![0.0f32; d_lat];
    let q = basis.q();
    for f in 0..media.frames {
        for gy in 0..grid_h {
            for gx in 0..grid_w {
                gather_patch(media, f, gy, gx, patch, &mut buf);
                let base = (((f * grid_h) + gy) * grid_w + gx) * d_lat;
                for r in 0..d_lat {
                    let mut acc = 0.0f32;
                    let row = &q[r * d_lat..(r + 1) * d_lat];
                    for c in 0..d_lat {
                        acc += row[c] * buf[c];
                    }
                    tokens[base + r] = acc;
                }
            }
        }
    }
    Ok(LatentGrid {
        kind: media.kind,
        frames: media.frames,
        grid_h,
        grid_w,
        d_lat,
        patch,
        basis_id: basis.id(),
        tokens: Tensor::new(vec![media.frames, grid_h, grid_w, d_lat], tokens)?,
    })
}

/// Decode a latent grid back to media: v = Q^T token, clamp to [0,1].
pub fn decode(latent: &LatentGrid, basis: &OrthonormalBasis) -> Result<Media> {
    if latent.basis_id != basis.id() {
        return Err(Error::Contract(format!(
            "latent was encoded with basis {:#x}, decode got {:#x}",
            latent.basis_id,
            basis.id()
        )));
    }
    decode_with(latent, basis)
}

/// Decode without the basis-identity check; used on model outputs, which
/// carry the grid geometry but were never produced by `encode`.
pub fn decode_with(latent: &LatentGrid, basis: &OrthonormalBasis) -> Result<Media> {
    let d_lat = latent.d_lat;
    if basis.d_lat != d_lat {
        return Err(Error::Dimension(format!(
            "basis dimension {} does not match latent dimension {}",
            basis.d_lat, d_lat
        )));
    }
    let p = latent.patch;
    let mut media = Media::new(
        latent.kind,
        latent.frames,
        latent.grid_h * p,
        latent.grid_w * p,
        vec![0.0; latent.frames * latent.grid_h * p * latent.grid_w * p * CHANNELS],
    )?;
    let q = basis.q();
    let toks = latent.tokens.data();
    let mut buf = vec![0.0f32; d_lat];
    for f in 0..latent.frames {
        for gy in 0..latent.grid_h {
            for gx in 0..latent.grid_w {
                let base = (((f * latent.grid_h) + gy) * latent.grid_w + gx) * d_lat;
                let tok = &toks[base..base + d_lat];
                for c in 0..d_lat {
                    // Q^T: column c of Q dotted with the token.
                    let mut acc = 0.0f32;
                    for r in 0..d_lat {
                        acc += q[r * d_lat + c] * tok[r];
                    }
                    buf[c] = acc;
                }
                scatter_patch(&mut media, f, gy, gx, p, &buf);
            }
        }
    }
    Ok(media)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_media(seed: u64, kind: MediaKind, frames: usize, h: usize, w: usize) -> Media {
        let mut rng = derive_rng(seed, "test/media");
        let data: Vec<f32> = (0..frames * h * w * CHANNELS)
            .map(|_| rng.gen::<f32>())
            .collect();
        Media::new(kind, frames, h, w, data).unwrap()
    }

    #[test]
    fn identity_basis_tokens_are_raw_patches() {
        let media = random_media(1, MediaKind::Image, 1, 4, 4);
        let basis = identity_basis(2 * 2 * CHANNELS);
        let lat = encode(&media, &basis, 2).unwrap();
        // First token is the flattened top-left 2x2 patch.
        let tok = &lat.tokens.data()[..12];
        let expect = [
            media.pixel(0, 0, 0),
            media.pixel(0, 0, 1),
            media.pixel(0, 1, 0),
            media.pixel(0, 1, 1),
        ]
        .concat();
        assert_eq!(tok, expect.as_slice());
    }

    #[test]
    fn zero_image_encodes_to_zero_latent() {
        let media = Media::uniform(MediaKind::Image, 1, 8, 8, [0.0; 3]);
        let basis = make_basis(3, 4 * 4 * CHANNELS);
        let lat = encode(&media, &basis, 4).unwrap();
        assert!(lat.tokens.data().iter().all(|&x| x == 0.0));
        let back = decode(&lat, &basis).unwrap();
        assert!(back.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn grid_arity_32x32_p4() {
        let media = random_media(2, MediaKind::Image, 1, 32, 32);
        let basis = make_basis(5, 48);
        let lat = encode(&media, &basis, 4).unwrap();
        assert_eq!((lat.grid_h, lat.grid_w, lat.d_lat), (8, 8, 48));
        assert_eq!(lat.tokens.shape(), &[1, 8, 8, 48]);
    }

    #[test]
    fn non_divisible_size_errors() {
        let media = random_media(3, MediaKind::Image, 1, 30, 32);
        let basis = make_basis(5, 48);
        assert!(encode(&media, &basis, 4).is_err());
    }

    #[test]
    fn roundtrip_is_exact_with_random_basis() {
        for seed in 0..5u64 {
            let media = random_media(seed, MediaKind::Video, 3, 16, 16);
            let basis = make_basis(seed + 100, 48);
            let lat = encode(&media, &basis, 4).unwrap();
            let back = decode(&lat, &basis).unwrap();
            let max_err = media
                .data()
                .iter()
                .zip(back.data().iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f32, f32::max);
            assert!(max_err <= 1e-5, "roundtrip error {max_err}");
        }
    }

    #[test]
    fn basis_mismatch_is_contract_error() {
        let media = random_media(9, MediaKind::Image, 1, 8, 8);
        let b1 = make_basis(1, 48);
        let b2 = make_basis(2, 48);
        let lat = encode(&media, &b1, 4).unwrap();
        assert!(matches!(decode(&lat, &b2), Err(Error::Contract(_))));
    }

    #[test]
    fn basis_is_orthonormal_and_deterministic() {
        for seed in [0u64, 7, 42] {
            let b = make_basis(seed, 48);
            let q = b.q();
            // ||Q^T Q - I||_inf <= 1e-6
            for i in 0..48 {
                for j in 0..48 {
                    let mut dot = 0.0f64;
                    for r in 0..48 {
                        dot += q[r * 48 + i] as f64 * q[r * 48 + j] as f64;
                    }
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((dot - expect).abs() <= 1e-6, "QtQ[{i},{j}] = {dot}");
                }
            }
            let b2 = make_basis(seed, 48);
            assert!(b.q().iter().zip(b2.q().iter()).all(|(a, c)| a.to_bits() == c.to_bits()));
        }
    }

    #[test]
    fn d1_basis_is_sign() {
        let b = make_basis(11, 1);
        assert!((b.q()[0].abs() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn encoding_is_linear() {
        let x = random_media(20, MediaKind::Image, 1, 8, 8);
        let y = random_media(21, MediaKind::Image, 1, 8, 8);
        let basis = make_basis(22, 12);
        let (a, b) = (0.3f32, 0.6f32);
        let mut mix_data = Vec::new();
        for (xv, yv) in x.data().iter().zip(y.data().iter()) {
            mix_data.push(a * xv + b * yv);
        }
        let mix = Media::new(MediaKind::Image, 1, 8, 8, mix_data).unwrap();
        let ex = encode(&x, &basis, 2).unwrap();
        let ey = encode(&y, &basis, 2).unwrap();
        let emix = encode(&mix, &basis, 2).unwrap();
        for ((&tx, &ty), &tm) in ex
            .tokens
            .data()
            .iter()
            .zip(ey.tokens.data().iter())
            .zip(emix.tokens.data().iter())
        {
            assert!((a * tx + b * ty - tm).abs() <= 1e-5);
        }
    }

    #[test]
    fn frames_encode_independently() {
        let video = random_media(30, MediaKind::Video, 4, 8, 8);
        let basis = make_basis(31, 12);
        let whole = encode(&video, &basis, 2).unwrap();
        let per_token = 4 * 4 * 12; // grid 4x4, d_lat 12
        for f in 0..4 {
            let single = encode(&video.frame(f), &basis, 2).unwrap();
            assert_eq!(
                &whole.tokens.data()[f * per_token..(f + 1) * per_token],
                single.tokens.data()
            );
        }
    }
}
