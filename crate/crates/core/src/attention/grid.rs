use nalgebra::Matrix4;

use crate::camera::{projective_matrix, NormalizationPolicy, StereoRig};
use crate::error::{Error, Result};
use crate::rope::{TokenPosition, View};
use crate::tensor::{Array, Scalar};
use crate::trajectory::Trajectory;

/// Extents of a stereo token grid (the view count is always 2).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridDims {
    pub f: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl GridDims {
    pub fn tokens(&self) -> usize {
        2 * self.f * self.h * self.w
    }

    pub fn tokens_per_view(&self) -> usize {
        self.f * self.h * self.w
    }

    /// Flat index; order is (view, t, y, x) outermost to innermost.
    pub fn index(&self, view: usize, t: usize, y: usize, x: usize) -> usize {
        ((view * self.f + t) * self.h + y) * self.w + x
    }

    /// Inverse of [`index`](Self::index): `(view, t, y, x)`.
    pub fn coords(&self, i: usize) -> (usize, usize, usize, usize) {
        let x = i % self.w;
        let y = (i / self.w) % self.h;
        let t = (i / (self.w * self.h)) % self.f;
        let view = i / (self.w * self.h * self.f);
        (view, t, y, x)
    }

    pub fn shape(&self) -> [usize; 5] {
        [2, self.f, self.h, self.w, self.c]
    }
}

/// Stereo latent video `(view=2, f, h, w, c)` plus the projective matrix of
/// every (view, frame) camera. `frame_offset` is the absolute index of local
/// frame 0, used when a grid is a chunk of a longer sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenGrid<T> {
    values: Array<T>,
    cameras: Vec<Option<Matrix4<f64>>>,
    frame_offset: usize,
}

impl<T: Scalar> TokenGrid<T> {
    /// `cameras[view * f + t]`; pass all `None` when no camera dims are used.
    pub fn new(values: Array<T>, cameras: Vec<Option<Matrix4<f64>>>) -> Result<Self> {
        let dims = match values.shape() {
            &[2, f, h, w, c] if f > 0 && h > 0 && w > 0 && c > 0 => GridDims { f, h, w, c },
            s => return Err(Error::invalid(format!("token grid must be (2,f,h,w,c) with positive extents, got {s:?}"))),
        };
        if cameras.len() != 2 * dims.f {
            return Err(Error::invalid(format!(
                "token grid: expected {} cameras, got {}",
                2 * dims.f,
                cameras.len()
            )));
        }
        Ok(TokenGrid {
            values,
            cameras,
            frame_offset: 0,
        })
    }

    pub fn without_cameras(values: Array<T>) -> Result<Self> {
        let f = values.shape().get(1).copied().unwrap_or(0);
        TokenGrid::new(values, vec![None; 2 * f])
    }

    /// Cameras from a rectified rig moving along `trajectory`: frame `t` of
    /// the left view uses `trajectory.frames[t]`.
    pub fn with_trajectory(
        values: Array<T>,
        trajectory: &Trajectory,
        baseline: f64,
        policy: NormalizationPolicy,
    ) -> Result<Self> {
        let f = values.shape().get(1).copied().unwrap_or(0);
        if trajectory.len() < f {
            return Err(Error::invalid("trajectory shorter than grid"));
        }
        let mut cams = vec![None; 2 * f];
        for t in 0..f {
            let rig = trajectory.rig_at(t, baseline)?;
            for view in 0..2 {
                cams[view * f + t] = Some(projective_matrix(rig.camera(view), policy)?);
            }
        }
        TokenGrid::new(values, cams)
    }

    /// Same rig at every frame.
    pub fn with_rig(values: Array<T>, rig: &StereoRig, policy: NormalizationPolicy) -> Result<Self> {
        let f = values.shape().get(1).copied().unwrap_or(0);
        let pl = projective_matrix(&rig.left, policy)?;
        let pr = projective_matrix(&rig.right, policy)?;
        let mut cams = vec![Some(pl); f];
        cams.extend(vec![Some(pr); f]);
        TokenGrid::new(values, cams)
    }

    pub fn with_frame_offset(mut self, offset: usize) -> Self {
        self.frame_offset = offset;
        self
    }

    pub fn frame_offset(&self) -> usize {
        self.frame_offset
    }

    pub fn dims(&self) -> GridDims {
        let s = self.values.shape();
        GridDims {
            f: s[1],
            h: s[2],
            w: s[3],
            c: s[4],
        }
    }

    pub fn values(&self) -> &Array<T> {
        &self.values
    }

    pub fn into_values(self) -> Array<T> {
        self.values
    }

    pub fn cameras(&self) -> &[Option<Matrix4<f64>>] {
        &self.cameras
    }

    pub fn camera(&self, view: usize, t: usize) -> Option<Matrix4<f64>> {
        self.cameras[view * self.dims().f + t]
    }

    /// Tokens as rows: an `(N, c)` matrix sharing the grid's layout.
    pub fn features(&self) -> Array<T> {
        let d = self.dims();
        self.values
            .clone()
            .reshape(&[d.tokens(), d.c])
            .expect("grid reshape")
    }

    /// New grid with the same cameras and frame offset and `(N, c')` rows.
    pub fn with_features(&self, features: Array<T>) -> Result<Self> {
        let d = self.dims();
        let (n, c) = features.dims2("with_features")?;
        if n != d.tokens() {
            return Err(Error::invalid("with_features: token count mismatch"));
        }
        Ok(TokenGrid {
            values: features.reshape(&[2, d.f, d.h, d.w, c])?,
            cameras: self.cameras.clone(),
            frame_offset: self.frame_offset,
        })
    }

    pub fn position(&self, i: usize) -> TokenPosition {
        let d = self.dims();
        let (view, t, y, x) = d.coords(i);
        TokenPosition::new(
            View::from_index(view),
            (self.frame_offset + t) as i64,
            x as i64,
            y as i64,
            self.cameras[view * d.f + t],
        )
    }

    pub fn positions(&self) -> Vec<TokenPosition> {
        (0..self.dims().tokens()).map(|i| self.position(i)).collect()
    }

    /// Absolute frame index of every token.
    pub fn frames(&self) -> Vec<i64> {
        let d = self.dims();
        (0..d.tokens())
            .map(|i| (self.frame_offset + d.coords(i).1) as i64)
            .collect()
    }

    /// Left and right swapped, cameras included.
    pub fn swap_views(&self) -> Self {
        let d = self.dims();
        let per_view = d.tokens_per_view() * d.c;
        let data = self.values.data();
        let mut swapped = data[per_view..].to_vec();
        swapped.extend_from_slice(&data[..per_view]);
        let mut cams = self.cameras[d.f..].to_vec();
        cams.extend_from_slice(&self.cameras[..d.f]);
        TokenGrid {
            values: Array::from_vec(&d.shape(), swapped).expect("same shape"),
            cameras: cams,
            frame_offset: self.frame_offset,
        }
    }

    /// Frames `start..start+len` of both views, as a chunk with the matching
    /// absolute frame offset.
    pub fn slice_frames(&self, start: usize, len: usize) -> Result<Self> {
        let d = self.dims();
        if len == 0 || start + len > d.f {
            return Err(Error::invalid(format!("slice_frames {start}+{len} outside {} frames", d.f)));
        }
        let frame = d.h * d.w * d.c;
        let mut data = Vec::with_capacity(2 * len * frame);
        let mut cams = Vec::with_capacity(2 * len);
        for view in 0..2 {
            let base = (view * d.f + start) * frame;
            data.extend_from_slice(&self.values.data()[base..base + len * frame]);
            cams.extend_from_slice(&self.cameras[view * d.f + start..view * d.f + start + len]);
        }
        Ok(TokenGrid {
            values: Array::from_vec(&[2, len, d.h, d.w, d.c], data)?,
            cameras: cams,
            frame_offset: self.frame_offset + start,
        })
    }

    /// Concatenates chunks along the frame axis.
    pub fn concat_frames(chunks: &[TokenGrid<T>]) -> Result<Self> {
        let first = chunks.first().ok_or_else(|| Error::invalid("concat_frames: no chunks"))?;
        let d0 = first.dims();
        let total_f: usize = chunks.iter().map(|c| c.dims().f).sum();
        let frame = d0.h * d0.w * d0.c;
        let mut data = Vec::with_capacity(2 * total_f * frame);
        let mut cams = Vec::with_capacity(2 * total_f);
        for view in 0..2 {
            for c in chunks {
                let d = c.dims();
                if (d.h, d.w, d.c) != (d0.h, d0.w, d0.c) {
                    return Err(Error::invalid("concat_frames: extents differ"));
                }
                let per_view = d.f * frame;
                data.extend_from_slice(&c.values.data()[view * per_view..(view + 1) * per_view]);
                cams.extend_from_slice(&c.cameras[view * d.f..(view + 1) * d.f]);
            }
        }
        Ok(TokenGrid {
            values: Array::from_vec(&[2, total_f, d0.h, d0.w, d0.c], data)?,
            cameras: cams,
            frame_offset: first.frame_offset,
        })
    }
}
