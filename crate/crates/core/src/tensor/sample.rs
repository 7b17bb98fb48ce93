//! Spatial reads from C×H×W fields: bilinear sampling, integer gathers and
//! rectangular crops. Positions use `x` for the width axis and `y` for the
//! height axis; integer positions coincide with grid cells.

use std::rc::Rc;

use super::{ensure_finite, Tape, Tensor, Var};
use crate::error::{DragError, Result};

/// Corner indices and weights of one bilinear lookup.
#[derive(Clone, Copy, Debug)]
struct Stencil {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    fx: f64,
    fy: f64,
}

fn axis(v: f64, size: usize) -> (usize, usize, f64) {
    if size == 1 {
        return (0, 0, 0.0);
    }
    let i0 = (v.floor() as usize).min(size - 2);
    (i0, i0 + 1, v - i0 as f64)
}

fn stencil(x: f64, y: f64, width: usize, height: usize) -> Result<Stencil> {
    let inside = x.is_finite()
        && y.is_finite()
        && x >= 0.0
        && y >= 0.0
        && x <= (width as f64 - 1.0)
        && y <= (height as f64 - 1.0);
    if !inside {
        return Err(DragError::Bounds {
            x,
            y,
            width,
            height,
        });
    }
    let (x0, x1, fx) = axis(x, width);
    let (y0, y1, fy) = axis(y, height);
    Ok(Stencil {
        x0,
        x1,
        y0,
        y1,
        fx,
        fy,
    })
}

impl Stencil {
    fn weights(&self) -> [(usize, usize, f64); 4] {
        let (fx, fy) = (self.fx, self.fy);
        [
            (self.x0, self.y0, (1.0 - fx) * (1.0 - fy)),
            (self.x1, self.y0, fx * (1.0 - fy)),
            (self.x0, self.y1, (1.0 - fx) * fy),
            (self.x1, self.y1, fx * fy),
        ]
    }

    fn sample(&self, field: &Tensor, ch: usize, w: usize, plane: usize) -> f64 {
        self.weights()
            .iter()
            .map(|&(x, y, wt)| wt * field.data[ch * plane + y * w + x])
            .sum()
    }

    /// d(sample)/dx and d(sample)/dy for one channel.
    fn slope(&self, field: &Tensor, ch: usize, w: usize, plane: usize) -> (f64, f64) {
        let at = |x: usize, y: usize| field.data[ch * plane + y * w + x];
        let (v00, v10, v01, v11) = (
            at(self.x0, self.y0),
            at(self.x1, self.y0),
            at(self.x0, self.y1),
            at(self.x1, self.y1),
        );
        let dx = (1.0 - self.fy) * (v10 - v00) + self.fy * (v11 - v01);
        let dy = (1.0 - self.fx) * (v01 - v00) + self.fx * (v11 - v10);
        (dx, dy)
    }
}

/// Bilinear interpolation of one C×H×W field at a fixed position, no tape.
pub fn bilinear(field: &Tensor, x: f64, y: f64) -> Result<Vec<f64>> {
    let (c, h, w) = field.chw()?;
    let st = stencil(x, y, w, h)?;
    let plane = h * w;
    Ok((0..c).map(|ch| st.sample(field, ch, w, plane)).collect())
}

impl<'t> Var<'t> {
    /// Bilinear sample of a `[C, H, W]` field at a `[2]` position `(x, y)`.
    /// Differentiable with respect to both the field and the position.
    pub fn bilinear_sample(&self, pos: &Var<'t>) -> Result<Var<'t>> {
        let field = self.value();
        let p = pos.value();
        if p.numel() != 2 {
            return Err(DragError::Shape(format!(
                "position must hold 2 values, got shape {:?}",
                p.shape()
            )));
        }
        let (c, h, w) = field.chw()?;
        let st = stencil(p.data()[0], p.data()[1], w, h)?;
        let plane = h * w;
        let out: Vec<f64> = (0..c).map(|ch| st.sample(&field, ch, w, plane)).collect();
        ensure_finite(&out, "bilinear_sample")?;
        let field_shape = field.shape().to_vec();
        let pos_shape = p.shape().to_vec();
        self.tape.custom(
            &[*self, *pos],
            Tensor::from_parts_unchecked(vec![c], out),
            Box::new(move |gout: &Tensor, inputs: &[Rc<Tensor>], _out: &Tensor| {
                let field = &inputs[0];
                let mut gf = vec![0.0; field.numel()];
                let (mut gx, mut gy) = (0.0, 0.0);
                for ch in 0..c {
                    let g = gout.data()[ch];
                    for (x, y, wt) in st.weights() {
                        gf[ch * plane + y * w + x] += g * wt;
                    }
                    let (dx, dy) = st.slope(field, ch, w, plane);
                    gx += g * dx;
                    gy += g * dy;
                }
                vec![
                    Some(Tensor::from_parts_unchecked(field_shape.clone(), gf)),
                    Some(Tensor::from_parts_unchecked(pos_shape.clone(), vec![gx, gy])),
                ]
            }),
        )
    }

    /// Bilinear samples at many fixed positions; returns `[N, C]`.
    /// Gradient flows to the field only.
    pub fn sample_points(&self, points: &[(f64, f64)]) -> Result<Var<'t>> {
        let field = self.value();
        let (c, h, w) = field.chw()?;
        let plane = h * w;
        let stencils = points
            .iter()
            .map(|&(x, y)| stencil(x, y, w, h))
            .collect::<Result<Vec<_>>>()?;
        let mut out = Vec::with_capacity(points.len() * c);
        for st in &stencils {
            out.extend((0..c).map(|ch| st.sample(&field, ch, w, plane)));
        }
        let field_shape = field.shape().to_vec();
        let n = points.len();
        self.tape.custom(
            &[*self],
            Tensor::from_parts_unchecked(vec![n, c], out),
            Box::new(move |gout: &Tensor, _inputs: &[Rc<Tensor>], _out: &Tensor| {
                let mut gf = vec![0.0; field_shape.iter().product()];
                for (i, st) in stencils.iter().enumerate() {
                    for ch in 0..c {
                        let g = gout.data()[i * c + ch];
                        if g == 0.0 {
                            continue;
                        }
                        for (x, y, wt) in st.weights() {
                            gf[ch * plane + y * w + x] += g * wt;
                        }
                    }
                }
                vec![Some(Tensor::from_parts_unchecked(field_shape.clone(), gf))]
            }),
        )
    }

    /// Direct reads at integer pixels `(x, y)`; returns `[N, C]`.
    pub fn gather_pixels(&self, pixels: &[(usize, usize)]) -> Result<Var<'t>> {
        let field = self.value();
        let (c, h, w) = field.chw()?;
        let plane = h * w;
        for &(x, y) in pixels {
            if x >= w || y >= h {
                return Err(DragError::Bounds {
                    x: x as f64,
                    y: y as f64,
                    width: w,
                    height: h,
                });
            }
        }
        let mut out = Vec::with_capacity(pixels.len() * c);
        for &(x, y) in pixels {
            out.extend((0..c).map(|ch| field.data()[ch * plane + y * w + x]));
        }
        let field_shape = field.shape().to_vec();
        let pixels = pixels.to_vec();
        self.tape.custom(
            &[*self],
            Tensor::from_parts_unchecked(vec![pixels.len(), c], out),
            Box::new(move |gout: &Tensor, _inputs: &[Rc<Tensor>], _out: &Tensor| {
                let mut gf = vec![0.0; field_shape.iter().product()];
                for (i, &(x, y)) in pixels.iter().enumerate() {
                    for ch in 0..c {
                        gf[ch * plane + y * w + x] += gout.data()[i * c + ch];
                    }
                }
                vec![Some(Tensor::from_parts_unchecked(field_shape.clone(), gf))]
            }),
        )
    }
}

/// Copies the window `[x0, x0+w) × [y0, y0+h)` of a C×H×W field.
pub fn crop(field: &Tensor, x0: usize, y0: usize, w: usize, h: usize) -> Result<Tensor> {
    let (c, fh, fw) = field.chw()?;
    if x0 + w > fw || y0 + h > fh {
        return Err(DragError::Bounds {
            x: (x0 + w) as f64,
            y: (y0 + h) as f64,
            width: fw,
            height: fh,
        });
    }
    let mut out = Vec::with_capacity(c * w * h);
    for ch in 0..c {
        for y in y0..y0 + h {
            let row = ch * fh * fw + y * fw;
            out.extend_from_slice(&field.data()[row + x0..row + x0 + w]);
        }
    }
    Ok(Tensor::from_parts_unchecked(vec![c, h, w], out))
}

impl Tape {
    /// Convenience: constant position tensor for [`Var::bilinear_sample`].
    pub fn position(&self, x: f64, y: f64) -> Var<'_> {
        self.constant(Tensor::from_parts_unchecked(vec![2], vec![x, y]))
    }
}
