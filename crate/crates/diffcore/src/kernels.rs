//! Raw loops shared by forward and backward passes.

use crate::tensor::Real;

/// c[m×n] += a[m×k] · b[k×n]
pub(crate) fn matmul_acc<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// c[m×n] += a[m×k] · b[n×k]ᵀ
pub(crate) fn matmul_bt_acc<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = T::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                s += x * y;
            }
            c[i * n + j] += s;
        }
    }
}

/// c[m×n] += a[k×m]ᵀ · b[k×n]
pub(crate) fn matmul_at_acc<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a[p * m + i];
            if av == T::zero() {
                continue;
            }
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// Geometry of a grouped 2D cross-correlation. 1D convolutions use `h = kh = 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
    pub groups: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    fn cin_g(&self) -> usize {
        self.c_in / self.groups
    }
    fn cout_g(&self) -> usize {
        self.c_out / self.groups
    }

    /// Calls `f(out_index, in_index, weight_index)` for every valid tap.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (cin_g, cout_g) = (self.cin_g(), self.cout_g());
        for g in 0..self.groups {
            for oc_l in 0..cout_g {
                let oc = g * cout_g + oc_l;
                for ic_l in 0..cin_g {
                    let ic = g * cin_g + ic_l;
                    for ki in 0..self.kh {
                        for kj in 0..self.kw {
                            let widx = ((oc * cin_g + ic_l) * self.kh + ki) * self.kw + kj;
                            for oy in 0..self.oh {
                                let iy = (oy * self.sh + ki) as isize - self.ph as isize;
                                if iy < 0 || iy >= self.h as isize {
                                    continue;
                                }
                                let in_row = (ic * self.h + iy as usize) * self.w;
                                let out_row = (oc * self.oh + oy) * self.ow;
                                for ox in 0..self.ow {
                                    let ix = (ox * self.sw + kj) as isize - self.pw as isize;
                                    if ix < 0 || ix >= self.w as isize {
                                        continue;
                                    }
                                    f(out_row + ox, in_row + ix as usize, widx);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv_forward<T: Real>(g: &ConvGeom, x: &[T], w: &[T], b: Option<&[T]>) -> Vec<T> {
    let plane = g.oh * g.ow;
    let mut out = vec![T::zero(); g.c_out * plane];
    if let Some(b) = b {
        for (oc, &bv) in b.iter().enumerate() {
            out[oc * plane..(oc + 1) * plane].fill(bv);
        }
    }
    g.for_each_tap(|o, i, k| out[o] += x[i] * w[k]);
    out
}

/// Returns (dx, dw, db) for upstream gradient `dy`.
pub(crate) fn conv_backward<T: Real>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    dy: &[T],
    need_x: bool,
    need_w: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>, Vec<T>) {
    let mut dx = need_x.then(|| vec![T::zero(); x.len()]);
    let mut dw = need_w.then(|| vec![T::zero(); w.len()]);
    g.for_each_tap(|o, i, k| {
        let d = dy[o];
        if let Some(dx) = dx.as_mut() {
            dx[i] += d * w[k];
        }
        if let Some(dw) = dw.as_mut() {
            dw[k] += d * x[i];
        }
    });
    let plane = g.oh * g.ow;
    let db = (0..g.c_out)
        .map(|oc| dy[oc * plane..(oc + 1) * plane].iter().copied().sum())
        .collect();
    (dx, dw, db)
}

/// Bin boundaries for adaptive pooling of length `n` into `m` bins.
#[inline]
pub(crate) fn adaptive_bin(i: usize, n: usize, m: usize) -> (usize, usize) {
    let start = (i * n) / m;
    let end = ((i + 1) * n).div_ceil(m);
    (start, end)
}
