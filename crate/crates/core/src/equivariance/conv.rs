use ndarray::{Array2, Zip};

use super::{check_same_shape, EquivError, Image2D, ScaleFilterBank};

/// Same-size correlation `out[p] = Σ_q f[q]·img[p + q − c]` with edge
/// clamping; the impulse response is the flipped filter.
pub fn correlate(image: &Image2D, filter: &Array2<f64>) -> Result<Image2D, EquivError> {
    let (kh, kw) = filter.dim();
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(EquivError::EvenFilterSize(kh.max(kw)));
    }
    let (h, w) = image.shape();
    if h < kh || w < kw {
        return Err(EquivError::ImageTooSmall {
            image_h: h,
            image_w: w,
            filter: kh.max(kw),
        });
    }
    let (ch, cw) = ((kh / 2) as isize, (kw / 2) as isize);
    let g = image.grid();
    let clamp = |x: isize, n: usize| x.clamp(0, n as isize - 1) as usize;
    let out = Array2::from_shape_fn((h, w), |(r, c)| {
        let mut acc = 0.0;
        for i in 0..kh {
            let rr = clamp(r as isize + i as isize - ch, h);
            for j in 0..kw {
                let cc = clamp(c as isize + j as isize - cw, w);
                acc += filter[[i, j]] * g[[rr, cc]];
            }
        }
        acc
    });
    Image2D::new(out)
}

/// One feature map per bank scale.
pub fn ses_convolve(image: &Image2D, bank: &ScaleFilterBank) -> Result<Vec<Image2D>, EquivError> {
    bank.filters()?.iter().map(|f| correlate(image, f)).collect()
}

/// Elementwise maximum over the scale axis.
pub fn scale_project(stack: &[Image2D]) -> Result<Image2D, EquivError> {
    let first = stack.first().ok_or(EquivError::EmptyStack)?;
    let mut out = first.grid().clone();
    for m in &stack[1..] {
        check_same_shape(first, m)?;
        Zip::from(&mut out).and(m.grid()).for_each(|o, &x| *o = o.max(x));
    }
    Image2D::new(out)
}

/// `T_s h(p) = h(c + (p − c)/s)` on the same grid, bilinear with edge
/// clamping; `s < 1` shrinks the content towards the center.
pub fn rescale(image: &Image2D, s: f64) -> Result<Image2D, EquivError> {
    if !(s.is_finite() && s > 0.0) {
        return Err(EquivError::InvalidScale(s));
    }
    let (cu, cv) = image.center();
    let out = Array2::from_shape_fn(image.shape(), |(r, c)| {
        image.sample_bilinear(cv + (r as f64 - cv) / s, cu + (c as f64 - cu) / s)
    });
    Image2D::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn bank() -> ScaleFilterBank {
        let w = (0..9).map(|k| (k as f64 * 0.37).sin()).collect();
        ScaleFilterBank::from_alpha(1.0, 0.1, 7, 2, w).unwrap()
    }

    #[test]
    fn constant_image_gives_constant_map() {
        let img = Image2D::from_fn(16, 16, |_| 2.5).unwrap();
        let b = ScaleFilterBank::new(vec![1.0, 1.5], 7, 0, vec![1.0]).unwrap();
        for (map, f) in ses_convolve(&img, &b).unwrap().iter().zip(b.filters().unwrap()) {
            let dc = 2.5 * f.sum();
            assert!(map.grid().iter().all(|x| (x - dc).abs() < 1e-12));
        }
    }

    #[test]
    fn impulse_response_is_flipped_filter() {
        let img = Image2D::from_fn(21, 21, |(r, c)| if (r, c) == (10, 10) { 1.0 } else { 0.0 }).unwrap();
        let b = bank();
        for (map, f) in ses_convolve(&img, &b).unwrap().iter().zip(b.filters().unwrap()) {
            for i in 0..7 {
                for j in 0..7 {
                    assert_abs_diff_eq!(map.get(7 + i, 7 + j), f[[6 - i, 6 - j]], epsilon = 1e-15);
                }
            }
        }
    }

    #[test]
    fn image_smaller_than_filter_rejected() {
        let img = Image2D::zeros(5, 5).unwrap();
        assert!(matches!(ses_convolve(&img, &bank()), Err(EquivError::ImageTooSmall { .. })));
    }

    #[test]
    fn scale_project_examples() {
        let m = Image2D::from_fn(4, 4, |(r, c)| (r * 4 + c) as f64).unwrap();
        assert_eq!(scale_project(std::slice::from_ref(&m)).unwrap(), m);
        assert_eq!(scale_project(&[m.clone(), m.clone()]).unwrap(), m);
        let m2 = m.scaled_add(2.0, &m, 0.0).unwrap();
        assert_eq!(scale_project(&[m.clone(), m2.clone()]).unwrap(), m2);
        assert_eq!(scale_project(&[]), Err(EquivError::EmptyStack));
        let other = Image2D::zeros(3, 4).unwrap();
        assert!(scale_project(&[m, other]).is_err());
    }

    #[test]
    fn unit_rescale_is_exact_identity() {
        let img = Image2D::from_fn(9, 12, |(r, c)| ((r * 7 + c * 3) as f64).sin()).unwrap();
        assert_eq!(rescale(&img, 1.0).unwrap(), img);
        assert!(rescale(&img, 0.0).is_err());
    }

    #[test]
    fn rescale_moves_points_towards_center() {
        // a linear ramp in u: T_s h(u) = (u − c)/s + c
        let img = Image2D::from_fn(9, 9, |(_, c)| c as f64).unwrap();
        let out = rescale(&img, 2.0).unwrap();
        assert_abs_diff_eq!(out.get(4, 6), 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out.get(4, 0), 2.0, epsilon = 1e-12);
    }
}
