use std::cell::RefCell;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Unnormalized 2-D DFT of an `h×w` complex plane stored as split real and
/// imaginary parts. `inverse` flips the exponent sign without scaling.
pub fn fft2_inplace(re: &mut [f64], im: &mut [f64], h: usize, w: usize, inverse: bool) {
    debug_assert_eq!(re.len(), h * w);
    debug_assert_eq!(im.len(), h * w);
    PLANNER.with(|planner| {
        let mut planner = planner.borrow_mut();
        let (row_fft, col_fft) = if inverse {
            (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
        } else {
            (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
        };
        let mut buf: Vec<Complex<f64>> = re
            .iter()
            .zip(im.iter())
            .map(|(&r, &i)| Complex::new(r, i))
            .collect();
        for row in buf.chunks_mut(w) {
            row_fft.process(row);
        }
        let mut col = vec![Complex::new(0.0, 0.0); h];
        for j in 0..w {
            for i in 0..h {
                col[i] = buf[i * w + j];
            }
            col_fft.process(&mut col);
            for i in 0..h {
                buf[i * w + j] = col[i];
            }
        }
        for (k, c) in buf.iter().enumerate() {
            re[k] = c.re;
            im[k] = c.im;
        }
    });
}
