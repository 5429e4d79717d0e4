use nitex::image::Image;
use nitex::uncertainty::{reflect_index, SsimConfig};

/// Direct per-pixel SSIM: explicit 2-D Gaussian window with reflected borders.
pub fn brute_ssim(a: &Image, b: &Image, cfg: &SsimConfig) -> Vec<f64> {
    let (w, h, ch) = (a.width(), a.height(), a.channels());
    let k = cfg.kernel();
    let r = (k.len() / 2) as isize;
    let (c1, c2) = (cfg.c1(), cfg.c2());
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for c in 0..ch {
                let (mut ma, mut mb, mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in -r..=r {
                    for dx in -r..=r {
                        let wt = k[(dy + r) as usize] * k[(dx + r) as usize];
                        let xx = reflect_index(x as isize + dx, w);
                        let yy = reflect_index(y as isize + dy, h);
                        let (va, vb) = (a.get(xx, yy, c), b.get(xx, yy, c));
                        ma += wt * va;
                        mb += wt * vb;
                        aa += wt * va * va;
                        bb += wt * vb * vb;
                        ab += wt * va * vb;
                    }
                }
                let (va, vb, cov) = (aa - ma * ma, bb - mb * mb, ab - ma * mb);
                s += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            }
            out[y * w + x] = (s / ch as f64).clamp(0.0, 1.0);
        }
    }
    out
}
