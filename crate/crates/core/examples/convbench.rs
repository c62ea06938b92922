// scratch benchmark
use std::time::Instant;

fn main() {
    // Shapes from the overfit protocol: C=16, 128x128, 3x3 same conv.
    let (cout, cin, k, h, w) = (16usize, 16usize, 3usize, 128usize, 128usize);
    let kk = cin * k * k;
    let m = h * w;
    let a: Vec<f32> = (0..cout * kk).map(|i| (i % 97) as f32 * 0.01).collect();
    let b: Vec<f32> = (0..kk * m).map(|i| (i % 89) as f32 * 0.01).collect();
    let mut c = vec![0f32; cout * m];

    // gemm path
    let reps = 20;
    let t0 = Instant::now();
    for _ in 0..reps {
        unsafe {
            matrixmultiply::sgemm(cout, kk, m, 1.0, a.as_ptr(), kk as isize, 1,
                b.as_ptr(), m as isize, 1, 0.0, c.as_mut_ptr(), m as isize, 1);
        }
    }
    let el = t0.elapsed().as_secs_f64() / reps as f64;
    let flops = 2.0 * (cout * kk * m) as f64;
    println!("sgemm {cout}x{kk}x{m}: {:.1} ms, {:.1} GFLOP/s", el * 1e3, flops / el / 1e9);

    // direct shifted-window conv: for each (co, ci, kh, kw): c[co] += w * shifted x row
    let x: Vec<f32> = (0..cin * h * w).map(|i| (i % 83) as f32 * 0.01).collect();
    let wgt: Vec<f32> = (0..cout * kk).map(|i| (i % 97) as f32 * 0.01).collect();
    let mut out = vec![0f32; cout * h * w];
    let t0 = Instant::now();
    for _ in 0..reps {
        out.iter_mut().for_each(|v| *v = 0.0);
        for co in 0..cout {
            for ci in 0..cin {
                for kh in 0..k {
                    for kw in 0..k {
                        let wv = wgt[((co * cin + ci) * k + kh) * k + kw];
                        let dy = kh as isize - 1;
                        let dx = kw as isize - 1;
                        for oy in 0..h {
                            let iy = oy as isize + dy;
                            if iy < 0 || iy >= h as isize { continue; }
                            let (x0, x1) = (0.max(-dx) as usize, w.min((w as isize - dx) as usize));
                            let orow = &mut out[(co * h + oy) * w + x0..(co * h + oy) * w + x1];
                            let irow = &x[(ci * h as usize + iy as usize) * w + (x0 as isize + dx) as usize
                                ..(ci * h as usize + iy as usize) * w + (x1 as isize + dx) as usize];
                            for (o, i) in orow.iter_mut().zip(irow) {
                                *o += wv * i;
                            }
                        }
                    }
                }
            }
        }
    }
    let el = t0.elapsed().as_secs_f64() / reps as f64;
    println!("direct shifted: {:.1} ms, {:.1} GFLOP/s", el * 1e3, flops / el / 1e9);
    println!("checksum {} {}", c[12345], out[12345]);
}
